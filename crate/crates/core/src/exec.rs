//! Bounded data-parallel map used for batch matching.
//!
//! With the `parallel` feature (on by default) [`bounded_map`] runs on a
//! dedicated rayon pool of exactly `parallelism` threads, so at most that many
//! items are in flight. Without the feature it falls back to
//! [`sequential_map`].

/// Applies `f` to every item on the calling thread, in order.
pub fn sequential_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Applies `f` to every item with at most `parallelism` concurrent calls.
/// Output order equals input order. A `parallelism` of 0 is treated as 1.
#[cfg(feature = "parallel")]
pub fn bounded_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    let threads = parallelism.max(1).min(items.len().max(1));
    if threads == 1 {
        return sequential_map(items, f);
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(err) => {
            tracing::warn!(%err, "could not build worker pool; running sequentially");
            sequential_map(items, f)
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn bounded_map<T, R, F>(items: &[T], _parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    sequential_map(items, f)
}

/// Whether [`bounded_map`] can actually run items concurrently.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
