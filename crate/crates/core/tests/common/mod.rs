#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use em_core::backend::{ChatBackend, MockBackend};
use em_core::browse::FixtureProvider;
use em_core::kernel::ToolRegistry;
use em_core::tools::default_registry;
use em_core::{EntityPair, EntityRecord, Matcher};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn registry() -> Arc<ToolRegistry> {
    let search = FixtureProvider::load(fixture("search.jsonl")).unwrap();
    Arc::new(default_registry(Arc::new(search)).unwrap())
}

pub fn matcher(backend: Arc<dyn ChatBackend>) -> Matcher {
    Matcher::new(registry(), backend)
}

pub fn mock(script: &str) -> Arc<MockBackend> {
    Arc::new(MockBackend::parse(script).unwrap())
}

pub fn pair(id: &str, left: &str, right: &str) -> EntityPair {
    EntityPair::new(
        id,
        EntityRecord::new([("title", left)]).unwrap(),
        EntityRecord::new([("title", right)]).unwrap(),
    )
}
