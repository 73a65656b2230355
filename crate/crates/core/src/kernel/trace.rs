//! Trace and telemetry collection.
//!
//! Events are grouped by run id. The collector assigns the per-run sequence
//! number itself, so concurrent runs can append freely and each run's export
//! comes back gapless (`1..=N`) and in recording order.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    ModelCall,
    ToolCall,
    CacheHit,
    Parse,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub run_id: String,
    pub seq: u64,
    pub kind: TraceKind,
    pub tool_or_model: String,
    pub duration_ms: f64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub payload_digest: String,
}

impl TraceEvent {
    /// An event awaiting its sequence number; `seq` is assigned on record.
    pub fn new(run_id: impl Into<String>, kind: TraceKind, tool_or_model: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            seq: 0,
            kind,
            tool_or_model: tool_or_model.into(),
            duration_ms: 0.0,
            tokens_in: 0,
            tokens_out: 0,
            payload_digest: String::new(),
        }
    }

    pub fn duration(mut self, d: Duration) -> Self {
        self.duration_ms = d.as_secs_f64() * 1e3;
        self
    }

    pub fn tokens(mut self, tokens_in: u64, tokens_out: u64) -> Self {
        self.tokens_in = tokens_in;
        self.tokens_out = tokens_out;
        self
    }

    pub fn payload(mut self, payload: &str) -> Self {
        self.payload_digest = payload_digest(payload);
        self
    }
}

/// First 16 hex digits of the SHA-256 of `payload`.
pub fn payload_digest(payload: &str) -> String {
    let mut hex = hex::encode(Sha256::digest(payload.as_bytes()));
    hex.truncate(16);
    hex
}

type Sink = Box<dyn Write + Send>;

#[derive(Default)]
pub struct TraceCollector {
    runs: Mutex<HashMap<String, Vec<TraceEvent>>>,
    sink: Option<Mutex<Sink>>,
}

impl std::fmt::Debug for TraceCollector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TraceCollector")
            .field("runs", &self.runs.lock().map(|r| r.len()).unwrap_or_default())
            .field("sink", &self.sink.is_some())
            .finish()
    }
}

impl TraceCollector {
    pub fn new() -> Self {
        Self::default()
    }

    /// A collector that also streams every event as one JSON line to `sink`.
    /// Write failures are logged and otherwise ignored.
    pub fn with_sink(sink: impl Write + Send + 'static) -> Self {
        Self {
            runs: Mutex::default(),
            sink: Some(Mutex::new(Box::new(sink))),
        }
    }

    /// Records `event`, assigning the next sequence number of its run.
    pub fn record(&self, mut event: TraceEvent) -> u64 {
        let seq = {
            let mut runs = self.runs.lock().unwrap_or_else(|p| p.into_inner());
            let events = runs.entry(event.run_id.clone()).or_default();
            event.seq = events.len() as u64 + 1;
            events.push(event.clone());
            event.seq
        };
        if let Some(sink) = &self.sink {
            let mut sink = sink.lock().unwrap_or_else(|p| p.into_inner());
            let line = serde_json::to_string(&event).expect("trace event serializes");
            if let Err(err) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                tracing::warn!(%err, "trace sink write failed");
            }
        }
        seq
    }

    pub fn export(&self, run_id: &str) -> Vec<TraceEvent> {
        let runs = self.runs.lock().unwrap_or_else(|p| p.into_inner());
        runs.get(run_id).cloned().unwrap_or_default()
    }

    pub fn export_jsonl(&self, run_id: &str, out: &mut impl Write) -> std::io::Result<()> {
        for event in self.export(run_id) {
            serde_json::to_writer(&mut *out, &event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn run_ids(&self) -> Vec<String> {
        let runs = self.runs.lock().unwrap_or_else(|p| p.into_inner());
        let mut ids: Vec<String> = runs.keys().cloned().collect();
        ids.sort();
        ids
    }
}

/// A collector bound to one run id.
#[derive(Debug, Clone)]
pub struct TraceScope {
    collector: Arc<TraceCollector>,
    run_id: String,
}

impl TraceScope {
    pub fn new(collector: Arc<TraceCollector>, run_id: impl Into<String>) -> Self {
        Self {
            collector,
            run_id: run_id.into(),
        }
    }

    /// A scope on a private collector with a fresh run id.
    pub fn detached() -> Self {
        Self::new(Arc::new(TraceCollector::new()), uuid::Uuid::new_v4().to_string())
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn collector(&self) -> &Arc<TraceCollector> {
        &self.collector
    }

    pub fn event(&self, kind: TraceKind, tool_or_model: impl Into<String>) -> TraceEvent {
        TraceEvent::new(self.run_id.clone(), kind, tool_or_model)
    }

    pub fn record(&self, event: TraceEvent) -> u64 {
        self.collector.record(event)
    }

    pub fn export(&self) -> Vec<TraceEvent> {
        self.collector.export(&self.run_id)
    }
}
