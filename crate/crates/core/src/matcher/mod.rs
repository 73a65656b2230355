//! The match tool: prompt assembly, the model tool-call loop and decision
//! parsing.
//!
//! One [`Matcher::match_pair`] call is one run with its own run id. The loop
//! sends the assembled prompt together with the exposed tools; while the model
//! answers with tool calls and rounds remain, every call is dispatched and
//! answered with exactly one `tool` message carrying the call id. When the
//! round budget is spent the model gets a single "answer now" nudge without
//! tools. A reply that does not parse as yes/no gets one clarification turn.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, FinishReason, ToolSpec};
use crate::entity::{Decision, EntityPair};
use crate::exec;
use crate::kernel::params::{self, ParamError, ParameterTree};
use crate::kernel::{ToolArgs, ToolContext, ToolDescriptor, ToolRegistry, TraceCollector, TraceKind, TraceScope};
use crate::knowledge::KnowledgeEntry;
use crate::prepare::{prepare_pair, PrepareOptions};
use crate::tools::{BROWSE_TOOL, MATCH_SCOPE, PREPARE_TOOL};

mod decision;
pub mod prompt;

pub use decision::parse_decision;
pub use prompt::assemble_prompt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPrediction {
    pub decision: Decision,
    pub explanation: Option<String>,
    pub run_id: String,
    pub tool_rounds_used: u32,
    pub tokens_total: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("no final answer after {rounds} tool round(s) and a forced-answer nudge")]
    ToolLoopExceeded { rounds: u32 },
    #[error("could not read a yes/no decision from {0:?}")]
    UnparseableDecision(String),
    #[error("tool `{0}` is enabled but not registered")]
    MissingTool(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

impl MatchError {
    pub fn code(&self) -> &'static str {
        match self {
            MatchError::ToolLoopExceeded { .. } => "tool_loop_exceeded",
            MatchError::UnparseableDecision(_) => "unparseable_decision",
            MatchError::MissingTool(_) => "missing_tool",
            MatchError::Backend(e) => e.code(),
            MatchError::Param(_) => "invalid_parameters",
        }
    }
}

/// Runs matches against a shared registry, backend and trace collector.
#[derive(Clone)]
pub struct Matcher {
    registry: Arc<ToolRegistry>,
    backend: Arc<dyn ChatBackend>,
    trace: Arc<TraceCollector>,
}

impl std::fmt::Debug for Matcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Matcher").field("tools", &self.registry.names()).finish_non_exhaustive()
    }
}

/// Tools offered to the model under `params`: `libem.prepare` when
/// `libem.match.prepare_tool` is on, plus every tool directly under
/// `libem.match` whose same-named toggle is on or absent (browse is gated by
/// `libem.match.browse`).
pub fn exposed_tools<'r>(
    registry: &'r ToolRegistry,
    tree: &ParameterTree,
) -> Result<Vec<&'r ToolDescriptor>, MatchError> {
    let mut tools = Vec::new();
    if tree.toggle(params::MATCH_PREPARE_TOOL)? {
        tools.push(
            registry
                .resolve(PREPARE_TOOL, None)
                .map_err(|_| MatchError::MissingTool(PREPARE_TOOL.into()))?,
        );
    }
    if tree.toggle(params::MATCH_BROWSE)? && !registry.contains(BROWSE_TOOL) {
        return Err(MatchError::MissingTool(BROWSE_TOOL.into()));
    }
    for tool in registry.iter().filter(|t| t.parent() == MATCH_SCOPE) {
        let enabled = match tree.get(&tool.name) {
            Ok(params::ParamValue::Toggle(on)) => *on,
            _ => true,
        };
        if enabled {
            tools.push(tool);
        }
    }
    Ok(tools)
}

struct Run<'a> {
    scope: TraceScope,
    model: String,
    temperature: f64,
    tokens: u64,
    backend: &'a dyn ChatBackend,
}

impl Run<'_> {
    fn send(&mut self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Result<ChatResponse, MatchError> {
        let request = ChatRequest {
            model: self.model.clone(),
            messages: messages.to_vec(),
            tools: tools.to_vec(),
            temperature: self.temperature,
        };
        let resp = self.backend.complete(&request, &self.scope)?;
        self.tokens += resp.tokens_in + resp.tokens_out;
        Ok(resp)
    }

    fn parse(&self, content: &str) -> Option<Decision> {
        let started = Instant::now();
        let decision = parse_decision(content);
        let kind = if decision.is_some() {
            TraceKind::Parse
        } else {
            TraceKind::Error
        };
        self.scope.record(
            self.scope
                .event(kind, "decision")
                .duration(started.elapsed())
                .payload(content),
        );
        decision
    }
}

impl Matcher {
    pub fn new(registry: Arc<ToolRegistry>, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            registry,
            backend,
            trace: Arc::new(TraceCollector::new()),
        }
    }

    pub fn with_trace(mut self, trace: Arc<TraceCollector>) -> Self {
        self.trace = trace;
        self
    }

    pub fn trace(&self) -> &Arc<TraceCollector> {
        &self.trace
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    /// Matches one pair under a fresh run id.
    pub fn match_pair(
        &self,
        pair: &EntityPair,
        tree: &ParameterTree,
        knowledge: &[KnowledgeEntry],
    ) -> Result<MatchPrediction, MatchError> {
        self.match_pair_as(&uuid::Uuid::new_v4().to_string(), pair, tree, knowledge)
    }

    /// Matches one pair, recording its trace under `run_id`.
    pub fn match_pair_as(
        &self,
        run_id: &str,
        pair: &EntityPair,
        tree: &ParameterTree,
        knowledge: &[KnowledgeEntry],
    ) -> Result<MatchPrediction, MatchError> {
        let max_rounds = tree.number(params::MATCH_MAX_TOOL_ROUNDS)?.max(0.0) as u32;
        let tools = exposed_tools(&self.registry, tree)?;
        let specs: Vec<ToolSpec> = tools.iter().map(|t| ToolSpec::from(*t)).collect();
        let exposed: BTreeSet<&str> = tools.iter().map(|t| t.name.as_str()).collect();

        let prepared = prepare_pair(pair, &PrepareOptions::from_params(tree)?);
        let mut messages = assemble_prompt(&prepared, tree, knowledge)?;
        let mut run = Run {
            scope: TraceScope::new(self.trace.clone(), run_id),
            model: tree.text(params::MATCH_MODEL)?.to_string(),
            temperature: tree.number(params::MATCH_TEMPERATURE)?,
            tokens: 0,
            backend: self.backend.as_ref(),
        };

        let mut rounds = 0u32;
        let mut nudged = false;
        let mut clarified = false;
        let mut offered: &[ToolSpec] = &specs;
        loop {
            let resp = run.send(&messages, offered)?;
            let calls = resp.message.tool_calls.clone();
            messages.push(resp.message.clone());

            if resp.finish == FinishReason::ToolCalls {
                if rounds >= max_rounds {
                    if nudged {
                        return Err(MatchError::ToolLoopExceeded { rounds });
                    }
                    for call in &calls {
                        messages.push(ChatMessage::tool(&call.id, "error: tool budget exhausted"));
                    }
                    messages.push(ChatMessage::user(prompt::FORCE_ANSWER));
                    offered = &[];
                    nudged = true;
                    continue;
                }
                rounds += 1;
                for call in &calls {
                    let output = self.dispatch(&run.scope, pair, tree, &exposed, &call.name, &call.arguments);
                    messages.push(ChatMessage::tool(&call.id, output));
                }
                continue;
            }

            match run.parse(&resp.message.content) {
                Some(decision) => {
                    let explanation = Some(resp.message.content.trim().to_string()).filter(|s| !s.is_empty());
                    return Ok(MatchPrediction {
                        decision,
                        explanation,
                        run_id: run_id.to_string(),
                        tool_rounds_used: rounds,
                        tokens_total: run.tokens,
                    });
                }
                None if !clarified => {
                    clarified = true;
                    messages.push(ChatMessage::user(prompt::CLARIFY));
                }
                None => return Err(MatchError::UnparseableDecision(resp.message.content)),
            }
        }
    }

    fn dispatch(
        &self,
        scope: &TraceScope,
        pair: &EntityPair,
        tree: &ParameterTree,
        exposed: &BTreeSet<&str>,
        name: &str,
        arguments: &std::collections::BTreeMap<String, String>,
    ) -> String {
        let started = Instant::now();
        let tool = self
            .registry
            .resolve(name, Some(MATCH_SCOPE))
            .ok()
            .filter(|t| exposed.contains(t.name.as_str()));
        let Some(tool) = tool else {
            let msg = format!("error: unknown tool {name}");
            scope.record(scope.event(TraceKind::Error, name).duration(started.elapsed()).payload(&msg));
            return msg;
        };
        let ctx = ToolContext {
            params: tree,
            pair: Some(pair),
            trace: scope,
        };
        let args = ToolArgs(arguments.clone());
        let output = match tool.invoke(&ctx, &args) {
            Ok(out) => out,
            Err(e) => format!("error: {e}"),
        };
        scope.record(
            scope
                .event(TraceKind::ToolCall, &tool.name)
                .duration(started.elapsed())
                .payload(&output),
        );
        output
    }

    /// Matches every pair with at most `parallelism` in flight. Output order
    /// equals input order and each pair fails independently.
    pub fn match_batch(
        &self,
        pairs: &[EntityPair],
        tree: &ParameterTree,
        knowledge: &[KnowledgeEntry],
        parallelism: usize,
    ) -> Vec<Result<MatchPrediction, MatchError>> {
        exec::bounded_map(pairs, parallelism, |pair| self.match_pair(pair, tree, knowledge))
    }
}
