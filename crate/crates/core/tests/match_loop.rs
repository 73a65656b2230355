mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use common::{matcher, mock, pair};
use em_core::backend::{ChatRequest, MockBackend, Role};
use em_core::kernel::params;
use em_core::kernel::TraceKind;
use em_core::matcher::prompt::{CLARIFY, FORCE_ANSWER};
use em_core::{Decision, MatchError, ParameterTree};

const BROWSE_CALL: &str =
    r#"{"match_substring":"canon eos r8","tool_call":{"name":"browse","arguments":{"query":"canon eos r8 release"}}}"#;

fn browse_on() -> ParameterTree {
    ParameterTree::defaults().set(params::MATCH_BROWSE, true.into()).unwrap()
}

fn r8() -> em_core::EntityPair {
    pair("r8", "Canon EOS R8 Kit", "Canon EOS R8 with RF 24-50mm")
}

fn tool_names(req: &ChatRequest) -> Vec<&str> {
    req.tools.iter().map(|t| t.name.as_str()).collect()
}

/// Every assistant tool call id is answered by exactly one tool message and
/// every tool message answers a call.
fn assert_call_ids_bijective(messages: &[em_core::backend::ChatMessage]) {
    let calls: Vec<&str> = messages
        .iter()
        .flat_map(|m| m.tool_calls.iter().map(|c| c.id.as_str()))
        .collect();
    let answers: Vec<&str> = messages
        .iter()
        .filter(|m| m.role == Role::Tool)
        .map(|m| m.tool_call_id.as_deref().unwrap())
        .collect();
    let unique: BTreeSet<&str> = calls.iter().copied().collect();
    assert_eq!(unique.len(), calls.len(), "call ids are unique");
    let mut sorted_answers = answers.clone();
    sorted_answers.sort_unstable();
    let mut sorted_calls = calls.clone();
    sorted_calls.sort_unstable();
    assert_eq!(sorted_answers, sorted_calls);
}

#[test]
fn immediate_yes() {
    let backend = mock(r#"{"match_substring":"canon","reply":"yes"}"#);
    let m = matcher(backend.clone());
    let p = m.match_pair(&r8(), &ParameterTree::defaults(), &[]).unwrap();
    assert_eq!(p.decision, Decision::Match);
    assert_eq!(p.tool_rounds_used, 0);
    assert_eq!(backend.stats().calls, 1);
    assert!(p.tokens_total > 0);
}

#[test]
fn browse_then_no() {
    let script = format!("{BROWSE_CALL}\n{}", r#"{"match_substring":"canon eos r8","reply":"no"}"#);
    let backend = mock(&script);
    let m = matcher(backend.clone());
    let p = m.match_pair(&r8(), &browse_on(), &[]).unwrap();
    assert_eq!(p.decision, Decision::NoMatch);
    assert_eq!(p.tool_rounds_used, 1);

    let events = m.trace().export(&p.run_id);
    let tool_events: Vec<_> = events.iter().filter(|e| e.kind == TraceKind::ToolCall).collect();
    assert_eq!(tool_events.len(), 1);
    assert_eq!(tool_events[0].tool_or_model, "libem.match.browse");
    assert_eq!(events.iter().filter(|e| e.kind == TraceKind::ModelCall).count(), 2);
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=events.len() as u64).collect::<Vec<_>>());

    let second = &backend.requests()[1];
    let call = &second.messages.iter().find(|m| !m.tool_calls.is_empty()).unwrap().tool_calls[0];
    let answer = second.messages.iter().find(|m| m.role == Role::Tool).unwrap();
    assert_eq!(answer.tool_call_id.as_deref(), Some(call.id.as_str()));
    assert!(answer.content.contains("Canon EOS R8 announced"));
    assert_call_ids_bijective(&second.messages);
}

#[test]
fn tool_loop_exceeded_after_one_nudge() {
    let backend = mock(BROWSE_CALL);
    let m = matcher(backend.clone());
    let err = m.match_pair(&r8(), &browse_on(), &[]).unwrap_err();
    assert_eq!(err, MatchError::ToolLoopExceeded { rounds: 3 });

    let requests = backend.requests();
    assert_eq!(requests.len(), 5);
    let nudge = &requests[4];
    assert!(nudge.tools.is_empty());
    assert_eq!(nudge.last_user_message(), Some(FORCE_ANSWER));
    assert_eq!(
        nudge.messages.iter().filter(|m| m.content == FORCE_ANSWER).count(),
        1
    );
    assert_call_ids_bijective(&nudge.messages);
    let exhausted = nudge
        .messages
        .iter()
        .filter(|m| m.role == Role::Tool && m.content == "error: tool budget exhausted")
        .count();
    assert_eq!(exhausted, 1);
}

#[test]
fn nudge_can_recover() {
    let answer = r#"{"match_substring":"canon eos r8","reply":"Yes"}"#;
    let script = [BROWSE_CALL, BROWSE_CALL, BROWSE_CALL, BROWSE_CALL, answer].join("\n");
    let m = matcher(mock(&script));
    let p = m.match_pair(&r8(), &browse_on(), &[]).unwrap();
    assert_eq!(p.decision, Decision::Match);
    assert_eq!(p.tool_rounds_used, 3);
}

#[test]
fn max_tool_rounds_bounds_rounds_used() {
    for max in [0.0, 1.0, 2.0] {
        let tree = browse_on().set(params::MATCH_MAX_TOOL_ROUNDS, max.into()).unwrap();
        let answer = r#"{"match_substring":"canon eos r8","reply":"no"}"#;
        let script = [BROWSE_CALL, BROWSE_CALL, answer].join("\n");
        let m = matcher(mock(&script));
        match m.match_pair(&r8(), &tree, &[]) {
            Ok(p) => assert!(f64::from(p.tool_rounds_used) <= max),
            Err(e) => assert_eq!(e, MatchError::ToolLoopExceeded { rounds: max as u32 }),
        }
    }
}

#[test]
fn one_clarification_turn() {
    let script = r#"{"match_substring":"canon","reply":"It depends."}
{"match_substring":"canon","reply":"no"}"#;
    let backend = mock(script);
    let m = matcher(backend.clone());
    let p = m.match_pair(&r8(), &ParameterTree::defaults(), &[]).unwrap();
    assert_eq!(p.decision, Decision::NoMatch);
    assert_eq!(backend.requests()[1].last_user_message(), Some(CLARIFY));

    let stubborn = mock(r#"{"match_substring":"canon","reply":"It depends."}"#);
    let err = matcher(stubborn.clone())
        .match_pair(&r8(), &ParameterTree::defaults(), &[])
        .unwrap_err();
    assert_eq!(err, MatchError::UnparseableDecision("It depends.".into()));
    assert_eq!(stubborn.stats().calls, 2);
}

#[test]
fn browse_exposed_iff_enabled() {
    for on in [false, true] {
        let backend = mock(r#"{"match_substring":"canon","reply":"yes"}"#);
        let tree = ParameterTree::defaults().set(params::MATCH_BROWSE, on.into()).unwrap();
        matcher(backend.clone()).match_pair(&r8(), &tree, &[]).unwrap();
        let req = &backend.requests()[0];
        assert_eq!(req.has_tool("browse"), on);
        assert!(req.has_tool("prepare"));
    }
    let backend = mock(r#"{"match_substring":"canon","reply":"yes"}"#);
    let tree = ParameterTree::defaults().set(params::MATCH_PREPARE_TOOL, false.into()).unwrap();
    matcher(backend.clone()).match_pair(&r8(), &tree, &[]).unwrap();
    assert!(tool_names(&backend.requests()[0]).is_empty());
}

#[test]
fn unknown_or_hidden_tool_gets_error_message() {
    let script = r#"{"match_substring":"canon","tool_calls":[{"name":"teleport"},{"name":"browse","arguments":{"query":"x"}}]}
{"match_substring":"canon","reply":"yes"}"#;
    let backend = mock(script);
    let m = matcher(backend.clone());
    let p = m.match_pair(&r8(), &ParameterTree::defaults(), &[]).unwrap();
    assert_eq!(p.tool_rounds_used, 1);
    let second = &backend.requests()[1];
    let outputs: Vec<&str> = second
        .messages
        .iter()
        .filter(|m| m.role == Role::Tool)
        .map(|m| m.content.as_str())
        .collect();
    assert_eq!(outputs, ["error: unknown tool teleport", "error: unknown tool browse"]);
    assert_call_ids_bijective(&second.messages);
    let errors = m
        .trace()
        .export(&p.run_id)
        .into_iter()
        .filter(|e| e.kind == TraceKind::Error)
        .count();
    assert_eq!(errors, 2);
}

#[test]
fn prepare_tool_round_trip() {
    let script = r#"{"match_substring":"canon","tool_calls":[{"name":"prepare","arguments":{"schema":"false"}},{"name":"libem.prepare","arguments":{"attributes":"title"}}]}
{"match_substring":"canon","reply":"yes"}"#;
    let backend = mock(script);
    let p = matcher(backend.clone())
        .match_pair(&r8(), &ParameterTree::defaults(), &[])
        .unwrap();
    assert_eq!(p.tool_rounds_used, 1);
    let second = &backend.requests()[1];
    let outputs: Vec<&str> = second
        .messages
        .iter()
        .filter(|m| m.role == Role::Tool)
        .map(|m| m.content.as_str())
        .collect();
    assert_eq!(outputs[0], "Entity 1:\ncanon eos r8 kit\n\nEntity 2:\ncanon eos r8 with rf 24-50mm");
    assert!(outputs[1].starts_with("Entity 1:\ntitle: canon eos r8 kit"));
    assert_call_ids_bijective(&second.messages);
}

#[test]
fn backend_errors_propagate() {
    let m = matcher(mock(r#"{"match_substring":"canon","error":"unavailable"}"#));
    let err = m.match_pair(&r8(), &ParameterTree::defaults(), &[]).unwrap_err();
    assert!(matches!(err, MatchError::Backend(_)));
    assert_eq!(err.code(), "backend_unavailable");
}

#[test]
fn browse_enabled_without_tool_is_missing_tool() {
    let mut r = em_core::kernel::ToolRegistry::new();
    r.register(em_core::tools::prepare_tool()).unwrap();
    let m = em_core::Matcher::new(Arc::new(r), mock(r#"{"match_substring":"canon","reply":"yes"}"#));
    assert_eq!(
        m.match_pair(&r8(), &browse_on(), &[]).unwrap_err(),
        MatchError::MissingTool("libem.match.browse".into())
    );
}

fn three_pair_script() -> String {
    [
        r#"{"match_substring":"alpha","reply":"The same product.\nYes"}"#,
        r#"{"match_substring":"beta","reply":"No."}"#,
        r#"{"match_substring":"gamma","reply":"yes"}"#,
    ]
    .join("\n")
}

fn three_pairs() -> Vec<em_core::EntityPair> {
    vec![
        pair("a", "alpha 1", "alpha one"),
        pair("b", "beta 2", "beta two"),
        pair("c", "gamma 3", "gamma three"),
    ]
}

#[test]
fn batch_is_invariant_under_parallelism() {
    let tree = ParameterTree::defaults();
    let run = |parallelism| {
        let m = matcher(mock(&three_pair_script()));
        m.match_batch(&three_pairs(), &tree, &[], parallelism)
            .into_iter()
            .map(|r| r.map(|p| (p.decision, p.explanation, p.tool_rounds_used, p.tokens_total)))
            .collect::<Vec<_>>()
    };
    let sequential = run(1);
    assert_eq!(sequential, run(3));
    assert_eq!(sequential, run(8));
    let decisions: Vec<Decision> = sequential.into_iter().map(|r| r.unwrap().0).collect();
    assert_eq!(decisions, [Decision::Match, Decision::NoMatch, Decision::Match]);
}

#[test]
fn batch_isolates_failures() {
    let script = three_pair_script().replace(r#""reply":"No.""#, r#""error":"malformed""#);
    let m = matcher(mock(&script));
    let out = m.match_batch(&three_pairs(), &ParameterTree::defaults(), &[], 3);
    assert!(out[0].is_ok());
    assert!(matches!(out[1], Err(MatchError::Backend(_))));
    assert!(out[2].is_ok());
    let run_ids: BTreeSet<&str> = out.iter().flatten().map(|p| p.run_id.as_str()).collect();
    assert_eq!(run_ids.len(), 2);
}

#[test]
fn batch_high_water_mark() {
    let pairs: Vec<_> = (0..100).map(|i| pair(&format!("p{i}"), &format!("item {i}"), "item")).collect();
    let backend = Arc::new(
        MockBackend::parse(r#"{"match_substring":"item","reply":"no"}"#)
            .unwrap()
            .with_latency(Duration::from_millis(3)),
    );
    let m = matcher(backend.clone());
    let out = m.match_batch(&pairs, &ParameterTree::defaults(), &[], 8);
    assert!(out.iter().all(Result::is_ok));
    let stats = backend.stats();
    assert_eq!(stats.calls, 100);
    assert!(stats.max_in_flight <= 8, "high-water mark {}", stats.max_in_flight);
    if em_core::exec::is_parallel() {
        assert!(stats.max_in_flight > 1);
    }
}
