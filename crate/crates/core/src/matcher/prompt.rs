//! Prompt text and assembly.
//!
//! The wording lives in these constants (and can be overridden through the
//! `libem.match.instruction` / `libem.match.cot_instruction` parameters);
//! callers should depend on the structure, i.e. the section headers and
//! entity markers, rather than the exact wording.

use crate::backend::ChatMessage;
use crate::kernel::params::{self, ParamError, ParameterTree};
use crate::knowledge::{KnowledgeEntry, KnowledgeKind};
use crate::prepare::PreparedPair;

pub const BASE_INSTRUCTION: &str = "You are an expert at entity matching. You will be shown the descriptions of \
two entities and must decide whether they refer to the same real-world entity. Tools are available to \
re-serialize the entity data or to look up external information; use them only when they help. Answer with \
\"yes\" or \"no\".";

pub const COT_INSTRUCTION: &str = "Think step by step: compare the entities attribute by attribute and explain \
your reasoning briefly, then give your final answer, yes or no, alone on the last line.";

pub const RULES_HEADER: &str = "Rules:";
pub const EXPERIENCES_HEADER: &str = "Mistakes to avoid:";
pub const LEFT_MARKER: &str = "Entity 1:";
pub const RIGHT_MARKER: &str = "Entity 2:";
pub const QUESTION: &str = "Do they refer to the same real-world entity? Answer yes or no.";
pub const CLARIFY: &str = "Answer yes or no.";
pub const FORCE_ANSWER: &str = "Answer yes or no now.";

fn section(header: &str, entries: &[&KnowledgeEntry]) -> Option<String> {
    if entries.is_empty() {
        return None;
    }
    let lines: Vec<String> = entries.iter().map(|e| format!("- {}", e.text)).collect();
    Some(format!("{header}\n{}", lines.join("\n")))
}

/// Builds the system prompt: base instruction, the reasoning instruction when
/// chain of thought is on, then the rules and experiences sections. Knowledge
/// stored in the parameter tree comes before `knowledge`, each in input order.
pub fn system_prompt(tree: &ParameterTree, knowledge: &[KnowledgeEntry]) -> Result<String, ParamError> {
    let mut parts = vec![tree.text(params::MATCH_INSTRUCTION)?.to_string()];
    if tree.toggle(params::MATCH_COT)? {
        parts.push(tree.text(params::MATCH_COT_INSTRUCTION)?.to_string());
    }
    let all: Vec<&KnowledgeEntry> = tree
        .knowledge(params::MATCH_RULES)?
        .iter()
        .chain(tree.knowledge(params::MATCH_EXPERIENCES)?)
        .chain(knowledge)
        .collect();
    let of_kind = |k: KnowledgeKind| all.iter().copied().filter(|e| e.kind == k).collect::<Vec<_>>();
    parts.extend(section(RULES_HEADER, &of_kind(KnowledgeKind::Rule)));
    parts.extend(section(EXPERIENCES_HEADER, &of_kind(KnowledgeKind::Experience)));
    Ok(parts.join("\n\n"))
}

pub fn user_prompt(prepared: &PreparedPair) -> String {
    format!(
        "{LEFT_MARKER}\n{}\n\n{RIGHT_MARKER}\n{}\n\n{QUESTION}",
        prepared.left_text, prepared.right_text
    )
}

pub fn assemble_prompt(
    prepared: &PreparedPair,
    tree: &ParameterTree,
    knowledge: &[KnowledgeEntry],
) -> Result<Vec<ChatMessage>, ParamError> {
    Ok(vec![
        ChatMessage::system(system_prompt(tree, knowledge)?),
        ChatMessage::user(user_prompt(prepared)),
    ])
}
