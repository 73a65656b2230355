//! Learned knowledge entries: rules induced from successful matches and
//! experiences ("mistakes to avoid") induced from failed ones.

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    Rule,
    Experience,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub kind: KnowledgeKind,
    pub text: String,
    pub source_pair_id: String,
    pub created_at: DateTime<Utc>,
}

impl KnowledgeEntry {
    /// Builds an entry, collapsing all whitespace runs (including newlines)
    /// into single spaces. Returns `None` when nothing but whitespace is left.
    pub fn new(kind: KnowledgeKind, text: &str, source_pair_id: impl Into<String>) -> Option<Self> {
        let text = collapse_whitespace(text);
        if text.is_empty() {
            return None;
        }
        Some(Self {
            kind,
            text,
            source_pair_id: source_pair_id.into(),
            created_at: Utc::now().trunc_subsecs(0),
        })
    }

    pub fn rule(text: &str, source_pair_id: impl Into<String>) -> Option<Self> {
        Self::new(KnowledgeKind::Rule, text, source_pair_id)
    }

    pub fn experience(text: &str, source_pair_id: impl Into<String>) -> Option<Self> {
        Self::new(KnowledgeKind::Experience, text, source_pair_id)
    }
}

pub(crate) fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newlines_are_collapsed() {
        let e = KnowledgeEntry::rule("color\n differentiates\tentities ", "p1").unwrap();
        assert_eq!(e.text, "color differentiates entities");
        assert_eq!(e.kind, KnowledgeKind::Rule);
    }

    #[test]
    fn blank_text_is_rejected() {
        assert!(KnowledgeEntry::experience(" \n ", "p1").is_none());
    }
}
