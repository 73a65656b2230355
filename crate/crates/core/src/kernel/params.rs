//! Path-addressed parameter tree.
//!
//! A [`ParameterTree`] is immutable: [`ParameterTree::set`] returns a new tree
//! and leaves the receiver untouched, so any tree value already is a snapshot
//! that can be shared across concurrent matches.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::knowledge::KnowledgeEntry;
use crate::matcher::prompt::{BASE_INSTRUCTION, COT_INSTRUCTION};

pub const PREPARE_SCHEMA: &str = "libem.prepare.schema";
pub const PREPARE_NORMALIZE: &str = "libem.prepare.normalize";
pub const MATCH_COT: &str = "libem.match.cot";
pub const MATCH_BROWSE: &str = "libem.match.browse";
pub const MATCH_PREPARE_TOOL: &str = "libem.match.prepare_tool";
pub const MATCH_MAX_TOOL_ROUNDS: &str = "libem.match.max_tool_rounds";
pub const MATCH_TEMPERATURE: &str = "libem.match.temperature";
pub const MATCH_MODEL: &str = "libem.match.model";
pub const MATCH_INSTRUCTION: &str = "libem.match.instruction";
pub const MATCH_COT_INSTRUCTION: &str = "libem.match.cot_instruction";
pub const MATCH_RULES: &str = "libem.match.rules";
pub const MATCH_EXPERIENCES: &str = "libem.match.experiences";
pub const BROWSE_TOP_K: &str = "libem.match.browse.top_k";
pub const TUNE_OBJECTIVE: &str = "libem.tune.objective";

pub const DEFAULT_MODEL: &str = "gpt-4-turbo";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Toggle,
    Choice,
    Number,
    Prompt,
    Knowledge,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamKind::Toggle => "toggle",
            ParamKind::Choice => "choice",
            ParamKind::Number => "number",
            ParamKind::Prompt => "prompt",
            ParamKind::Knowledge => "knowledge",
        };
        f.write_str(s)
    }
}

/// A parameter value. Serialized untagged: toggles as JSON booleans, numbers
/// as numbers, choices and prompts as strings, knowledge as arrays. A string
/// read back from JSON is a `Prompt` until [`ParameterTree::set`] coerces it
/// into the declared kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Toggle(bool),
    Number(f64),
    Prompt(String),
    Knowledge(Vec<KnowledgeEntry>),
    #[serde(skip_deserializing)]
    Choice(String),
}

impl ParamValue {
    pub fn kind(&self) -> ParamKind {
        match self {
            ParamValue::Toggle(_) => ParamKind::Toggle,
            ParamValue::Choice(_) => ParamKind::Choice,
            ParamValue::Number(_) => ParamKind::Number,
            ParamValue::Prompt(_) => ParamKind::Prompt,
            ParamValue::Knowledge(_) => ParamKind::Knowledge,
        }
    }

    /// Compact text form, used for ordering overrides and for CLI output.
    pub fn render(&self) -> String {
        match self {
            ParamValue::Toggle(true) => "on".into(),
            ParamValue::Toggle(false) => "off".into(),
            ParamValue::Number(n) => n.to_string(),
            ParamValue::Choice(s) | ParamValue::Prompt(s) => s.clone(),
            ParamValue::Knowledge(k) => serde_json::to_string(k).unwrap_or_default(),
        }
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Toggle(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter path `{0}`")]
    UnknownPath(String),
    #[error("parameter `{path}` expects a {expected} value, got {found}")]
    KindMismatch {
        path: String,
        expected: ParamKind,
        found: String,
    },
    #[error("parameter path `{0}` is already declared")]
    AlreadyDeclared(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Slot {
    value: ParamValue,
    #[serde(skip_serializing_if = "Option::is_none")]
    choices: Option<Vec<String>>,
}

#[derive(Clone, PartialEq)]
pub struct ParameterTree {
    nodes: Arc<BTreeMap<String, Slot>>,
}

impl fmt::Debug for ParameterTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.nodes.iter().map(|(k, v)| (k, &v.value)))
            .finish()
    }
}

impl Default for ParameterTree {
    fn default() -> Self {
        Self::defaults()
    }
}

impl ParameterTree {
    pub fn empty() -> Self {
        Self {
            nodes: Arc::new(BTreeMap::new()),
        }
    }

    /// The built-in parameter set with its default values.
    pub fn defaults() -> Self {
        let t = Self::empty();
        let declare = |t: Self, path: &str, v: ParamValue| t.declare(path, v).expect("unique default path");
        let t = declare(t, PREPARE_SCHEMA, true.into());
        let t = declare(t, PREPARE_NORMALIZE, true.into());
        let t = declare(t, MATCH_COT, true.into());
        let t = declare(t, MATCH_BROWSE, false.into());
        let t = declare(t, MATCH_PREPARE_TOOL, true.into());
        let t = declare(t, MATCH_MAX_TOOL_ROUNDS, 3.0.into());
        let t = declare(t, MATCH_TEMPERATURE, 0.0.into());
        let t = declare(t, MATCH_MODEL, ParamValue::Prompt(DEFAULT_MODEL.into()));
        let t = declare(t, MATCH_INSTRUCTION, ParamValue::Prompt(BASE_INSTRUCTION.into()));
        let t = declare(t, MATCH_COT_INSTRUCTION, ParamValue::Prompt(COT_INSTRUCTION.into()));
        let t = declare(t, MATCH_RULES, ParamValue::Knowledge(Vec::new()));
        let t = declare(t, MATCH_EXPERIENCES, ParamValue::Knowledge(Vec::new()));
        let t = declare(t, BROWSE_TOP_K, 5.0.into());
        t.declare_choice(TUNE_OBJECTIVE, "f1", &["f1", "precision", "recall"])
            .expect("unique default path")
    }

    /// Defaults with the model name taken from `EM_MODEL` when set.
    pub fn defaults_from_env() -> Self {
        let t = Self::defaults();
        match std::env::var("EM_MODEL") {
            Ok(model) if !model.trim().is_empty() => t
                .set(MATCH_MODEL, ParamValue::Prompt(model.trim().to_string()))
                .expect("model path declared"),
            _ => t,
        }
    }

    /// Adds a new parameter. Used by tools that bring their own settings.
    pub fn declare(&self, path: &str, value: ParamValue) -> Result<Self, ParamError> {
        if let ParamValue::Choice(_) = value {
            return Err(ParamError::KindMismatch {
                path: path.into(),
                expected: ParamKind::Choice,
                found: "a choice without its allowed set (use declare_choice)".into(),
            });
        }
        self.insert_new(path, Slot { value, choices: None })
    }

    pub fn declare_choice(&self, path: &str, value: &str, choices: &[&str]) -> Result<Self, ParamError> {
        let choices: Vec<String> = choices.iter().map(|c| c.to_string()).collect();
        if !choices.iter().any(|c| c == value) {
            return Err(ParamError::KindMismatch {
                path: path.into(),
                expected: ParamKind::Choice,
                found: format!("{value:?} outside {choices:?}"),
            });
        }
        self.insert_new(
            path,
            Slot {
                value: ParamValue::Choice(value.into()),
                choices: Some(choices),
            },
        )
    }

    fn insert_new(&self, path: &str, slot: Slot) -> Result<Self, ParamError> {
        if self.nodes.contains_key(path) {
            return Err(ParamError::AlreadyDeclared(path.into()));
        }
        let mut nodes = (*self.nodes).clone();
        nodes.insert(path.to_string(), slot);
        Ok(Self { nodes: Arc::new(nodes) })
    }

    pub fn get(&self, path: &str) -> Result<&ParamValue, ParamError> {
        self.nodes
            .get(path)
            .map(|s| &s.value)
            .ok_or_else(|| ParamError::UnknownPath(path.into()))
    }

    pub fn kind_of(&self, path: &str) -> Result<ParamKind, ParamError> {
        self.get(path).map(ParamValue::kind)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.nodes.contains_key(path)
    }

    /// Returns a new tree with `path` set to `value`. Strings are accepted
    /// for both choice and prompt parameters; every other kind must match.
    pub fn set(&self, path: &str, value: ParamValue) -> Result<Self, ParamError> {
        let slot = self.nodes.get(path).ok_or_else(|| ParamError::UnknownPath(path.into()))?;
        let expected = slot.value.kind();
        let mismatch = |found: String| ParamError::KindMismatch {
            path: path.into(),
            expected,
            found,
        };
        let value = match (expected, value) {
            (ParamKind::Choice, ParamValue::Choice(s) | ParamValue::Prompt(s)) => {
                let allowed = slot.choices.as_deref().unwrap_or_default();
                if !allowed.contains(&s) {
                    return Err(mismatch(format!("{s:?} outside {allowed:?}")));
                }
                ParamValue::Choice(s)
            }
            (ParamKind::Prompt, ParamValue::Choice(s) | ParamValue::Prompt(s)) => ParamValue::Prompt(s),
            (ParamKind::Number, ParamValue::Number(n)) if !n.is_finite() => {
                return Err(mismatch(format!("non-finite number {n}")));
            }
            (k, v) if v.kind() == k => v,
            (_, v) => return Err(mismatch(format!("{} {:?}", v.kind(), v.render()))),
        };
        let mut nodes = (*self.nodes).clone();
        nodes.get_mut(path).expect("checked above").value = value;
        Ok(Self { nodes: Arc::new(nodes) })
    }

    /// Parses `raw` according to the declared kind of `path` and sets it.
    /// Toggles accept on/off/true/false/yes/no; knowledge expects a JSON array.
    pub fn set_from_str(&self, path: &str, raw: &str) -> Result<Self, ParamError> {
        let kind = self.kind_of(path)?;
        let mismatch = || ParamError::KindMismatch {
            path: path.into(),
            expected: kind,
            found: format!("{raw:?}"),
        };
        let value = match kind {
            ParamKind::Toggle => ParamValue::Toggle(parse_toggle(raw).ok_or_else(mismatch)?),
            ParamKind::Number => ParamValue::Number(raw.trim().parse().map_err(|_| mismatch())?),
            ParamKind::Choice | ParamKind::Prompt => ParamValue::Prompt(raw.to_string()),
            ParamKind::Knowledge => ParamValue::Knowledge(serde_json::from_str(raw).map_err(|_| mismatch())?),
        };
        self.set(path, value)
    }

    /// Applies a batch of overrides in path order.
    pub fn with_overrides<'a, I>(&self, overrides: I) -> Result<Self, ParamError>
    where
        I: IntoIterator<Item = (&'a String, &'a ParamValue)>,
    {
        overrides
            .into_iter()
            .try_fold(self.clone(), |t, (path, value)| t.set(path, value.clone()))
    }

    pub fn toggle(&self, path: &str) -> Result<bool, ParamError> {
        match self.get(path)? {
            ParamValue::Toggle(b) => Ok(*b),
            other => Err(self.wrong(path, ParamKind::Toggle, other)),
        }
    }

    pub fn number(&self, path: &str) -> Result<f64, ParamError> {
        match self.get(path)? {
            ParamValue::Number(n) => Ok(*n),
            other => Err(self.wrong(path, ParamKind::Number, other)),
        }
    }

    pub fn text(&self, path: &str) -> Result<&str, ParamError> {
        match self.get(path)? {
            ParamValue::Prompt(s) | ParamValue::Choice(s) => Ok(s),
            other => Err(self.wrong(path, ParamKind::Prompt, other)),
        }
    }

    pub fn knowledge(&self, path: &str) -> Result<&[KnowledgeEntry], ParamError> {
        match self.get(path)? {
            ParamValue::Knowledge(k) => Ok(k),
            other => Err(self.wrong(path, ParamKind::Knowledge, other)),
        }
    }

    fn wrong(&self, path: &str, expected: ParamKind, found: &ParamValue) -> ParamError {
        ParamError::KindMismatch {
            path: path.into(),
            expected,
            found: found.kind().to_string(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamValue)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), &v.value))
    }

    /// Path-to-value map, suitable for JSON output.
    pub fn to_map(&self) -> BTreeMap<String, ParamValue> {
        self.nodes.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect()
    }

    /// Hex SHA-256 over the canonical JSON of every node.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&*self.nodes).expect("parameter tree serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub(crate) fn parse_toggle(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_defaults() {
        let t = ParameterTree::defaults();
        assert!(t.toggle(PREPARE_SCHEMA).unwrap());
        assert!(t.toggle(MATCH_COT).unwrap());
        assert!(!t.toggle(MATCH_BROWSE).unwrap());
        assert_eq!(t.number(MATCH_MAX_TOOL_ROUNDS).unwrap(), 3.0);
        assert_eq!(t.number(MATCH_TEMPERATURE).unwrap(), 0.0);
        assert_eq!(t.number(BROWSE_TOP_K).unwrap(), 5.0);
    }

    #[test]
    fn set_is_copy_on_write() {
        let before = ParameterTree::defaults();
        let digest = before.digest();
        let after = before.set(MATCH_COT, false.into()).unwrap();
        assert!(!after.toggle(MATCH_COT).unwrap());
        assert!(before.toggle(MATCH_COT).unwrap());
        assert_eq!(before.digest(), digest);
        assert_ne!(after.digest(), digest);
    }

    #[test]
    fn kind_mismatch() {
        let t = ParameterTree::defaults();
        let err = t.set(MATCH_COT, ParamValue::Prompt("maybe".into())).unwrap_err();
        assert!(matches!(err, ParamError::KindMismatch { .. }));
        assert!(matches!(
            t.set_from_str(MATCH_COT, "maybe"),
            Err(ParamError::KindMismatch { .. })
        ));
    }

    #[test]
    fn unknown_path() {
        let t = ParameterTree::defaults();
        assert_eq!(
            t.get("libem.nope").unwrap_err(),
            ParamError::UnknownPath("libem.nope".into())
        );
        assert!(matches!(t.set("libem.nope", true.into()), Err(ParamError::UnknownPath(_))));
    }

    #[test]
    fn choices_are_checked() {
        let t = ParameterTree::defaults();
        let t2 = t.set(TUNE_OBJECTIVE, ParamValue::Prompt("precision".into())).unwrap();
        assert_eq!(t2.get(TUNE_OBJECTIVE).unwrap(), &ParamValue::Choice("precision".into()));
        assert!(t.set_from_str(TUNE_OBJECTIVE, "accuracy").is_err());
    }

    #[test]
    fn toggles_parse_from_text() {
        let t = ParameterTree::defaults().set_from_str(MATCH_BROWSE, "on").unwrap();
        assert!(t.toggle(MATCH_BROWSE).unwrap());
        let t = t.set_from_str(MATCH_MAX_TOOL_ROUNDS, "1").unwrap();
        assert_eq!(t.number(MATCH_MAX_TOOL_ROUNDS).unwrap(), 1.0);
    }

    #[test]
    fn values_round_trip_through_json() {
        let t = ParameterTree::defaults();
        let json = serde_json::to_string(&t.to_map()).unwrap();
        let back: BTreeMap<String, ParamValue> = serde_json::from_str(&json).unwrap();
        let rebuilt = ParameterTree::defaults().with_overrides(&back).unwrap();
        assert_eq!(rebuilt, t);
    }

    #[test]
    fn non_finite_numbers_are_rejected() {
        let t = ParameterTree::defaults();
        assert!(t.set(MATCH_TEMPERATURE, f64::NAN.into()).is_err());
    }
}
