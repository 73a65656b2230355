//! Entity serialization: decides what text the model sees for each record.
//!
//! With the schema on, a record renders as one `name: value` line per
//! attribute; with it off, the non-empty values are joined by single spaces.
//! Attribute order always follows the input record.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::entity::{EntityPair, EntityRecord};
use crate::kernel::params::{self, ParamError, ParameterTree};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub schema_on: bool,
    /// Keep-only list of attribute names. `None` keeps everything.
    pub attribute_filter: Option<Vec<String>>,
    pub normalize: bool,
    pub pair_separator: String,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            schema_on: true,
            attribute_filter: None,
            normalize: true,
            pair_separator: "\n\n".into(),
        }
    }
}

impl PrepareOptions {
    pub fn from_params(tree: &ParameterTree) -> Result<Self, ParamError> {
        Ok(Self {
            schema_on: tree.toggle(params::PREPARE_SCHEMA)?,
            normalize: tree.toggle(params::PREPARE_NORMALIZE)?,
            ..Self::default()
        })
    }

    /// Sets a keep-only filter; an empty list is treated as no filter.
    pub fn keep_only<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        self.attribute_filter = (!names.is_empty()).then_some(names);
        self
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("options serialize");
        hex::encode(Sha256::digest(&json))
    }

    fn keeps(&self, name: &str) -> bool {
        self.attribute_filter
            .as_ref()
            .is_none_or(|keep| keep.iter().any(|k| k == name))
    }
}

/// Unicode-aware lowercase with whitespace runs collapsed and the ends trimmed.
pub fn normalize_value(value: &str) -> String {
    value.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn serialize_entity(record: &EntityRecord, options: &PrepareOptions) -> String {
    let values = record
        .attributes()
        .iter()
        .filter(|(name, _)| options.keeps(name))
        .map(|(name, value)| {
            let value = if options.normalize {
                normalize_value(value)
            } else {
                value.clone()
            };
            (name.as_str(), value)
        });
    if options.schema_on {
        values
            .map(|(name, value)| format!("{name}: {}", single_line(&value)))
            .collect::<Vec<_>>()
            .join("\n")
    } else {
        values
            .filter(|(_, value)| !value.is_empty())
            .map(|(_, value)| value)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

// Line breaks inside a value would split its `name: value` line.
fn single_line(value: &str) -> std::borrow::Cow<'_, str> {
    if value.contains(['\n', '\r']) {
        value.replace("\r\n", " ").replace(['\n', '\r'], " ").into()
    } else {
        value.into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedPair {
    pub left_text: String,
    pub right_text: String,
    pub options_digest: String,
}

impl PreparedPair {
    /// Both sides in one text block, separated by the options' pair separator.
    pub fn render(&self, separator: &str) -> String {
        format!("Entity 1:\n{}{separator}Entity 2:\n{}", self.left_text, self.right_text)
    }
}

pub fn prepare_pair(pair: &EntityPair, options: &PrepareOptions) -> PreparedPair {
    PreparedPair {
        left_text: serialize_entity(&pair.left, options),
        right_text: serialize_entity(&pair.right, options),
        options_digest: options.digest(),
    }
}
