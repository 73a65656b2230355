//! Entity records and labelled pairs.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

/// Match decision, also used as the gold label. `Match` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Match,
    NoMatch,
}

impl Decision {
    pub fn from_bool(is_match: bool) -> Self {
        if is_match {
            Decision::Match
        } else {
            Decision::NoMatch
        }
    }

    pub fn is_match(self) -> bool {
        self == Decision::Match
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Match => "match",
            Decision::NoMatch => "no_match",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntityError {
    #[error("attribute names must be non-empty")]
    EmptyName,
    #[error("duplicate attribute `{0}`")]
    DuplicateName(String),
}

/// An entity as an ordered list of `(name, value)` attributes.
///
/// (De)serializes as a JSON object whose key order is the attribute order.
/// Non-string scalar values are converted to their JSON text; `null` becomes
/// an empty value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityRecord {
    attributes: Vec<(String, String)>,
}

impl EntityRecord {
    pub fn new<N, V, I>(attributes: I) -> Result<Self, EntityError>
    where
        N: Into<String>,
        V: Into<String>,
        I: IntoIterator<Item = (N, V)>,
    {
        let attributes: Vec<(String, String)> = attributes.into_iter().map(|(n, v)| (n.into(), v.into())).collect();
        let mut seen = BTreeSet::new();
        for (name, _) in &attributes {
            if name.is_empty() {
                return Err(EntityError::EmptyName);
            }
            if !seen.insert(name.as_str()) {
                return Err(EntityError::DuplicateName(name.clone()));
            }
        }
        Ok(Self { attributes })
    }

    pub fn attributes(&self) -> &[(String, String)] {
        &self.attributes
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.attributes.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Builds a record from a JSON object, keeping key order.
    pub fn from_json(value: &Value) -> Result<Self, String> {
        let obj = value.as_object().ok_or("entity must be a JSON object")?;
        let attrs = obj
            .iter()
            .map(|(k, v)| scalar_text(v).map(|t| (k.clone(), t)).ok_or_else(|| format!("attribute `{k}` must be a scalar")))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(attrs).map_err(|e| e.to_string())
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Null => Some(String::new()),
        Value::Bool(_) | Value::Number(_) => Some(v.to_string()),
        Value::Array(_) | Value::Object(_) => None,
    }
}

impl Serialize for EntityRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.attributes.len()))?;
        for (k, v) in &self.attributes {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for EntityRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct RecordVisitor;
        impl<'de> Visitor<'de> for RecordVisitor {
            type Value = EntityRecord;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object of entity attributes")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<EntityRecord, A::Error> {
                let mut attrs = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    let text = scalar_text(&v)
                        .ok_or_else(|| de::Error::custom(format!("attribute `{k}` must be a scalar")))?;
                    attrs.push((k, text));
                }
                EntityRecord::new(attrs).map_err(de::Error::custom)
            }
        }
        deserializer.deserialize_map(RecordVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPair {
    pub id: String,
    pub left: EntityRecord,
    pub right: EntityRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Decision>,
}

impl EntityPair {
    pub fn new(id: impl Into<String>, left: EntityRecord, right: EntityRecord) -> Self {
        Self {
            id: id.into(),
            left,
            right,
            label: None,
        }
    }

    pub fn labeled(mut self, label: Decision) -> Self {
        self.label = Some(label);
        self
    }

    pub fn swapped(&self) -> Self {
        Self {
            id: self.id.clone(),
            left: self.right.clone(),
            right: self.left.clone(),
            label: self.label,
        }
    }

    /// Sorted set of attribute names over both sides.
    pub fn attribute_signature(&self) -> BTreeSet<String> {
        self.left.names().chain(self.right.names()).map(str::to_string).collect()
    }
}
