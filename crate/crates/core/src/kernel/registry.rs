//! Tool registry addressed by dotted paths (`libem.match.browse`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

use crate::entity::EntityPair;
use crate::kernel::params::ParameterTree;
use crate::kernel::trace::TraceScope;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgType {
    Text,
    Boolean,
    Integer,
    Number,
}

impl ArgType {
    fn json_type(self) -> &'static str {
        match self {
            ArgType::Text => "string",
            ArgType::Boolean => "boolean",
            ArgType::Integer => "integer",
            ArgType::Number => "number",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolArg {
    pub name: String,
    pub ty: ArgType,
    pub description: String,
    pub required: bool,
}

impl ToolArg {
    pub fn new(name: impl Into<String>, ty: ArgType, description: impl Into<String>, required: bool) -> Self {
        Self {
            name: name.into(),
            ty,
            description: description.into(),
            required,
        }
    }
}

/// Arguments of a tool call as sent by the model, keyed by argument name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToolArgs(pub BTreeMap<String, String>);

impl ToolArgs {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn require_text(&self, name: &str) -> Result<&str, ToolError> {
        match self.get(name) {
            Some(v) if !v.trim().is_empty() => Ok(v),
            _ => Err(ToolError::MissingArgument(name.to_string())),
        }
    }

    pub fn bool(&self, name: &str) -> Result<Option<bool>, ToolError> {
        let Some(raw) = self.get(name) else {
            return Ok(None);
        };
        match raw.trim().to_ascii_lowercase().as_str() {
            "true" | "on" | "yes" | "1" => Ok(Some(true)),
            "false" | "off" | "no" | "0" => Ok(Some(false)),
            _ => Err(ToolError::InvalidArgument {
                name: name.to_string(),
                message: format!("expected a boolean, got {raw:?}"),
            }),
        }
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for ToolArgs {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

/// What a handler can see while it runs inside a match.
pub struct ToolContext<'a> {
    pub params: &'a ParameterTree,
    pub pair: Option<&'a EntityPair>,
    pub trace: &'a TraceScope,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToolError {
    #[error("missing required argument `{0}`")]
    MissingArgument(String),
    #[error("invalid argument `{name}`: {message}")]
    InvalidArgument { name: String, message: String },
    #[error("{0}")]
    Failed(String),
}

pub type ToolHandler = Arc<dyn Fn(&ToolContext<'_>, &ToolArgs) -> Result<String, ToolError> + Send + Sync>;

#[derive(Clone)]
pub struct ToolDescriptor {
    pub name: String,
    pub short_name: String,
    pub description: String,
    pub args: Vec<ToolArg>,
    handler: ToolHandler,
}

impl fmt::Debug for ToolDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolDescriptor")
            .field("name", &self.name)
            .field("description", &self.description)
            .field("args", &self.args)
            .finish_non_exhaustive()
    }
}

impl ToolDescriptor {
    /// A descriptor whose handler reports that it has not been bound yet.
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        let name = name.into();
        let short_name = name.rsplit('.').next().unwrap_or_default().to_string();
        Self {
            name,
            short_name,
            description: description.into(),
            args: Vec::new(),
            handler: Arc::new(|_, _| Err(ToolError::Failed("no handler bound".into()))),
        }
    }

    pub fn arg(mut self, arg: ToolArg) -> Self {
        self.args.push(arg);
        self
    }

    pub fn handler<F>(mut self, handler: F) -> Self
    where
        F: Fn(&ToolContext<'_>, &ToolArgs) -> Result<String, ToolError> + Send + Sync + 'static,
    {
        self.handler = Arc::new(handler);
        self
    }

    /// Dotted path of the enclosing scope (`libem.match` for `libem.match.browse`).
    pub fn parent(&self) -> &str {
        self.name.rsplit_once('.').map(|(p, _)| p).unwrap_or("")
    }

    pub fn invoke(&self, ctx: &ToolContext<'_>, args: &ToolArgs) -> Result<String, ToolError> {
        for arg in self.args.iter().filter(|a| a.required) {
            if args.get(&arg.name).is_none() {
                return Err(ToolError::MissingArgument(arg.name.clone()));
            }
        }
        (self.handler)(ctx, args)
    }

    /// JSON-schema projection of the arguments, as used in tool-calling requests.
    pub fn parameters_schema(&self) -> Value {
        let properties: serde_json::Map<String, Value> = self
            .args
            .iter()
            .map(|a| {
                (
                    a.name.clone(),
                    json!({ "type": a.ty.json_type(), "description": a.description }),
                )
            })
            .collect();
        let required: Vec<&str> = self.args.iter().filter(|a| a.required).map(|a| a.name.as_str()).collect();
        json!({ "type": "object", "properties": properties, "required": required })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("invalid tool descriptor `{name}`: {reason}")]
    InvalidDescriptor { name: String, reason: String },
}

/// Registry of tools. Built once at startup and then shared read-only.
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolDescriptor>,
    scopes: BTreeSet<String>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a namespace that tools can be registered under even when no
    /// tool carries that exact name (e.g. `libem.tune`).
    pub fn declare_scope(&mut self, path: impl Into<String>) {
        self.scopes.insert(path.into());
    }

    pub fn register(&mut self, descriptor: ToolDescriptor) -> Result<(), RegistryError> {
        validate_descriptor(&descriptor)?;
        if self.tools.contains_key(&descriptor.name) {
            return Err(RegistryError::DuplicateTool(descriptor.name));
        }
        self.tools.insert(descriptor.name.clone(), descriptor);
        Ok(())
    }

    /// Looks `name` up first as `<scope>.<name>`, then as an absolute name,
    /// then as a globally unique short name.
    pub fn resolve(&self, name: &str, scope: Option<&str>) -> Result<&ToolDescriptor, RegistryError> {
        if let Some(scope) = scope.filter(|s| !s.is_empty()) {
            if let Some(tool) = self.tools.get(&format!("{scope}.{name}")) {
                return Ok(tool);
            }
        }
        if let Some(tool) = self.tools.get(name) {
            return Ok(tool);
        }
        let mut by_short = self.tools.values().filter(|t| t.short_name == name);
        match (by_short.next(), by_short.next()) {
            (Some(tool), None) => Ok(tool),
            _ => Err(RegistryError::UnknownTool(name.to_string())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// True when `path` names a tool, a declared scope, or a prefix of either.
    pub fn has_scope(&self, path: &str) -> bool {
        let prefix = format!("{path}.");
        self.scopes.contains(path)
            || self.tools.contains_key(path)
            || self.scopes.iter().any(|s| s.starts_with(&prefix))
            || self.tools.keys().any(|t| t.starts_with(&prefix))
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.keys().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.values()
    }
}

/// ASCII letter or underscore, then letters, digits or underscores.
pub fn is_identifier(segment: &str) -> bool {
    let mut chars = segment.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn validate_descriptor(d: &ToolDescriptor) -> Result<(), RegistryError> {
    let invalid = |reason: &str| RegistryError::InvalidDescriptor {
        name: d.name.clone(),
        reason: reason.to_string(),
    };
    if !d.name.split('.').all(is_identifier) {
        return Err(invalid("name must be a dotted path of identifiers"));
    }
    if d.short_name != d.name.rsplit('.').next().unwrap_or_default() {
        return Err(invalid("short_name must be the final path segment"));
    }
    let mut seen = BTreeSet::new();
    for arg in &d.args {
        if !seen.insert(arg.name.as_str()) {
            return Err(invalid(&format!("duplicate argument `{}`", arg.name)));
        }
    }
    Ok(())
}
