//! `em scaffold`: writes a stub tool module for a new toolchain entry.

use std::io::Write;
use std::path::{Path, PathBuf};

use em_core::kernel::registry::is_identifier;
use em_core::kernel::ToolRegistry;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScaffoldError {
    #[error("`{0}` is not a valid tool name (letters, digits and underscores, not starting with a digit)")]
    InvalidName(String),
    #[error("unknown parent scope `{0}`")]
    UnknownParent(String),
    #[error("{0} already exists")]
    TargetExists(String),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

const TEMPLATE: &str = r#"//! `__FULL__` tool.

use em_core::kernel::{
    ArgType, RegistryError, ToolArg, ToolArgs, ToolContext, ToolDescriptor, ToolError, ToolRegistry,
};

pub const NAME: &str = "__FULL__";

pub fn descriptor() -> ToolDescriptor {
    ToolDescriptor::new(NAME, "Describe what __NAME__ does for the model.")
        .arg(ToolArg::new("input", ArgType::Text, "Text to work on", true))
        .handler(handle)
}

fn handle(_ctx: &ToolContext<'_>, args: &ToolArgs) -> Result<String, ToolError> {
    let input = args.require_text("input")?;
    // Replace with the real behaviour.
    Ok(input.to_string())
}

pub fn register(registry: &mut ToolRegistry) -> Result<(), RegistryError> {
    registry.register(descriptor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use em_core::kernel::TraceScope;
    use em_core::ParameterTree;

    #[test]
    fn registers_and_echoes_input() {
        let mut registry = ToolRegistry::new();
        register(&mut registry).unwrap();
        let tool = registry.resolve("__NAME__", Some("__PARENT__")).unwrap();
        let params = ParameterTree::defaults();
        let trace = TraceScope::detached();
        let ctx = ToolContext { params: &params, pair: None, trace: &trace };
        let args: ToolArgs = [("input", "hello")].into_iter().collect();
        assert_eq!(tool.invoke(&ctx, &args).unwrap(), "hello");
        assert!(tool.invoke(&ctx, &ToolArgs::default()).is_err());
    }
}
"#;

/// Source of the stub module for tool `name` under `parent`.
pub fn render(name: &str, parent: &str) -> Result<String, ScaffoldError> {
    if !is_identifier(name) {
        return Err(ScaffoldError::InvalidName(name.to_string()));
    }
    if parent.is_empty() || !parent.split('.').all(is_identifier) {
        return Err(ScaffoldError::UnknownParent(parent.to_string()));
    }
    Ok(TEMPLATE
        .replace("__FULL__", &format!("{parent}.{name}"))
        .replace("__PARENT__", parent)
        .replace("__NAME__", name))
}

/// Writes `<out_dir>/<name>.rs`. The parent must be a scope or tool known
/// to `registry`, and the target file must not exist yet.
pub fn scaffold(name: &str, parent: &str, out_dir: &Path, registry: &ToolRegistry) -> Result<PathBuf, ScaffoldError> {
    let source = render(name, parent)?;
    if !registry.has_scope(parent) {
        return Err(ScaffoldError::UnknownParent(parent.to_string()));
    }
    let full = format!("{parent}.{name}");
    if registry.contains(&full) {
        return Err(ScaffoldError::TargetExists(format!("tool `{full}`")));
    }
    let io = |path: &Path, e: std::io::Error| ScaffoldError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let target = out_dir.join(format!("{name}.rs"));
    let mut file = match std::fs::OpenOptions::new().write(true).create_new(true).open(&target) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Err(ScaffoldError::TargetExists(target.display().to_string()))
        }
        Err(e) => return Err(io(&target, e)),
    };
    file.write_all(source.as_bytes()).map_err(|e| io(&target, e))?;
    Ok(target)
}
