//! The built-in toolchain: model-callable tools and the default registry.

use std::sync::Arc;

use crate::browse::{browse_tool, SearchProvider};
use crate::kernel::{ArgType, RegistryError, ToolArg, ToolDescriptor, ToolError, ToolRegistry};
use crate::prepare::{prepare_pair, PrepareOptions};

pub const PREPARE_TOOL: &str = "libem.prepare";
pub const BROWSE_TOOL: &str = "libem.match.browse";
/// Scope the match loop resolves tool calls in.
pub const MATCH_SCOPE: &str = "libem.match";

/// Namespaces of the toolchain hierarchy.
pub const SCOPES: &[&str] = &[
    "libem",
    "libem.match",
    "libem.prepare",
    "libem.tune",
    "libem.calibrate",
    "libem.optimize",
];

/// Model-callable `libem.prepare`: re-serializes the current pair, optionally
/// with different schema, normalization or attribute choices.
pub fn prepare_tool() -> ToolDescriptor {
    ToolDescriptor::new(
        PREPARE_TOOL,
        "Re-serialize the two entities being matched, e.g. with attribute names shown or with only some attributes kept.",
    )
    .arg(ToolArg::new("schema", ArgType::Boolean, "Show attribute names next to values", false))
    .arg(ToolArg::new(
        "attributes",
        ArgType::Text,
        "Comma-separated attribute names to keep",
        false,
    ))
    .arg(ToolArg::new("normalize", ArgType::Boolean, "Lowercase values and collapse whitespace", false))
    .handler(|ctx, args| {
        let pair = ctx
            .pair
            .ok_or_else(|| ToolError::Failed("no entity pair is being matched".into()))?;
        let mut options = PrepareOptions::from_params(ctx.params).map_err(|e| ToolError::Failed(e.to_string()))?;
        if let Some(schema) = args.bool("schema")? {
            options.schema_on = schema;
        }
        if let Some(normalize) = args.bool("normalize")? {
            options.normalize = normalize;
        }
        if let Some(names) = args.get("attributes") {
            options = options.keep_only(names.split(',').map(str::trim).filter(|n| !n.is_empty()));
        }
        Ok(prepare_pair(pair, &options).render(&options.pair_separator))
    })
}

/// Registry with the built-in tools and the toolchain scopes declared.
pub fn default_registry(search: Arc<dyn SearchProvider>) -> Result<ToolRegistry, RegistryError> {
    let mut registry = ToolRegistry::new();
    for scope in SCOPES {
        registry.declare_scope(*scope);
    }
    registry.register(prepare_tool())?;
    registry.register(browse_tool(search))?;
    Ok(registry)
}
