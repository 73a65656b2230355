//! `libem.match.rerank` tool.

use em_core::kernel::{
    ArgType, RegistryError, ToolArg, ToolArgs, ToolContext, ToolDescriptor, ToolError, ToolRegistry,
};

pub const NAME: &str = "libem.match.rerank";

pub fn descriptor() -> ToolDescriptor {
    ToolDescriptor::new(NAME, "Describe what rerank does for the model.")
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
        let tool = registry.resolve("rerank", Some("libem.match")).unwrap();
        let params = ParameterTree::defaults();
        let trace = TraceScope::detached();
        let ctx = ToolContext { params: &params, pair: None, trace: &trace };
        let args: ToolArgs = [("input", "hello")].into_iter().collect();
        assert_eq!(tool.invoke(&ctx, &args).unwrap(), "hello");
        assert!(tool.invoke(&ctx, &ToolArgs::default()).is_err());
    }
}
