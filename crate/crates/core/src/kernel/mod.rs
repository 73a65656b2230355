//! Tool registry, hierarchical parameter tree and trace collector.

pub mod params;
pub mod registry;
pub mod trace;

pub use params::{ParamError, ParamKind, ParamValue, ParameterTree};
pub use registry::{ArgType, RegistryError, ToolArg, ToolArgs, ToolContext, ToolDescriptor, ToolError, ToolRegistry};
pub use trace::{TraceCollector, TraceEvent, TraceKind, TraceScope};
