mod common;

#[path = "golden/rerank.rs"]
mod rerank;

use std::sync::Arc;

use em_cli::scaffold::{render, scaffold, ScaffoldError};
use em_core::browse::FixtureProvider;
use em_core::kernel::ToolRegistry;
use em_core::tools::default_registry;

fn registry() -> ToolRegistry {
    default_registry(Arc::new(FixtureProvider::new())).unwrap()
}

#[test]
fn generator_matches_golden_file() {
    let golden = std::fs::read_to_string(common::golden("rerank.rs")).unwrap();
    assert_eq!(render("rerank", "libem.match").unwrap(), golden);
}

#[test]
fn generated_tool_resolves_in_the_default_registry() {
    let mut registry = registry();
    rerank::register(&mut registry).unwrap();
    let tool = registry.resolve("rerank", Some("libem.match")).unwrap();
    assert_eq!(tool.name, rerank::NAME);
    assert_eq!(tool.parent(), "libem.match");
    assert!(matches!(
        rerank::register(&mut registry),
        Err(em_core::kernel::RegistryError::DuplicateTool(_))
    ));
}

#[test]
fn writes_once_then_refuses() {
    let dir = tempfile::tempdir().unwrap();
    let registry = registry();
    let path = scaffold("rerank", "libem.match", dir.path(), &registry).unwrap();
    assert_eq!(path, dir.path().join("rerank.rs"));
    assert!(matches!(
        scaffold("rerank", "libem.match", dir.path(), &registry),
        Err(ScaffoldError::TargetExists(_))
    ));
    assert!(matches!(
        scaffold("browse", "libem.match", dir.path(), &registry),
        Err(ScaffoldError::TargetExists(_))
    ));
    assert!(matches!(
        scaffold("x", "libem.nowhere", dir.path(), &registry),
        Err(ScaffoldError::UnknownParent(_))
    ));
    assert!(matches!(
        scaffold("1x", "libem.match", dir.path(), &registry),
        Err(ScaffoldError::InvalidName(_))
    ));
}
