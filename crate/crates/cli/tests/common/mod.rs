#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use em_core::backend::MockBackend;
use em_core::browse::FixtureProvider;
use em_core::catalog::CatalogStore;
use em_core::tools::default_registry;
use em_core::{Matcher, ParameterTree};
use em_cli::service::{self, ServiceState};

/// Fixtures shared with the core crate's tests.
pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Runs `em` in `cwd` with no `EM_*` variables except the catalog dir.
pub fn em(cwd: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_em"));
    for (key, _) in std::env::vars() {
        if key.starts_with("EM_") {
            cmd.env_remove(key);
        }
    }
    cmd.env("EM_CATALOG_DIR", cwd.join("catalog"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("em runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn matcher(script: &str) -> Matcher {
    let search = FixtureProvider::load(fixture("search.jsonl")).unwrap();
    let registry = default_registry(Arc::new(search)).unwrap();
    Matcher::new(Arc::new(registry), Arc::new(MockBackend::parse(script).unwrap()))
}

/// A running service; dropped at the end of the test with its runtime.
pub struct Server {
    pub addr: SocketAddr,
    _runtime: tokio::runtime::Runtime,
}

pub fn start_server(script: &str, catalog: &Path) -> Server {
    let state = ServiceState {
        matcher: matcher(script),
        defaults: ParameterTree::defaults(),
        store: CatalogStore::new(catalog),
    };
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    runtime.spawn(service::serve(listener, state, std::future::pending()));
    Server {
        addr,
        _runtime: runtime,
    }
}

/// Minimal HTTP/1.1 exchange: returns the status code and body.
pub fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let body = body.unwrap_or("");
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, rest) = raw.split_once("\r\n\r\n").expect("response head");
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        dechunk(rest)
    } else {
        rest.to_string()
    };
    (status, body)
}

fn dechunk(mut rest: &str) -> String {
    let mut out = String::new();
    while let Some((size, tail)) = rest.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
        if n == 0 {
            break;
        }
        out.push_str(&tail[..n]);
        rest = &tail[n + 2..];
    }
    out
}
