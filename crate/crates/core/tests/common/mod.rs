//! Shared helpers for integration tests.
#![allow(dead_code)]

pub mod dot;
pub mod oracle;

use std::path::Path;

use dyncfg::bench::{generate_suite, BenchPaths, Manifest};
use serde_json::Value;

pub fn generate(dir: &Path) -> Manifest {
    generate_suite(dir).expect("suite generates")
}

pub fn bench(dir: &Path, name: &str) -> BenchPaths {
    BenchPaths::new(&dir.join(name))
}

/// Drops every "seconds" key, recursively.
pub fn strip_seconds(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("seconds");
            m.values_mut().for_each(strip_seconds);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_seconds),
        _ => {}
    }
}
