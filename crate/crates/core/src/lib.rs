//! CFG recovery for binaries that load code at run time.
//!
//! The crate pairs a symbolic executor over a small fixed-width ISA with
//! API hooks, instruction breakpoints and a correlation store, and compares
//! the resulting module CFG against a static baseline.

pub mod bench;
pub mod cfg;
pub mod correlate;
pub mod engine;
pub mod evalpipe;
pub mod expr;
pub mod hooks;
pub mod image;
pub mod state;
pub mod tracker;
