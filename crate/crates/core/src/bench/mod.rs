//! Assembler and benchmark generator.
//!
//! [`generate_suite`] writes one directory per benchmark:
//! `main.sbf`, `libs/*.so`, `ground_truth.json` and `witness.json`, plus
//! the two analysis fixtures under `fixtures/`.

pub mod asm;
pub mod suite;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::recover_static;
use crate::engine::Opcode;
use crate::image::{emit_image, BinaryImage, ImageError, LoadedImage, Placement, MAIN_BASE};

pub use asm::{assemble, AsmError};
pub use suite::{fixtures, suite, Benchmark, LibSource};

pub const SUITE_SIZE: usize = 16;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("bad manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
}

/// Expected outcome for one benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub benchmark: String,
    pub mechanism: String,
    pub expected_libraries: Vec<String>,
    pub expected_min_objects: u64,
}

impl GroundTruth {
    pub fn check(&self) -> Result<(), String> {
        if self.expected_libraries.is_empty() {
            return Err("expected_libraries is empty".into());
        }
        if let Some(bad) = self.expected_libraries.iter().find(|l| !l.ends_with(".so")) {
            return Err(format!("library name {bad} does not end in .so"));
        }
        Ok(())
    }
}

/// Where everything for one benchmark lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchPaths {
    pub dir: PathBuf,
    pub main: PathBuf,
    pub libs: PathBuf,
    pub ground_truth: PathBuf,
    pub witness: PathBuf,
}

impl BenchPaths {
    pub fn new(dir: &Path) -> Self {
        BenchPaths {
            dir: dir.to_path_buf(),
            main: dir.join("main.sbf"),
            libs: dir.join("libs"),
            ground_truth: dir.join("ground_truth.json"),
            witness: dir.join("witness.json"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub benchmarks: Vec<GroundTruth>,
    pub fixtures: Vec<PathBuf>,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, BenchError> {
    r.map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    if let Some(parent) = path.parent() {
        io(parent, std::fs::create_dir_all(parent))?;
    }
    io(path, std::fs::write(path, bytes))
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s.into_bytes()
}

/// Writes the suite and fixtures under `out_dir`.
pub fn generate_suite(out_dir: &Path) -> Result<Manifest, BenchError> {
    let mut benchmarks = Vec::new();
    for b in suite()? {
        let p = BenchPaths::new(&out_dir.join(b.name));
        write(&p.main, &emit_image(&b.main)?)?;
        for lib in &b.libs {
            write(&p.libs.join(&lib.name), &emit_image(&lib.image)?)?;
        }
        write(&p.ground_truth, &json(&b.truth))?;
        write(&p.witness, &json(&b.witness))?;
        benchmarks.push(b.truth);
    }
    let mut fx = Vec::new();
    for (name, img) in fixtures()? {
        let path = out_dir.join("fixtures").join(name).join("main.sbf");
        write(&path, &emit_image(&img)?)?;
        fx.push(path);
    }
    Ok(Manifest {
        benchmarks,
        fixtures: fx,
    })
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, BenchError> {
    let text = io(path, std::fs::read_to_string(path))?;
    let gt: GroundTruth = serde_json::from_str(&text).map_err(|e| BenchError::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    gt.check().map_err(|msg| BenchError::Manifest {
        path: path.to_path_buf(),
        msg,
    })?;
    Ok(gt)
}

/// Benchmark directories (those holding a ground_truth.json), sorted.
pub fn list_benchmarks(dir: &Path) -> Result<Vec<BenchPaths>, BenchError> {
    let mut out = Vec::new();
    for entry in io(dir, std::fs::read_dir(dir))? {
        let entry = io(dir, entry)?;
        let p = BenchPaths::new(&entry.path());
        if p.ground_truth.is_file() {
            out.push(p);
        }
    }
    out.sort_by(|a, b| a.dir.cmp(&b.dir));
    Ok(out)
}

/// Opcodes outside the solver's invertible fragment.
pub const FORBIDDEN: [Opcode; 5] = [Opcode::Mul, Opcode::And, Opcode::Or, Opcode::Shl, Opcode::Shr];

/// Reachable instructions of `img` that fall outside the invertible fragment.
pub fn fragment_violations(img: &BinaryImage) -> Vec<(u64, Opcode)> {
    let loaded = LoadedImage::new(
        Arc::new(img.clone()),
        MAIN_BASE,
        "image".into(),
        "image".into(),
        Placement::Segments,
    );
    let cfg = recover_static(&[loaded], false);
    cfg.blocks
        .values()
        .flat_map(|b| b.insns.iter())
        .filter(|(_, i)| FORBIDDEN.contains(&i.opcode))
        .map(|(a, i)| (*a, i.opcode))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::parse_image;

    #[test]
    fn suite_shape() {
        let s = suite().unwrap();
        assert_eq!(s.len(), SUITE_SIZE);
        for b in &s {
            b.truth.check().unwrap();
            assert_eq!(b.truth.expected_libraries.len(), b.libs.len(), "{}", b.name);
            assert!(fragment_violations(&b.main).is_empty(), "{}", b.name);
            for l in &b.libs {
                assert!(fragment_violations(&l.image).is_empty(), "{}", l.name);
            }
        }
        let mechs: std::collections::BTreeSet<&str> = s.iter().map(|b| b.truth.mechanism.as_str()).collect();
        for m in ["internal-api", "memfd-fileless", "mmap-exec", "manual-load"] {
            assert!(mechs.contains(m), "{m}");
        }
    }

    #[test]
    fn images_round_trip() {
        for b in suite().unwrap() {
            let bytes = emit_image(&b.main).unwrap();
            assert_eq!(parse_image(&bytes).unwrap(), b.main);
            assert_eq!(emit_image(&parse_image(&bytes).unwrap()).unwrap(), bytes);
        }
    }

    #[test]
    fn manual_load_payload_is_first_symbol() {
        let s = suite().unwrap();
        let b = s.iter().find(|b| b.name == "manual_elf_load").unwrap();
        let img = &b.libs[0].image;
        assert_eq!(img.symbol_name(&img.symbols[0]), "payload_fn");
    }
}
