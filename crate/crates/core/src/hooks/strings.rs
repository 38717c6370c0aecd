//! String arguments: concrete decoding and speculative resolution of symbolic
//! library names against a pool of plausible candidates.

use std::path::PathBuf;

use crate::expr::{Expr, SatResult};
use crate::image::BinaryImage;
use crate::state::SimState;

use super::HookError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    Utf16Le,
}

impl Encoding {
    pub fn unit(self) -> usize {
        match self {
            Encoding::Ascii => 1,
            Encoding::Utf16Le => 2,
        }
    }

    /// Bytes of `text` followed by the terminator.
    pub fn encode(self, text: &str) -> Vec<u8> {
        match self {
            Encoding::Ascii => text.bytes().chain([0]).collect(),
            Encoding::Utf16Le => text
                .encode_utf16()
                .chain([0])
                .flat_map(|u| u.to_le_bytes())
                .collect(),
        }
    }

    fn decode(self, bytes: &[u8]) -> Result<String, HookError> {
        match self {
            Encoding::Ascii => String::from_utf8(bytes.to_vec()).map_err(|_| HookError::DecodeError("utf-8")),
            Encoding::Utf16Le => {
                let units: Vec<u16> = bytes.chunks(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
                String::from_utf16(&units).map_err(|_| HookError::DecodeError("utf-16le"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extraction {
    ConcreteString(String),
    SymbolicPointer,
    /// Unresolved string bytes, terminator included when one was found.
    SymbolicString(Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    SearchPath,
    BinaryScan,
    DiscoveredLibrary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub text: String,
    pub provenance: Provenance,
}

/// Ordered, duplicate-free list of plausible library names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidatePool {
    pub entries: Vec<Candidate>,
}

impl CandidatePool {
    pub fn push(&mut self, text: &str, provenance: Provenance) -> bool {
        if self.entries.iter().any(|c| c.text == text) {
            return false;
        }
        self.entries.push(Candidate {
            text: text.to_string(),
            provenance,
        });
        true
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|c| c.text.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// NUL-terminated printable runs containing ".so".
pub fn scan_so_strings(bytes: &[u8]) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if (0x20..0x7F).contains(&b) {
            continue;
        }
        if b == 0 && i > start {
            let run = &bytes[start..i];
            if run.windows(3).any(|w| w == b".so") {
                out.push(String::from_utf8_lossy(run).into_owned());
            }
        }
        start = i + 1;
    }
    out
}

/// Library-name strings in an image's segments and string table.
pub fn image_so_strings(img: &BinaryImage) -> Vec<String> {
    let mut out = Vec::new();
    for seg in &img.segments {
        out.extend(scan_so_strings(&seg.data));
    }
    out.extend(scan_so_strings(&img.string_table));
    out
}

/// Search-directory listings, then strings in the main program, then strings
/// in every library discovered so far.
pub fn get_preloaded_candidates(s: &SimState, search_paths: &[PathBuf]) -> CandidatePool {
    let mut pool = CandidatePool::default();
    for dir in search_paths {
        let Ok(rd) = std::fs::read_dir(dir) else {
            continue;
        };
        let mut names: Vec<String> = rd
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".so"))
            .collect();
        names.sort();
        for n in names {
            pool.push(&n, Provenance::SearchPath);
        }
    }
    for img in s.images().iter().filter(|i| !i.is_library()) {
        for t in image_so_strings(&img.image) {
            pool.push(&t, Provenance::BinaryScan);
        }
    }
    for img in s.images().iter().filter(|i| i.is_library()) {
        for t in image_so_strings(&img.image) {
            pool.push(&t, Provenance::DiscoveredLibrary);
        }
    }
    for t in &s.loader().extra_candidates {
        pool.push(t, Provenance::DiscoveredLibrary);
    }
    pool
}

/// Reads string units at `p` up to `max_len` bytes. The terminator, when
/// found, is the last element.
fn read_units(s: &mut SimState, p: u64, max_len: usize, enc: Encoding) -> Vec<Expr> {
    let unit = enc.unit();
    let mut data = Vec::new();
    let mut off = 0u64;
    while data.len() + unit <= max_len.max(unit) {
        let bytes = s.read_bytes(p.wrapping_add(off), unit);
        let terminator = bytes.iter().all(|b| b.as_const() == Some(0));
        data.extend(bytes);
        off += unit as u64;
        if terminator {
            break;
        }
    }
    data
}

/// Resolves a string argument. Symbolic bytes are matched against the
/// candidate pool; the first satisfiable candidate is asserted.
pub fn unified_string_extraction(
    s: &mut SimState,
    p: &Expr,
    max_len: usize,
    enc: Encoding,
) -> Result<Extraction, HookError> {
    let search = s.loader().search_paths.clone();
    let pool = get_preloaded_candidates(s, &search);
    extract_with_pool(s, p, max_len, enc, &pool)
}

/// As [`unified_string_extraction`] with an explicit pool.
pub fn extract_with_pool(
    s: &mut SimState,
    p: &Expr,
    max_len: usize,
    enc: Encoding,
    pool: &CandidatePool,
) -> Result<Extraction, HookError> {
    if p.is_symbolic() {
        return Ok(Extraction::SymbolicPointer);
    }
    let addr = p.as_const().unwrap();
    let data = read_units(s, addr, max_len, enc);
    if let Some(bytes) = data.iter().map(|b| b.as_const().map(|v| v as u8)).collect::<Option<Vec<u8>>>() {
        let unit = enc.unit();
        let body = match bytes.len() >= unit && bytes[bytes.len() - unit..].iter().all(|&b| b == 0) {
            true => &bytes[..bytes.len() - unit],
            false => &bytes[..],
        };
        return enc.decode(body).map(Extraction::ConcreteString);
    }
    for cand in pool.texts() {
        let code = enc.encode(cand);
        if code.len() > data.len() {
            continue;
        }
        let eqs: Vec<Expr> = code.iter().zip(&data).map(|(&c, d)| d.eq(&Expr::c8(c))).collect();
        if eqs.iter().any(|e| e.is_false()) {
            continue;
        }
        match s.satisfiable(&eqs) {
            SatResult::Sat(_) => {
                for e in eqs {
                    s.add_constraint(e);
                }
                return Ok(Extraction::ConcreteString(cand.to_string()));
            }
            SatResult::Unknown => s.warn(format!("solver gave up testing candidate {cand}")),
            SatResult::Unsat => {}
        }
    }
    Ok(Extraction::SymbolicString(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Solver, VarOrigin};
    use crate::image::Perms;
    use crate::state::{InputMode, LoaderConfig, MapLabel};
    use std::sync::Arc;

    fn state() -> SimState {
        let mut s = SimState::new(Arc::new(LoaderConfig::default()), InputMode::Symbolic, Solver::default());
        s.memory_mut().map(0x1000, 0x1000, Perms::RW, MapLabel::Anonymous);
        s
    }

    fn pool(names: &[&str]) -> CandidatePool {
        let mut p = CandidatePool::default();
        for n in names {
            p.push(n, Provenance::SearchPath);
        }
        p
    }

    #[test]
    fn symbolic_pointer() {
        let mut s = state();
        let p = Expr::var("ptr", 64, VarOrigin::Test);
        assert_eq!(
            extract_with_pool(&mut s, &p, 256, Encoding::Ascii, &pool(&[])),
            Ok(Extraction::SymbolicPointer)
        );
    }

    #[test]
    fn concrete_ascii_and_utf16() {
        let mut s = state();
        s.memory_mut().store_concrete(0x1000, b"libm.so\0");
        let got = extract_with_pool(&mut s, &Expr::c64(0x1000), 256, Encoding::Ascii, &pool(&[]));
        assert_eq!(got, Ok(Extraction::ConcreteString("libm.so".into())));
        s.memory_mut().store_concrete(0x1100, &Encoding::Utf16Le.encode("libw.so"));
        let got = extract_with_pool(&mut s, &Expr::c64(0x1100), 256, Encoding::Utf16Le, &pool(&[]));
        assert_eq!(got, Ok(Extraction::ConcreteString("libw.so".into())));
    }

    #[test]
    fn invalid_bytes_are_a_decode_error() {
        let mut s = state();
        s.memory_mut().store_concrete(0x1000, &[0xFF, 0xFE, 0]);
        let got = extract_with_pool(&mut s, &Expr::c64(0x1000), 256, Encoding::Ascii, &pool(&[]));
        assert!(matches!(got, Err(HookError::DecodeError(_))));
    }

    #[test]
    fn symbolic_bytes_resolve_to_candidate() {
        let mut s = state();
        let bytes = s.network_bytes(4, 16, 0);
        s.write_bytes(0x1000, &bytes);
        let got = extract_with_pool(&mut s, &Expr::c64(0x1000), 256, Encoding::Ascii, &pool(&["libpayload.so"]));
        assert_eq!(got, Ok(Extraction::ConcreteString("libpayload.so".into())));
        let code = Encoding::Ascii.encode("libpayload.so");
        for (i, &c) in code.iter().enumerate() {
            assert_eq!(s.eval(&bytes[i]), Some(c as u64));
        }
    }

    #[test]
    fn scan_finds_so_runs() {
        let blob = b"\x01\x02libx.so\0junk\0/opt/liby.so.1\0libz.so";
        assert_eq!(scan_so_strings(blob), vec!["libx.so", "/opt/liby.so.1"]);
    }
}
