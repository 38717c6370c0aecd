//! The SBF container format and image loading.
//!
//! An SBF file is a small ELF analog: a 64-byte header followed by a segment
//! table, a symbol table, an import table, a string table and finally the raw
//! segment contents. All multi-byte fields are little-endian. Emission always
//! produces the canonical layout (tables in header order, then segment data,
//! no padding), so `emit_image(parse_image(b)) == b` holds for every file the
//! emitter itself produced.
//!
//! Loading places images on a fixed grid: the main executable at
//! [`MAIN_BASE`], every later image at the next free [`LAYOUT_GRANULE`]
//! boundary. Nothing is randomized, so identical load sequences always yield
//! identical layouts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::correlate::EventKind;
use crate::expr::Expr;
use crate::state::{FdKind, MapLabel, SimState};

pub const MAGIC: [u8; 4] = *b"SBF1";
pub const VERSION: u16 = 1;
pub const HEADER_SIZE: usize = 64;
pub const SEGMENT_ENTRY_SIZE: usize = 24;
pub const SYMBOL_ENTRY_SIZE: usize = 16;
pub const IMPORT_ENTRY_SIZE: usize = 8;

/// Base of the main executable.
pub const MAIN_BASE: u64 = 0x40_0000;
/// Alignment of every image base.
pub const LAYOUT_GRANULE: u64 = 0x10_0000;
/// Images are placed below this address; anonymous mappings live above it.
pub const IMAGE_AREA_END: u64 = 0x1000_0000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("truncated file: need {need} bytes, have {have}")]
    TruncatedFile { need: u64, have: u64 },
    #[error("segments {0} and {1} overlap")]
    OverlappingSegments(usize, usize),
    #[error("name offset {0:#x} does not reference a NUL-terminated string")]
    DanglingName(u32),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoadError {
    #[error("address space exhausted")]
    AddressSpaceExhausted,
    #[error("library not found: {0}")]
    LibraryNotFound(String),
    #[error("cannot parse {path}: {source}")]
    Parse { path: String, source: ImageError },
    #[error("backing of {0} holds symbolic bytes")]
    SymbolicBacking(String),
}

/// POSIX-style permission bits, shared by segment flags and `mmap` prot.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Perms(pub u32);

impl Perms {
    pub const NONE: Perms = Perms(0);
    pub const R: Perms = Perms(1);
    pub const W: Perms = Perms(2);
    pub const X: Perms = Perms(4);
    pub const RX: Perms = Perms(5);
    pub const RW: Perms = Perms(3);
    pub const RWX: Perms = Perms(7);

    pub fn contains(self, other: Perms) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn union(self, other: Perms) -> Perms {
        Perms(self.0 | other.0)
    }

    pub fn exec(self) -> bool {
        self.contains(Perms::X)
    }

    pub fn write(self) -> bool {
        self.contains(Perms::W)
    }
}

impl fmt::Display for Perms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = if self.contains(Perms::R) { 'r' } else { '-' };
        let w = if self.contains(Perms::W) { 'w' } else { '-' };
        let x = if self.contains(Perms::X) { 'x' } else { '-' };
        write!(f, "{r}{w}{x}")
    }
}

impl fmt::Debug for Perms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageType {
    Executable,
    Library,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SymbolKind {
    Function,
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub vaddr: u64,
    pub mem_size: u32,
    pub flags: Perms,
    /// File-backed contents; `data.len()` is the segment's file size.
    pub data: Vec<u8>,
}

impl Segment {
    pub fn file_size(&self) -> u32 {
        self.data.len() as u32
    }

    pub fn end(&self) -> u64 {
        self.vaddr + self.mem_size as u64
    }

    pub fn contains(&self, vaddr: u64) -> bool {
        vaddr >= self.vaddr && vaddr < self.end()
    }

    /// Byte at an image-relative address, zero past the file-backed part.
    pub fn byte_at(&self, vaddr: u64) -> Option<u8> {
        if !self.contains(vaddr) {
            return None;
        }
        Some(self.data.get((vaddr - self.vaddr) as usize).copied().unwrap_or(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolEntry {
    pub name_off: u32,
    pub kind: SymbolKind,
    pub value: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImportEntry {
    pub name_off: u32,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub image_type: ImageType,
    pub entry: u64,
    pub segments: Vec<Segment>,
    pub symbols: Vec<SymbolEntry>,
    pub imports: Vec<ImportEntry>,
    pub string_table: Vec<u8>,
}

impl BinaryImage {
    /// Resolves a string-table offset.
    pub fn name(&self, off: u32) -> Option<&str> {
        let tail = self.string_table.get(off as usize..)?;
        let nul = tail.iter().position(|&b| b == 0)?;
        std::str::from_utf8(&tail[..nul]).ok()
    }

    pub fn symbol_name(&self, sym: &SymbolEntry) -> &str {
        self.name(sym.name_off).unwrap_or("")
    }

    pub fn import_name(&self, ordinal: usize) -> Option<&str> {
        self.imports.get(ordinal).and_then(|imp| self.name(imp.name_off))
    }

    pub fn find_symbol(&self, name: &str) -> Option<&SymbolEntry> {
        self.symbols.iter().find(|s| self.symbol_name(s) == name)
    }

    pub fn function_symbols(&self) -> impl Iterator<Item = &SymbolEntry> {
        self.symbols.iter().filter(|s| s.kind == SymbolKind::Function)
    }

    pub fn segment_for(&self, vaddr: u64) -> Option<&Segment> {
        self.segments.iter().find(|s| s.contains(vaddr))
    }

    /// One past the highest image-relative address any segment occupies.
    pub fn extent(&self) -> u64 {
        self.segments.iter().map(Segment::end).max().unwrap_or(0)
    }

    /// Offsets of each table in the canonical layout, followed by the offset of
    /// every segment's data.
    pub fn canonical_layout(&self) -> CanonicalLayout {
        let seg_off = HEADER_SIZE as u64;
        let sym_off = seg_off + (self.segments.len() * SEGMENT_ENTRY_SIZE) as u64;
        let imp_off = sym_off + (self.symbols.len() * SYMBOL_ENTRY_SIZE) as u64;
        let str_off = imp_off + (self.imports.len() * IMPORT_ENTRY_SIZE) as u64;
        let mut cursor = str_off + self.string_table.len() as u64;
        let mut data_offs = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            data_offs.push(cursor);
            cursor += seg.data.len() as u64;
        }
        CanonicalLayout {
            seg_off,
            sym_off,
            imp_off,
            str_off,
            data_offs,
            total: cursor,
        }
    }

    /// Checks every structural invariant of the format.
    pub fn validate(&self) -> Result<(), ImageError> {
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.data.len() as u64 > seg.mem_size as u64 {
                return Err(ImageError::InvariantViolation(format!(
                    "segment {i}: file size exceeds memory size"
                )));
            }
            if seg.vaddr.checked_add(seg.mem_size as u64).is_none() {
                return Err(ImageError::InvariantViolation(format!("segment {i}: wraps")));
            }
        }
        for i in 0..self.segments.len() {
            for j in i + 1..self.segments.len() {
                let (a, b) = (&self.segments[i], &self.segments[j]);
                if a.mem_size > 0 && b.mem_size > 0 && a.vaddr < b.end() && b.vaddr < a.end() {
                    return Err(ImageError::OverlappingSegments(i, j));
                }
            }
        }
        for sym in &self.symbols {
            if self.name(sym.name_off).is_none() {
                return Err(ImageError::DanglingName(sym.name_off));
            }
            if self.segment_for(sym.value).is_none() {
                return Err(ImageError::InvariantViolation(format!(
                    "symbol {} at {:#x} lies outside every segment",
                    self.symbol_name(sym),
                    sym.value
                )));
            }
            if sym.kind == SymbolKind::Function && sym.value % 8 != 0 {
                return Err(ImageError::InvariantViolation(format!(
                    "function symbol {} is not instruction aligned",
                    self.symbol_name(sym)
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, imp) in self.imports.iter().enumerate() {
            let name = self.name(imp.name_off).ok_or(ImageError::DanglingName(imp.name_off))?;
            if imp.index as usize != i {
                return Err(ImageError::InvariantViolation(format!(
                    "import {name} has ordinal {} at position {i}",
                    imp.index
                )));
            }
            if !seen.insert(name) {
                return Err(ImageError::InvariantViolation(format!("duplicate import {name}")));
            }
        }
        if self.image_type == ImageType::Library && self.entry != 0 {
            return Err(ImageError::InvariantViolation("library entry must be 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalLayout {
    pub seg_off: u64,
    pub sym_off: u64,
    pub imp_off: u64,
    pub str_off: u64,
    pub data_offs: Vec<u64>,
    pub total: u64,
}

/// Incremental constructor that keeps the string table consistent.
#[derive(Debug, Clone)]
pub struct ImageBuilder {
    image: BinaryImage,
}

impl ImageBuilder {
    pub fn new(image_type: ImageType) -> Self {
        ImageBuilder {
            image: BinaryImage {
                image_type,
                entry: 0,
                segments: Vec::new(),
                symbols: Vec::new(),
                imports: Vec::new(),
                string_table: Vec::new(),
            },
        }
    }

    pub fn entry(&mut self, entry: u64) -> &mut Self {
        self.image.entry = entry;
        self
    }

    pub fn segment(&mut self, vaddr: u64, flags: Perms, data: Vec<u8>, mem_size: u32) -> &mut Self {
        self.image.segments.push(Segment {
            vaddr,
            mem_size,
            flags,
            data,
        });
        self
    }

    fn intern(&mut self, name: &str) -> u32 {
        let table = &self.image.string_table;
        let mut off = 0;
        while off < table.len() {
            let end = off + table[off..].iter().position(|&b| b == 0).unwrap_or(table.len() - off);
            if &table[off..end] == name.as_bytes() {
                return off as u32;
            }
            off = end + 1;
        }
        let off = self.image.string_table.len() as u32;
        self.image.string_table.extend_from_slice(name.as_bytes());
        self.image.string_table.push(0);
        off
    }

    pub fn symbol(&mut self, name: &str, kind: SymbolKind, value: u64) -> &mut Self {
        let name_off = self.intern(name);
        self.image.symbols.push(SymbolEntry { name_off, kind, value });
        self
    }

    /// Adds an import and returns its ordinal; repeated names reuse the slot.
    pub fn import(&mut self, name: &str) -> u32 {
        if let Some(i) = (0..self.image.imports.len()).find(|&i| self.image.import_name(i) == Some(name)) {
            return i as u32;
        }
        let name_off = self.intern(name);
        let index = self.image.imports.len() as u32;
        self.image.imports.push(ImportEntry { name_off, index });
        index
    }

    pub fn build(self) -> Result<BinaryImage, ImageError> {
        self.image.validate()?;
        Ok(self.image)
    }
}

fn rd_u16(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn rd_u32(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn rd_u64(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

fn check_range(bytes: &[u8], off: u64, len: u64) -> Result<(), ImageError> {
    let need = off.saturating_add(len);
    if need > bytes.len() as u64 {
        return Err(ImageError::TruncatedFile {
            need,
            have: bytes.len() as u64,
        });
    }
    Ok(())
}

/// True when `bytes` begins with the SBF magic.
pub fn looks_like_image(bytes: &[u8]) -> bool {
    bytes.len() >= HEADER_SIZE && bytes[..4] == MAGIC
}

pub fn parse_image(bytes: &[u8]) -> Result<BinaryImage, ImageError> {
    check_range(bytes, 0, HEADER_SIZE as u64)?;
    if bytes[..4] != MAGIC {
        return Err(ImageError::BadMagic);
    }
    let version = rd_u16(bytes, 0x04);
    if version != VERSION {
        return Err(ImageError::BadVersion(version));
    }
    let image_type = match rd_u16(bytes, 0x06) {
        0 => ImageType::Executable,
        1 => ImageType::Library,
        other => {
            return Err(ImageError::InvariantViolation(format!("unknown image type {other}")));
        }
    };
    if bytes[0x30..0x40].iter().any(|&b| b != 0) {
        return Err(ImageError::InvariantViolation("reserved header bytes are not zero".into()));
    }
    let entry = rd_u64(bytes, 0x08);
    let table = |off: usize, size: usize| -> Result<(usize, usize), ImageError> {
        let start = rd_u32(bytes, off) as u64;
        let count = rd_u32(bytes, off + 4) as u64;
        check_range(bytes, start, count * size as u64)?;
        Ok((start as usize, count as usize))
    };
    let (seg_off, seg_count) = table(0x10, SEGMENT_ENTRY_SIZE)?;
    let (sym_off, sym_count) = table(0x18, SYMBOL_ENTRY_SIZE)?;
    let (imp_off, imp_count) = table(0x20, IMPORT_ENTRY_SIZE)?;
    let (str_off, str_size) = table(0x28, 1)?;

    let mut segments = Vec::with_capacity(seg_count);
    for i in 0..seg_count {
        let e = seg_off + i * SEGMENT_ENTRY_SIZE;
        let vaddr = rd_u64(bytes, e);
        let mem_size = rd_u32(bytes, e + 8);
        let file_off = rd_u32(bytes, e + 12) as u64;
        let file_size = rd_u32(bytes, e + 16) as u64;
        let flags = rd_u32(bytes, e + 20);
        if flags & !7 != 0 {
            return Err(ImageError::InvariantViolation(format!("segment {i}: unknown flag bits")));
        }
        check_range(bytes, file_off, file_size)?;
        segments.push(Segment {
            vaddr,
            mem_size,
            flags: Perms(flags),
            data: bytes[file_off as usize..(file_off + file_size) as usize].to_vec(),
        });
    }
    let mut symbols = Vec::with_capacity(sym_count);
    for i in 0..sym_count {
        let e = sym_off + i * SYMBOL_ENTRY_SIZE;
        let kind = match rd_u32(bytes, e + 4) {
            0 => SymbolKind::Function,
            1 => SymbolKind::Object,
            other => {
                return Err(ImageError::InvariantViolation(format!("unknown symbol kind {other}")));
            }
        };
        symbols.push(SymbolEntry {
            name_off: rd_u32(bytes, e),
            kind,
            value: rd_u64(bytes, e + 8),
        });
    }
    let mut imports = Vec::with_capacity(imp_count);
    for i in 0..imp_count {
        let e = imp_off + i * IMPORT_ENTRY_SIZE;
        if rd_u32(bytes, e + 4) != 0 {
            return Err(ImageError::InvariantViolation(format!("import {i}: reserved field set")));
        }
        imports.push(ImportEntry {
            name_off: rd_u32(bytes, e),
            index: i as u32,
        });
    }
    let image = BinaryImage {
        image_type,
        entry,
        segments,
        symbols,
        imports,
        string_table: bytes[str_off..str_off + str_size].to_vec(),
    };
    image.validate()?;
    Ok(image)
}

pub fn emit_image(img: &BinaryImage) -> Result<Vec<u8>, ImageError> {
    img.validate()?;
    let layout = img.canonical_layout();
    if layout.total > u32::MAX as u64 {
        return Err(ImageError::InvariantViolation("image exceeds 4 GiB".into()));
    }
    let mut out = Vec::with_capacity(layout.total as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let ty: u16 = match img.image_type {
        ImageType::Executable => 0,
        ImageType::Library => 1,
    };
    out.extend_from_slice(&ty.to_le_bytes());
    out.extend_from_slice(&img.entry.to_le_bytes());
    for (off, count) in [
        (layout.seg_off, img.segments.len()),
        (layout.sym_off, img.symbols.len()),
        (layout.imp_off, img.imports.len()),
        (layout.str_off, img.string_table.len()),
    ] {
        out.extend_from_slice(&(off as u32).to_le_bytes());
        out.extend_from_slice(&(count as u32).to_le_bytes());
    }
    out.resize(HEADER_SIZE, 0);
    for (seg, &data_off) in img.segments.iter().zip(&layout.data_offs) {
        out.extend_from_slice(&seg.vaddr.to_le_bytes());
        out.extend_from_slice(&seg.mem_size.to_le_bytes());
        out.extend_from_slice(&(data_off as u32).to_le_bytes());
        out.extend_from_slice(&seg.file_size().to_le_bytes());
        out.extend_from_slice(&seg.flags.0.to_le_bytes());
    }
    for sym in &img.symbols {
        out.extend_from_slice(&sym.name_off.to_le_bytes());
        let kind: u32 = match sym.kind {
            SymbolKind::Function => 0,
            SymbolKind::Object => 1,
        };
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&sym.value.to_le_bytes());
    }
    for imp in &img.imports {
        out.extend_from_slice(&imp.name_off.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
    }
    out.extend_from_slice(&img.string_table);
    for seg in &img.segments {
        out.extend_from_slice(&seg.data);
    }
    debug_assert_eq!(out.len() as u64, layout.total);
    Ok(out)
}

/// How an image's bytes were placed in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Each segment at `base + vaddr` (the loader path).
    Segments,
    /// The whole file copied verbatim at `base` (an `mmap` of the file).
    RawFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub image: Arc<BinaryImage>,
    pub base: u64,
    /// Source identifier: host path, `/proc/self/fd/N`, or `/memfd:<name>`.
    pub path: String,
    /// Library name used for identity in reports (basename or memfd name).
    pub name: String,
    pub placement: Placement,
    /// Absolute start of every segment, parallel to `image.segments`.
    pub segment_addrs: Vec<u64>,
    /// Total bytes occupied for raw placements.
    pub raw_len: u64,
}

impl LoadedImage {
    pub fn new(image: Arc<BinaryImage>, base: u64, path: String, name: String, placement: Placement) -> Self {
        let (segment_addrs, raw_len) = match placement {
            Placement::Segments => (image.segments.iter().map(|s| base + s.vaddr).collect(), 0),
            Placement::RawFile => {
                let layout = image.canonical_layout();
                (layout.data_offs.iter().map(|off| base + off).collect(), layout.total)
            }
        };
        LoadedImage {
            image,
            base,
            path,
            name,
            placement,
            segment_addrs,
            raw_len,
        }
    }

    /// Memory ranges `(start, len, perms)` this image occupies.
    pub fn ranges(&self) -> Vec<(u64, u64, Perms)> {
        match self.placement {
            Placement::Segments => self
                .image
                .segments
                .iter()
                .zip(&self.segment_addrs)
                .filter(|(s, _)| s.mem_size > 0)
                .map(|(s, &a)| (a, s.mem_size as u64, s.flags))
                .collect(),
            Placement::RawFile => vec![(self.base, self.raw_len, Perms::NONE)],
        }
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.ranges().iter().any(|&(s, l, _)| addr >= s && addr < s + l)
    }

    /// Maps an absolute address back to an image-relative one.
    pub fn to_vaddr(&self, addr: u64) -> Option<u64> {
        self.image
            .segments
            .iter()
            .zip(&self.segment_addrs)
            .find_map(|(seg, &start)| {
                let span = match self.placement {
                    Placement::Segments => seg.mem_size as u64,
                    Placement::RawFile => seg.data.len() as u64,
                };
                (addr >= start && addr < start + span).then(|| seg.vaddr + (addr - start))
            })
    }

    pub fn to_absolute(&self, vaddr: u64) -> Option<u64> {
        self.image
            .segments
            .iter()
            .zip(&self.segment_addrs)
            .find(|(seg, _)| seg.contains(vaddr))
            .map(|(seg, &start)| start + (vaddr - seg.vaddr))
    }

    pub fn symbol_address(&self, name: &str) -> Option<u64> {
        self.image.find_symbol(name).and_then(|s| self.to_absolute(s.value))
    }

    pub fn entry_address(&self) -> Option<u64> {
        match self.image.image_type {
            ImageType::Executable => self.to_absolute(self.image.entry),
            ImageType::Library => None,
        }
    }

    pub fn is_library(&self) -> bool {
        self.image.image_type == ImageType::Library
    }
}

/// An executable address range, `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExecRegion {
    pub start: u64,
    pub end: u64,
}

impl ExecRegion {
    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr <= self.end
    }

    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Deterministic base-address allocator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressSpaceLayout {
    next_base: u64,
    limit: u64,
}

impl Default for AddressSpaceLayout {
    fn default() -> Self {
        AddressSpaceLayout {
            next_base: MAIN_BASE,
            limit: IMAGE_AREA_END,
        }
    }
}

impl AddressSpaceLayout {
    pub fn with_limit(limit: u64) -> Self {
        AddressSpaceLayout {
            next_base: MAIN_BASE,
            limit,
        }
    }

    pub fn next_base(&self) -> u64 {
        self.next_base
    }

    /// Reserves room for an image spanning `extent` bytes and returns its base.
    pub fn place(&mut self, extent: u64) -> Result<u64, LoadError> {
        let base = self.next_base;
        let end = base.checked_add(extent.max(1)).ok_or(LoadError::AddressSpaceExhausted)?;
        if end > self.limit {
            return Err(LoadError::AddressSpaceExhausted);
        }
        self.next_base = align_up(end, LAYOUT_GRANULE);
        Ok(base)
    }
}

pub fn align_up(v: u64, to: u64) -> u64 {
    v.div_ceil(to) * to
}

/// Basename of a path-like string.
pub fn library_name(path: &str) -> String {
    path.rsplit('/').next().unwrap_or(path).to_string()
}

/// Maps `img` into `state` at the next layout slot and registers it.
pub fn load_image(state: &mut SimState, img: Arc<BinaryImage>, path: &str, name: &str) -> Result<LoadedImage, LoadError> {
    let base = state.layout_mut().place(img.extent())?;
    let loaded = LoadedImage::new(img, base, path.to_string(), name.to_string(), Placement::Segments);
    for (seg, &start) in loaded.image.segments.iter().zip(&loaded.segment_addrs) {
        if seg.mem_size == 0 {
            continue;
        }
        state
            .memory_mut()
            .map(start, seg.mem_size as u64, seg.flags, MapLabel::Image(name.to_string()));
        state.memory_mut().store_concrete(start, &seg.data);
    }
    state.push_image(loaded.clone());
    Ok(loaded)
}

/// Where a `dynamic_load` request resolved to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedSource {
    Host(PathBuf),
    Descriptor { fd: i64, name: String },
}

/// Resolves a guest path to host bytes without loading anything.
pub fn resolve_host_path(search_paths: &[PathBuf], path: &str) -> Option<PathBuf> {
    let p = Path::new(path);
    if p.is_absolute() && p.is_file() {
        return Some(p.to_path_buf());
    }
    if !p.is_absolute() {
        for dir in search_paths {
            let cand = dir.join(p);
            if cand.is_file() {
                return Some(cand);
            }
        }
    }
    let base = library_name(path);
    if base.is_empty() {
        return None;
    }
    search_paths.iter().map(|d| d.join(&base)).find(|c| c.is_file())
}

fn proc_fd(path: &str) -> Option<i64> {
    path.strip_prefix("/proc/self/fd/")?.parse().ok()
}

/// Loads a library into a running state, reusing an existing mapping when the
/// same source was loaded before. Returns the image and whether it is new.
pub fn dynamic_load(state: &mut SimState, path: &str) -> Result<(LoadedImage, bool), LoadError> {
    let (identity, name, bytes) = if let Some(fd) = proc_fd(path) {
        let obj = state.fd(fd).ok_or_else(|| LoadError::LibraryNotFound(path.to_string()))?;
        let name = match &obj.kind {
            FdKind::Memfd { name } => name.clone(),
            FdKind::File { path } => library_name(path),
            FdKind::Socket { .. } => return Err(LoadError::LibraryNotFound(path.to_string())),
        };
        let bytes = concrete_bytes(&obj.backing).ok_or_else(|| LoadError::SymbolicBacking(path.to_string()))?;
        (path.to_string(), name, bytes)
    } else {
        let host = resolve_host_path(&state.loader().search_paths, path)
            .ok_or_else(|| LoadError::LibraryNotFound(path.to_string()))?;
        let bytes = std::fs::read(&host).map_err(|_| LoadError::LibraryNotFound(path.to_string()))?;
        let name = library_name(&host.to_string_lossy());
        (host.to_string_lossy().into_owned(), name, bytes)
    };
    if let Some(existing) = state.images().iter().find(|i| i.path == identity) {
        return Ok((existing.clone(), false));
    }
    let img = parse_image(&bytes).map_err(|source| LoadError::Parse {
        path: path.to_string(),
        source,
    })?;
    let loaded = load_image(state, Arc::new(img), &identity, &name)?;
    Ok((loaded, true))
}

fn concrete_bytes(backing: &[Expr]) -> Option<Vec<u8>> {
    backing.iter().map(|e| e.as_const().map(|v| v as u8)).collect()
}

/// Every executable mapped range, sorted by start.
pub fn exec_regions(state: &SimState) -> Vec<ExecRegion> {
    let mut out: Vec<ExecRegion> = state
        .memory()
        .mappings()
        .iter()
        .filter(|m| m.perms.exec() && m.len > 0)
        .map(|m| ExecRegion {
            start: m.start,
            end: m.start + m.len - 1,
        })
        .collect();
    out.sort();
    out
}

/// Records a load event for a freshly mapped image.
pub(crate) fn note_load(state: &mut SimState, loaded: &LoadedImage, requested: &str, mechanism: &str) -> u64 {
    state.record(EventKind::Load {
        path: requested.to_string(),
        library: loaded.name.clone(),
        base: loaded.base,
        mechanism: mechanism.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_segment_image() -> BinaryImage {
        let mut b = ImageBuilder::new(ImageType::Executable);
        b.segment(0, Perms::RX, vec![0; 8], 8);
        b.build().unwrap()
    }

    #[test]
    fn header_only_file_parses_to_empty_tables() {
        let mut bytes = vec![0u8; HEADER_SIZE];
        bytes[..4].copy_from_slice(&MAGIC);
        bytes[4..6].copy_from_slice(&1u16.to_le_bytes());
        for off in [0x10, 0x18, 0x20, 0x28] {
            bytes[off..off + 4].copy_from_slice(&64u32.to_le_bytes());
        }
        let img = parse_image(&bytes).unwrap();
        assert!(img.segments.is_empty() && img.symbols.is_empty() && img.imports.is_empty());
        assert!(img.string_table.is_empty());
        assert_eq!(emit_image(&img).unwrap(), bytes);
    }

    #[test]
    fn single_exec_segment_file_length() {
        let img = one_segment_image();
        let bytes = emit_image(&img).unwrap();
        assert_eq!(bytes.len(), 64 + 24 + img.string_table.len() + 8);
        assert_eq!(parse_image(&bytes).unwrap(), img);
    }

    #[test]
    fn symbol_rename_only_touches_string_table() {
        let build = |name: &str| {
            let mut b = ImageBuilder::new(ImageType::Library);
            b.segment(0, Perms::RX, vec![0x29, 0, 0, 0, 0, 0, 0, 0], 8);
            b.symbol(name, SymbolKind::Function, 0);
            emit_image(&b.build().unwrap()).unwrap()
        };
        let a = build("alpha_fn");
        let b = build("omega_fn");
        assert_eq!(a.len(), b.len());
        let img = parse_image(&a).unwrap();
        let layout = img.canonical_layout();
        let str_range = layout.str_off as usize..(layout.str_off as usize + img.string_table.len());
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if x != y {
                assert!(str_range.contains(&i), "byte {i} differs outside the string table");
            }
        }
    }

    #[test]
    fn parse_errors_name_the_invariant() {
        assert_eq!(parse_image(&[0u8; 10]), Err(ImageError::TruncatedFile { need: 64, have: 10 }));
        let mut bytes = emit_image(&one_segment_image()).unwrap();
        bytes[0] = b'X';
        assert_eq!(parse_image(&bytes), Err(ImageError::BadMagic));
        let mut bytes = emit_image(&one_segment_image()).unwrap();
        bytes[4] = 2;
        assert_eq!(parse_image(&bytes), Err(ImageError::BadVersion(2)));
        let mut bytes = emit_image(&one_segment_image()).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(parse_image(&bytes), Err(ImageError::TruncatedFile { .. })));
    }

    #[test]
    fn overlapping_segments_rejected() {
        let mut b = ImageBuilder::new(ImageType::Executable);
        b.segment(0, Perms::RX, vec![0; 8], 16);
        b.segment(8, Perms::RW, vec![], 16);
        assert_eq!(b.build(), Err(ImageError::OverlappingSegments(0, 1)));
    }

    #[test]
    fn dangling_name_rejected() {
        let mut b = ImageBuilder::new(ImageType::Library);
        b.segment(0, Perms::RX, vec![0; 8], 8);
        b.symbol("f", SymbolKind::Function, 0);
        let mut img = b.build().unwrap();
        img.symbols[0].name_off = 40;
        assert_eq!(img.validate(), Err(ImageError::DanglingName(40)));
        // Strip the terminator so the only name runs off the table.
        img.symbols[0].name_off = 0;
        img.string_table.pop();
        assert_eq!(img.validate(), Err(ImageError::DanglingName(0)));
    }

    #[test]
    fn library_entry_must_be_zero() {
        let mut b = ImageBuilder::new(ImageType::Library);
        b.segment(0, Perms::RX, vec![0; 16], 16);
        b.entry(8);
        assert!(matches!(b.build(), Err(ImageError::InvariantViolation(_))));
    }

    #[test]
    fn layout_places_on_granule() {
        let mut layout = AddressSpaceLayout::default();
        assert_eq!(layout.place(0x2000).unwrap(), MAIN_BASE);
        assert_eq!(layout.place(0x10).unwrap(), 0x50_0000);
        assert_eq!(layout.place(0x10_0001).unwrap(), 0x60_0000);
        assert_eq!(layout.place(1).unwrap(), 0x80_0000);
        let mut tight = AddressSpaceLayout::with_limit(0x50_0000);
        tight.place(0x10).unwrap();
        assert_eq!(tight.place(0x10), Err(LoadError::AddressSpaceExhausted));
    }

    #[test]
    fn raw_placement_translates_through_file_offsets() {
        let mut b = ImageBuilder::new(ImageType::Library);
        b.segment(0x1000, Perms::RX, vec![0; 16], 16);
        b.symbol("f", SymbolKind::Function, 0x1008);
        let img = Arc::new(b.build().unwrap());
        let data_off = img.canonical_layout().data_offs[0];
        let raw = LoadedImage::new(img.clone(), 0x1000_0000, "x".into(), "x".into(), Placement::RawFile);
        assert_eq!(raw.symbol_address("f"), Some(0x1000_0000 + data_off + 8));
        assert_eq!(raw.to_vaddr(0x1000_0000 + data_off + 8), Some(0x1008));
        let seg = LoadedImage::new(img, 0x50_0000, "x".into(), "x".into(), Placement::Segments);
        assert_eq!(seg.symbol_address("f"), Some(0x50_1008));
    }
}
