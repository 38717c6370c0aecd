//! Execution state of one analysis path.
//!
//! Memory is byte-granular: every byte holds an 8-bit [`Expr`]. Bytes live in
//! 256-byte pages shared copy-on-write between forked states, so a fork is
//! cheap and a child's writes never reach its parent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlate::{CorrelationStore, EventKind, EventRecord};
use crate::expr::{ConstraintSet, Expr, SatResult, Solver, VarOrigin};
use crate::image::{AddressSpaceLayout, LoadedImage, Perms, Placement};

/// Lowest address of the stack mapping.
pub const STACK_BASE: u64 = 0x7FFF_0000_0000;
pub const STACK_SIZE: u64 = 0x10_0000;
pub const STACK_TOP: u64 = STACK_BASE + STACK_SIZE;
/// Anonymous and file mappings are handed out from here upward.
pub const MMAP_BASE: u64 = 0x1000_0000;
pub const MMAP_GRANULE: u64 = 0x10_0000;
/// Largest region one guest request may map.
pub const MAX_REGION: u64 = 1 << 32;
/// Return address planted below the entry frame and under signal handlers.
pub const RETURN_SENTINEL: u64 = 0x7000_FFFF_FFF0;
pub const SP: usize = 15;

const PAGE_BITS: u32 = 8;
const PAGE_SIZE: u64 = 1 << PAGE_BITS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("branch condition is infeasible")]
    InfeasibleBranch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapLabel {
    Image(String),
    Stack,
    Anonymous,
    File(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mapping {
    pub start: u64,
    pub len: u64,
    pub perms: Perms,
    pub label: MapLabel,
}

impl Mapping {
    pub fn end(&self) -> u64 {
        self.start + self.len
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr < self.end()
    }
}

#[derive(Clone)]
struct Page {
    bytes: Vec<Option<Expr>>,
}

impl Page {
    fn new() -> Self {
        Page {
            bytes: vec![None; PAGE_SIZE as usize],
        }
    }
}

/// Paged byte store plus the permission map.
/// Length of `[start, start+len)` cut off at the top of the address space.
fn clamp_len(start: u64, len: u64) -> u64 {
    len.min(u64::MAX - start)
}

#[derive(Clone, Default)]
pub struct Memory {
    pages: BTreeMap<u64, Arc<Page>>,
    mappings: Vec<Mapping>,
}

impl std::fmt::Debug for Memory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Memory")
            .field("pages", &self.pages.len())
            .field("mappings", &self.mappings)
            .finish()
    }
}

impl Memory {
    pub fn mappings(&self) -> &[Mapping] {
        &self.mappings
    }

    pub fn mapping_at(&self, addr: u64) -> Option<&Mapping> {
        let i = self.mappings.partition_point(|m| m.end() <= addr);
        self.mappings.get(i).filter(|m| m.contains(addr))
    }

    pub fn perms_at(&self, addr: u64) -> Option<Perms> {
        self.mapping_at(addr).map(|m| m.perms)
    }

    fn carve(&mut self, start: u64, len: u64) -> Vec<Mapping> {
        let len = clamp_len(start, len);
        if len == 0 {
            return Vec::new();
        }
        let end = start + len;
        let mut kept = Vec::with_capacity(self.mappings.len() + 1);
        let mut removed = Vec::new();
        for m in self.mappings.drain(..) {
            if m.end() <= start || m.start >= end {
                kept.push(m);
                continue;
            }
            if m.start < start {
                kept.push(Mapping {
                    len: start - m.start,
                    ..m.clone()
                });
            }
            if m.end() > end {
                kept.push(Mapping {
                    start: end,
                    len: m.end() - end,
                    ..m.clone()
                });
            }
            let lo = m.start.max(start);
            let hi = m.end().min(end);
            removed.push(Mapping {
                start: lo,
                len: hi - lo,
                ..m
            });
        }
        kept.sort_by_key(|m| m.start);
        self.mappings = kept;
        removed
    }

    /// Maps `[start, start+len)`, replacing whatever was mapped there. The
    /// range reads as zero until written.
    pub fn map(&mut self, start: u64, len: u64, perms: Perms, label: MapLabel) {
        let len = clamp_len(start, len);
        if len == 0 {
            return;
        }
        self.carve(start, len);
        self.clear(start, len);
        let i = self.mappings.partition_point(|m| m.start < start);
        self.mappings.insert(
            i,
            Mapping {
                start,
                len,
                perms,
                label,
            },
        );
    }

    pub fn unmap(&mut self, start: u64, len: u64) {
        self.carve(start, len);
        self.clear(start, len);
    }

    /// Changes permissions on the mapped parts of a range and returns the
    /// previous pieces.
    pub fn protect(&mut self, start: u64, len: u64, perms: Perms) -> Vec<Mapping> {
        let old = self.carve(start, len);
        for piece in &old {
            let i = self.mappings.partition_point(|m| m.start < piece.start);
            self.mappings.insert(
                i,
                Mapping {
                    perms,
                    ..piece.clone()
                },
            );
        }
        old
    }

    fn clear(&mut self, start: u64, len: u64) {
        let len = clamp_len(start, len);
        if len == 0 {
            return;
        }
        let first = start >> PAGE_BITS;
        let last = (start + len - 1) >> PAGE_BITS;
        let keys: Vec<u64> = self.pages.range(first..=last).map(|(k, _)| *k).collect();
        for k in keys {
            let page_start = k << PAGE_BITS;
            if page_start >= start && page_start + PAGE_SIZE <= start + len {
                self.pages.remove(&k);
            } else {
                let page = Arc::make_mut(self.pages.get_mut(&k).unwrap());
                for (i, slot) in page.bytes.iter_mut().enumerate() {
                    let a = page_start + i as u64;
                    if a >= start && a < start + len {
                        *slot = None;
                    }
                }
            }
        }
    }

    /// The stored byte, if any was ever written.
    pub fn byte(&self, addr: u64) -> Option<&Expr> {
        self.pages
            .get(&(addr >> PAGE_BITS))
            .and_then(|p| p.bytes[(addr & (PAGE_SIZE - 1)) as usize].as_ref())
    }

    pub fn set_byte(&mut self, addr: u64, value: Expr) {
        debug_assert_eq!(value.width(), 8);
        let page = self.pages.entry(addr >> PAGE_BITS).or_insert_with(|| Arc::new(Page::new()));
        Arc::make_mut(page).bytes[(addr & (PAGE_SIZE - 1)) as usize] = Some(value);
    }

    pub fn store_concrete(&mut self, addr: u64, data: &[u8]) {
        for (i, &b) in data.iter().enumerate() {
            self.set_byte(addr.wrapping_add(i as u64), Expr::c8(b));
        }
    }

    /// Concrete contents of a range, treating unwritten mapped bytes as zero.
    pub fn concrete_bytes(&self, addr: u64, len: u64) -> Option<Vec<u8>> {
        (0..len)
            .map(|i| match self.byte(addr.wrapping_add(i)) {
                Some(e) => e.as_const().map(|v| v as u8),
                None => Some(0),
            })
            .collect()
    }

    /// Next free address at or above `from` that can hold `len` bytes.
    pub fn find_free(&self, from: u64, len: u64, granule: u64) -> Option<u64> {
        let mut cand = from.checked_next_multiple_of(granule)?;
        loop {
            let end = cand.checked_add(len)?;
            match self.mappings.iter().find(|m| m.start < end && cand < m.end()) {
                Some(m) => cand = m.end().checked_next_multiple_of(granule)?,
                None => return Some(cand),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FdKind {
    File { path: String },
    Socket { peer: Option<String> },
    Memfd { name: String },
}

#[derive(Debug, Clone)]
pub struct FdObject {
    pub fd: i64,
    pub kind: FdKind,
    pub backing: Vec<Expr>,
    pub cursor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaintOrigin {
    Network,
    File,
    Env,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaintTag {
    pub origin: TaintOrigin,
    /// Descriptor number or variable name the data came from.
    pub source: String,
    pub birth_step: u64,
    /// Sequence number of the event that created the variable.
    pub birth_seq: u64,
}

/// Concrete inputs for a replay run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    /// Bytes returned by successive receive calls, hex encoded.
    #[serde(default)]
    pub network_hex: String,
    #[serde(default)]
    pub time: u64,
    /// Signals delivered (in order) once the main path ends.
    #[serde(default)]
    pub signals: Vec<u64>,
}

impl Witness {
    pub fn network_bytes(&self) -> Vec<u8> {
        let s = self.network_hex.as_bytes();
        s.chunks(2)
            .filter_map(|c| std::str::from_utf8(c).ok().and_then(|h| u8::from_str_radix(h, 16).ok()))
            .collect()
    }

    pub fn set_network_bytes(&mut self, bytes: &[u8]) {
        self.network_hex = bytes.iter().map(|b| format!("{b:02x}")).collect();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputMode {
    Symbolic,
    Concrete(Witness),
}

/// Host-side loader settings shared by every state of one analysis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoaderConfig {
    pub search_paths: Vec<PathBuf>,
    /// Names learned by scanning discovered libraries in earlier rounds.
    pub extra_candidates: Vec<String>,
    pub max_string_len: usize,
}

impl LoaderConfig {
    pub fn new(search_paths: Vec<PathBuf>) -> Self {
        LoaderConfig {
            search_paths,
            extra_candidates: Vec::new(),
            max_string_len: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Active,
    Finished(String),
    Errored(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalHandler {
    pub signo: u64,
    pub handler: u64,
}

#[derive(Debug, Clone)]
pub struct SimState {
    id: u64,
    ids: Arc<AtomicU64>,
    pub pc: u64,
    pub regs: [Expr; 16],
    memory: Memory,
    constraints: ConstraintSet,
    fds: BTreeMap<i64, FdObject>,
    pub env: BTreeMap<String, String>,
    images: Vec<LoadedImage>,
    layout: AddressSpaceLayout,
    pub corr: CorrelationStore,
    taints: BTreeMap<Arc<str>, TaintTag>,
    events: Vec<EventRecord>,
    next_seq: u64,
    pub steps: u64,
    pub pending_signals: Vec<SignalHandler>,
    /// Handlers already entered along this lineage.
    pub explored_signals: BTreeSet<u64>,
    pub status: Status,
    solver: Solver,
    loader: Arc<LoaderConfig>,
    inputs: InputMode,
    mmap_next: u64,
    fresh: u64,
    net_counters: BTreeMap<i64, u64>,
    net_cursor: usize,
    /// (stack slot, continuation) for every CALL still on the stack.
    pub shadow_stack: Vec<(u64, u64)>,
    pc_visits: HashMap<u64, (u32, usize)>,
    header_reads: BTreeSet<String>,
    pub clone_counter: u64,
    pub delivered_signals: usize,
    /// Bump allocator for hook-produced strings and structures.
    scratch: Option<(u64, u64)>,
}

fn regs_zero() -> [Expr; 16] {
    std::array::from_fn(|_| Expr::c64(0))
}

impl SimState {
    pub fn new(loader: Arc<LoaderConfig>, inputs: InputMode, solver: Solver) -> SimState {
        Self::with_ids(loader, inputs, solver, Arc::new(AtomicU64::new(0)))
    }

    pub fn with_ids(loader: Arc<LoaderConfig>, inputs: InputMode, solver: Solver, ids: Arc<AtomicU64>) -> SimState {
        let id = ids.fetch_add(1, Ordering::Relaxed);
        let env = match &inputs {
            InputMode::Concrete(w) => w.env.clone(),
            InputMode::Symbolic => BTreeMap::new(),
        };
        let mut s = SimState {
            id,
            ids,
            pc: 0,
            regs: regs_zero(),
            memory: Memory::default(),
            constraints: ConstraintSet::new(),
            fds: BTreeMap::new(),
            env,
            images: Vec::new(),
            layout: AddressSpaceLayout::default(),
            corr: CorrelationStore::default(),
            taints: BTreeMap::new(),
            events: Vec::new(),
            next_seq: 0,
            steps: 0,
            pending_signals: Vec::new(),
            explored_signals: BTreeSet::new(),
            status: Status::Active,
            solver,
            loader,
            inputs,
            mmap_next: MMAP_BASE,
            fresh: 0,
            net_counters: BTreeMap::new(),
            net_cursor: 0,
            shadow_stack: Vec::new(),
            pc_visits: HashMap::new(),
            header_reads: BTreeSet::new(),
            clone_counter: 0,
            delivered_signals: 0,
            scratch: None,
        };
        s.memory.map(STACK_BASE, STACK_SIZE, Perms::RW, MapLabel::Stack);
        s.regs[SP] = Expr::c64(STACK_TOP);
        s
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    pub fn is_concrete(&self) -> bool {
        matches!(self.inputs, InputMode::Concrete(_))
    }

    pub fn inputs(&self) -> &InputMode {
        &self.inputs
    }

    pub fn solver(&self) -> &Solver {
        &self.solver
    }

    pub fn loader(&self) -> &LoaderConfig {
        &self.loader
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut Memory {
        &mut self.memory
    }

    pub fn layout_mut(&mut self) -> &mut AddressSpaceLayout {
        &mut self.layout
    }

    pub fn images(&self) -> &[LoadedImage] {
        &self.images
    }

    pub fn push_image(&mut self, img: LoadedImage) {
        self.images.push(img);
    }

    pub fn image_at(&self, addr: u64) -> Option<(usize, &LoadedImage)> {
        self.images.iter().enumerate().find(|(_, i)| i.contains(addr))
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn add_constraint(&mut self, c: Expr) {
        if !c.is_true() {
            self.constraints.push(c);
        }
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn record(&mut self, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(EventRecord {
            seq,
            state: self.id,
            step: self.steps,
            kind,
        });
        seq
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.record(EventKind::Warning { message: message.into() });
    }

    pub fn taints(&self) -> &BTreeMap<Arc<str>, TaintTag> {
        &self.taints
    }

    pub fn taint_of(&self, name: &str) -> Option<&TaintTag> {
        self.taints.get(name)
    }

    pub fn is_tainted(&self, e: &Expr) -> bool {
        !self.taints.is_empty() && e.any_var(&mut |v| self.taints.contains_key(&v.name))
    }

    /// A new variable that no other variable in this lineage shares a name with.
    pub fn fresh_var(&mut self, prefix: &str, width: u32, origin: VarOrigin) -> Expr {
        let n = self.fresh;
        self.fresh += 1;
        Expr::var(&format!("{prefix}_{n}"), width, origin)
    }

    /// Symbolic bytes received on `fd`; concrete witness bytes in replay mode.
    pub fn network_bytes(&mut self, fd: i64, len: usize, birth_seq: u64) -> Vec<Expr> {
        if let InputMode::Concrete(w) = &self.inputs {
            let data = w.network_bytes();
            let out = (0..len)
                .map(|i| Expr::c8(data.get(self.net_cursor + i).copied().unwrap_or(0)))
                .collect();
            self.net_cursor += len;
            return out;
        }
        let counter = self.net_counters.entry(fd).or_insert(0);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let name = format!("net_{fd}_{counter}");
            *counter += 1;
            out.push(Expr::var(&name, 8, VarOrigin::Network));
            self.taints.insert(
                Arc::from(name.as_str()),
                TaintTag {
                    origin: TaintOrigin::Network,
                    source: format!("fd {fd}"),
                    birth_step: self.steps,
                    birth_seq,
                },
            );
        }
        out
    }

    /// Value of the time source.
    pub fn time_value(&mut self) -> Expr {
        match &self.inputs {
            InputMode::Concrete(w) => Expr::c64(w.time),
            InputMode::Symbolic => self.fresh_var("time", 64, VarOrigin::Time),
        }
    }

    /// Symbolic content for an unset environment variable.
    pub fn env_bytes(&mut self, name: &str, len: usize) -> Vec<Expr> {
        let base = self.fresh;
        self.fresh += 1;
        let seq = self.next_seq;
        (0..len)
            .map(|i| {
                let vname = format!("env_{name}_{base}_{i}");
                self.taints.insert(
                    Arc::from(vname.as_str()),
                    TaintTag {
                        origin: TaintOrigin::Env,
                        source: name.to_string(),
                        birth_step: self.steps,
                        birth_seq: seq,
                    },
                );
                Expr::var(&vname, 8, VarOrigin::Env)
            })
            .collect()
    }

    pub fn tag_file_bytes(&mut self, bytes: &[Expr], path: &str) {
        let seq = self.next_seq;
        for b in bytes {
            b.vars().keys().for_each(|k| {
                self.taints.entry(k.clone()).or_insert(TaintTag {
                    origin: TaintOrigin::File,
                    source: path.to_string(),
                    birth_step: self.steps,
                    birth_seq: seq,
                });
            });
        }
    }

    // Solver helpers.

    pub fn satisfiable(&self, extra: &[Expr]) -> SatResult {
        self.solver.satisfiable(&self.constraints, extra)
    }

    pub fn eval(&self, e: &Expr) -> Option<u64> {
        if let Some(v) = e.as_const() {
            return Some(v);
        }
        self.solver.eval(e, &self.constraints, &[]).ok()
    }

    /// Picks one value for `e` and pins it with an equality constraint.
    pub fn concretize(&mut self, e: &Expr) -> u64 {
        if let Some(v) = e.as_const() {
            return v;
        }
        let v = match self.solver.eval(e, &self.constraints, &[]) {
            Ok(v) => v,
            Err(_) => {
                self.warn(format!("no model while concretizing {e}; using 0"));
                0
            }
        };
        let pin = e.eq(&Expr::constant(v, e.width()));
        self.add_constraint(pin);
        self.record(EventKind::Concretize {
            expr: e.to_string(),
            value: v,
        });
        v
    }

    /// Child state with `c` appended and a fresh id.
    pub fn fork(&self, c: &Expr) -> Result<SimState, StateError> {
        if c.is_false() || !self.satisfiable(std::slice::from_ref(c)).is_sat() {
            return Err(StateError::InfeasibleBranch);
        }
        let mut child = self.clone();
        child.id = self.ids.fetch_add(1, Ordering::Relaxed);
        child.add_constraint(c.clone());
        Ok(child)
    }

    /// Clone with a fresh id and no extra constraint.
    pub fn split(&self) -> SimState {
        let mut child = self.clone();
        child.id = self.ids.fetch_add(1, Ordering::Relaxed);
        child
    }

    // Memory access.

    /// One byte, materializing a fresh variable for never-mapped addresses.
    pub fn load_byte(&mut self, addr: u64) -> Expr {
        if let Some(b) = self.memory.byte(addr) {
            return b.clone();
        }
        if self.memory.mapping_at(addr).is_some() || self.is_concrete() {
            return Expr::c8(0);
        }
        let v = Expr::var(&format!("mem_{addr:x}"), 8, VarOrigin::Memory);
        self.memory.set_byte(addr, v.clone());
        self.warn(format!("read of unmapped byte {addr:#x}"));
        v
    }

    pub fn read_bytes(&mut self, addr: u64, len: usize) -> Vec<Expr> {
        (0..len).map(|i| self.load_byte(addr.wrapping_add(i as u64))).collect()
    }

    pub fn read_mem(&mut self, addr: &Expr, len: usize) -> Expr {
        assert!((1..=8).contains(&len));
        let a = self.concretize(addr);
        self.note_header_read(a);
        let bytes = self.read_bytes(a, len);
        Expr::from_le_bytes(&bytes)
    }

    /// Stores without any self-modification checks (loader, hooks).
    pub fn write_bytes(&mut self, addr: u64, bytes: &[Expr]) {
        for (i, b) in bytes.iter().enumerate() {
            self.memory.set_byte(addr.wrapping_add(i as u64), b.clone());
        }
    }

    /// A guest store. Writes touching executable memory are classified first.
    pub fn write_mem(&mut self, addr: &Expr, data: &Expr) {
        assert!(data.width().is_multiple_of(8));
        let a = self.concretize(addr);
        let n = (data.width() / 8) as usize;
        let bytes: Vec<Expr> = (0..n as u32).map(|i| data.byte(i)).collect();
        let exec = (0..n as u64).any(|i| self.memory.perms_at(a.wrapping_add(i)).is_some_and(|p| p.exec()));
        if exec {
            let slot = a & !7;
            let old = self.window_bytes(slot);
            self.write_bytes(a, &bytes);
            let new = self.window_bytes(slot);
            crate::tracker::classify_exec_write(self, a, &old, &new);
        } else {
            self.write_bytes(a, &bytes);
        }
        if self.is_tainted(data) {
            let vars: Vec<String> = data
                .vars()
                .keys()
                .filter(|k| self.taints.contains_key(*k))
                .map(|k| k.to_string())
                .collect();
            self.record(EventKind::TaintedWrite {
                site: self.pc,
                addr: a,
                vars,
            });
        }
    }

    /// Classification window: one slot before through two slots after.
    fn window_bytes(&self, slot: u64) -> Vec<Option<u8>> {
        (0..24u64)
            .map(|i| {
                let a = slot.wrapping_sub(8).wrapping_add(i);
                match self.memory.byte(a) {
                    Some(e) => e.as_const().map(|v| v as u8),
                    None => Some(0),
                }
            })
            .collect()
    }

    fn note_header_read(&mut self, addr: u64) {
        let hit = self
            .images
            .iter()
            .find(|i| i.placement == Placement::RawFile && addr >= i.base && addr < i.base + 64)
            .map(|i| (i.name.clone(), i.path.clone(), i.base));
        if let Some((name, path, base)) = hit {
            if self.header_reads.insert(name.clone()) {
                self.record(EventKind::Load {
                    path,
                    library: name,
                    base,
                    mechanism: "manual_load".into(),
                });
            }
        }
    }

    pub fn push_u64(&mut self, value: &Expr) {
        let sp = self.regs[SP].sub(&Expr::c64(8));
        self.regs[SP] = sp.clone();
        let a = self.concretize(&sp);
        let bytes: Vec<Expr> = (0..8).map(|i| value.byte(i)).collect();
        self.write_bytes(a, &bytes);
    }

    pub fn pop_u64(&mut self) -> Expr {
        let sp = self.regs[SP].clone();
        let v = self.read_mem(&sp, 8);
        self.regs[SP] = sp.add(&Expr::c64(8));
        v
    }

    /// Reads a NUL-terminated concrete string (best effort, lossy).
    pub fn read_c_string(&mut self, addr: u64, max: usize) -> Option<String> {
        let mut out = Vec::new();
        for i in 0..max as u64 {
            let b = self.load_byte(addr.wrapping_add(i)).as_const()? as u8;
            if b == 0 {
                return Some(String::from_utf8_lossy(&out).into_owned());
            }
            out.push(b);
        }
        Some(String::from_utf8_lossy(&out).into_owned())
    }

    // Descriptors.

    pub fn fd(&self, fd: i64) -> Option<&FdObject> {
        self.fds.get(&fd)
    }

    pub fn fd_mut(&mut self, fd: i64) -> Option<&mut FdObject> {
        self.fds.get_mut(&fd)
    }

    /// Allocates the lowest free descriptor ≥ 3.
    pub fn alloc_fd(&mut self, kind: FdKind, backing: Vec<Expr>) -> i64 {
        let fd = (3..).find(|n| !self.fds.contains_key(n)).unwrap();
        self.fds.insert(
            fd,
            FdObject {
                fd,
                kind,
                backing,
                cursor: 0,
            },
        );
        fd
    }

    pub fn close_fd(&mut self, fd: i64) -> bool {
        self.fds.remove(&fd).is_some()
    }

    // Anonymous mappings.

    pub fn alloc_region(&mut self, len: u64) -> Option<u64> {
        let len = len.max(1);
        if len > MAX_REGION {
            return None;
        }
        let base = self.memory.find_free(self.mmap_next, len, MMAP_GRANULE)?;
        self.mmap_next = (base + len).checked_next_multiple_of(MMAP_GRANULE).unwrap_or(u64::MAX);
        Some(base)
    }

    /// Host-owned read/write memory for values a hook hands back to the guest.
    pub fn alloc_scratch(&mut self, len: u64) -> Option<u64> {
        let len = crate::image::align_up(len.max(1), 8);
        match self.scratch {
            Some((next, end)) if next + len <= end => {
                self.scratch = Some((next + len, end));
                Some(next)
            }
            _ => {
                let size = crate::image::align_up(len, 0x1_0000);
                let base = self.alloc_region(size)?;
                self.memory.map(base, size, Perms::RW, MapLabel::Anonymous);
                self.scratch = Some((base + len, base + size));
                Some(base)
            }
        }
    }

    /// Drops shadow-stack entries whose slots were popped.
    pub fn trim_shadow(&mut self) {
        if let Some(sp) = self.regs[SP].as_const() {
            self.shadow_stack.retain(|(slot, _)| *slot >= sp);
        }
    }

    // Loop guard.

    /// Counts a visit to `pc`; true when the guard limit is exceeded.
    pub fn visit(&mut self, pc: u64, limit: u32) -> bool {
        let ncons = self.constraints.len();
        let entry = self.pc_visits.entry(pc).or_insert((0, ncons));
        if entry.1 != ncons {
            *entry = (0, ncons);
        }
        entry.0 += 1;
        entry.0 > limit
    }

    pub fn take_signal(&mut self) -> Option<SignalHandler> {
        let InputMode::Concrete(w) = &self.inputs else {
            return None;
        };
        while let Some(&signo) = w.signals.get(self.delivered_signals) {
            self.delivered_signals += 1;
            if let Some(h) = self.pending_signals.iter().rev().find(|h| h.signo == signo) {
                return Some(*h);
            }
        }
        None
    }
}
