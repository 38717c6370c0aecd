//! Control-flow graph recovery, metrics and DOT export.
//!
//! Recovery is recursive descent from image entries and function symbols.
//! Imports become stub nodes at their hook-window addresses, so every node
//! is identified by one absolute address.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{Instruction, Opcode, INSN_SIZE};
use crate::hooks::hook_address;
use crate::image::{LoadedImage, SymbolKind};
use crate::tracker::DynEdge;

/// An address expressed relative to a named image, stable across layouts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageAddr {
    pub image: String,
    pub vaddr: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Fallthrough,
    Branch,
    Call,
    Return,
    ResolvedIndirect,
    /// Run-time target that no resolved symbol accounts for.
    Indirect,
    ImportStub,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Fallthrough => "fallthrough",
            EdgeKind::Branch => "branch",
            EdgeKind::Call => "call",
            EdgeKind::Return => "return",
            EdgeKind::ResolvedIndirect => "resolved_indirect",
            EdgeKind::Indirect => "indirect",
            EdgeKind::ImportStub => "import_stub",
        }
    }

    fn dot_style(self) -> &'static str {
        match self {
            EdgeKind::Fallthrough => "solid",
            EdgeKind::Branch => "bold",
            EdgeKind::Call => "dashed",
            EdgeKind::Return => "dotted",
            EdgeKind::ResolvedIndirect => "bold",
            EdgeKind::Indirect => "dashed",
            EdgeKind::ImportStub => "dotted",
        }
    }

    fn dot_color(self) -> &'static str {
        match self {
            EdgeKind::ResolvedIndirect => "red",
            EdgeKind::Indirect => "orange",
            EdgeKind::ImportStub => "gray",
            EdgeKind::Return => "blue",
            _ => "black",
        }
    }
}

/// How a block ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminator {
    /// Ran into the start of another block.
    Fallthrough,
    Transfer(OpcodeName),
    Exit,
    /// Followed by bytes that do not decode.
    Invalid,
}

/// Serializable mnemonic wrapper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpcodeName(#[serde(with = "opcode_serde")] pub Opcode);

mod opcode_serde {
    use super::Opcode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(op: &Opcode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(op.mnemonic())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Opcode, D::Error> {
        let s = String::deserialize(d)?;
        Opcode::from_mnemonic(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown mnemonic {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub start: u64,
    pub image: String,
    pub insns: Vec<(u64, Instruction)>,
    pub terminator: Terminator,
}

impl BasicBlock {
    pub fn len(&self) -> usize {
        self.insns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.insns.is_empty()
    }

    pub fn end(&self) -> u64 {
        self.start + self.insns.len() as u64 * INSN_SIZE
    }

    pub fn last_addr(&self) -> u64 {
        self.end() - INSN_SIZE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: u64,
    pub dst: u64,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Default)]
pub struct Cfg {
    pub blocks: BTreeMap<u64, BasicBlock>,
    /// Import stubs: hook address to `image:import`.
    pub stubs: BTreeMap<u64, String>,
    pub edges: BTreeSet<Edge>,
    pub functions: BTreeSet<u64>,
    pub images: Vec<LoadedImage>,
    /// Dynamic edges that were merged in.
    pub dynamic_edges: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfgMetrics {
    pub nodes: usize,
    pub edges: usize,
    pub functions: usize,
    pub objects: usize,
}

impl Cfg {
    pub fn image_named(&self, name: &str) -> Option<&LoadedImage> {
        self.images.iter().find(|i| i.name == name)
    }

    pub fn absolute(&self, a: &ImageAddr) -> Option<u64> {
        self.image_named(&a.image)?.to_absolute(a.vaddr)
    }

    pub fn block_at(&self, addr: u64) -> Option<&BasicBlock> {
        self.blocks.get(&addr)
    }

    pub fn block_containing(&self, addr: u64) -> Option<&BasicBlock> {
        self.blocks
            .range(..=addr)
            .next_back()
            .map(|(_, b)| b)
            .filter(|b| addr < b.end())
    }

    pub fn block_ending_at(&self, addr: u64) -> Option<&BasicBlock> {
        self.block_containing(addr).filter(|b| b.last_addr() == addr)
    }

    pub fn successors(&self, addr: u64) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.src == addr)
    }

    /// Stubs with at least one incoming edge.
    pub fn reached_stubs(&self) -> BTreeSet<u64> {
        self.edges
            .iter()
            .filter(|e| self.stubs.contains_key(&e.dst))
            .map(|e| e.dst)
            .collect()
    }
}

/// Decodes the instruction at an absolute address of an executable segment.
fn decode_in(images: &[LoadedImage], addr: u64) -> Result<(usize, Instruction), String> {
    let (k, img) = images
        .iter()
        .enumerate()
        .find(|(_, i)| i.contains(addr))
        .ok_or_else(|| format!("{addr:#x} is outside every image"))?;
    let v = img.to_vaddr(addr).ok_or_else(|| format!("{addr:#x} is not in a segment"))?;
    let seg = img.image.segment_for(v).ok_or_else(|| format!("{addr:#x} is not in a segment"))?;
    if !seg.flags.exec() {
        return Err(format!("{addr:#x} is not executable"));
    }
    let mut raw = [0u8; 8];
    for (j, b) in raw.iter_mut().enumerate() {
        *b = seg
            .byte_at(v + j as u64)
            .ok_or_else(|| format!("instruction at {addr:#x} runs off its segment"))?;
    }
    Instruction::decode(&raw)
        .map(|i| (k, i))
        .map_err(|e| format!("{e} at {addr:#x}"))
}

fn is_exit(i: &Instruction) -> bool {
    i.opcode == Opcode::Syscall && i.imm == 3
}

fn ends_block(i: &Instruction) -> bool {
    i.opcode.is_terminator() || is_exit(i)
}

/// Entry points and function symbols of every image.
fn roots_of(images: &[LoadedImage]) -> (BTreeSet<u64>, BTreeSet<u64>) {
    let mut entries = BTreeSet::new();
    let mut funcs = BTreeSet::new();
    for img in images {
        if let Some(e) = img.entry_address() {
            entries.insert(e);
        }
        for s in img.image.symbols.iter().filter(|s| s.kind == SymbolKind::Function) {
            if let Some(a) = img.to_absolute(s.value) {
                funcs.insert(a);
            }
        }
    }
    (entries, funcs)
}

/// Recursive-descent recovery over `images` from their entries and symbols.
pub fn recover_static(images: &[LoadedImage], imports_resolved: bool) -> Cfg {
    build(images, imports_resolved, &[])
}

/// Recovery over every loaded image plus edges observed at run time.
pub fn build_module_cfg(images: &[LoadedImage], dynamic: &[DynEdge]) -> Cfg {
    build(images, true, dynamic)
}

fn build(images: &[LoadedImage], imports_resolved: bool, dynamic: &[DynEdge]) -> Cfg {
    let mut cfg = Cfg {
        images: images.to_vec(),
        ..Cfg::default()
    };
    let (entries, funcs) = roots_of(images);
    let mut dyn_edges = Vec::new();
    for e in dynamic {
        match (cfg.absolute(&e.src), cfg.absolute(&e.dst)) {
            (Some(s), Some(d)) => dyn_edges.push((s, d, e.kind)),
            _ => cfg
                .warnings
                .push(format!("dynamic edge {}:{:#x} -> {}:{:#x} outside the image set", e.src.image, e.src.vaddr, e.dst.image, e.dst.vaddr)),
        }
    }

    let mut leaders: BTreeSet<u64> = entries.iter().chain(&funcs).copied().collect();
    leaders.extend(dyn_edges.iter().map(|e| e.1));
    let mut insns: BTreeMap<u64, Option<(usize, Instruction)>> = BTreeMap::new();
    let mut work: Vec<u64> = leaders.iter().rev().copied().collect();
    let mut call_targets = BTreeSet::new();
    while let Some(a) = work.pop() {
        if insns.contains_key(&a) {
            continue;
        }
        let (k, i) = match decode_in(images, a) {
            Ok(x) => x,
            Err(msg) => {
                cfg.warnings.push(msg);
                insns.insert(a, None);
                continue;
            }
        };
        insns.insert(a, Some((k, i)));
        let next = a + INSN_SIZE;
        let mut follow = |t: u64, leader: bool, work: &mut Vec<u64>| {
            if leader {
                leaders.insert(t);
            }
            work.push(t);
        };
        match i.opcode {
            Opcode::Halt | Opcode::Jmpr | Opcode::Ret => {}
            Opcode::Syscall if is_exit(&i) => {}
            Opcode::Jmp => follow(i.relative_target(a), true, &mut work),
            op if op.is_conditional_branch() => {
                follow(next, true, &mut work);
                follow(i.relative_target(a), true, &mut work);
            }
            Opcode::Call => {
                let t = i.relative_target(a);
                if t != next {
                    call_targets.insert(t);
                    follow(t, true, &mut work);
                }
                follow(next, true, &mut work);
            }
            Opcode::Callr | Opcode::Callimp => follow(next, true, &mut work),
            _ => follow(next, false, &mut work),
        }
    }

    // Group decoded instructions into blocks.
    let mut current: Option<BasicBlock> = None;
    let mut prev: Option<(u64, Instruction, usize)> = None;
    for (&a, slot) in &insns {
        let Some((k, i)) = *slot else {
            if let Some(mut b) = current.take() {
                if prev.map(|p| p.0 + INSN_SIZE) == Some(a) {
                    b.terminator = Terminator::Invalid;
                }
                cfg.blocks.insert(b.start, b);
            }
            prev = None;
            continue;
        };
        let starts_new = match prev {
            None => true,
            Some((pa, pi, pk)) => pa + INSN_SIZE != a || pk != k || ends_block(&pi) || leaders.contains(&a),
        };
        if starts_new {
            if let Some(b) = current.take() {
                cfg.blocks.insert(b.start, b);
            }
            current = Some(BasicBlock {
                start: a,
                image: images[k].name.clone(),
                insns: Vec::new(),
                terminator: Terminator::Fallthrough,
            });
        }
        let b = current.as_mut().unwrap();
        b.insns.push((a, i));
        b.terminator = if is_exit(&i) {
            Terminator::Exit
        } else if i.opcode.is_terminator() {
            Terminator::Transfer(OpcodeName(i.opcode))
        } else {
            Terminator::Fallthrough
        };
        prev = Some((a, i, k));
    }
    if let Some(b) = current.take() {
        cfg.blocks.insert(b.start, b);
    }

    // Intra-image edges.
    let mut calls: Vec<(u64, u64)> = Vec::new();
    let mut edges = BTreeSet::new();
    for b in cfg.blocks.values() {
        let (a, i) = *b.insns.last().unwrap();
        let next = a + INSN_SIZE;
        let k = images.iter().position(|img| img.name == b.image).unwrap();
        let mut add = |dst: u64, kind| {
            edges.insert(Edge { src: b.start, dst, kind });
        };
        let has_next = cfg.blocks.contains_key(&next);
        match b.terminator {
            Terminator::Fallthrough if has_next => add(next, EdgeKind::Fallthrough),
            Terminator::Transfer(OpcodeName(op)) => match op {
                Opcode::Jmp => add(i.relative_target(a), EdgeKind::Branch),
                op if op.is_conditional_branch() => {
                    add(i.relative_target(a), EdgeKind::Branch);
                    add(next, EdgeKind::Branch);
                }
                Opcode::Call => {
                    let t = i.relative_target(a);
                    if t != next {
                        add(t, EdgeKind::Call);
                        calls.push((t, next));
                    }
                    if has_next {
                        add(next, EdgeKind::Fallthrough);
                    }
                }
                Opcode::Callr => {
                    if has_next {
                        add(next, EdgeKind::Fallthrough);
                    }
                }
                Opcode::Callimp => {
                    let stub = hook_address(k, i.imm as u32 as u64);
                    let import = images[k].image.import_name(i.imm as usize).unwrap_or("?").to_string();
                    let target = if imports_resolved {
                        images
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != k)
                            .find_map(|(_, img)| {
                                img.image
                                    .find_symbol(&import)
                                    .filter(|s| s.kind == SymbolKind::Function)
                                    .and_then(|s| img.to_absolute(s.value))
                            })
                    } else {
                        None
                    };
                    match target {
                        Some(t) => {
                            add(t, EdgeKind::Call);
                            calls.push((t, next));
                        }
                        None => {
                            cfg.stubs.insert(stub, format!("{}:{import}", images[k].name));
                            add(stub, EdgeKind::ImportStub);
                        }
                    }
                    if has_next {
                        add(next, EdgeKind::Fallthrough);
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }
    // Run-time edges attach to the block holding the transfer instruction.
    let mut dyn_call_targets = BTreeSet::new();
    for &(site, dst, kind) in &dyn_edges {
        let Some(b) = cfg.block_containing(site) else {
            cfg.warnings.push(format!("dynamic edge source {site:#x} is not recovered code"));
            continue;
        };
        if !cfg.blocks.contains_key(&dst) {
            cfg.warnings.push(format!("dynamic edge target {dst:#x} does not decode"));
            continue;
        }
        let is_call = b.insns.iter().any(|(a, i)| *a == site && i.opcode == Opcode::Callr);
        if is_call {
            dyn_call_targets.insert(dst);
            calls.push((dst, site + INSN_SIZE));
        }
        if edges.insert(Edge { src: b.start, dst, kind }) {
            cfg.dynamic_edges += 1;
        }
    }
    // Return edges from every function to the continuations of its callers.
    let mut bodies: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for &(f, cont) in &calls {
        if !cfg.blocks.contains_key(&cont) {
            continue;
        }
        let body = bodies.entry(f).or_insert_with(|| intra_reach(&edges, f));
        for &blk in body.iter() {
            if matches!(cfg.blocks[&blk].terminator, Terminator::Transfer(OpcodeName(Opcode::Ret))) {
                edges.insert(Edge {
                    src: blk,
                    dst: cont,
                    kind: EdgeKind::Return,
                });
            }
        }
    }
    edges.retain(|e| cfg.blocks.contains_key(&e.dst) || cfg.stubs.contains_key(&e.dst));
    cfg.edges = edges;
    cfg.functions = entries
        .iter()
        .chain(&funcs)
        .chain(&dyn_call_targets)
        .filter(|a| cfg.blocks.contains_key(a))
        .copied()
        .collect();
    cfg.functions.extend(cfg.reached_stubs());
    cfg
}

/// Blocks reachable from `f` without following calls or returns.
fn intra_reach(edges: &BTreeSet<Edge>, f: u64) -> BTreeSet<u64> {
    let mut seen = BTreeSet::from([f]);
    let mut work = vec![f];
    while let Some(b) = work.pop() {
        for e in edges.range(Edge { src: b, dst: 0, kind: EdgeKind::Fallthrough }..) {
            if e.src != b {
                break;
            }
            if matches!(e.kind, EdgeKind::Fallthrough | EdgeKind::Branch | EdgeKind::Indirect) && seen.insert(e.dst) {
                work.push(e.dst);
            }
        }
    }
    seen
}

pub fn metrics(c: &Cfg, images: &[LoadedImage]) -> CfgMetrics {
    CfgMetrics {
        nodes: c.blocks.len(),
        edges: c.edges.len(),
        functions: c.functions.len(),
        objects: images.len(),
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// DOT rendering with nodes and edges in address order.
pub fn to_dot(c: &Cfg) -> String {
    let mut out = String::from("digraph cfg {\n");
    if !c.blocks.is_empty() || !c.stubs.is_empty() {
        out.push_str("  node [shape=box, fontname=\"monospace\"];\n");
    }
    for b in c.blocks.values() {
        let _ = writeln!(
            out,
            "  \"n{:x}\" [label=\"{:#x}\\n{}\"];",
            b.start,
            b.start,
            dot_escape(&b.image)
        );
    }
    for (a, name) in &c.stubs {
        let _ = writeln!(out, "  \"n{a:x}\" [label=\"{}\", shape=ellipse];", dot_escape(name));
    }
    for e in &c.edges {
        let _ = writeln!(
            out,
            "  \"n{:x}\" -> \"n{:x}\" [label=\"{}\", style={}, color={}];",
            e.src,
            e.dst,
            e.kind.name(),
            e.kind.dot_style(),
            e.kind.dot_color()
        );
    }
    out.push_str("}\n");
    out
}
