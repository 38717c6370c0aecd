//! Instruction-level monitoring of control transfers.
//!
//! The tracker hangs off the call, exit and return breakpoints. It resolves
//! symbolic targets to one address per executable region, records edges the
//! static pass cannot see, watches returns for redirection into loaded code,
//! and classifies stores into executable memory.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::cfg::{Cfg, EdgeKind, ImageAddr};
use crate::correlate::{EventKind, SmcClass, SmcReport, TransferKind};
use crate::engine::{BreakEvent, BreakKind, Breakpoint, Engine, Instruction, Opcode};
use crate::expr::{eval_with_model, Expr, SatResult};
use crate::image::exec_regions;
use crate::state::SimState;

/// Default distinct-successor count that marks a dispatcher.
pub const CFF_THRESHOLD: usize = 8;

/// Concrete destinations of `t`: one representative per executable region
/// the target can reach. Never touches the state's constraints.
pub fn resolve_symbolic_target(s: &SimState, t: &Expr) -> BTreeSet<u64> {
    let regions = exec_regions(s);
    let mut out = BTreeSet::new();
    if let Some(v) = t.as_const() {
        if regions.iter().any(|r| r.contains(v)) {
            out.insert(v);
        }
        return out;
    }
    let base: Vec<Expr> = s.constraints().iter().cloned().collect();
    for r in &regions {
        let c = Expr::c64(r.start).ule(t).and(&t.ule(&Expr::c64(r.end)));
        if c.is_false() {
            continue;
        }
        let mut all = base.clone();
        all.push(c);
        if let SatResult::Sat(m) = s.solver().solve(&all, std::slice::from_ref(t)) {
            if let Ok(v) = eval_with_model(t, &m) {
                debug_assert!(r.contains(v));
                out.insert(v);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferEvent {
    pub site: u64,
    pub kind: TransferKind,
    pub target: String,
    pub resolved: Vec<u64>,
    pub symbol: Option<String>,
}

/// An edge observed at run time, in image-relative coordinates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DynEdge {
    pub src: ImageAddr,
    pub dst: ImageAddr,
    pub kind: EdgeKind,
    pub symbol: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatcherReport {
    pub block: u64,
    pub image: String,
    pub successors: usize,
    pub variable: String,
}

pub type Accumulators = BTreeMap<ImageAddr, BTreeSet<ImageAddr>>;

#[derive(Debug, Default)]
pub struct Tracker {
    pub edges: BTreeSet<DynEdge>,
    /// Distinct successors seen at each jump or branch site.
    pub accumulators: Accumulators,
    pub transfers: Vec<TransferEvent>,
    /// Addresses that fell outside every image.
    pub unplaced: usize,
}

pub type SharedTracker = Rc<RefCell<Tracker>>;

/// Image-relative coordinates of an absolute address.
pub fn image_addr(s: &SimState, addr: u64) -> Option<ImageAddr> {
    let (_, img) = s.image_at(addr)?;
    Some(ImageAddr {
        image: img.name.clone(),
        vaddr: img.to_vaddr(addr)?,
    })
}

impl Tracker {
    /// Registers the three transfer breakpoints on `engine`.
    pub fn install(engine: &mut Engine) -> SharedTracker {
        let t: SharedTracker = Rc::default();
        let c = t.clone();
        engine.register_breakpoint(Breakpoint::new(BreakKind::Call, move |s, ev| c.borrow_mut().on_call(s, ev)));
        let c = t.clone();
        engine.register_breakpoint(Breakpoint::new(BreakKind::Exit, move |s, ev| c.borrow_mut().on_exit(s, ev)));
        let c = t.clone();
        engine.register_breakpoint(Breakpoint::new(BreakKind::Return, move |s, ev| {
            c.borrow_mut().on_return(s, ev)
        }));
        t
    }

    fn add_edge(&mut self, s: &SimState, site: u64, dst: u64, kind: EdgeKind, symbol: Option<String>) {
        match (image_addr(s, site), image_addr(s, dst)) {
            (Some(src), Some(dst)) => {
                self.edges.insert(DynEdge { src, dst, kind, symbol });
            }
            _ => self.unplaced += 1,
        }
    }

    fn log_transfer(&mut self, s: &mut SimState, ev: &BreakEvent, kind: TransferKind, resolved: &BTreeSet<u64>, symbol: Option<String>) {
        let t = TransferEvent {
            site: ev.site,
            kind,
            target: ev.target.to_string(),
            resolved: resolved.iter().copied().collect(),
            symbol,
        };
        s.record(EventKind::Transfer {
            site: t.site,
            transfer: t.kind,
            target: t.target.clone(),
            resolved: t.resolved.clone(),
            symbol: t.symbol.clone(),
        });
        self.transfers.push(t);
    }

    pub fn on_call(&mut self, s: &mut SimState, ev: &BreakEvent) {
        if ev.insn.opcode != Opcode::Callr {
            return;
        }
        let resolved = resolve_symbolic_target(s, &ev.target);
        let mut first_symbol = None;
        for &a in &resolved {
            let matched = s.corr.symbol_at(a).map(|e| e.symbol.clone());
            if matched.is_some() {
                s.corr.note_call_site(a, ev.site);
                first_symbol = first_symbol.or(matched.clone());
            }
            let kind = if matched.is_some() {
                EdgeKind::ResolvedIndirect
            } else {
                EdgeKind::Indirect
            };
            self.add_edge(s, ev.site, a, kind, matched);
        }
        self.log_transfer(s, ev, TransferKind::Call, &resolved, first_symbol);
    }

    pub fn on_exit(&mut self, s: &mut SimState, ev: &BreakEvent) {
        let targets: BTreeSet<u64> = match ev.insn.opcode {
            Opcode::Jmpr => {
                let resolved = resolve_symbolic_target(s, &ev.target);
                let mut first_symbol = None;
                for &a in &resolved {
                    let matched = s.corr.symbol_at(a).map(|e| e.symbol.clone());
                    first_symbol = first_symbol.or(matched.clone());
                    let kind = if matched.is_some() {
                        EdgeKind::ResolvedIndirect
                    } else {
                        EdgeKind::Indirect
                    };
                    self.add_edge(s, ev.site, a, kind, matched);
                }
                self.log_transfer(s, ev, TransferKind::Jump, &resolved, first_symbol);
                resolved
            }
            _ if ev.conditional => ev.targets.iter().copied().collect(),
            _ => ev.target.as_const().into_iter().collect(),
        };
        if let Some(site) = image_addr(s, ev.site) {
            let acc = self.accumulators.entry(site).or_default();
            acc.extend(targets.iter().filter_map(|&t| image_addr(s, t)));
        }
    }

    pub fn on_return(&mut self, s: &mut SimState, ev: &BreakEvent) {
        let resolved = resolve_symbolic_target(s, &ev.target);
        for &a in &resolved {
            if Some(a) == ev.continuation {
                continue;
            }
            let loaded = s.image_at(a).filter(|(k, _)| *k > 0).map(|(_, i)| i.name.clone());
            if let Some(library) = loaded {
                s.record(EventKind::RopRedirect {
                    site: ev.site,
                    target: a,
                    library,
                });
                let matched = s.corr.symbol_at(a).map(|e| e.symbol.clone());
                self.add_edge(s, ev.site, a, EdgeKind::Return, matched.clone());
                self.log_transfer(s, ev, TransferKind::Return, &BTreeSet::from([a]), matched);
            }
        }
    }
}

fn decode_at(window: &[Option<u8>], at: usize) -> Option<Instruction> {
    let raw: Vec<u8> = window.get(at..at + 8)?.iter().copied().collect::<Option<Vec<u8>>>()?;
    Instruction::decode(raw.as_slice().try_into().ok()?).ok()
}

fn hex(window: &[Option<u8>]) -> String {
    window
        .iter()
        .map(|b| match b {
            Some(v) => format!("{v:02x}"),
            None => "??".into(),
        })
        .collect()
}

/// Classifies a store into executable memory. `old` and `new` are 24-byte
/// windows starting one slot before the written slot.
pub fn classify_exec_write(s: &mut SimState, addr: u64, old: &[Option<u8>], new: &[Option<u8>]) -> SmcReport {
    let slot = addr & !7;
    let here = decode_at(new, 8);
    let before = decode_at(new, 0);
    let after = decode_at(new, 16);
    let op = |i: Option<Instruction>| i.map(|i| i.opcode);
    let class = match here {
        Some(i) if matches!(i.opcode, Opcode::Jmp | Opcode::Call) => SmcClass::JmpCallHook {
            imm: i.imm,
            target: i.relative_target(slot),
        },
        Some(i) if i.opcode == Opcode::Push && op(after) == Some(Opcode::Ret) => SmcClass::PushRetRedirect {
            pushed: s.eval(&s.regs[i.rs1 as usize].clone()),
        },
        Some(i) if i.opcode == Opcode::Ret && op(before).is_some_and(|o| o == Opcode::Push) => {
            let r = before.unwrap().rs1 as usize;
            SmcClass::PushRetRedirect {
                pushed: s.eval(&s.regs[r].clone()),
            }
        }
        _ => SmcClass::GenericSmc,
    };
    let report = SmcReport {
        site: s.pc,
        target: addr,
        class,
        old: hex(&old[8..16]),
        new: hex(&new[8..16]),
    };
    s.record(EventKind::Smc { report: report.clone() });
    report
}

/// Blocks that fan out to at least `threshold` distinct successors through a
/// target computed from one register that the successors keep reassigning.
pub fn detect_cff_dispatchers(cfg: &Cfg, acc: &Accumulators, threshold: usize) -> Vec<DispatcherReport> {
    let mut out = Vec::new();
    for (site, succs) in acc {
        if succs.len() < threshold.max(1) {
            continue;
        }
        let Some(site_abs) = cfg.absolute(site) else {
            continue;
        };
        let Some(block) = cfg.block_ending_at(site_abs) else {
            continue;
        };
        let Some(&(_, term)) = block.insns.last() else {
            continue;
        };
        let seed = match term.opcode {
            Opcode::Jmpr => BTreeSet::from([term.rs1]),
            op if op.is_conditional_branch() => BTreeSet::from([term.rs1, term.rs2]),
            _ => continue,
        };
        let live = live_ins(&block.insns[..block.insns.len() - 1], seed);
        if live.len() != 1 {
            continue;
        }
        let var = *live.iter().next().unwrap();
        let reassigning = succs
            .iter()
            .filter_map(|t| cfg.absolute(t))
            .filter_map(|a| cfg.block_at(a))
            .filter(|b| b.insns.iter().any(|(_, i)| defines(i) == Some(var)))
            .count();
        if reassigning < 2 {
            continue;
        }
        out.push(DispatcherReport {
            block: block.start,
            image: block.image.clone(),
            successors: succs.len(),
            variable: format!("r{var}"),
        });
    }
    out.sort_by_key(|r| r.block);
    out.dedup_by_key(|r| r.block);
    out
}

fn defines(i: &Instruction) -> Option<u8> {
    use Opcode::*;
    match i.opcode {
        Movi | Mov | Add | Sub | Xor | And | Or | Shl | Shr | Mul | Ld8 | Ld16 | Ld32 | Ld64 | Pop => Some(i.rd),
        _ => None,
    }
}

fn uses(i: &Instruction) -> Vec<u8> {
    use Opcode::*;
    match i.opcode {
        Mov | Ld8 | Ld16 | Ld32 | Ld64 => vec![i.rs1],
        Add | Sub | Xor | And | Or | Shl | Shr | Mul => vec![i.rs1, i.rs2],
        _ => vec![],
    }
}

/// Registers the seed registers depend on at block entry.
fn live_ins(body: &[(u64, Instruction)], mut live: BTreeSet<u8>) -> BTreeSet<u8> {
    for (_, i) in body.iter().rev() {
        if let Some(d) = defines(i) {
            if live.remove(&d) {
                live.extend(uses(i));
            }
        }
    }
    live
}
