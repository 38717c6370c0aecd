//! Interpreter for the SBF instruction set.
//!
//! [`Engine::step`] executes one instruction of one state and returns its
//! successors. Breakpoint handlers run before the instruction takes effect.

pub mod isa;
pub mod manager;

use std::sync::Arc;

use crate::correlate::EventKind;
use crate::expr::{BinOp, Expr};
use crate::hooks::{self, HookOutcome, HookRegistry};
use crate::state::{SimState, Status, RETURN_SENTINEL, SP};

pub use isa::{DecodeError, Instruction, Opcode, INSN_SIZE};
pub use manager::{ExplorationManager, ExplorationResult, ManagerConfig};

/// Default visit count after which a looping state is retired.
pub const LOOP_LIMIT: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BreakKind {
    Call,
    Exit,
    Return,
    ExecWrite,
}

/// What a breakpoint handler sees.
#[derive(Debug, Clone)]
pub struct BreakEvent {
    pub kind: BreakKind,
    pub site: u64,
    pub insn: Instruction,
    /// Transfer target, or the store address for `ExecWrite`.
    pub target: Expr,
    pub conditional: bool,
    /// Feasible successors of a conditional branch.
    pub targets: Vec<u64>,
    /// Static continuation recorded when the matching call executed.
    pub continuation: Option<u64>,
}

pub type Handler = Box<dyn FnMut(&mut SimState, &BreakEvent)>;

pub struct Breakpoint {
    pub kind: BreakKind,
    pub handler: Handler,
}

impl Breakpoint {
    pub fn new(kind: BreakKind, handler: impl FnMut(&mut SimState, &BreakEvent) + 'static) -> Self {
        Breakpoint {
            kind,
            handler: Box::new(handler),
        }
    }
}

pub struct Engine {
    hooks: Arc<HookRegistry>,
    breakpoints: Vec<Breakpoint>,
    pub loop_limit: u32,
}

fn errored(mut s: SimState, why: String) -> Vec<SimState> {
    s.warn(why.clone());
    s.status = Status::Errored(why);
    vec![s]
}

fn sext(imm: i32) -> u64 {
    imm as i64 as u64
}

impl Engine {
    pub fn new(hooks: Arc<HookRegistry>) -> Self {
        Engine {
            hooks,
            breakpoints: Vec::new(),
            loop_limit: LOOP_LIMIT,
        }
    }

    pub fn hooks(&self) -> &HookRegistry {
        &self.hooks
    }

    pub fn register_breakpoint(&mut self, b: Breakpoint) {
        self.breakpoints.push(b);
    }

    fn fire(&mut self, s: &mut SimState, ev: BreakEvent) {
        for b in self.breakpoints.iter_mut().filter(|b| b.kind == ev.kind) {
            (b.handler)(s, &ev);
        }
    }

    /// Executes one instruction (or one hook) of `s`.
    pub fn step(&mut self, mut s: SimState) -> Vec<SimState> {
        s.steps += 1;
        if s.pc == RETURN_SENTINEL {
            return vec![self.finish(s, "returned")];
        }
        if hooks::is_hook_address(s.pc) {
            return self.dispatch_hook(s);
        }
        if s.visit(s.pc, self.loop_limit) {
            s.warn(format!("loop guard at {:#x}", s.pc));
            s.status = Status::Finished("loop guard".into());
            return vec![s];
        }
        let insn = match fetch(&s) {
            Ok(i) => i,
            Err(e) => return errored(s, e),
        };
        self.execute(s, insn)
    }

    /// Ends a path, or enters the next witness signal handler in replay mode.
    fn finish(&mut self, mut s: SimState, why: &str) -> SimState {
        if let Some(h) = s.take_signal() {
            enter_handler(&mut s, h.signo, h.handler);
            return s;
        }
        s.status = Status::Finished(why.to_string());
        s
    }

    fn dispatch_hook(&mut self, mut s: SimState) -> Vec<SimState> {
        let Some(name) = hooks::import_at(&s, s.pc) else {
            let msg = format!("no import behind hook address {:#x}", s.pc);
            return errored(s, msg);
        };
        let ret = s.read_mem(&s.regs[SP].clone(), 8);
        let site = ret.as_const().map(|r| r.wrapping_sub(INSN_SIZE)).unwrap_or(0);
        match self.hooks.dispatch(&name, &mut s, site) {
            HookOutcome::Return(v) => {
                s.regs[0] = v;
                let ret = s.pop_u64();
                s.trim_shadow();
                let Some(target) = ret.as_const() else {
                    return errored(s, "symbolic return address after hook".into());
                };
                if target == RETURN_SENTINEL {
                    return vec![self.finish(s, "returned")];
                }
                s.pc = target;
                vec![s]
            }
            HookOutcome::Finish(why) => {
                s.status = Status::Finished(why);
                vec![s]
            }
        }
    }

    fn execute(&mut self, mut s: SimState, i: Instruction) -> Vec<SimState> {
        let pc = s.pc;
        let next = pc + INSN_SIZE;
        let reg = |s: &SimState, r: u8| s.regs[r as usize].clone();
        let ev = |kind, target: Expr| BreakEvent {
            kind,
            site: pc,
            insn: i,
            target,
            conditional: false,
            targets: Vec::new(),
            continuation: None,
        };
        use Opcode::*;
        match i.opcode {
            Halt => return vec![self.finish(s, "halt")],
            Movi => s.regs[i.rd as usize] = Expr::c64(sext(i.imm)),
            Mov => s.regs[i.rd as usize] = reg(&s, i.rs1),
            Add | Sub | Xor | And | Or | Shl | Shr | Mul => {
                let op = match i.opcode {
                    Add => BinOp::Add,
                    Sub => BinOp::Sub,
                    Xor => BinOp::Xor,
                    And => BinOp::And,
                    Or => BinOp::Or,
                    Shl => BinOp::Shl,
                    Shr => BinOp::Shr,
                    _ => BinOp::Mul,
                };
                s.regs[i.rd as usize] = Expr::bin(op, &reg(&s, i.rs1), &reg(&s, i.rs2));
            }
            Ld8 | Ld16 | Ld32 | Ld64 => {
                let n = i.opcode.access_size().unwrap();
                let addr = reg(&s, i.rs1).add(&Expr::c64(sext(i.imm)));
                let v = s.read_mem(&addr, n);
                s.regs[i.rd as usize] = v.zext(64);
            }
            St8 | St16 | St32 | St64 => {
                let n = i.opcode.access_size().unwrap();
                let addr = reg(&s, i.rs1).add(&Expr::c64(sext(i.imm)));
                let a = s.concretize(&addr);
                let data = Expr::extract(8 * n as u32 - 1, 0, &reg(&s, i.rs2));
                let exec = (0..n as u64).any(|k| s.memory().perms_at(a.wrapping_add(k)).is_some_and(|p| p.exec()));
                if exec {
                    self.fire(&mut s, ev(BreakKind::ExecWrite, Expr::c64(a)));
                }
                s.write_mem(&Expr::c64(a), &data);
            }
            Jmp => {
                let t = i.relative_target(pc);
                self.fire(&mut s, ev(BreakKind::Exit, Expr::c64(t)));
                s.pc = t;
                return vec![s];
            }
            Jmpr => {
                let t = reg(&s, i.rs1);
                self.fire(&mut s, ev(BreakKind::Exit, t.clone()));
                return transfer(s, &t, "jump");
            }
            Beq | Bne | Bltu | Blts => {
                let (a, b) = (reg(&s, i.rs1), reg(&s, i.rs2));
                let cond = match i.opcode {
                    Beq => a.eq(&b),
                    Bne => a.ne(&b),
                    Bltu => a.ult(&b),
                    _ => a.slt(&b),
                };
                let taken = i.relative_target(pc);
                return self.branch(s, i, cond, taken, next);
            }
            Call => {
                let t = i.relative_target(pc);
                self.fire(&mut s, ev(BreakKind::Call, Expr::c64(t)));
                push_return(&mut s, next);
                s.pc = t;
                return vec![s];
            }
            Callr => {
                let t = reg(&s, i.rs1);
                self.fire(&mut s, ev(BreakKind::Call, t.clone()));
                push_return(&mut s, next);
                return transfer(s, &t, "call");
            }
            Callimp => {
                let Some((k, _)) = s.image_at(pc) else {
                    return errored(s, format!("callimp outside any image at {pc:#x}"));
                };
                let t = hooks::hook_address(k, i.imm as u32 as u64);
                self.fire(&mut s, ev(BreakKind::Call, Expr::c64(t)));
                push_return(&mut s, next);
                s.pc = t;
                return vec![s];
            }
            Ret => {
                let sp = reg(&s, SP as u8);
                let ret = s.read_mem(&sp, 8);
                let slot = sp.as_const();
                let continuation = s
                    .shadow_stack
                    .last()
                    .filter(|(sl, _)| Some(*sl) == slot)
                    .map(|(_, c)| *c);
                let mut e = ev(BreakKind::Return, ret.clone());
                e.continuation = continuation;
                self.fire(&mut s, e);
                s.pop_u64();
                s.trim_shadow();
                if ret.as_const() == Some(RETURN_SENTINEL) {
                    return vec![self.finish(s, "returned")];
                }
                return transfer(s, &ret, "return");
            }
            Push => {
                let v = reg(&s, i.rs1);
                s.push_u64(&v);
            }
            Pop => {
                let v = s.pop_u64();
                s.regs[i.rd as usize] = v;
                s.trim_shadow();
            }
            Syscall => match i.imm {
                3 => {
                    let code = s.regs[0].clone();
                    s.record(EventKind::Process {
                        function: "exit".into(),
                        detail: code.to_string(),
                    });
                    return vec![self.finish(s, "exit")];
                }
                n => {
                    let v = hooks::syscall(&mut s, n);
                    s.regs[0] = v;
                }
            },
        }
        s.pc = next;
        vec![s]
    }

    fn branch(&mut self, mut s: SimState, i: Instruction, cond: Expr, taken: u64, next: u64) -> Vec<SimState> {
        let pc = s.pc;
        let mut ev = BreakEvent {
            kind: BreakKind::Exit,
            site: pc,
            insn: i,
            target: Expr::ite(&cond, &Expr::c64(taken), &Expr::c64(next)),
            conditional: true,
            targets: Vec::new(),
            continuation: None,
        };
        if let Some(c) = cond.as_const() {
            let t = if c != 0 { taken } else { next };
            ev.targets = vec![t];
            self.fire(&mut s, ev);
            s.pc = t;
            return vec![s];
        }
        let yes = s.satisfiable(std::slice::from_ref(&cond)).is_sat();
        let not = cond.not();
        let no = s.satisfiable(std::slice::from_ref(&not)).is_sat();
        ev.targets = [(yes, taken), (no, next)]
            .iter()
            .filter(|(ok, _)| *ok)
            .map(|(_, t)| *t)
            .collect();
        self.fire(&mut s, ev);
        let mut out = Vec::new();
        for (ok, c, t) in [(yes, cond, taken), (no, not, next)] {
            if ok {
                let mut child = s.split();
                child.add_constraint(c);
                child.pc = t;
                out.push(child);
            }
        }
        if out.is_empty() {
            return errored(s, format!("no feasible branch outcome at {pc:#x}"));
        }
        out
    }
}

fn fetch(s: &SimState) -> Result<Instruction, String> {
    let pc = s.pc;
    match s.memory().perms_at(pc) {
        Some(p) if p.exec() => {}
        _ => return Err(format!("unmapped pc {pc:#x}")),
    }
    let mut raw = [0u8; 8];
    for (k, slot) in raw.iter_mut().enumerate() {
        *slot = match s.memory().byte(pc.wrapping_add(k as u64)) {
            None => 0,
            Some(b) => match b.as_const() {
                Some(v) => v as u8,
                None => return Err(format!("symbolic code byte at {:#x}", pc.wrapping_add(k as u64))),
            },
        };
    }
    Instruction::decode(&raw).map_err(|e| format!("{e} at {pc:#x}"))
}

fn push_return(s: &mut SimState, next: u64) {
    s.push_u64(&Expr::c64(next));
    if let Some(slot) = s.regs[SP].as_const() {
        s.shadow_stack.push((slot, next));
    }
}

/// Moves `s` to `target`, forking once per feasible executable region when
/// the target is symbolic.
fn transfer(mut s: SimState, target: &Expr, what: &str) -> Vec<SimState> {
    if let Some(t) = target.as_const() {
        s.pc = t;
        return vec![s];
    }
    let addrs = crate::tracker::resolve_symbolic_target(&s, target);
    let mut out = Vec::new();
    for a in addrs {
        if let Ok(mut c) = s.fork(&target.eq(&Expr::c64(a))) {
            c.pc = a;
            out.push(c);
        }
    }
    if out.is_empty() {
        return errored(s, format!("symbolic {what} target with no feasible destination"));
    }
    out
}

/// Simulated delivery: the handler runs with the signal number in r0 and
/// returns to the sentinel.
pub fn enter_handler(s: &mut SimState, signo: u64, handler: u64) {
    s.push_u64(&Expr::c64(RETURN_SENTINEL));
    s.regs[0] = Expr::c64(signo);
    s.pc = handler;
    s.status = Status::Active;
    s.record(EventKind::Signal { signo, handler });
}
