//! Constraint solving over the bitvector fragment.
//!
//! The solver runs in stages:
//!
//! 1. equalities against constants are inverted through xor/add/sub/not/neg,
//!    odd multiplication, extract and concat chains, fixing variable bits;
//!    contradictory bits prove unsatisfiability,
//! 2. fixed variables are substituted and the remaining constraints simplified,
//! 3. every remaining variable gets a domain: all values for narrow variables,
//!    an interval for wide ones, filtered by the constraints that mention only
//!    that variable,
//! 4. small search spaces are enumerated exhaustively by backtracking (with
//!    the last variable of an equality computed by inversion instead of
//!    enumerated), which decides satisfiability exactly,
//! 5. otherwise a seeded random search tries a bounded number of assignments
//!    before answering `Unknown`.
//!
//! Every `Sat` model is re-checked against the original constraints.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{apply_bin, apply_un, eval_with_model, mask, substitute, BinOp, ConstraintSet, Expr, Model, Node, UnOp};

pub const DEFAULT_SEED: u64 = 0x5BF1;
pub const DEFAULT_SAMPLES: usize = 4096;

static UNKNOWN_ANSWERS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of `Unknown` answers so far.
pub fn unknown_answers() -> u64 {
    UNKNOWN_ANSWERS.load(Ordering::Relaxed)
}

/// Largest product of domain sizes searched exhaustively.
const EXHAUSTIVE_LIMIT: u128 = 1 << 24;
/// Variables up to this width are enumerated outright.
const ENUM_WIDTH: u32 = 16;
/// Intervals up to this size are enumerated.
const ENUM_RANGE: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    Sat(Model),
    Unsat,
    Unknown,
}

impl SatResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SatResult::Sat(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolverError {
    #[error("constraints have no known model")]
    NoModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Solver {
    pub seed: u64,
    pub samples: usize,
}

impl Default for Solver {
    fn default() -> Self {
        Solver {
            seed: DEFAULT_SEED,
            samples: DEFAULT_SAMPLES,
        }
    }
}

impl Solver {
    pub fn with_seed(seed: u64) -> Self {
        Solver {
            seed,
            ..Solver::default()
        }
    }

    pub fn satisfiable(&self, cs: &ConstraintSet, extra: &[Expr]) -> SatResult {
        let all: Vec<Expr> = cs.iter().chain(extra).cloned().collect();
        self.solve(&all, &[])
    }

    /// Value of `e` under the model witnessing `cs ∪ extra`.
    pub fn eval(&self, e: &Expr, cs: &ConstraintSet, extra: &[Expr]) -> Result<u64, SolverError> {
        let all: Vec<Expr> = cs.iter().chain(extra).cloned().collect();
        match self.solve(&all, std::slice::from_ref(e)) {
            SatResult::Sat(m) => eval_with_model(e, &m).map_err(|_| SolverError::NoModel),
            _ => Err(SolverError::NoModel),
        }
    }

    /// Solves `constraints`, making the model total over the variables of
    /// `also` as well.
    pub fn solve(&self, constraints: &[Expr], also: &[Expr]) -> SatResult {
        let r = self.solve_inner(constraints, also);
        if r == SatResult::Unknown {
            UNKNOWN_ANSWERS.fetch_add(1, Ordering::Relaxed);
        }
        r
    }

    fn solve_inner(&self, constraints: &[Expr], also: &[Expr]) -> SatResult {
        let result = Problem::new(constraints, also).and_then(|p| p.run(self));
        match result {
            Some(SatResult::Sat(m)) => {
                let sound = constraints.iter().all(|c| eval_with_model(c, &m) == Ok(1));
                debug_assert!(sound, "solver produced a model violating its input");
                if sound {
                    SatResult::Sat(m)
                } else {
                    SatResult::Unknown
                }
            }
            Some(r) => r,
            None => SatResult::Unsat,
        }
    }
}

fn flatten(c: &Expr, out: &mut Vec<Expr>) -> bool {
    if c.is_true() {
        return true;
    }
    if c.is_false() {
        return false;
    }
    if let Node::Bin(BinOp::And, a, b) = c.node() {
        if c.width() == 1 {
            return flatten(a, out) && flatten(b, out);
        }
    }
    out.push(c.clone());
    true
}

enum Inv {
    Ok,
    Conflict,
    No,
}

fn is_low_mask(m: u64) -> bool {
    m & m.wrapping_add(1) == 0
}

/// Multiplicative inverse of an odd number modulo 2^64.
fn odd_inverse(k: u64) -> u64 {
    let mut x = k;
    for _ in 0..6 {
        x = x.wrapping_mul(2u64.wrapping_sub(k.wrapping_mul(x)));
    }
    x
}

/// Derives fixed variable bits from `e & m == v & m`.
fn invert(e: &Expr, m: u64, v: u64, out: &mut Vec<(Arc<str>, u64, u64)>) -> Inv {
    if m == 0 {
        return Inv::Ok;
    }
    let w = e.width();
    match e.node() {
        Node::Const(k) => {
            if (k ^ v) & m == 0 {
                Inv::Ok
            } else {
                Inv::Conflict
            }
        }
        Node::Var(x) => {
            out.push((x.name.clone(), m, v & m));
            Inv::Ok
        }
        Node::Un(UnOp::Not, a) => invert(a, m, !v, out),
        Node::Un(UnOp::Neg, a) if is_low_mask(m) => invert(a, m, v.wrapping_neg(), out),
        Node::Bin(BinOp::Xor, a, b) => match (a.as_const(), b.as_const()) {
            (_, Some(k)) => invert(a, m, v ^ k, out),
            (Some(k), _) => invert(b, m, v ^ k, out),
            _ => Inv::No,
        },
        Node::Bin(BinOp::Add, a, b) if is_low_mask(m) => match (a.as_const(), b.as_const()) {
            (_, Some(k)) => invert(a, m, v.wrapping_sub(k), out),
            (Some(k), _) => invert(b, m, v.wrapping_sub(k), out),
            _ => Inv::No,
        },
        Node::Bin(BinOp::Sub, a, b) if is_low_mask(m) => match (a.as_const(), b.as_const()) {
            (_, Some(k)) => invert(a, m, v.wrapping_add(k), out),
            (Some(k), _) => invert(b, m, k.wrapping_sub(v), out),
            _ => Inv::No,
        },
        Node::Bin(BinOp::Mul, a, b) if is_low_mask(m) => match b.as_const() {
            Some(k) if k & 1 == 1 => invert(a, m, v.wrapping_mul(odd_inverse(k)), out),
            _ => Inv::No,
        },
        Node::Extract { lo, e: a, .. } => invert(a, (m << lo) & mask(a.width()), v << lo, out),
        Node::Concat(h, l) => {
            let wl = l.width();
            let low = invert(l, m & mask(wl), v & mask(wl), out);
            let high = invert(h, (m & mask(w)) >> wl, v >> wl, out);
            match (low, high) {
                (Inv::Conflict, _) | (_, Inv::Conflict) => Inv::Conflict,
                (Inv::Ok, Inv::Ok) => Inv::Ok,
                _ => Inv::No,
            }
        }
        _ => Inv::No,
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(u64),
    Var(usize),
    Un(UnOp, u32),
    Bin(BinOp, u32),
    Extract(u32, u32),
    Concat(u32),
    Ite,
}

/// A constraint flattened into postfix form over variable indices.
#[derive(Debug, Clone)]
struct Program {
    ops: Vec<Op>,
}

impl Program {
    fn compile(e: &Expr, index: &HashMap<Arc<str>, usize>) -> Program {
        let mut ops = Vec::new();
        Self::emit(e, index, &mut ops);
        Program { ops }
    }

    fn emit(e: &Expr, index: &HashMap<Arc<str>, usize>, ops: &mut Vec<Op>) {
        match e.node() {
            Node::Const(v) => ops.push(Op::Const(*v)),
            Node::Var(v) => ops.push(Op::Var(index[&v.name])),
            Node::Un(op, a) => {
                Self::emit(a, index, ops);
                ops.push(Op::Un(*op, a.width()));
            }
            Node::Bin(op, a, b) => {
                Self::emit(a, index, ops);
                Self::emit(b, index, ops);
                ops.push(Op::Bin(*op, a.width()));
            }
            Node::Extract { hi, lo, e: a } => {
                Self::emit(a, index, ops);
                ops.push(Op::Extract(*lo, hi - lo + 1));
            }
            Node::Concat(a, b) => {
                Self::emit(a, index, ops);
                Self::emit(b, index, ops);
                ops.push(Op::Concat(b.width()));
            }
            Node::Ite(c, t, f) => {
                Self::emit(c, index, ops);
                Self::emit(t, index, ops);
                Self::emit(f, index, ops);
                ops.push(Op::Ite);
            }
        }
    }

    fn run(&self, env: &[u64], stack: &mut Vec<u64>) -> u64 {
        stack.clear();
        for op in &self.ops {
            match *op {
                Op::Const(v) => stack.push(v),
                Op::Var(i) => stack.push(env[i]),
                Op::Un(op, w) => {
                    let a = stack.pop().unwrap();
                    stack.push(apply_un(op, w, a));
                }
                Op::Bin(op, w) => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push(apply_bin(op, w, a, b));
                }
                Op::Extract(lo, w) => {
                    let a = stack.pop().unwrap();
                    stack.push((a >> lo) & mask(w));
                }
                Op::Concat(wl) => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push((a << wl) | b);
                }
                Op::Ite => {
                    let f = stack.pop().unwrap();
                    let t = stack.pop().unwrap();
                    let c = stack.pop().unwrap();
                    stack.push(if c != 0 { t } else { f });
                }
            }
        }
        stack.pop().unwrap_or(0)
    }
}

/// One step from an equality side down to the variable being solved for.
#[derive(Debug, Clone)]
enum Step {
    Xor(Program),
    Add(Program),
    /// `x - s`
    SubRight(Program),
    /// `s - x`
    SubLeft(Program),
    Mul(Program, u32),
    Not(u32),
    Neg(u32),
    /// `x` is the low part of a concat whose high part is `s`.
    ConcatLow(Program, u32),
    /// `x` is the high part of a concat whose low part is `s`.
    ConcatHigh(Program, u32),
}

/// Computes the unique value of a variable from an equality, given every
/// other variable in it.
#[derive(Debug, Clone)]
struct Inversion {
    target: Program,
    /// Each step paired with the width of the subexpression it descends into.
    steps: Vec<(Step, u32)>,
}

enum Solved {
    Value(u64),
    NoSolution,
    Unsupported,
}

impl Inversion {
    fn build(c: &Expr, x: &Arc<str>, index: &HashMap<Arc<str>, usize>) -> Option<Inversion> {
        let Node::Bin(BinOp::Eq, l, r) = c.node() else {
            return None;
        };
        let has = |e: &Expr| e.any_var(&mut |v| v.name == *x);
        let (side, other) = match (has(l), has(r)) {
            (true, false) => (l, r),
            (false, true) => (r, l),
            _ => return None,
        };
        let mut steps: Vec<Step> = Vec::new();
        let mut widths = Vec::new();
        let mut cur = side.clone();
        loop {
            let next: Expr = match cur.node() {
                Node::Var(v) if v.name == *x => break,
                Node::Un(op, a) => {
                    steps.push(match op {
                        UnOp::Not => Step::Not(a.width()),
                        UnOp::Neg => Step::Neg(a.width()),
                    });
                    a.clone()
                }
                Node::Bin(op @ (BinOp::Xor | BinOp::Add | BinOp::Sub | BinOp::Mul), a, b) => {
                    let (inner, sib, x_left) = match (has(a), has(b)) {
                        (true, false) => (a, b, true),
                        (false, true) => (b, a, false),
                        _ => return None,
                    };
                    let p = Program::compile(sib, index);
                    steps.push(match (op, x_left) {
                        (BinOp::Xor, _) => Step::Xor(p),
                        (BinOp::Add, _) => Step::Add(p),
                        (BinOp::Sub, true) => Step::SubRight(p),
                        (BinOp::Sub, false) => Step::SubLeft(p),
                        _ => Step::Mul(p, a.width()),
                    });
                    inner.clone()
                }
                Node::Concat(h, lo) => match (has(h), has(lo)) {
                    (false, true) => {
                        steps.push(Step::ConcatLow(Program::compile(h, index), lo.width()));
                        lo.clone()
                    }
                    (true, false) => {
                        steps.push(Step::ConcatHigh(Program::compile(lo, index), lo.width()));
                        h.clone()
                    }
                    _ => return None,
                },
                _ => return None,
            };
            widths.push(next.width());
            cur = next;
        }
        Some(Inversion {
            target: Program::compile(other, index),
            steps: steps.into_iter().zip(widths).collect(),
        })
    }

    fn solve(&self, env: &[u64], stack: &mut Vec<u64>) -> Solved {
        let mut v = self.target.run(env, stack);
        for (step, w_in) in &self.steps {
            v = match step {
                Step::Xor(p) => v ^ p.run(env, stack),
                Step::Add(p) => v.wrapping_sub(p.run(env, stack)),
                Step::SubRight(p) => v.wrapping_add(p.run(env, stack)),
                Step::SubLeft(p) => p.run(env, stack).wrapping_sub(v),
                Step::Mul(p, w) => {
                    let s = p.run(env, stack);
                    if s & 1 == 0 {
                        return Solved::Unsupported;
                    }
                    v.wrapping_mul(odd_inverse(s)) & mask(*w)
                }
                Step::Not(w) => !v & mask(*w),
                Step::Neg(w) => v.wrapping_neg() & mask(*w),
                Step::ConcatLow(p, wl) => {
                    if v >> wl != p.run(env, stack) {
                        return Solved::NoSolution;
                    }
                    v & mask(*wl)
                }
                Step::ConcatHigh(p, wl) => {
                    if v & mask(*wl) != p.run(env, stack) {
                        return Solved::NoSolution;
                    }
                    v >> wl
                }
            } & mask(*w_in);
        }
        Solved::Value(v)
    }
}

#[derive(Debug, Clone)]
enum Domain {
    Values(Vec<u64>),
    Range(u64, u64),
}

impl Domain {
    fn size(&self) -> u128 {
        match self {
            Domain::Values(v) => v.len() as u128,
            Domain::Range(lo, hi) => (*hi as u128) - (*lo as u128) + 1,
        }
    }
}

struct VarSlot {
    name: Arc<str>,
    width: u32,
    known_mask: u64,
    known_val: u64,
}

impl VarSlot {
    fn full(&self) -> bool {
        self.known_mask == mask(self.width)
    }

    fn admits(&self, v: u64) -> bool {
        v & !mask(self.width) == 0 && (v ^ self.known_val) & self.known_mask == 0
    }
}

struct Problem {
    vars: Vec<VarSlot>,
    index: HashMap<Arc<str>, usize>,
    constraints: Vec<Expr>,
}

impl Problem {
    /// Returns `None` when unsatisfiability is already evident.
    fn new(constraints: &[Expr], also: &[Expr]) -> Option<Problem> {
        let mut flat = Vec::new();
        for c in constraints {
            assert_eq!(c.width(), 1, "constraints must have width 1");
            if !flatten(c, &mut flat) {
                return None;
            }
        }
        let mut all: BTreeMap<Arc<str>, u32> = BTreeMap::new();
        let mut order: Vec<Arc<str>> = Vec::new();
        for e in flat.iter().chain(also) {
            for (name, (w, _)) in e.vars() {
                if all.insert(name.clone(), w).is_none() {
                    order.push(name);
                }
            }
        }
        let vars: Vec<VarSlot> = order
            .iter()
            .map(|n| VarSlot {
                name: n.clone(),
                width: all[n],
                known_mask: 0,
                known_val: 0,
            })
            .collect();
        let index = order.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        Some(Problem {
            vars,
            index,
            constraints: flat,
        })
    }

    /// Equality propagation and substitution to a fixpoint.
    fn propagate(&mut self) -> bool {
        loop {
            let mut newly_full = false;
            for c in &self.constraints {
                let Node::Bin(BinOp::Eq, lhs, rhs) = c.node() else {
                    continue;
                };
                let Some(k) = rhs.as_const() else {
                    continue;
                };
                let mut fixes = Vec::new();
                match invert(lhs, mask(lhs.width()), k, &mut fixes) {
                    Inv::Conflict => return false,
                    Inv::No => continue,
                    Inv::Ok => {}
                }
                for (name, m, v) in fixes {
                    let slot = &mut self.vars[self.index[&name]];
                    if (slot.known_val ^ v) & slot.known_mask & m != 0 {
                        return false;
                    }
                    let was_full = slot.full();
                    slot.known_mask |= m;
                    slot.known_val = (slot.known_val & !m) | v;
                    if !was_full && slot.full() {
                        newly_full = true;
                    }
                }
            }
            if !newly_full {
                return true;
            }
            let fixed: HashMap<Arc<str>, u64> = self
                .vars
                .iter()
                .filter(|s| s.full())
                .map(|s| (s.name.clone(), s.known_val))
                .collect();
            let mut next = Vec::new();
            for c in &self.constraints {
                if !flatten(&substitute(c, &fixed), &mut next) {
                    return false;
                }
            }
            self.constraints = next;
        }
    }

    fn model(&self, env: &[u64]) -> Model {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.to_string(), env[i]))
            .collect()
    }

    fn run(mut self, solver: &Solver) -> Option<SatResult> {
        if !self.propagate() {
            return None;
        }
        let mut env: Vec<u64> = self.vars.iter().map(|s| s.known_val).collect();
        // Ground leftovers decide themselves.
        let mut ground_false = false;
        self.constraints.retain(|c| {
            if !c.vars().is_empty() {
                return true;
            }
            ground_false |= eval_with_model(c, &Model::new()) != Ok(1);
            false
        });
        if ground_false {
            return None;
        }
        if self.constraints.is_empty() {
            return Some(SatResult::Sat(self.model(&env)));
        }
        let progs: Vec<Program> = self
            .constraints
            .iter()
            .map(|c| Program::compile(c, &self.index))
            .collect();
        let var_sets: Vec<Vec<usize>> = self
            .constraints
            .iter()
            .map(|c| c.vars().keys().map(|k| self.index[k]).collect())
            .collect();
        let mut free: Vec<usize> = var_sets.iter().flatten().copied().collect();
        free.sort_unstable();
        free.dedup();
        let mut stack = Vec::with_capacity(32);

        // Per-variable domains from unary constraints.
        let mut domains: HashMap<usize, Domain> = HashMap::new();
        for &x in &free {
            let unary: Vec<usize> = (0..progs.len()).filter(|&i| var_sets[i] == [x]).collect();
            let slot = &self.vars[x];
            let dom = if slot.width <= ENUM_WIDTH {
                let mut vals = Vec::new();
                for v in 0..=mask(slot.width) {
                    if !slot.admits(v) {
                        continue;
                    }
                    env[x] = v;
                    if unary.iter().all(|&i| progs[i].run(&env, &mut stack) == 1) {
                        vals.push(v);
                    }
                }
                Domain::Values(vals)
            } else {
                let (mut lo, mut hi) = (0u64, mask(slot.width));
                for &i in &unary {
                    bound(&self.constraints[i], &mut lo, &mut hi);
                }
                if lo > hi {
                    return None;
                }
                if hi - lo < ENUM_RANGE {
                    let mut vals = Vec::new();
                    for v in lo..=hi {
                        if !slot.admits(v) {
                            continue;
                        }
                        env[x] = v;
                        if unary.iter().all(|&i| progs[i].run(&env, &mut stack) == 1) {
                            vals.push(v);
                        }
                    }
                    Domain::Values(vals)
                } else {
                    Domain::Range(lo, hi)
                }
            };
            if dom.size() == 0 || matches!(&dom, Domain::Values(v) if v.is_empty()) {
                return None;
            }
            domains.insert(x, dom);
        }

        // Search order: smallest domain first.
        let mut order = free.clone();
        order.sort_by_key(|x| (domains[x].size(), *x));
        let pos: HashMap<usize, usize> = order.iter().enumerate().map(|(p, &x)| (x, p)).collect();
        let mut checks: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
        let mut inversions: Vec<Option<Inversion>> = vec![None; order.len()];
        for (i, vs) in var_sets.iter().enumerate() {
            let last = vs.iter().map(|v| pos[v]).max().unwrap();
            checks[last].push(i);
            if inversions[last].is_none() {
                let x = &self.vars[order[last]].name;
                inversions[last] = Inversion::build(&self.constraints[i], x, &self.index);
            }
        }
        let search = Search {
            order: &order,
            domains: &domains,
            checks: &checks,
            inversions: &inversions,
            progs: &progs,
            vars: &self.vars,
        };

        let space: u128 = order.iter().fold(1u128, |acc, x| acc.saturating_mul(domains[x].size()));
        let exhaustive = space <= EXHAUSTIVE_LIMIT && order.iter().all(|x| matches!(domains[x], Domain::Values(_)));
        if exhaustive {
            return if search.exhaustive(0, &mut env, &mut stack) {
                Some(SatResult::Sat(self.model(&env)))
            } else {
                None
            };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(solver.seed);
        for attempt in 0..solver.samples {
            if search.sample(attempt, &mut rng, &mut env, &mut stack) {
                return Some(SatResult::Sat(self.model(&env)));
            }
        }
        Some(SatResult::Unknown)
    }
}

/// Narrows `[lo, hi]` from a unary comparison against a constant.
fn bound(c: &Expr, lo: &mut u64, hi: &mut u64) {
    let Node::Bin(op, a, b) = c.node() else {
        return;
    };
    match (op, a.as_var().is_some(), b.as_const(), a.as_const(), b.as_var().is_some()) {
        (BinOp::Ult, true, Some(k), _, _) => *hi = (*hi).min(k.wrapping_sub(1)),
        (BinOp::Ule, true, Some(k), _, _) => *hi = (*hi).min(k),
        (BinOp::Ult, _, _, Some(k), true) => *lo = (*lo).max(k.saturating_add(1)),
        (BinOp::Ule, _, _, Some(k), true) => *lo = (*lo).max(k),
        _ => {}
    }
}

struct Search<'a> {
    order: &'a [usize],
    domains: &'a HashMap<usize, Domain>,
    checks: &'a [Vec<usize>],
    inversions: &'a [Option<Inversion>],
    progs: &'a [Program],
    vars: &'a [VarSlot],
}

impl Search<'_> {
    fn in_domain(&self, x: usize, v: u64) -> bool {
        if !self.vars[x].admits(v) {
            return false;
        }
        match &self.domains[&x] {
            Domain::Values(vals) => vals.binary_search(&v).is_ok(),
            Domain::Range(lo, hi) => v >= *lo && v <= *hi,
        }
    }

    fn holds(&self, depth: usize, env: &[u64], stack: &mut Vec<u64>) -> bool {
        self.checks[depth].iter().all(|&i| self.progs[i].run(env, stack) == 1)
    }

    fn exhaustive(&self, depth: usize, env: &mut [u64], stack: &mut Vec<u64>) -> bool {
        if depth == self.order.len() {
            return true;
        }
        let x = self.order[depth];
        if let Some(inv) = &self.inversions[depth] {
            match inv.solve(env, stack) {
                Solved::Value(v) => {
                    if !self.in_domain(x, v) {
                        return false;
                    }
                    env[x] = v;
                    return self.holds(depth, env, stack) && self.exhaustive(depth + 1, env, stack);
                }
                Solved::NoSolution => return false,
                Solved::Unsupported => {}
            }
        }
        let Domain::Values(vals) = &self.domains[&x] else {
            unreachable!("exhaustive search over an interval domain");
        };
        for &v in vals {
            env[x] = v;
            if self.holds(depth, env, stack) && self.exhaustive(depth + 1, env, stack) {
                return true;
            }
        }
        false
    }

    fn sample(&self, attempt: usize, rng: &mut ChaCha8Rng, env: &mut [u64], stack: &mut Vec<u64>) -> bool {
        for (depth, &x) in self.order.iter().enumerate() {
            if let Some(inv) = &self.inversions[depth] {
                if let Solved::Value(v) = inv.solve(env, stack) {
                    if self.in_domain(x, v) {
                        env[x] = v;
                        continue;
                    }
                }
            }
            let slot = &self.vars[x];
            let v = match &self.domains[&x] {
                Domain::Values(vals) => match attempt {
                    0 => vals[0],
                    1 => vals[vals.len() - 1],
                    _ => vals[rng.gen_range(0..vals.len())],
                },
                Domain::Range(lo, hi) => {
                    let raw = match attempt {
                        0 => *lo,
                        1 => *hi,
                        _ => rng.gen_range(*lo..=*hi),
                    };
                    let fixed = (raw & !slot.known_mask) | slot.known_val;
                    if fixed < *lo || fixed > *hi {
                        return false;
                    }
                    fixed
                }
            };
            env[x] = v;
        }
        (0..self.order.len()).all(|d| self.holds(d, env, stack))
    }
}

#[cfg(test)]
mod tests {
    use super::super::VarOrigin;
    use super::*;

    fn v8(n: &str) -> Expr {
        Expr::var(n, 8, VarOrigin::Test)
    }

    #[test]
    fn trivial_cases() {
        let s = Solver::default();
        assert_eq!(s.satisfiable(&ConstraintSet::new(), &[Expr::bool(true)]), SatResult::Sat(Model::new()));
        let v = v8("v");
        let both = [v.eq(&Expr::c8(3)), v.eq(&Expr::c8(4))];
        assert_eq!(s.satisfiable(&ConstraintSet::new(), &both), SatResult::Unsat);
    }

    #[test]
    fn xor_key_recovered() {
        let k = v8("k");
        // Built without rewriting so the solver, not the constructors, inverts it.
        let c = Expr::raw_bin(BinOp::Eq, &Expr::raw_bin(BinOp::Xor, &k, &Expr::c8(0x5A)), &Expr::c8(0x36));
        let cs: ConstraintSet = [c].into_iter().collect();
        match Solver::default().satisfiable(&cs, &[]) {
            SatResult::Sat(m) => assert_eq!(m.get("k"), Some(0x6C)),
            other => panic!("{other:?}"),
        }
        let brute: Vec<u64> = (0..256u64).filter(|x| x ^ 0x5A == 0x36).collect();
        assert_eq!(brute, vec![0x6C]);
    }

    #[test]
    fn eval_respects_constraints() {
        let s = Solver::default();
        assert_eq!(s.eval(&Expr::c64(7), &ConstraintSet::new(), &[]), Ok(7));
        let v = v8("v");
        assert_eq!(s.eval(&v, &ConstraintSet::new(), &[v.eq(&Expr::c8(9))]), Ok(9));
        let t = Expr::var("t", 64, VarOrigin::Test);
        let range = [Expr::c64(0x400000).ule(&t), t.ule(&Expr::c64(0x400FFF))];
        let got = s.eval(&t, &ConstraintSet::new(), &range).unwrap();
        assert!((0x400000..=0x400FFF).contains(&got));
        assert_eq!(s.eval(&t, &ConstraintSet::new(), &range), Ok(got));
    }

    #[test]
    fn eval_without_model_errors() {
        let v = v8("v");
        let bad = [v.ult(&Expr::c8(3)), Expr::c8(5).ult(&v)];
        assert_eq!(Solver::default().eval(&v, &ConstraintSet::new(), &bad), Err(SolverError::NoModel));
    }

    #[test]
    fn wide_linear_equation_by_inversion() {
        let x = Expr::var("x", 64, VarOrigin::Test);
        let y = Expr::var("y", 64, VarOrigin::Test);
        let c = x.add(&y).eq(&Expr::c64(5));
        let r = Solver::default().satisfiable(&ConstraintSet::new(), std::slice::from_ref(&c));
        let SatResult::Sat(m) = r else { panic!("{r:?}") };
        assert_eq!(eval_with_model(&c, &m), Ok(1));
    }

    #[test]
    fn empty_interval_is_unsat() {
        let t = Expr::var("t", 64, VarOrigin::Test);
        let c = [Expr::c64(0x500000).ule(&t), t.ult(&Expr::c64(0x400000))];
        assert_eq!(Solver::default().satisfiable(&ConstraintSet::new(), &c), SatResult::Unsat);
    }

    #[test]
    fn string_candidate_matching() {
        let bytes: Vec<Expr> = (0..4).map(|i| v8(&format!("b{i}"))).collect();
        let target = b"abc\0";
        let cs: Vec<Expr> = bytes
            .iter()
            .zip(target)
            .map(|(b, &t)| b.xor(&Expr::c8(0x11)).eq(&Expr::c8(t ^ 0x11)))
            .collect();
        let SatResult::Sat(m) = Solver::default().satisfiable(&ConstraintSet::new(), &cs) else {
            panic!()
        };
        assert_eq!(m.get("b1"), Some(b'b' as u64));
        let mut clash = cs.clone();
        clash.push(bytes[0].eq(&Expr::c8(b'z')));
        assert_eq!(Solver::default().satisfiable(&ConstraintSet::new(), &clash), SatResult::Unsat);
    }

    #[test]
    fn odd_inverse_is_inverse() {
        for k in [1u64, 3, 5, 0xFFFF_FFFF_FFFF_FFFF, 0x1234_5679] {
            assert_eq!(k.wrapping_mul(odd_inverse(k)), 1);
        }
    }
}
