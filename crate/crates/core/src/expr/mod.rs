//! Width-tagged bitvector expressions.
//!
//! Every constructor folds constants and applies a small set of local
//! rewrites, so an [`Expr`] is always kept in simplified form. [`simplify`]
//! rebuilds a tree through the same constructors and is therefore idempotent.

mod simplify;
pub mod solver;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use simplify::{simplify, substitute};
pub use solver::{SatResult, Solver, SolverError, DEFAULT_SAMPLES, DEFAULT_SEED};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("unbound variable {0}")]
    UnboundVariable(String),
}

/// Where a symbolic variable came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarOrigin {
    Network,
    File,
    Env,
    Time,
    Memory,
    Hook,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub name: Arc<str>,
    pub origin: VarOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Xor,
    And,
    Or,
    Shl,
    Shr,
    Eq,
    Ne,
    Ult,
    Ule,
    Slt,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Ult | BinOp::Ule | BinOp::Slt)
    }

    pub fn is_commutative(self) -> bool {
        matches!(
            self,
            BinOp::Add | BinOp::Mul | BinOp::Xor | BinOp::And | BinOp::Or | BinOp::Eq | BinOp::Ne
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Const(u64),
    Var(Var),
    Un(UnOp, Expr),
    Bin(BinOp, Expr, Expr),
    Extract { hi: u32, lo: u32, e: Expr },
    Concat(Expr, Expr),
    Ite(Expr, Expr, Expr),
}

#[derive(Debug, PartialEq, Eq, Hash)]
struct Inner {
    width: u32,
    symbolic: bool,
    node: Node,
}

/// An immutable, cheaply clonable expression.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Expr(Arc<Inner>);

pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn sign_bit(width: u32) -> u64 {
    1u64 << (width - 1)
}

/// Evaluates one operator on already-masked operands.
pub fn apply_bin(op: BinOp, width: u32, a: u64, b: u64) -> u64 {
    let m = mask(width);
    match op {
        BinOp::Add => a.wrapping_add(b) & m,
        BinOp::Sub => a.wrapping_sub(b) & m,
        BinOp::Mul => a.wrapping_mul(b) & m,
        BinOp::Xor => a ^ b,
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Shl => {
            if b >= width as u64 {
                0
            } else {
                (a << b) & m
            }
        }
        BinOp::Shr => {
            if b >= width as u64 {
                0
            } else {
                a >> b
            }
        }
        BinOp::Eq => (a == b) as u64,
        BinOp::Ne => (a != b) as u64,
        BinOp::Ult => (a < b) as u64,
        BinOp::Ule => (a <= b) as u64,
        BinOp::Slt => {
            let s = sign_bit(width);
            ((a ^ s) < (b ^ s)) as u64
        }
    }
}

pub fn apply_un(op: UnOp, width: u32, a: u64) -> u64 {
    match op {
        UnOp::Neg => a.wrapping_neg() & mask(width),
        UnOp::Not => !a & mask(width),
    }
}

impl Expr {
    fn mk(width: u32, node: Node) -> Expr {
        let symbolic = match &node {
            Node::Const(_) => false,
            Node::Var(_) => true,
            Node::Un(_, e) | Node::Extract { e, .. } => e.is_symbolic(),
            Node::Bin(_, a, b) | Node::Concat(a, b) => a.is_symbolic() || b.is_symbolic(),
            Node::Ite(c, t, f) => c.is_symbolic() || t.is_symbolic() || f.is_symbolic(),
        };
        Expr(Arc::new(Inner { width, symbolic, node }))
    }

    pub fn constant(value: u64, width: u32) -> Expr {
        assert!((1..=64).contains(&width), "width {width} out of range");
        Expr::mk(width, Node::Const(value & mask(width)))
    }

    pub fn c64(value: u64) -> Expr {
        Expr::constant(value, 64)
    }

    pub fn c8(value: u8) -> Expr {
        Expr::constant(value as u64, 8)
    }

    pub fn bool(b: bool) -> Expr {
        Expr::constant(b as u64, 1)
    }

    pub fn var(name: &str, width: u32, origin: VarOrigin) -> Expr {
        assert!((1..=64).contains(&width), "width {width} out of range");
        Expr::mk(
            width,
            Node::Var(Var {
                name: Arc::from(name),
                origin,
            }),
        )
    }

    /// Builds a node without any rewriting; for exercising [`simplify`].
    #[doc(hidden)]
    pub fn raw_bin(op: BinOp, a: &Expr, b: &Expr) -> Expr {
        assert_eq!(a.width(), b.width());
        let w = if op.is_comparison() { 1 } else { a.width() };
        Expr::mk(w, Node::Bin(op, a.clone(), b.clone()))
    }

    #[doc(hidden)]
    pub fn raw_un(op: UnOp, a: &Expr) -> Expr {
        Expr::mk(a.width(), Node::Un(op, a.clone()))
    }

    #[doc(hidden)]
    pub fn raw_extract(hi: u32, lo: u32, e: &Expr) -> Expr {
        assert!(lo <= hi && hi < e.width());
        Expr::mk(hi - lo + 1, Node::Extract { hi, lo, e: e.clone() })
    }

    #[doc(hidden)]
    pub fn raw_concat(h: &Expr, l: &Expr) -> Expr {
        assert!(h.width() + l.width() <= 64);
        Expr::mk(h.width() + l.width(), Node::Concat(h.clone(), l.clone()))
    }

    #[doc(hidden)]
    pub fn raw_ite(c: &Expr, t: &Expr, f: &Expr) -> Expr {
        Expr::mk(t.width(), Node::Ite(c.clone(), t.clone(), f.clone()))
    }

    pub fn width(&self) -> u32 {
        self.0.width
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    /// True when the expression mentions any variable. Because expressions are
    /// kept simplified, this agrees with scanning `simplify(self)`.
    pub fn is_symbolic(&self) -> bool {
        self.0.symbolic
    }

    pub fn as_const(&self) -> Option<u64> {
        match self.node() {
            Node::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&Var> {
        match self.node() {
            Node::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_true(&self) -> bool {
        self.width() == 1 && self.as_const() == Some(1)
    }

    pub fn is_false(&self) -> bool {
        self.width() == 1 && self.as_const() == Some(0)
    }

    pub fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    // Constructors. All of them simplify locally.

    pub fn un(op: UnOp, e: &Expr) -> Expr {
        simplify::mk_un(op, e)
    }

    pub fn bin(op: BinOp, a: &Expr, b: &Expr) -> Expr {
        simplify::mk_bin(op, a, b)
    }

    pub fn extract(hi: u32, lo: u32, e: &Expr) -> Expr {
        assert!(lo <= hi && hi < e.width(), "bad extract [{hi}:{lo}] of width {}", e.width());
        simplify::mk_extract(hi, lo, e)
    }

    pub fn concat(hi: &Expr, lo: &Expr) -> Expr {
        assert!(hi.width() + lo.width() <= 64, "concat wider than 64 bits");
        simplify::mk_concat(hi, lo)
    }

    pub fn ite(c: &Expr, t: &Expr, f: &Expr) -> Expr {
        assert_eq!(c.width(), 1, "ite condition must be width 1");
        assert_eq!(t.width(), f.width(), "ite arms differ in width");
        simplify::mk_ite(c, t, f)
    }

    pub fn add(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Add, self, o)
    }
    pub fn sub(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Sub, self, o)
    }
    pub fn mul(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Mul, self, o)
    }
    pub fn xor(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Xor, self, o)
    }
    pub fn and(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::And, self, o)
    }
    pub fn or(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Or, self, o)
    }
    pub fn shl(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Shl, self, o)
    }
    pub fn shr(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Shr, self, o)
    }
    pub fn eq(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Eq, self, o)
    }
    pub fn ne(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Ne, self, o)
    }
    pub fn ult(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Ult, self, o)
    }
    pub fn ule(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Ule, self, o)
    }
    pub fn slt(&self, o: &Expr) -> Expr {
        Expr::bin(BinOp::Slt, self, o)
    }
    pub fn not(&self) -> Expr {
        Expr::un(UnOp::Not, self)
    }
    pub fn neg(&self) -> Expr {
        Expr::un(UnOp::Neg, self)
    }

    /// Zero-extends (or truncates) to `width`.
    pub fn zext(&self, width: u32) -> Expr {
        let w = self.width();
        match width.cmp(&w) {
            std::cmp::Ordering::Equal => self.clone(),
            std::cmp::Ordering::Less => Expr::extract(width - 1, 0, self),
            std::cmp::Ordering::Greater => Expr::concat(&Expr::constant(0, width - w), self),
        }
    }

    /// The `i`-th byte, little-endian numbering.
    pub fn byte(&self, i: u32) -> Expr {
        Expr::extract(8 * i + 7, 8 * i, self)
    }

    /// Little-endian assembly of bytes into one value.
    pub fn from_le_bytes(bytes: &[Expr]) -> Expr {
        assert!(!bytes.is_empty() && bytes.len() <= 8);
        let mut acc = bytes[bytes.len() - 1].clone();
        for b in bytes[..bytes.len() - 1].iter().rev() {
            acc = Expr::concat(&acc, b);
        }
        acc
    }

    /// All variables with their widths.
    pub fn vars(&self) -> BTreeMap<Arc<str>, (u32, VarOrigin)> {
        let mut out = BTreeMap::new();
        let mut seen = BTreeSet::new();
        self.collect_vars(&mut out, &mut seen);
        out
    }

    fn collect_vars(&self, out: &mut BTreeMap<Arc<str>, (u32, VarOrigin)>, seen: &mut BTreeSet<usize>) {
        if !self.is_symbolic() || !seen.insert(self.ptr_id()) {
            return;
        }
        match self.node() {
            Node::Const(_) => {}
            Node::Var(v) => {
                out.insert(v.name.clone(), (self.width(), v.origin));
            }
            Node::Un(_, e) | Node::Extract { e, .. } => e.collect_vars(out, seen),
            Node::Bin(_, a, b) | Node::Concat(a, b) => {
                a.collect_vars(out, seen);
                b.collect_vars(out, seen);
            }
            Node::Ite(c, t, f) => {
                c.collect_vars(out, seen);
                t.collect_vars(out, seen);
                f.collect_vars(out, seen);
            }
        }
    }

    /// True when any variable satisfies `pred`.
    pub fn any_var(&self, pred: &mut dyn FnMut(&Var) -> bool) -> bool {
        if !self.is_symbolic() {
            return false;
        }
        match self.node() {
            Node::Const(_) => false,
            Node::Var(v) => pred(v),
            Node::Un(_, e) | Node::Extract { e, .. } => e.any_var(pred),
            Node::Bin(_, a, b) | Node::Concat(a, b) => a.any_var(pred) || b.any_var(pred),
            Node::Ite(c, t, f) => c.any_var(pred) || t.any_var(pred) || f.any_var(pred),
        }
    }

    pub fn node_count(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Un(_, e) | Node::Extract { e, .. } => 1 + e.node_count(),
            Node::Bin(_, a, b) | Node::Concat(a, b) => 1 + a.node_count() + b.node_count(),
            Node::Ite(c, t, f) => 1 + c.node_count() + t.node_count() + f.node_count(),
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(v) => write!(f, "{v:#x}:{}", self.width()),
            Node::Var(v) => write!(f, "{}:{}", v.name, self.width()),
            Node::Un(op, e) => write!(f, "({op:?} {e})"),
            Node::Bin(op, a, b) => write!(f, "({op:?} {a} {b})"),
            Node::Extract { hi, lo, e } => write!(f, "{e}[{hi}:{lo}]"),
            Node::Concat(a, b) => write!(f, "({a} ++ {b})"),
            Node::Ite(c, t, e) => write!(f, "(ite {c} {t} {e})"),
        }
    }
}

/// An assignment of variables to values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Model {
    values: BTreeMap<String, u64>,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: u64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.values.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, u64)> for Model {
    fn from_iter<T: IntoIterator<Item = (String, u64)>>(iter: T) -> Self {
        Model {
            values: iter.into_iter().collect(),
        }
    }
}

/// Bit-precise evaluation under a model.
pub fn eval_with_model(e: &Expr, m: &Model) -> Result<u64, ExprError> {
    let mut memo = HashMap::new();
    eval_memo(e, m, &mut memo)
}

fn eval_memo(e: &Expr, m: &Model, memo: &mut HashMap<usize, u64>) -> Result<u64, ExprError> {
    if let Some(v) = e.as_const() {
        return Ok(v);
    }
    if let Some(&v) = memo.get(&e.ptr_id()) {
        return Ok(v);
    }
    let w = e.width();
    let v = match e.node() {
        Node::Const(v) => *v,
        Node::Var(v) => m
            .get(&v.name)
            .ok_or_else(|| ExprError::UnboundVariable(v.name.to_string()))?
            & mask(w),
        Node::Un(op, a) => apply_un(*op, w, eval_memo(a, m, memo)?),
        Node::Bin(op, a, b) => {
            let (x, y) = (eval_memo(a, m, memo)?, eval_memo(b, m, memo)?);
            apply_bin(*op, a.width(), x, y)
        }
        Node::Extract { hi, lo, e: a } => (eval_memo(a, m, memo)? >> lo) & mask(hi - lo + 1),
        Node::Concat(a, b) => (eval_memo(a, m, memo)? << b.width()) | eval_memo(b, m, memo)?,
        Node::Ite(c, t, f) => {
            if eval_memo(c, m, memo)? != 0 {
                eval_memo(t, m, memo)?
            } else {
                eval_memo(f, m, memo)?
            }
        }
    };
    memo.insert(e.ptr_id(), v);
    Ok(v)
}

/// Ordered, append-only list of width-1 assertions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    items: Vec<Expr>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, c: Expr) {
        assert_eq!(c.width(), 1, "constraints must have width 1");
        self.items.push(c);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Expr> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[Expr] {
        &self.items
    }
}

impl FromIterator<Expr> for ConstraintSet {
    fn from_iter<T: IntoIterator<Item = Expr>>(iter: T) -> Self {
        let mut cs = ConstraintSet::new();
        for c in iter {
            cs.push(c);
        }
        cs
    }
}

pub fn is_symbolic(e: &Expr) -> bool {
    simplify(e).is_symbolic()
}
