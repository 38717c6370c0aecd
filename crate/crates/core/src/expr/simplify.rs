//! Local rewrite rules applied by every expression constructor.

use std::collections::HashMap;
use std::sync::Arc;

use super::{apply_bin, apply_un, mask, BinOp, Expr, Node, UnOp, Var};

pub(super) fn mk_un(op: UnOp, e: &Expr) -> Expr {
    let w = e.width();
    if let Some(v) = e.as_const() {
        return Expr::constant(apply_un(op, w, v), w);
    }
    match (op, e.node()) {
        (UnOp::Not, Node::Un(UnOp::Not, x)) | (UnOp::Neg, Node::Un(UnOp::Neg, x)) => return x.clone(),
        (UnOp::Not, Node::Bin(BinOp::Eq, a, b)) => return Expr::mk(1, Node::Bin(BinOp::Ne, a.clone(), b.clone())),
        (UnOp::Not, Node::Bin(BinOp::Ne, a, b)) => return Expr::mk(1, Node::Bin(BinOp::Eq, a.clone(), b.clone())),
        (UnOp::Not, Node::Bin(BinOp::Ult, a, b)) => return mk_bin(BinOp::Ule, b, a),
        (UnOp::Not, Node::Bin(BinOp::Ule, a, b)) => return mk_bin(BinOp::Ult, b, a),
        _ => {}
    }
    Expr::mk(w, Node::Un(op, e.clone()))
}

fn leafish(e: &Expr) -> bool {
    matches!(
        e.node(),
        Node::Const(_) | Node::Var(_) | Node::Concat(..) | Node::Extract { .. }
    )
}

pub(super) fn mk_bin(op: BinOp, a: &Expr, b: &Expr) -> Expr {
    assert_eq!(a.width(), b.width(), "operand widths differ for {op:?}");
    let w = a.width();
    let out_w = if op.is_comparison() { 1 } else { w };
    let m = mask(w);
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        return Expr::constant(apply_bin(op, w, x, y), out_w);
    }
    if op.is_commutative() && a.as_const().is_some() {
        return mk_bin(op, b, a);
    }
    let zero = || Expr::constant(0, w);
    if let Some(k) = b.as_const() {
        match op {
            BinOp::Add => {
                if k == 0 {
                    return a.clone();
                }
                if let Node::Bin(BinOp::Add, x, y) = a.node() {
                    if let Some(k2) = y.as_const() {
                        return mk_bin(BinOp::Add, x, &Expr::constant(k.wrapping_add(k2), w));
                    }
                }
            }
            BinOp::Sub => return mk_bin(BinOp::Add, a, &Expr::constant(k.wrapping_neg(), w)),
            BinOp::Mul => {
                if k == 0 {
                    return zero();
                }
                if k == 1 {
                    return a.clone();
                }
            }
            BinOp::Xor => {
                if k == 0 {
                    return a.clone();
                }
                if let Node::Bin(BinOp::Xor, x, y) = a.node() {
                    if let Some(k2) = y.as_const() {
                        return mk_bin(BinOp::Xor, x, &Expr::constant(k ^ k2, w));
                    }
                }
                if k == m {
                    return mk_un(UnOp::Not, a);
                }
            }
            BinOp::And => {
                if k == 0 {
                    return zero();
                }
                if k == m {
                    return a.clone();
                }
                if let Node::Bin(BinOp::And, x, y) = a.node() {
                    if let Some(k2) = y.as_const() {
                        return mk_bin(BinOp::And, x, &Expr::constant(k & k2, w));
                    }
                }
            }
            BinOp::Or => {
                if k == 0 {
                    return a.clone();
                }
                if k == m {
                    return Expr::constant(m, w);
                }
            }
            BinOp::Shl | BinOp::Shr => {
                if k == 0 {
                    return a.clone();
                }
                if k >= w as u64 {
                    return zero();
                }
            }
            BinOp::Eq => return mk_eq_const(a, k),
            BinOp::Ne => {
                let eq = mk_eq_const(a, k);
                return match eq.node() {
                    Node::Bin(BinOp::Eq, x, y) => Expr::mk(1, Node::Bin(BinOp::Ne, x.clone(), y.clone())),
                    _ => mk_un(UnOp::Not, &eq),
                };
            }
            BinOp::Ult => {
                if k == 0 {
                    return Expr::bool(false);
                }
                if let Some((x, wx)) = zext_of(a) {
                    if k >> wx != 0 {
                        return Expr::bool(true);
                    }
                    return mk_bin(BinOp::Ult, x, &Expr::constant(k, wx));
                }
            }
            BinOp::Ule => {
                if k == m {
                    return Expr::bool(true);
                }
                if let Some((x, wx)) = zext_of(a) {
                    if k >> wx != 0 {
                        return Expr::bool(true);
                    }
                    return mk_bin(BinOp::Ule, x, &Expr::constant(k, wx));
                }
            }
            BinOp::Slt => {}
        }
    }
    if let Some(k) = a.as_const() {
        match op {
            BinOp::Sub if k == 0 => return mk_un(UnOp::Neg, b),
            BinOp::Shl | BinOp::Shr if k == 0 => return zero(),
            BinOp::Ult => {
                if k == m {
                    return Expr::bool(false);
                }
                if let Some((x, wx)) = zext_of(b) {
                    if k >> wx != 0 {
                        return Expr::bool(false);
                    }
                    return mk_bin(BinOp::Ult, &Expr::constant(k, wx), x);
                }
            }
            BinOp::Ule => {
                if k == 0 {
                    return Expr::bool(true);
                }
                if let Some((x, wx)) = zext_of(b) {
                    if k >> wx != 0 {
                        return Expr::bool(false);
                    }
                    return mk_bin(BinOp::Ule, &Expr::constant(k, wx), x);
                }
            }
            _ => {}
        }
    }
    if a == b {
        match op {
            BinOp::Xor | BinOp::Sub => return zero(),
            BinOp::And | BinOp::Or => return a.clone(),
            BinOp::Eq | BinOp::Ule => return Expr::bool(true),
            BinOp::Ne | BinOp::Ult | BinOp::Slt => return Expr::bool(false),
            _ => {}
        }
    }
    if matches!(op, BinOp::Eq | BinOp::Ne) {
        if let (Node::Concat(h1, l1), Node::Concat(h2, l2)) = (a.node(), b.node()) {
            if l1.width() == l2.width() {
                let (hi, lo) = (mk_bin(op, h1, h2), mk_bin(op, l1, l2));
                return if op == BinOp::Eq {
                    mk_bin(BinOp::And, &hi, &lo)
                } else {
                    mk_bin(BinOp::Or, &hi, &lo)
                };
            }
        }
    }
    Expr::mk(out_w, Node::Bin(op, a.clone(), b.clone()))
}

/// `Concat(0, x)` viewed as a zero extension of `x`.
fn zext_of(e: &Expr) -> Option<(&Expr, u32)> {
    match e.node() {
        Node::Concat(h, l) if h.as_const() == Some(0) => Some((l, l.width())),
        _ => None,
    }
}

fn mk_eq_const(a: &Expr, k: u64) -> Expr {
    let w = a.width();
    let c = |v: u64| Expr::constant(v, w);
    if w == 1 {
        return if k == 1 { a.clone() } else { mk_un(UnOp::Not, a) };
    }
    match a.node() {
        Node::Bin(BinOp::Xor, x, y) => {
            if let Some(k2) = y.as_const() {
                return mk_eq_const(x, k ^ k2);
            }
        }
        Node::Bin(BinOp::Add, x, y) => {
            if let Some(k2) = y.as_const() {
                return mk_eq_const(x, k.wrapping_sub(k2) & mask(w));
            }
        }
        Node::Bin(BinOp::Sub, x, y) => {
            if let Some(k2) = x.as_const() {
                return mk_eq_const(y, k2.wrapping_sub(k) & mask(w));
            }
        }
        Node::Un(UnOp::Not, x) => return mk_eq_const(x, !k & mask(w)),
        Node::Un(UnOp::Neg, x) => return mk_eq_const(x, k.wrapping_neg() & mask(w)),
        Node::Concat(h, l) => {
            let wl = l.width();
            let hi = mk_eq_const(h, k >> wl);
            let lo = mk_eq_const(l, k & mask(wl));
            return mk_bin(BinOp::And, &hi, &lo);
        }
        Node::Ite(cond, t, f) => {
            if let (Some(tv), Some(fv)) = (t.as_const(), f.as_const()) {
                return match (tv == k, fv == k) {
                    (true, true) => Expr::bool(true),
                    (false, false) => Expr::bool(false),
                    (true, false) => cond.clone(),
                    (false, true) => mk_un(UnOp::Not, cond),
                };
            }
        }
        _ => {}
    }
    Expr::mk(1, Node::Bin(BinOp::Eq, a.clone(), c(k)))
}

pub(super) fn mk_extract(hi: u32, lo: u32, e: &Expr) -> Expr {
    let w = e.width();
    let out_w = hi - lo + 1;
    if lo == 0 && hi == w - 1 {
        return e.clone();
    }
    if let Some(v) = e.as_const() {
        return Expr::constant((v >> lo) & mask(out_w), out_w);
    }
    match e.node() {
        Node::Extract { lo: l2, e: x, .. } => return mk_extract(hi + l2, lo + l2, x),
        Node::Concat(h, l) => {
            let wl = l.width();
            if hi < wl {
                return mk_extract(hi, lo, l);
            }
            if lo >= wl {
                return mk_extract(hi - wl, lo - wl, h);
            }
            return mk_concat(&mk_extract(hi - wl, 0, h), &mk_extract(wl - 1, lo, l));
        }
        Node::Ite(c, t, f) if t.as_const().is_some() && f.as_const().is_some() => {
            return mk_ite(c, &mk_extract(hi, lo, t), &mk_extract(hi, lo, f));
        }
        Node::Bin(op @ (BinOp::Xor | BinOp::And | BinOp::Or), a, b) if leafish(a) && leafish(b) => {
            return mk_bin(*op, &mk_extract(hi, lo, a), &mk_extract(hi, lo, b));
        }
        Node::Bin(op @ (BinOp::Add | BinOp::Sub | BinOp::Mul), a, b) if lo == 0 && leafish(a) && leafish(b) => {
            return mk_bin(*op, &mk_extract(hi, 0, a), &mk_extract(hi, 0, b));
        }
        Node::Un(UnOp::Not, a) if leafish(a) => return mk_un(UnOp::Not, &mk_extract(hi, lo, a)),
        Node::Un(UnOp::Neg, a) if lo == 0 && leafish(a) => return mk_un(UnOp::Neg, &mk_extract(hi, 0, a)),
        Node::Bin(BinOp::Shr, x, k) => {
            if let Some(k) = k.as_const() {
                if hi as u64 + k < w as u64 {
                    return mk_extract(hi + k as u32, lo + k as u32, x);
                }
            }
        }
        Node::Bin(BinOp::Shl, x, k) => {
            if let Some(k) = k.as_const() {
                if lo as u64 >= k {
                    return mk_extract(hi - k as u32, lo - k as u32, x);
                }
            }
        }
        _ => {}
    }
    Expr::mk(out_w, Node::Extract { hi, lo, e: e.clone() })
}

fn merge_adjacent(h: &Expr, l: &Expr) -> Option<Expr> {
    if let (Some(a), Some(b)) = (h.as_const(), l.as_const()) {
        return Some(Expr::constant((a << l.width()) | b, h.width() + l.width()));
    }
    if let (
        Node::Extract { hi: h1, lo: l1, e: x1 },
        Node::Extract { hi: h2, lo: l2, e: x2 },
    ) = (h.node(), l.node())
    {
        if x1 == x2 && *l1 == h2 + 1 {
            return Some(mk_extract(*h1, *l2, x1));
        }
    }
    if let Node::Extract { hi: h1, lo: l1, e: x1 } = h.node() {
        if x1 == l && *l1 == l.width() {
            return Some(mk_extract(*h1, 0, x1));
        }
    }
    None
}

pub(super) fn mk_concat(h: &Expr, l: &Expr) -> Expr {
    let w = h.width() + l.width();
    if let Some(e) = merge_adjacent(h, l) {
        return e;
    }
    if let Node::Concat(hh, hl) = h.node() {
        return mk_concat(hh, &mk_concat(hl, l));
    }
    if let Node::Concat(lh, ll) = l.node() {
        if let Some(merged) = merge_adjacent(h, lh) {
            return mk_concat(&merged, ll);
        }
    }
    Expr::mk(w, Node::Concat(h.clone(), l.clone()))
}

pub(super) fn mk_ite(c: &Expr, t: &Expr, f: &Expr) -> Expr {
    if let Some(v) = c.as_const() {
        return if v != 0 { t.clone() } else { f.clone() };
    }
    if t == f {
        return t.clone();
    }
    if t.width() == 1 {
        match (t.as_const(), f.as_const()) {
            (Some(1), Some(0)) => return c.clone(),
            (Some(0), Some(1)) => return mk_un(UnOp::Not, c),
            _ => {}
        }
    }
    if let Node::Un(UnOp::Not, inner) = c.node() {
        return mk_ite(inner, f, t);
    }
    Expr::mk(t.width(), Node::Ite(c.clone(), t.clone(), f.clone()))
}

fn rebuild(e: &Expr, leaf: &mut dyn FnMut(&Var, u32) -> Option<Expr>, memo: &mut HashMap<usize, Expr>) -> Expr {
    if !e.is_symbolic() {
        return e.clone();
    }
    if let Some(r) = memo.get(&e.ptr_id()) {
        return r.clone();
    }
    let out = match e.node() {
        Node::Const(_) => e.clone(),
        Node::Var(v) => leaf(v, e.width()).unwrap_or_else(|| e.clone()),
        Node::Un(op, a) => mk_un(*op, &rebuild(a, leaf, memo)),
        Node::Bin(op, a, b) => {
            let (a, b) = (rebuild(a, leaf, memo), rebuild(b, leaf, memo));
            mk_bin(*op, &a, &b)
        }
        Node::Extract { hi, lo, e: a } => mk_extract(*hi, *lo, &rebuild(a, leaf, memo)),
        Node::Concat(a, b) => {
            let (a, b) = (rebuild(a, leaf, memo), rebuild(b, leaf, memo));
            mk_concat(&a, &b)
        }
        Node::Ite(c, t, f) => {
            let (c, t, f) = (rebuild(c, leaf, memo), rebuild(t, leaf, memo), rebuild(f, leaf, memo));
            mk_ite(&c, &t, &f)
        }
    };
    memo.insert(e.ptr_id(), out.clone());
    out
}

/// Re-normalizes an expression through the rewriting constructors.
pub fn simplify(e: &Expr) -> Expr {
    rebuild(e, &mut |_, _| None, &mut HashMap::new())
}

/// Replaces every bound variable with its constant value.
pub fn substitute(e: &Expr, values: &HashMap<Arc<str>, u64>) -> Expr {
    if values.is_empty() {
        return e.clone();
    }
    rebuild(
        e,
        &mut |v, w| values.get(&v.name).map(|&x| Expr::constant(x, w)),
        &mut HashMap::new(),
    )
}
