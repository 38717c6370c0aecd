//! A tiny term language with its own evaluator, used as an independent
//! oracle for the solver and for target resolution.

use dyncfg::expr::{Expr, VarOrigin};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Xor,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Ult,
    Ule,
    Slt,
}

#[derive(Debug, Clone)]
pub enum Term {
    Var(usize),
    Const(u64),
    Bin(Op, Box<Term>, Box<Term>),
    Not(Box<Term>),
    Neg(Box<Term>),
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub cmp: Cmp,
    pub a: Term,
    pub b: Term,
}

fn mask(w: u32) -> u64 {
    if w >= 64 {
        u64::MAX
    } else {
        (1u64 << w) - 1
    }
}

impl Term {
    pub fn eval(&self, vals: &[u64], w: u32) -> u64 {
        let m = mask(w);
        match self {
            Term::Var(i) => vals[*i] & m,
            Term::Const(c) => c & m,
            Term::Not(a) => !a.eval(vals, w) & m,
            Term::Neg(a) => a.eval(vals, w).wrapping_neg() & m,
            Term::Bin(op, a, b) => {
                let (x, y) = (a.eval(vals, w), b.eval(vals, w));
                (match op {
                    Op::Add => x.wrapping_add(y),
                    Op::Sub => x.wrapping_sub(y),
                    Op::Xor => x ^ y,
                    Op::And => x & y,
                    Op::Or => x | y,
                }) & m
            }
        }
    }

    pub fn to_expr(&self, names: &[&str], w: u32) -> Expr {
        match self {
            Term::Var(i) => Expr::var(names[*i], w, VarOrigin::Test),
            Term::Const(c) => Expr::constant(c & mask(w), w),
            Term::Not(a) => a.to_expr(names, w).not(),
            Term::Neg(a) => a.to_expr(names, w).neg(),
            Term::Bin(op, a, b) => {
                let (x, y) = (a.to_expr(names, w), b.to_expr(names, w));
                match op {
                    Op::Add => x.add(&y),
                    Op::Sub => x.sub(&y),
                    Op::Xor => x.xor(&y),
                    Op::And => x.and(&y),
                    Op::Or => x.or(&y),
                }
            }
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        match self {
            Term::Var(i) => Some(*i),
            Term::Const(_) => None,
            Term::Not(a) | Term::Neg(a) => a.max_var(),
            Term::Bin(_, a, b) => a.max_var().max(b.max_var()),
        }
    }
}

impl Constraint {
    pub fn holds(&self, vals: &[u64], w: u32) -> bool {
        let (x, y) = (self.a.eval(vals, w), self.b.eval(vals, w));
        let sign = 1u64 << (w - 1);
        match self.cmp {
            Cmp::Eq => x == y,
            Cmp::Ne => x != y,
            Cmp::Ult => x < y,
            Cmp::Ule => x <= y,
            Cmp::Slt => (x ^ sign) < (y ^ sign),
        }
    }

    pub fn to_expr(&self, names: &[&str], w: u32) -> Expr {
        let (x, y) = (self.a.to_expr(names, w), self.b.to_expr(names, w));
        match self.cmp {
            Cmp::Eq => x.eq(&y),
            Cmp::Ne => x.ne(&y),
            Cmp::Ult => x.ult(&y),
            Cmp::Ule => x.ule(&y),
            Cmp::Slt => x.slt(&y),
        }
    }

    /// Highest variable index mentioned, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.a.max_var().max(self.b.max_var())
    }
}

pub fn random_term(rng: &mut impl Rng, nvars: usize, w: u32, depth: u32) -> Term {
    let leaf = depth == 0 || rng.gen_bool(0.35);
    if leaf {
        return if rng.gen_bool(0.6) {
            Term::Var(rng.gen_range(0..nvars))
        } else {
            Term::Const(rng.gen::<u64>() & mask(w))
        };
    }
    match rng.gen_range(0..7) {
        0 => Term::Not(Box::new(random_term(rng, nvars, w, depth - 1))),
        1 => Term::Neg(Box::new(random_term(rng, nvars, w, depth - 1))),
        k => {
            let op = [Op::Add, Op::Sub, Op::Xor, Op::And, Op::Or][k - 2];
            Term::Bin(
                op,
                Box::new(random_term(rng, nvars, w, depth - 1)),
                Box::new(random_term(rng, nvars, w, depth - 1)),
            )
        }
    }
}

pub fn random_constraint(rng: &mut impl Rng, nvars: usize, w: u32) -> Constraint {
    let cmp = [Cmp::Eq, Cmp::Eq, Cmp::Ne, Cmp::Ult, Cmp::Ule, Cmp::Slt][rng.gen_range(0..6)];
    let a = random_term(rng, nvars, w, 2);
    let b = if rng.gen_bool(0.5) {
        Term::Const(rng.gen::<u64>() & mask(w))
    } else {
        random_term(rng, nvars, w, 1)
    };
    Constraint { cmp, a, b }
}

/// Exhaustive search over `nvars` variables of width `w`, checking each
/// constraint as soon as its variables are bound.
pub fn brute_force(cs: &[Constraint], nvars: usize, w: u32) -> Option<Vec<u64>> {
    let mut by_level: Vec<Vec<&Constraint>> = vec![Vec::new(); nvars + 1];
    for c in cs {
        let level = c.max_var().map_or(0, |v| v + 1);
        by_level[level].push(c);
    }
    let mut vals = vec![0u64; nvars];
    if !by_level[0].iter().all(|c| c.holds(&vals, w)) {
        return None;
    }
    fn go(level: usize, nvars: usize, w: u32, by_level: &[Vec<&Constraint>], vals: &mut Vec<u64>) -> bool {
        if level == nvars {
            return true;
        }
        for v in 0..=mask(w) {
            vals[level] = v;
            if by_level[level + 1].iter().all(|c| c.holds(vals, w)) && go(level + 1, nvars, w, by_level, vals) {
                return true;
            }
        }
        false
    }
    go(0, nvars, w, &by_level, &mut vals).then_some(vals)
}
