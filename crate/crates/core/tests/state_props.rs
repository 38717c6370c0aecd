//! Fork isolation and taint closure.

mod common;

use std::sync::Arc;

use common::oracle::random_term;
use dyncfg::expr::{Expr, Solver, VarOrigin};
use dyncfg::image::Perms;
use dyncfg::state::{InputMode, LoaderConfig, MapLabel, SimState, TaintOrigin};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const AREA: u64 = 0x5000;

fn base() -> SimState {
    let mut s = SimState::new(Arc::new(LoaderConfig::default()), InputMode::Symbolic, Solver::default());
    s.memory_mut().map(AREA, 0x100, Perms::RW, MapLabel::Anonymous);
    s.write_bytes(AREA, &(0..16).map(Expr::c8).collect::<Vec<_>>());
    s
}

#[derive(Debug, Clone)]
enum Mutation {
    Write(u8, u8),
    Reg(u8, u64),
    Push(u64),
    Constrain(u8),
    Env(String),
    Warn,
    Map(u8),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (0u8..64, any::<u8>()).prop_map(|(o, v)| Mutation::Write(o, v)),
        (0u8..16, any::<u64>()).prop_map(|(r, v)| Mutation::Reg(r, v)),
        any::<u64>().prop_map(Mutation::Push),
        any::<u8>().prop_map(Mutation::Constrain),
        "[A-Z]{1,4}".prop_map(Mutation::Env),
        Just(Mutation::Warn),
        (1u8..8).prop_map(Mutation::Map),
    ]
}

fn apply(s: &mut SimState, m: &Mutation) {
    match m {
        Mutation::Write(o, v) => s.write_bytes(AREA + *o as u64, &[Expr::c8(*v)]),
        Mutation::Reg(r, v) => s.regs[*r as usize] = Expr::c64(*v),
        Mutation::Push(v) => s.push_u64(&Expr::c64(*v)),
        Mutation::Constrain(k) => {
            let x = Expr::var("x", 8, VarOrigin::Test);
            s.add_constraint(x.ne(&Expr::c8(*k)));
        }
        Mutation::Env(name) => {
            s.env.insert(name.clone(), "v".into());
            s.env_bytes(name, 2);
        }
        Mutation::Warn => s.warn("w"),
        Mutation::Map(pages) => {
            let at = s.alloc_region(*pages as u64 * 0x1000).unwrap();
            s.memory_mut().map(at, 0x1000, Perms::RX, MapLabel::Anonymous);
        }
    }
}

#[derive(Debug, PartialEq)]
struct Snapshot {
    mem: Option<Vec<u8>>,
    regs: Vec<Expr>,
    constraints: usize,
    events: usize,
    env: Vec<(String, String)>,
    taints: usize,
    mappings: usize,
}

fn snapshot(s: &SimState) -> Snapshot {
    Snapshot {
        mem: s.memory().concrete_bytes(AREA, 64),
        regs: s.regs.to_vec(),
        constraints: s.constraints().len(),
        events: s.events().len(),
        env: s.env.clone().into_iter().collect(),
        taints: s.taints().len(),
        mappings: s.memory().mappings().len(),
    }
}

proptest! {
    #[test]
    fn child_mutations_do_not_reach_parent(pre in prop::collection::vec(mutation(), 0..6), post in prop::collection::vec(mutation(), 1..12)) {
        let mut parent = base();
        for m in &pre {
            apply(&mut parent, m);
        }
        let before = snapshot(&parent);
        let mut child = parent.fork(&Expr::bool(true)).unwrap();
        for m in &post {
            apply(&mut child, m);
        }
        prop_assert_eq!(snapshot(&parent), before);
        let mut split = parent.split();
        for m in &post {
            apply(&mut split, m);
        }
        prop_assert_eq!(snapshot(&parent), snapshot(&base_with(&pre)));
    }

    #[test]
    fn anything_built_from_tainted_data_is_tainted(seed in any::<u64>(), n in 1usize..8) {
        let mut s = base();
        let net = s.network_bytes(3, n, 0);
        for b in &net {
            let name = &b.as_var().unwrap().name;
            prop_assert_eq!(s.taint_of(name).map(|t| t.origin), Some(TaintOrigin::Network));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_term(&mut rng, 2, 8, 3);
        // Variable 0 is a network byte, variable 1 is clean.
        let names = [net[0].as_var().unwrap().name.to_string(), "clean".to_string()];
        let refs = [names[0].as_str(), names[1].as_str()];
        let e = t.to_expr(&refs, 8);
        let uses_net = e.vars().contains_key(names[0].as_str());
        prop_assert_eq!(s.is_tainted(&e), uses_net);
        let wrapped = e.add(&net[0]).zext(64);
        prop_assert!(s.is_tainted(&wrapped));
        prop_assert!(s.is_tainted(&Expr::from_le_bytes(&net)));
    }
}

fn base_with(pre: &[Mutation]) -> SimState {
    let mut s = base();
    for m in pre {
        apply(&mut s, m);
    }
    s
}

#[test]
fn infeasible_fork_is_refused() {
    let mut s = base();
    let x = Expr::var("x", 8, VarOrigin::Test);
    s.add_constraint(x.eq(&Expr::c8(1)));
    assert!(s.fork(&x.eq(&Expr::c8(2))).is_err());
    assert!(s.fork(&x.ult(&Expr::c8(5))).is_ok());
}
