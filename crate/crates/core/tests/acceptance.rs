//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows up in captured test logs. The test fails if any
//! criterion fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dyncfg::bench::suite::{SMC_JMP_IMM, SMC_LANDING_OFFSET, SMC_SLOT_A_OFFSET};
use dyncfg::bench::{list_benchmarks, read_ground_truth, SUITE_SIZE};
use dyncfg::cfg::to_dot;
use dyncfg::correlate::SmcClass;
use dyncfg::evalpipe::{
    analyze, concrete_validate, evaluate_suite, read_witness, render, run_benchmark, Format, PipelineConfig,
    SuiteSummary, Validation, REFERENCE_GROWTH,
};
use dyncfg::expr::solver::unknown_answers;
use dyncfg::expr::{Expr, Model, SatResult, Solver, VarOrigin};
use dyncfg::hooks::strings::{extract_with_pool, CandidatePool, Encoding, Extraction, Provenance};
use dyncfg::image::{emit_image, exec_regions, parse_image, Perms, MAIN_BASE};
use dyncfg::state::{InputMode, LoaderConfig, MapLabel, SimState};
use dyncfg::tracker::resolve_symbolic_target;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracle::{brute_force, random_constraint, Cmp, Constraint, Op, Term};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, failures: Vec<String>, ok_detail: String) -> Outcome {
    let pass = failures.is_empty();
    let detail = if pass {
        ok_detail
    } else {
        let shown: Vec<_> = failures.iter().take(5).cloned().collect();
        format!("{} problem(s): {}", failures.len(), shown.join("; "))
    };
    Outcome { name, pass, detail }
}

fn report_line(o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let line = format!("{verdict} {}: {}\n", o.name, o.detail);
    let _ = std::io::stderr().write_all(line.as_bytes());
}

struct Ctx {
    dir: tempfile::TempDir,
    cfg: PipelineConfig,
    summary: SuiteSummary,
    elapsed: Duration,
    unknowns: u64,
}

impl Ctx {
    fn path(&self) -> PathBuf {
        self.dir.path().to_path_buf()
    }
}

fn detection(ctx: &Ctx) -> Outcome {
    let s = &ctx.summary;
    let mut bad = Vec::new();
    if s.benchmarks.len() != SUITE_SIZE {
        bad.push(format!("{} benchmarks, want {SUITE_SIZE}", s.benchmarks.len()));
    }
    if s.precision != 1.0 || s.recall != 1.0 {
        bad.push(format!("precision {} recall {}", s.precision, s.recall));
    }
    for r in &s.benchmarks {
        let want: BTreeSet<String> = r.expected.iter().cloned().collect();
        if r.discovered_names() != want {
            bad.push(format!("{}: found {:?} want {:?}", r.benchmark, r.discovered_names(), want));
        }
        if r.seconds >= 10.0 {
            bad.push(format!("{} took {:.2}s", r.benchmark, r.seconds));
        }
    }
    if ctx.elapsed >= Duration::from_secs(120) {
        bad.push(format!("suite took {:?}", ctx.elapsed));
    }
    let slowest = s.benchmarks.iter().map(|r| r.seconds).fold(0.0, f64::max);
    outcome(
        "library detection",
        bad,
        format!(
            "precision {:.1} recall {:.1}; suite {:.2}s, slowest benchmark {:.2}s",
            s.precision,
            s.recall,
            ctx.elapsed.as_secs_f64(),
            slowest
        ),
    )
}

fn growth(ctx: &Ctx) -> Outcome {
    let s = &ctx.summary;
    let mut bad = Vec::new();
    let mut base_objects = BTreeSet::new();
    let mut big_objects = BTreeSet::new();
    for r in &s.benchmarks {
        let (a, b) = (&r.static_metrics, &r.module_metrics);
        if !(b.nodes > a.nodes && b.edges > a.edges && b.functions > a.functions) {
            bad.push(format!("{}: no strict growth {a:?} -> {b:?}", r.benchmark));
        }
        if b.objects != 1 + r.expected.len() {
            bad.push(format!("{}: {} objects, {} expected libs", r.benchmark, b.objects, r.expected.len()));
        }
        if a.objects != 1 {
            bad.push(format!("{}: static phase has {} objects", r.benchmark, a.objects));
        }
        if r.benchmark == "multi_stage" || r.benchmark == "signal_handler" {
            big_objects.insert(b.objects);
        } else {
            base_objects.insert(b.objects);
        }
    }
    let (lo, hi): (Vec<usize>, Vec<usize>) = (base_objects.iter().copied().collect(), big_objects.iter().copied().collect());
    match (lo.as_slice(), hi.as_slice()) {
        ([lo], [hi]) if *hi == lo + 2 => {}
        _ => bad.push(format!("object counts {base_objects:?} vs {big_objects:?}")),
    }
    for (label, g) in [("mean", s.growth_mean), ("pooled", s.growth_pooled)] {
        if !(g.nodes > 0.0 && g.edges > 0.0 && g.functions > 0.0) {
            bad.push(format!("{label} growth not positive: {g:?}"));
        }
    }
    let table = render(s, Format::Table);
    let header = table.lines().next().unwrap_or_default();
    for v in [REFERENCE_GROWTH.nodes, REFERENCE_GROWTH.edges, REFERENCE_GROWTH.functions] {
        if !header.contains(&format!("{v:.1}%")) || !header.contains("not reproduced") {
            bad.push(format!("reference {v} missing from header {header:?}"));
        }
    }
    let (m, p) = (s.growth_mean, s.growth_pooled);
    outcome(
        "structural growth",
        bad,
        format!(
            "objects {base_objects:?}/{big_objects:?}; mean +{:.1}/{:.1}/{:.1}%, pooled +{:.1}/{:.1}/{:.1}%",
            m.nodes, m.edges, m.functions, p.nodes, p.edges, p.functions
        ),
    )
}

const STR_ADDR: u64 = 0x1000;
const MAX_LEN: usize = 32;

fn string_state() -> SimState {
    let mut s = SimState::new(Arc::new(LoaderConfig::default()), InputMode::Symbolic, Solver::default());
    s.memory_mut().map(STR_ADDR, 0x1000, Perms::RW, MapLabel::Anonymous);
    s
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(3..=8);
    let body: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
    format!("lib{body}.so")
}

/// A unary byte constraint that `value` satisfies.
fn byte_constraint(rng: &mut ChaCha8Rng, b: &Expr, value: u8) -> Expr {
    let k: u8 = rng.gen();
    match rng.gen_range(0..4) {
        0 => b.xor(&Expr::c8(k)).eq(&Expr::c8(value ^ k)),
        1 => b.add(&Expr::c8(k)).eq(&Expr::c8(value.wrapping_add(k))),
        2 => b.eq(&Expr::c8(value)),
        _ => b.ult(&Expr::c8(value.saturating_add(rng.gen_range(1..4)))),
    }
}

fn algorithm1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = Vec::new();
    let mut counts = [0usize; 4];
    let mut unique = 0;
    for case in 0..200 {
        let enc = if rng.gen_bool(0.5) { Encoding::Ascii } else { Encoding::Utf16Le };
        let mut s = string_state();
        let mut pool = CandidatePool::default();
        let mut names = Vec::new();
        let want = rng.gen_range(2..=5);
        while names.len() < want {
            let n = random_name(&mut rng);
            if pool.push(&n, Provenance::SearchPath) {
                names.push(n);
            }
        }
        let kind = case % 4;
        counts[kind] += 1;
        match kind {
            0 => {
                let p = Expr::var("p", 64, VarOrigin::Test);
                let r = extract_with_pool(&mut s, &p, MAX_LEN, enc, &pool);
                if r != Ok(Extraction::SymbolicPointer) {
                    bad.push(format!("case {case}: symbolic pointer gave {r:?}"));
                }
            }
            1 => {
                let text = &names[0];
                s.memory_mut().store_concrete(STR_ADDR, &enc.encode(text));
                let r = extract_with_pool(&mut s, &Expr::c64(STR_ADDR), MAX_LEN, enc, &pool);
                if r != Ok(Extraction::ConcreteString(text.clone())) {
                    bad.push(format!("case {case}: concrete {text:?} gave {r:?}"));
                }
            }
            _ => {
                let bytes: Vec<Expr> = (0..MAX_LEN)
                    .map(|i| Expr::var(&format!("d{i}"), 8, VarOrigin::Test))
                    .collect();
                s.write_bytes(STR_ADDR, &bytes);
                // kind 2: pin one candidate completely; kind 3: exclude all.
                let target = rng.gen_range(0..names.len());
                let code = enc.encode(&names[target]);
                let mut cons = Vec::new();
                if kind == 2 {
                    for (i, &c) in code.iter().enumerate() {
                        cons.push(byte_constraint(&mut rng, &bytes[i], c));
                    }
                } else {
                    let firsts: BTreeSet<u8> = names.iter().map(|n| n.as_bytes()[0]).collect();
                    let avoid = (b'A'..=b'Z').find(|c| !firsts.contains(c)).unwrap();
                    cons.push(byte_constraint(&mut rng, &bytes[0], avoid));
                    cons.push(bytes[0].ule(&Expr::c8(b'Z')));
                }
                for c in &cons {
                    s.add_constraint(c.clone());
                }
                // Independent oracle: which candidates satisfy every constraint?
                let sat: Vec<&String> = names
                    .iter()
                    .filter(|n| {
                        let code = enc.encode(n);
                        let mut m = Model::new();
                        for i in 0..MAX_LEN {
                            m.insert(&format!("d{i}"), *code.get(i).unwrap_or(&0x20) as u64);
                        }
                        cons.iter().all(|c| dyncfg::expr::eval_with_model(c, &m) == Ok(1))
                    })
                    .collect();
                let r = extract_with_pool(&mut s, &Expr::c64(STR_ADDR), MAX_LEN, enc, &pool);
                if sat.len() == 1 {
                    unique += 1;
                }
                match (sat.first(), &r) {
                    (Some(first), Ok(Extraction::ConcreteString(got))) if *first == got => {
                        let code = enc.encode(got);
                        for (i, want) in code.iter().enumerate() {
                            if s.eval(&bytes[i]) != Some(*want as u64) {
                                bad.push(format!("case {case}: byte {i} not pinned to {want:#x}"));
                            }
                        }
                    }
                    (None, Ok(Extraction::SymbolicString(_))) => {}
                    _ => bad.push(format!("case {case}: oracle {sat:?}, got {r:?}")),
                }
            }
        }
    }
    outcome(
        "string resolution conformance",
        bad,
        format!(
            "200 instances (pointer {}, concrete {}, pinned {} of which {unique} had one satisfying candidate, none {}), zero violations",
            counts[0], counts[1], counts[2], counts[3]
        ),
    )
}

fn region_state(regions: &[(u64, u64)]) -> SimState {
    let mut s = SimState::new(Arc::new(LoaderConfig::default()), InputMode::Symbolic, Solver::default());
    for &(start, len) in regions {
        s.memory_mut().map(start, len, Perms::RX, MapLabel::Anonymous);
    }
    s
}

/// Up to four disjoint page-aligned regions inside `[lo, hi)`.
fn random_regions(rng: &mut ChaCha8Rng, lo: u64, hi: u64, page: u64) -> Vec<(u64, u64)> {
    let n = rng.gen_range(1..=4);
    let slots = (hi - lo) / page;
    let mut picked = BTreeSet::new();
    while picked.len() < n {
        picked.insert(rng.gen_range(0..slots));
    }
    picked
        .into_iter()
        .map(|k| (lo + k * page, page - rng.gen_range(0..page / 2)))
        .collect()
}

fn bound_constraint(rng: &mut ChaCha8Rng, v: usize, w: u32) -> Constraint {
    let m = if w == 64 { u64::MAX } else { (1 << w) - 1 };
    let k = rng.gen::<u64>() & m;
    let var = Term::Var(v);
    match rng.gen_range(0..5) {
        0 => Constraint {
            cmp: Cmp::Ult,
            a: var,
            b: Term::Const(k),
        },
        1 => Constraint {
            cmp: Cmp::Ule,
            a: Term::Const(k),
            b: var,
        },
        2 => Constraint {
            cmp: Cmp::Eq,
            a: Term::Bin(Op::And, Box::new(var), Box::new(Term::Const(0xF))),
            b: Term::Const(k & 0xF),
        },
        3 => Constraint {
            cmp: Cmp::Ne,
            a: Term::Bin(Op::Xor, Box::new(var), Box::new(Term::Const(k))),
            b: Term::Const(rng.gen::<u64>() & m),
        },
        _ => Constraint {
            cmp: Cmp::Ule,
            a: Term::Bin(Op::Sub, Box::new(var), Box::new(Term::Const(k))),
            b: Term::Const(rng.gen::<u64>() & m >> 2),
        },
    }
}

fn algorithm2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = Vec::new();
    let mut returned = 0usize;
    for case in 0..500 {
        let regions = random_regions(&mut rng, 0x10_0000, 0x400_0000, 0x10_0000);
        let mut s = region_state(&regions);
        let names = ["t"];
        let ncons = rng.gen_range(0..3);
        for _ in 0..ncons {
            let c = bound_constraint(&mut rng, 0, 64);
            s.add_constraint(c.to_expr(&names, 64));
        }
        let t = match rng.gen_range(0..4) {
            0 => Expr::c64(rng.gen_range(0..0x500_0000)),
            1 => Expr::var("t", 64, VarOrigin::Test).add(&Expr::c64(rng.gen_range(0..0x1000))),
            _ => Expr::var("t", 64, VarOrigin::Test),
        };
        let before = s.constraints().len();
        let out = resolve_symbolic_target(&s, &t);
        if s.constraints().len() != before {
            bad.push(format!("case {case}: constraints changed"));
        }
        let ex = exec_regions(&s);
        for a in &out {
            returned += 1;
            if !ex.iter().any(|r| r.contains(*a)) {
                bad.push(format!("case {case}: {a:#x} outside every region"));
            }
        }
    }

    // 16-bit toy space against brute force.
    let mut toy = 0;
    for case in 0..120 {
        let regions = random_regions(&mut rng, 0x1000, 0x10000, 0x1000);
        let s0 = region_state(&regions);
        let mut s = s0.clone();
        let cons: Vec<Constraint> = (0..rng.gen_range(0..=3)).map(|_| bound_constraint(&mut rng, 0, 16)).collect();
        for c in &cons {
            s.add_constraint(c.to_expr(&["v"], 16));
        }
        let t = Expr::var("v", 16, VarOrigin::Test).zext(64);
        let out = resolve_symbolic_target(&s, &t);
        let ex = exec_regions(&s);
        let mut feasible = BTreeSet::new();
        for v in 0..=0xFFFFu64 {
            if cons.iter().all(|c| c.holds(&[v], 16)) {
                if let Some(i) = ex.iter().position(|r| r.contains(v)) {
                    feasible.insert(i);
                }
            }
        }
        let mut hit = BTreeSet::new();
        for a in &out {
            match ex.iter().position(|r| r.contains(*a)) {
                Some(i) if cons.iter().all(|c| c.holds(&[*a], 16)) => {
                    if !hit.insert(i) {
                        bad.push(format!("toy {case}: two representatives for region {i}"));
                    }
                }
                _ => bad.push(format!("toy {case}: {a:#x} infeasible or outside regions")),
            }
        }
        if hit != feasible {
            bad.push(format!("toy {case}: regions {hit:?}, brute force {feasible:?}"));
        }
        toy += 1;
    }
    outcome(
        "indirect target resolution soundness and completeness",
        bad,
        format!("500 instances ({returned} addresses, all in regions); {toy} 16-bit instances match brute force"),
    )
}

fn solver_oracle(ctx: &Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let solver = Solver::default();
    let names = ["x", "y", "z"];
    let mut bad = Vec::new();
    let (mut sat, mut unsat, mut unknown) = (0, 0, 0);
    for case in 0..1000 {
        let nvars = rng.gen_range(1..=3);
        let cs: Vec<Constraint> = (0..rng.gen_range(1..=4))
            .map(|_| random_constraint(&mut rng, nvars, 8))
            .collect();
        let exprs: Vec<Expr> = cs.iter().map(|c| c.to_expr(&names, 8)).collect();
        let truth = brute_force(&cs, nvars, 8);
        match solver.solve(&exprs, &[]) {
            SatResult::Sat(m) => {
                sat += 1;
                let vals: Vec<u64> = names[..nvars].iter().map(|n| m.get(n).unwrap_or(0)).collect();
                if !cs.iter().all(|c| c.holds(&vals, 8)) {
                    bad.push(format!("case {case}: model {vals:?} violates {cs:?}"));
                }
                if truth.is_none() {
                    bad.push(format!("case {case}: Sat but brute force finds none"));
                }
            }
            SatResult::Unsat => {
                unsat += 1;
                if let Some(v) = truth {
                    bad.push(format!("case {case}: Unsat but {v:?} satisfies {cs:?}"));
                }
            }
            SatResult::Unknown => unknown += 1,
        }
    }
    if ctx.unknowns != 0 {
        bad.push(format!("{} Unknown answers while running the suite", ctx.unknowns));
    }
    outcome(
        "solver oracle equivalence",
        bad,
        format!(
            "1000 sets: {sat} sat, {unsat} unsat, {unknown} unknown, all agree; suite Unknown rate 0"
        ),
    )
}

fn validation(ctx: &Ctx) -> Outcome {
    let mut bad = Vec::new();
    for r in &ctx.summary.benchmarks {
        if r.validation != Validation::Pass {
            bad.push(format!("{}: {:?}", r.benchmark, r.validation));
        }
    }
    // Replays with the exact discovered set.
    let dir = ctx.path();
    for b in list_benchmarks(&dir).unwrap() {
        let gt = read_ground_truth(&b.ground_truth).unwrap();
        let w = read_witness(&b.witness);
        let expected: BTreeSet<String> = gt.expected_libraries.iter().cloned().collect();
        let run = concrete_validate(&b.main, std::slice::from_ref(&b.libs), w.as_ref(), &expected, &ctx.cfg).unwrap();
        if run.loaded != expected || run.verdict != Validation::Pass {
            bad.push(format!("{}: replay loaded {:?}", gt.benchmark, run.loaded));
        }
        if !expected.is_subset(&run.invoked) {
            bad.push(format!("{}: payloads invoked {:?}", gt.benchmark, run.invoked));
        }
    }
    let net = common::bench(&dir, "network_socket");
    let mut w = read_witness(&net.witness).unwrap();
    let zeros = vec![0u8; w.network_bytes().len()];
    w.set_network_bytes(&zeros);
    let expected: BTreeSet<String> = ["libnet.so".to_string()].into();
    let control = concrete_validate(&net.main, std::slice::from_ref(&net.libs), Some(&w), &expected, &ctx.cfg).unwrap();
    if control.verdict != Validation::Fail {
        bad.push(format!("negative control gave {:?}", control.verdict));
    }
    outcome(
        "validation agreement",
        bad,
        "16/16 pass with loaded set = discovered set; network_socket negative control fails".into(),
    )
}

fn fixtures(ctx: &Ctx) -> Outcome {
    let dir = ctx.path();
    let mut bad = Vec::new();
    let cff = analyze(&dir.join("fixtures/cff_dispatcher/main.sbf"), &ctx.cfg, None, None).unwrap();
    if cff.report.dispatchers.len() != 1 {
        bad.push(format!("cff fixture: {:?}", cff.report.dispatchers));
    }
    let simple = ctx.summary.benchmarks.iter().find(|r| r.benchmark == "simple_dlopen").unwrap();
    if !simple.dispatchers.is_empty() {
        bad.push(format!("simple_dlopen: {:?}", simple.dispatchers));
    }
    let smc = analyze(&dir.join("fixtures/smc_patch/main.sbf"), &ctx.cfg, None, None).unwrap();
    let jmp: Vec<_> = smc
        .report
        .smc
        .iter()
        .filter(|r| matches!(r.class, SmcClass::JmpCallHook { .. }))
        .collect();
    let push: Vec<_> = smc
        .report
        .smc
        .iter()
        .filter(|r| matches!(r.class, SmcClass::PushRetRedirect { .. }))
        .collect();
    let slot_a = MAIN_BASE + SMC_SLOT_A_OFFSET;
    match jmp.as_slice() {
        [r] => match r.class {
            SmcClass::JmpCallHook { imm, target }
                if imm == SMC_JMP_IMM && r.target == slot_a && target == slot_a + 8 + imm as u64 => {}
            _ => bad.push(format!("jmp report {r:?}")),
        },
        _ => bad.push(format!("{} JmpCallHook reports", jmp.len())),
    }
    match push.as_slice() {
        [r] if r.class
            == (SmcClass::PushRetRedirect {
                pushed: Some(MAIN_BASE + SMC_LANDING_OFFSET),
            }) => {}
        _ => bad.push(format!("push reports {push:?}")),
    }
    outcome(
        "CFF and SMC fixtures",
        bad,
        format!(
            "1 dispatcher ({} successors), 0 on simple_dlopen; JmpCallHook -> {:#x}, PushRetRedirect -> {:#x}",
            cff.report.dispatchers.first().map_or(0, |d| d.successors),
            slot_a + 16,
            MAIN_BASE + SMC_LANDING_OFFSET
        ),
    )
}

fn determinism(ctx: &Ctx) -> Outcome {
    let mut bad = Vec::new();
    let again = evaluate_suite(&ctx.path(), &ctx.cfg, 1).unwrap();
    let json = |s: &SuiteSummary| {
        let mut v = serde_json::to_value(s).unwrap();
        common::strip_seconds(&mut v);
        serde_json::to_string_pretty(&v).unwrap()
    };
    let (a, b) = (json(&ctx.summary), json(&again));
    if a != b {
        bad.push("suite JSON differs between runs".into());
    }
    outcome(
        "determinism",
        bad,
        format!("two runs (4 jobs, 1 job) give identical {}-byte JSON", a.len()),
    )
}

fn round_trip(ctx: &Ctx) -> Outcome {
    let mut bad = Vec::new();
    let mut files = Vec::new();
    for b in list_benchmarks(&ctx.path()).unwrap() {
        files.push(b.main.clone());
        for e in std::fs::read_dir(&b.libs).unwrap() {
            files.push(e.unwrap().path());
        }
    }
    for f in ["cff_dispatcher", "smc_patch"] {
        files.push(ctx.path().join("fixtures").join(f).join("main.sbf"));
    }
    for f in &files {
        let bytes = std::fs::read(f).unwrap();
        match parse_image(&bytes) {
            Ok(img) => {
                if emit_image(&img).as_deref() != Ok(&bytes[..]) {
                    bad.push(format!("{}: emit(parse) differs", f.display()));
                }
                if parse_image(&emit_image(&img).unwrap()).as_ref() != Ok(&img) {
                    bad.push(format!("{}: parse(emit) differs", f.display()));
                }
            }
            Err(e) => bad.push(format!("{}: {e}", f.display())),
        }
    }
    let mut graphs = 0;
    for b in list_benchmarks(&ctx.path()).unwrap() {
        let mut cfg = ctx.cfg.clone();
        cfg.search_paths.insert(0, b.libs.clone());
        let a = analyze(&b.main, &cfg, None, None).unwrap();
        for g in [&a.static_cfg, &a.module_cfg] {
            let dot = to_dot(g);
            match common::dot::check(&dot) {
                Ok(shape) => {
                    if shape.nodes != g.blocks.len() + g.stubs.len() || shape.edges != g.edges.len() {
                        bad.push(format!("{}: DOT shape {shape:?}", b.main.display()));
                    }
                }
                Err(e) => bad.push(format!("{}: {e}", b.main.display())),
            }
            graphs += 1;
        }
    }
    outcome(
        "format round trip",
        bad,
        format!("{} images byte-identical; {graphs} DOT graphs parse", files.len()),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    common::generate(dir.path());
    let _ = std::io::stderr().write_all(b"\n");
    let cfg = PipelineConfig::new(vec![]);
    let before = unknown_answers();
    let t = Instant::now();
    let summary = evaluate_suite(dir.path(), &cfg, 4).unwrap();
    let elapsed = t.elapsed();
    let unknowns = unknown_answers() - before;
    // run_benchmark is the single-benchmark entry; make sure it agrees.
    let one = run_benchmark(&common::bench(dir.path(), "simple_dlopen"), &cfg).unwrap();
    assert_eq!(one.discovered_names().len(), 1);

    let ctx = Ctx {
        dir,
        cfg,
        summary,
        elapsed,
        unknowns,
    };
    let outcomes = vec![
        detection(&ctx),
        growth(&ctx),
        algorithm1(),
        algorithm2(),
        solver_oracle(&ctx),
        validation(&ctx),
        fixtures(&ctx),
        determinism(&ctx),
        round_trip(&ctx),
    ];
    for o in &outcomes {
        report_line(o);
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
