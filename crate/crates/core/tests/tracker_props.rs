//! Store classification, event ordering and taint chains over the suite.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use dyncfg::correlate::{EventKind, SmcClass};
use dyncfg::evalpipe::{explore, Exploration, PipelineConfig};
use dyncfg::expr::Solver;
use dyncfg::image::parse_image;
use dyncfg::state::{InputMode, LoaderConfig, SimState, TaintOrigin};
use dyncfg::tracker::classify_exec_write;
use proptest::prelude::*;

fn run(dir: &std::path::Path, name: &str) -> Exploration {
    let b = common::bench(dir, name);
    let img = Arc::new(parse_image(&std::fs::read(&b.main).unwrap()).unwrap());
    let loader = Arc::new(LoaderConfig::new(vec![b.libs.clone()]));
    explore(&img, "main.sbf", loader, InputMode::Symbolic, &PipelineConfig::new(vec![])).unwrap()
}

fn byte() -> impl Strategy<Value = Option<u8>> {
    prop_oneof![
        1 => Just(None),
        2 => prop_oneof![Just(0x20u8), Just(0x26), Just(0x29), Just(0x2A)].prop_map(Some),
        1 => (0u8..16).prop_map(Some),
        2 => any::<u8>().prop_map(Some),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]
    #[test]
    fn store_classification_is_total(
        addr in any::<u64>(),
        old in prop::collection::vec(byte(), 24),
        new in prop::collection::vec(byte(), 24),
    ) {
        let mut s = SimState::new(Arc::new(LoaderConfig::default()), InputMode::Symbolic, Solver::default());
        let r = classify_exec_write(&mut s, addr, &old, &new);
        prop_assert_eq!(r.target, addr);
        prop_assert_eq!(r.old.len(), 16);
        prop_assert_eq!(r.new.len(), 16);
        // Independent decode of the written slot.
        let slot: Option<Vec<u8>> = new[8..16].iter().copied().collect();
        let decoded = slot.filter(|b| b[1] < 16 && b[2] < 16 && b[3] < 16);
        match decoded.as_deref() {
            Some([op @ (0x20 | 0x26), _, _, _, imm @ ..]) => {
                let imm = i32::from_le_bytes(imm.try_into().unwrap());
                let want = (addr & !7).wrapping_add(8).wrapping_add(imm as i64 as u64);
                prop_assert_eq!(&r.class, &SmcClass::JmpCallHook { imm, target: want }, "opcode {:#x}", op);
            }
            _ => {
                let hooked = matches!(r.class, SmcClass::JmpCallHook { .. });
                prop_assert!(!hooked);
            }
        }
        let logged = s.events().iter().filter(|e| matches!(e.kind, EventKind::Smc { .. })).count();
        prop_assert_eq!(logged, 1);
    }
}

#[test]
fn load_events_name_their_file() {
    let dir = tempfile::tempdir().unwrap();
    common::generate(dir.path());
    for b in dyncfg::bench::list_benchmarks(dir.path()).unwrap() {
        let name = b.dir.file_name().unwrap().to_string_lossy().to_string();
        let ex = run(dir.path(), &name);
        let mut loads = 0;
        for s in &ex.states {
            for e in s.events() {
                if let EventKind::Load { path, library, mechanism, .. } = &e.kind {
                    loads += 1;
                    assert!(!path.is_empty(), "{name}: {mechanism} load of {library} without a path");
                    assert!(!library.is_empty(), "{name}: unnamed library");
                }
            }
        }
        assert!(loads > 0, "{name}: nothing was loaded");
    }
}

/// Every dynamic edge labelled with a symbol follows the resolution that
/// produced the address, on the same path.
#[test]
fn symbol_edges_follow_their_resolution() {
    let dir = tempfile::tempdir().unwrap();
    common::generate(dir.path());
    let mut labelled = 0;
    for b in dyncfg::bench::list_benchmarks(dir.path()).unwrap() {
        let name = b.dir.file_name().unwrap().to_string_lossy().to_string();
        let ex = run(dir.path(), &name);
        let edge_symbols: BTreeSet<String> = ex.tracker.edges.iter().filter_map(|e| e.symbol.clone()).collect();
        for s in &ex.states {
            let mut resolved = BTreeSet::new();
            for e in s.events() {
                match &e.kind {
                    EventKind::SymbolResolve { symbol, .. } => {
                        resolved.insert(symbol.clone());
                    }
                    EventKind::Transfer { symbol: Some(sym), .. } => {
                        labelled += 1;
                        assert!(resolved.contains(sym), "{name}: transfer via {sym} before its resolution");
                    }
                    _ => {}
                }
            }
        }
        let everywhere: BTreeSet<String> = ex
            .states
            .iter()
            .flat_map(|s| s.events())
            .filter_map(|e| match &e.kind {
                EventKind::SymbolResolve { symbol, .. } => Some(symbol.clone()),
                _ => None,
            })
            .collect();
        assert!(edge_symbols.is_subset(&everywhere), "{name}: {edge_symbols:?} vs {everywhere:?}");
    }
    assert!(labelled > 0, "no symbol-labelled transfer in the whole suite");
}

#[test]
fn network_chains_run_from_receive_to_load() {
    let dir = tempfile::tempdir().unwrap();
    common::generate(dir.path());
    let ex = run(dir.path(), "network_socket");
    let chains: Vec<_> = ex
        .states
        .iter()
        .flat_map(|s| s.events())
        .filter_map(|e| match &e.kind {
            EventKind::Taint { chain } => Some(chain.clone()),
            _ => None,
        })
        .collect();
    assert!(!chains.is_empty(), "no taint chain recorded");
    for c in chains {
        assert_eq!(c.origin, TaintOrigin::Network);
        let first = c.hops.first().unwrap();
        let last = c.hops.last().unwrap();
        assert!(matches!(first.kind.as_str(), "recv" | "recvfrom"), "{c:?}");
        assert!(matches!(last.kind.as_str(), "dlopen" | "open" | "mmap"), "{c:?}");
        assert!(c.hops.windows(2).all(|w| w[0].seq <= w[1].seq), "hops out of order: {c:?}");
    }
}
