//! Phase independence, replay soundness and report determinism.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use dyncfg::bench::{list_benchmarks, read_ground_truth};
use dyncfg::evalpipe::{analyze, concrete_validate, read_witness, static_phase, PipelineConfig, Validation};
use dyncfg::image::parse_image;
use dyncfg::state::Witness;
use proptest::prelude::*;

#[test]
fn static_phase_ignores_libraries_and_inputs() {
    let dir = tempfile::tempdir().unwrap();
    common::generate(dir.path());
    for b in list_benchmarks(dir.path()).unwrap() {
        let name = b.dir.file_name().unwrap().to_string_lossy().to_string();
        let gt = read_ground_truth(&b.ground_truth).unwrap();
        let img = Arc::new(parse_image(&std::fs::read(&b.main).unwrap()).unwrap());
        let (_, alone) = static_phase(&img, "main.sbf");
        let with_libs = PipelineConfig::new(vec![b.libs.clone()]);
        let w = read_witness(&b.witness);
        let full = analyze(&b.main, &with_libs, Some(&gt), w.as_ref()).unwrap().report;
        let blind = analyze(&b.main, &PipelineConfig::new(vec![]), Some(&gt), None).unwrap().report;
        assert_eq!(full.static_metrics, alone, "{name}");
        assert_eq!(blind.static_metrics, alone, "{name}");
        // The witness feeds only the replay, never the symbolic phases.
        let unwitnessed = analyze(&b.main, &with_libs, Some(&gt), None).unwrap().report;
        assert_eq!(unwitnessed.module_metrics, full.module_metrics, "{name}");
        assert_eq!(unwitnessed.discovered, full.discovered, "{name}");
        assert_eq!(unwitnessed.validation, Validation::Skipped, "{name}");
        assert_eq!(full.validation, Validation::Pass, "{name}");
        // Embedded payloads (memfd) need no search path; nothing else appears.
        let (blind_found, found) = (blind.discovered_names(), full.discovered_names());
        assert!(blind_found.is_subset(&found), "{name}: {blind_found:?} vs {found:?}");
    }
}

#[test]
fn reports_repeat_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    common::generate(dir.path());
    for b in list_benchmarks(dir.path()).unwrap() {
        let gt = read_ground_truth(&b.ground_truth).unwrap();
        let w = read_witness(&b.witness);
        let cfg = PipelineConfig::new(vec![b.libs.clone()]);
        let json = || {
            let r = analyze(&b.main, &cfg, Some(&gt), w.as_ref()).unwrap().report;
            let mut v = serde_json::to_value(&r).unwrap();
            common::strip_seconds(&mut v);
            v
        };
        assert_eq!(json(), json(), "{}", b.dir.display());
    }
}

fn library_files(dir: &std::path::Path) -> BTreeSet<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .collect()
}

fn perturbed() -> impl Strategy<Value = (usize, Vec<(String, String)>, Vec<u8>, u64, bool)> {
    (
        0usize..64,
        prop::collection::vec(("[A-Z_]{1,8}", "[ -~]{0,24}"), 0..3),
        prop::collection::vec(any::<u8>(), 0..48),
        any::<u64>(),
        any::<bool>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    /// Whatever the inputs, a pass means the replay loaded every expected
    /// library, and everything it loaded exists on disk.
    #[test]
    fn replay_verdicts_are_sound((which, env, net, time, keep) in perturbed()) {
        let dir = tempfile::tempdir().unwrap();
        common::generate(dir.path());
        let benches = list_benchmarks(dir.path()).unwrap();
        let b = &benches[which % benches.len()];
        let gt = read_ground_truth(&b.ground_truth).unwrap();
        let expected: BTreeSet<String> = gt.expected_libraries.iter().cloned().collect();
        let mut w = if keep { read_witness(&b.witness).unwrap_or_default() } else { Witness::default() };
        w.env.extend(env);
        if !net.is_empty() {
            w.set_network_bytes(&net);
        }
        w.time ^= time;
        let cfg = PipelineConfig::new(vec![]);
        let run = concrete_validate(&b.main, std::slice::from_ref(&b.libs), Some(&w), &expected, &cfg).unwrap();
        prop_assert_eq!(run.verdict == Validation::Pass, expected.is_subset(&run.loaded));
        prop_assert!(run.loaded.is_subset(&library_files(&b.libs)), "{:?}", run.loaded);
        prop_assert!(run.invoked.iter().all(|l| run.loaded.iter().any(|x| x.contains(l.as_str()))), "{:?} vs {:?}", run.invoked, run.loaded);
        let again = concrete_validate(&b.main, std::slice::from_ref(&b.libs), Some(&w), &expected, &cfg).unwrap();
        prop_assert_eq!(again, run);
    }
}
