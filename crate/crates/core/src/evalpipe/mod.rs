//! The four-phase evaluation pipeline, the concrete replay validator, suite
//! summaries and report rendering.
//!
//! 1. Static baseline over the main image alone.
//! 2. Symbolic exploration with every hook installed, followed by rescans
//!    that feed names found in discovered libraries back into the
//!    candidate pool.
//! 3. Module CFG over the main image plus every discovered library, merged
//!    with the run-time edges.
//! 4. A fully concrete replay with witness inputs.

mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{list_benchmarks, read_ground_truth, BenchError, BenchPaths, GroundTruth};
use crate::cfg::{build_module_cfg, metrics, recover_static, Cfg, CfgMetrics};
use crate::correlate::{EventKind, EventRecord, SmcReport};
use crate::engine::{Engine, ExplorationManager, ManagerConfig};
use crate::expr::{Expr, SatResult, Solver, VarOrigin};
use crate::hooks::strings::image_so_strings;
use crate::hooks::HookRegistry;
use crate::image::{
    library_name, load_image, parse_image, AddressSpaceLayout, BinaryImage, ImageError, LoadError, LoadedImage,
    Placement, MAIN_BASE,
};
use crate::state::{InputMode, LoaderConfig, SimState, TaintOrigin, Witness, RETURN_SENTINEL};
use crate::tracker::{detect_cff_dispatchers, Accumulators, DispatcherReport, DynEdge, Tracker, CFF_THRESHOLD};

pub use render::{render, render_report, Format};

/// Runs averaged for the reported time.
pub const TIMING_RUNS: usize = 3;
/// Extra exploration rounds after the candidate pool grows.
pub const MAX_RESCANS: usize = 2;
pub const DEFAULT_SEED: u64 = 0x5BF1;

/// Published growth figures (percent), shown for comparison only.
pub const REFERENCE_GROWTH: Growth = Growth {
    nodes: 29.8,
    edges: 26.5,
    functions: 41.6,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("{0} is a library, not an executable")]
    NotExecutable(PathBuf),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub search_paths: Vec<PathBuf>,
    pub manager: ManagerConfig,
    pub seed: u64,
    pub cff_threshold: usize,
    pub timing_runs: usize,
}

impl PipelineConfig {
    pub fn new(search_paths: Vec<PathBuf>) -> Self {
        PipelineConfig {
            search_paths,
            manager: ManagerConfig::default(),
            seed: DEFAULT_SEED,
            cff_threshold: CFF_THRESHOLD,
            timing_runs: TIMING_RUNS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discovery {
    pub library: String,
    pub path: String,
    pub mechanism: String,
    /// Observations on the discovering path up to and including the load.
    pub chain: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub benchmark: String,
    pub steps: u64,
    pub seconds: f64,
    #[serde(rename = "static")]
    pub static_metrics: CfgMetrics,
    #[serde(rename = "module")]
    pub module_metrics: CfgMetrics,
    /// Run-time edges merged into the module CFG.
    pub dynamic_edges: usize,
    pub expected: Vec<String>,
    pub discovered: Vec<Discovery>,
    pub validation: Validation,
    pub dispatchers: Vec<DispatcherReport>,
    pub smc: Vec<SmcReport>,
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn discovered_names(&self) -> BTreeSet<String> {
        self.discovered.iter().map(|d| d.library.clone()).collect()
    }
}

/// Relative growth of the module CFG over the static one, in percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub nodes: f64,
    pub edges: f64,
    pub functions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub benchmarks: Vec<BenchReport>,
    pub precision: f64,
    pub recall: f64,
    /// Mean of per-benchmark relative growth.
    pub growth_mean: Growth,
    /// Relative growth of suite totals.
    pub growth_pooled: Growth,
    /// Published figures, not reproduced here.
    pub reference_growth: Growth,
}

/// Result of one exploration round.
pub struct Exploration {
    pub states: Vec<SimState>,
    pub tracker: Tracker,
    pub steps: u64,
    pub budget_exhausted: bool,
    pub warnings: Vec<String>,
}

/// Outcome of the concrete replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationRun {
    pub verdict: Validation,
    pub loaded: BTreeSet<String>,
    /// Libraries whose payload marker was written.
    pub invoked: BTreeSet<String>,
    pub steps: u64,
}

fn read_image(binary: &Path) -> Result<BinaryImage, PipelineError> {
    let bytes = std::fs::read(binary).map_err(|source| PipelineError::Io {
        path: binary.to_path_buf(),
        source,
    })?;
    let img = parse_image(&bytes).map_err(|source| PipelineError::Image {
        path: binary.to_path_buf(),
        source,
    })?;
    if img.image_type != crate::image::ImageType::Executable {
        return Err(PipelineError::NotExecutable(binary.to_path_buf()));
    }
    Ok(img)
}

fn main_name(binary: &Path) -> String {
    library_name(&binary.to_string_lossy())
}

/// Phase 1: the main image alone, imports left as stubs.
pub fn static_phase(image: &Arc<BinaryImage>, name: &str) -> (Cfg, CfgMetrics) {
    let main = LoadedImage::new(image.clone(), MAIN_BASE, name.into(), name.into(), Placement::Segments);
    let images = [main];
    let cfg = recover_static(&images, false);
    let m = metrics(&cfg, &images);
    (cfg, m)
}

/// A state at the entry point that returns to the sentinel.
pub fn entry_state(
    image: Arc<BinaryImage>,
    name: &str,
    loader: Arc<LoaderConfig>,
    inputs: InputMode,
    seed: u64,
) -> Result<SimState, PipelineError> {
    let mut s = SimState::new(loader, inputs, Solver::with_seed(seed));
    let main = load_image(&mut s, image, name, name)?;
    s.push_u64(&Expr::c64(RETURN_SENTINEL));
    s.pc = main.entry_address().ok_or(LoadError::LibraryNotFound(name.into()))?;
    Ok(s)
}

fn state_warnings(states: &[SimState]) -> BTreeSet<String> {
    states
        .iter()
        .flat_map(|s| s.events())
        .filter_map(|e| match &e.kind {
            EventKind::Warning { message } => Some(message.clone()),
            _ => None,
        })
        .collect()
}

/// Runs the engine from the entry state until nothing is left to step or
/// the budget runs out.
pub fn explore(
    image: &Arc<BinaryImage>,
    name: &str,
    loader: Arc<LoaderConfig>,
    inputs: InputMode,
    cfg: &PipelineConfig,
) -> Result<Exploration, PipelineError> {
    let initial = entry_state(image.clone(), name, loader, inputs, cfg.seed)?;
    let mut engine = Engine::new(Arc::new(HookRegistry::full()));
    let tracker = Tracker::install(&mut engine);
    let r = ExplorationManager::new(engine, cfg.manager, vec![initial]).run();
    let states: Vec<SimState> = r.all_states().cloned().collect();
    let tracker = std::mem::take(&mut *tracker.borrow_mut());
    Ok(Exploration {
        states,
        tracker,
        steps: r.steps,
        budget_exhausted: r.budget_exhausted,
        warnings: r.warnings,
    })
}

/// First load of every library across `states`, in stash order.
pub fn discoveries(states: &[SimState]) -> BTreeMap<String, Discovery> {
    let mut out: BTreeMap<String, Discovery> = BTreeMap::new();
    for s in states {
        for (i, ev) in s.events().iter().enumerate() {
            let EventKind::Load {
                path,
                library,
                mechanism,
                ..
            } = &ev.kind
            else {
                continue;
            };
            if out.contains_key(library) {
                continue;
            }
            let chain = s.events()[..=i]
                .iter()
                .filter(|e| {
                    !matches!(
                        e.kind,
                        EventKind::Concretize { .. } | EventKind::Warning { .. } | EventKind::Transfer { .. }
                    )
                })
                .cloned()
                .collect();
            out.insert(
                library.clone(),
                Discovery {
                    library: library.clone(),
                    path: path.clone(),
                    mechanism: mechanism.clone(),
                    chain,
                },
            );
        }
    }
    out
}

/// Main image first, then discovered libraries in name order, laid out
/// fresh so addresses do not depend on which path loaded what first.
pub fn module_images(image: &Arc<BinaryImage>, name: &str, states: &[SimState], libs: &BTreeSet<String>) -> Vec<LoadedImage> {
    let mut layout = AddressSpaceLayout::default();
    let mut out = Vec::new();
    let base = layout.place(image.extent()).unwrap_or(MAIN_BASE);
    out.push(LoadedImage::new(image.clone(), base, name.into(), name.into(), Placement::Segments));
    for lib in libs {
        let found = states.iter().flat_map(|s| s.images()).find(|i| &i.name == lib);
        let Some(img) = found else { continue };
        let Ok(base) = layout.place(img.image.extent()) else { continue };
        out.push(LoadedImage::new(
            img.image.clone(),
            base,
            img.path.clone(),
            lib.clone(),
            Placement::Segments,
        ));
    }
    out
}

/// Library names mentioned inside every discovered library image.
fn rescan_candidates(states: &[SimState], libs: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for img in states.iter().flat_map(|s| s.images()) {
        if !libs.contains(&img.name) || !seen.insert(img.name.clone()) {
            continue;
        }
        out.extend(image_so_strings(&img.image));
    }
    out
}

fn var_suffix(name: &str) -> Option<(&str, u64)> {
    let (head, n) = name.rsplit_once('_')?;
    Some((head, n.parse().ok()?))
}

/// Concrete inputs that drive `s` down the same path, read off a model of
/// its constraints.
pub fn witness_from_state(s: &SimState) -> Option<Witness> {
    let mut also: Vec<Expr> = s
        .taints()
        .iter()
        .map(|(name, tag)| {
            let origin = match tag.origin {
                TaintOrigin::Network => VarOrigin::Network,
                TaintOrigin::Env => VarOrigin::Env,
                TaintOrigin::File => VarOrigin::File,
            };
            Expr::var(name, 8, origin)
        })
        .collect();
    let mut time_vars = BTreeMap::new();
    for c in s.constraints().iter() {
        for (name, (w, origin)) in c.vars() {
            if origin == VarOrigin::Time {
                time_vars.insert(name.to_string(), w);
            }
        }
    }
    also.extend(time_vars.iter().map(|(n, w)| Expr::var(n, *w, VarOrigin::Time)));
    let model = match s.solver().solve(s.constraints().as_slice(), &also) {
        SatResult::Sat(m) => m,
        _ => return None,
    };
    let mut w = Witness::default();
    // name -> read number -> byte index -> value
    let mut env: BTreeMap<String, BTreeMap<u64, BTreeMap<u64, u8>>> = BTreeMap::new();
    let mut net: BTreeMap<(u64, i64, u64), u8> = BTreeMap::new();
    for (name, tag) in s.taints() {
        let v = model.get(name).unwrap_or(0) as u8;
        match tag.origin {
            TaintOrigin::Env => {
                if let Some((head, i)) = var_suffix(name) {
                    let read = var_suffix(head).map(|(_, b)| b).unwrap_or(0);
                    env.entry(tag.source.clone())
                        .or_default()
                        .entry(read)
                        .or_default()
                        .insert(i, v);
                }
            }
            TaintOrigin::Network => {
                if let Some((head, k)) = var_suffix(name) {
                    let fd = head.rsplit('_').next().and_then(|f| f.parse().ok()).unwrap_or(0);
                    net.insert((tag.birth_seq, fd, k), v);
                }
            }
            TaintOrigin::File => {}
        }
    }
    for (var, reads) in env {
        let Some(bytes) = reads.into_values().next() else { continue };
        let text: Vec<u8> = bytes.values().copied().take_while(|b| *b != 0).collect();
        w.env.insert(var, String::from_utf8_lossy(&text).into_owned());
    }
    let payload: Vec<u8> = net.values().copied().collect();
    w.set_network_bytes(&payload);
    if let Some(t) = time_vars.keys().next() {
        w.time = model.get(t).unwrap_or(0);
    }
    for h in &s.pending_signals {
        if s.explored_signals.contains(&h.handler) {
            w.signals.push(h.signo);
        }
    }
    Some(w)
}

/// Witness from the state that loaded the most libraries, with every field
/// the generator supplied taking precedence.
pub fn merge_witness(states: &[SimState], provided: Option<&Witness>) -> Option<Witness> {
    let best = states
        .iter()
        .map(|s| {
            let libs: BTreeSet<&str> = s
                .events()
                .iter()
                .filter_map(|e| match &e.kind {
                    EventKind::Load { library, .. } => Some(library.as_str()),
                    _ => None,
                })
                .collect();
            (libs.len(), s)
        })
        .filter(|(n, _)| *n > 0)
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.id().cmp(&a.1.id())))
        .and_then(|(_, s)| witness_from_state(s));
    match (best, provided) {
        (None, None) => None,
        (Some(w), None) => Some(w),
        (None, Some(p)) => Some(p.clone()),
        (Some(mut w), Some(p)) => {
            w.env.extend(p.env.clone());
            if !p.network_hex.is_empty() {
                w.network_hex = p.network_hex.clone();
            }
            if p.time != 0 {
                w.time = p.time;
            }
            if !p.signals.is_empty() {
                w.signals = p.signals.clone();
            }
            Some(w)
        }
    }
}

fn loaded_libraries(states: &[SimState]) -> BTreeSet<String> {
    states
        .iter()
        .flat_map(|s| s.events())
        .filter_map(|e| match &e.kind {
            EventKind::Load { library, .. } => Some(library.clone()),
            _ => None,
        })
        .collect()
}

/// Phase 4: replays the binary with concrete inputs only; passes when every
/// expected library was actually loaded.
pub fn concrete_validate(
    binary: &Path,
    search_paths: &[PathBuf],
    witness: Option<&Witness>,
    expected: &BTreeSet<String>,
    cfg: &PipelineConfig,
) -> Result<ValidationRun, PipelineError> {
    let Some(w) = witness else {
        return Ok(ValidationRun {
            verdict: Validation::Skipped,
            loaded: BTreeSet::new(),
            invoked: BTreeSet::new(),
            steps: 0,
        });
    };
    let image = Arc::new(read_image(binary)?);
    let name = main_name(binary);
    let loader = Arc::new(LoaderConfig::new(search_paths.to_vec()));
    let ex = explore(&image, &name, loader, InputMode::Concrete(w.clone()), cfg)?;
    let loaded = loaded_libraries(&ex.states);
    let invoked = ex
        .states
        .iter()
        .flat_map(|s| s.events())
        .filter_map(|e| match &e.kind {
            EventKind::Io { function, fd: 1, detail, .. } if function == "write" => detail
                .strip_prefix("payload:")
                .map(|rest| rest.trim_end().to_string()),
            _ => None,
        })
        .collect();
    let verdict = if expected.is_subset(&loaded) {
        Validation::Pass
    } else {
        Validation::Fail
    };
    Ok(ValidationRun {
        verdict,
        loaded,
        invoked,
        steps: ex.steps,
    })
}

/// Everything one pass of the pipeline produces.
pub struct Analysis {
    pub report: BenchReport,
    pub static_cfg: Cfg,
    pub module_cfg: Cfg,
}

/// One untimed pass of all four phases.
pub fn analyze(
    binary: &Path,
    cfg: &PipelineConfig,
    gt: Option<&GroundTruth>,
    witness: Option<&Witness>,
) -> Result<Analysis, PipelineError> {
    let image = Arc::new(read_image(binary)?);
    run_once(binary, &image, cfg, gt, witness)
}

fn run_once(
    binary: &Path,
    image: &Arc<BinaryImage>,
    cfg: &PipelineConfig,
    gt: Option<&GroundTruth>,
    provided: Option<&Witness>,
) -> Result<Analysis, PipelineError> {
    let name = main_name(binary);
    let mut warnings = BTreeSet::new();

    let (static_cfg, static_metrics) = static_phase(image, &name);
    warnings.extend(static_cfg.warnings.iter().map(|w| format!("static: {w}")));

    let mut loader = LoaderConfig::new(cfg.search_paths.clone());
    let mut steps = 0;
    let mut states = Vec::new();
    let mut edges: BTreeSet<DynEdge> = BTreeSet::new();
    let mut acc = Accumulators::new();
    let mut libs = BTreeSet::new();
    for round in 0..=MAX_RESCANS {
        let ex = explore(image, &name, Arc::new(loader.clone()), InputMode::Symbolic, cfg)?;
        steps += ex.steps;
        if ex.budget_exhausted {
            warnings.insert(format!("explore: step budget exhausted in round {round}"));
        }
        warnings.extend(ex.warnings.iter().map(|w| format!("explore: {w}")));
        edges.extend(ex.tracker.edges.iter().cloned());
        for (site, targets) in &ex.tracker.accumulators {
            acc.entry(site.clone()).or_default().extend(targets.iter().cloned());
        }
        libs.extend(loaded_libraries(&ex.states));
        states = ex.states;
        let found = rescan_candidates(&states, &libs);
        let before = loader.extra_candidates.len();
        for c in found {
            if !loader.extra_candidates.contains(&c) {
                loader.extra_candidates.push(c);
            }
        }
        if loader.extra_candidates.len() == before {
            break;
        }
    }
    warnings.extend(state_warnings(&states).into_iter().map(|w| format!("state: {w}")));
    let discovered = discoveries(&states);

    let images = module_images(image, &name, &states, &libs);
    let edge_list: Vec<DynEdge> = edges.into_iter().collect();
    let module_cfg = build_module_cfg(&images, &edge_list);
    warnings.extend(module_cfg.warnings.iter().map(|w| format!("module: {w}")));
    let module_metrics = metrics(&module_cfg, &images);
    let dispatchers = detect_cff_dispatchers(&module_cfg, &acc, cfg.cff_threshold);

    let mut smc: Vec<SmcReport> = Vec::new();
    for s in &states {
        for e in s.events() {
            if let EventKind::Smc { report } = &e.kind {
                if !smc.contains(report) {
                    smc.push(report.clone());
                }
            }
        }
    }
    smc.sort_by_key(|r| r.site);

    let names: BTreeSet<String> = discovered.keys().cloned().collect();
    let validation = if names.is_empty() {
        Validation::Skipped
    } else {
        let w = provided.and_then(|p| merge_witness(&states, Some(p)));
        let run = concrete_validate(binary, &cfg.search_paths, w.as_ref(), &names, cfg)?;
        if run.verdict == Validation::Fail {
            let missing: Vec<&String> = names.difference(&run.loaded).collect();
            let extra: Vec<&String> = run.loaded.difference(&names).collect();
            warnings.insert(format!("validate: missing {missing:?}, unexpected {extra:?}"));
        }
        run.verdict
    };

    Ok(Analysis {
        report: BenchReport {
            benchmark: gt.map(|g| g.benchmark.clone()).unwrap_or(name),
            steps,
            seconds: 0.0,
            static_metrics,
            module_metrics,
            dynamic_edges: module_cfg.dynamic_edges,
            expected: gt.map(|g| g.expected_libraries.clone()).unwrap_or_default(),
            discovered: discovered.into_values().collect(),
            validation,
            dispatchers,
            smc,
            warnings: warnings.into_iter().collect(),
        },
        static_cfg,
        module_cfg,
    })
}

/// All four phases on one binary. `witness` is the generator-provided one,
/// if any; without it validation is skipped.
pub fn run_pipeline(
    binary: &Path,
    cfg: &PipelineConfig,
    gt: Option<&GroundTruth>,
    witness: Option<&Witness>,
) -> Result<BenchReport, PipelineError> {
    let image = Arc::new(read_image(binary)?);
    let runs = cfg.timing_runs.max(1);
    let mut total = 0.0;
    let mut last = None;
    for _ in 0..runs {
        let t = Instant::now();
        let r = run_once(binary, &image, cfg, gt, witness)?;
        total += t.elapsed().as_secs_f64();
        last = Some(r);
    }
    let mut report = last.expect("at least one run").report;
    report.seconds = (total / runs as f64 * 100.0).round() / 100.0;
    Ok(report)
}

pub fn read_witness(path: &Path) -> Option<Witness> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Runs the pipeline on a generated benchmark directory.
pub fn run_benchmark(paths: &BenchPaths, cfg: &PipelineConfig) -> Result<BenchReport, PipelineError> {
    let gt = read_ground_truth(&paths.ground_truth)?;
    let witness = read_witness(&paths.witness);
    let mut cfg = cfg.clone();
    cfg.search_paths.insert(0, paths.libs.clone());
    run_pipeline(&paths.main, &cfg, Some(&gt), witness.as_ref())
}

/// Runs every benchmark under `dir` on up to `jobs` threads.
pub fn evaluate_suite(dir: &Path, cfg: &PipelineConfig, jobs: usize) -> Result<SuiteSummary, PipelineError> {
    let benches = list_benchmarks(dir)?;
    let slots: Mutex<Vec<Option<Result<BenchReport, PipelineError>>>> =
        Mutex::new((0..benches.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(benches.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(b) = benches.get(i) else { break };
                let r = run_benchmark(b, cfg);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let mut reports = Vec::new();
    for r in slots.into_inner().unwrap() {
        reports.push(r.expect("every slot filled")?);
    }
    Ok(summarize(reports))
}

fn rel(after: usize, before: usize) -> f64 {
    if before == 0 {
        0.0
    } else {
        (after as f64 - before as f64) / before as f64 * 100.0
    }
}

fn round4(v: f64) -> f64 {
    (v * 10_000.0).round() / 10_000.0
}

/// Precision, recall and both growth aggregations.
pub fn summarize(reports: Vec<BenchReport>) -> SuiteSummary {
    let (mut hit, mut found, mut wanted) = (0usize, 0usize, 0usize);
    for r in &reports {
        let d = r.discovered_names();
        let e: BTreeSet<String> = r.expected.iter().cloned().collect();
        hit += d.intersection(&e).count();
        found += d.len();
        wanted += e.len();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let n = reports.len().max(1) as f64;
    let mut mean = Growth::default();
    let (mut s, mut m) = ([0usize; 3], [0usize; 3]);
    for r in &reports {
        let (a, b) = (&r.static_metrics, &r.module_metrics);
        mean.nodes += rel(b.nodes, a.nodes) / n;
        mean.edges += rel(b.edges, a.edges) / n;
        mean.functions += rel(b.functions, a.functions) / n;
        for (k, (x, y)) in [(a.nodes, b.nodes), (a.edges, b.edges), (a.functions, b.functions)]
            .into_iter()
            .enumerate()
        {
            s[k] += x;
            m[k] += y;
        }
    }
    SuiteSummary {
        precision: ratio(hit, found),
        recall: ratio(hit, wanted),
        growth_mean: Growth {
            nodes: round4(mean.nodes),
            edges: round4(mean.edges),
            functions: round4(mean.functions),
        },
        growth_pooled: Growth {
            nodes: round4(rel(m[0], s[0])),
            edges: round4(rel(m[1], s[1])),
            functions: round4(rel(m[2], s[2])),
        },
        reference_growth: REFERENCE_GROWTH,
        benchmarks: reports,
    }
}
