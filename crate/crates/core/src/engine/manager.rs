//! Stepping loop over a bounded set of active states.

use std::collections::VecDeque;
use std::time::Instant;

use super::{enter_handler, Engine};
use crate::state::{SimState, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManagerConfig {
    pub max_active: usize,
    pub step_budget: u64,
    pub deferred_capacity: usize,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        ManagerConfig {
            max_active: 32,
            step_budget: 10_000,
            deferred_capacity: 128,
        }
    }
}

#[derive(Debug, Default)]
pub struct ExplorationResult {
    pub finished: Vec<SimState>,
    pub errored: Vec<SimState>,
    pub active: Vec<SimState>,
    pub deferred: Vec<SimState>,
    pub discarded: usize,
    /// Manager loop iterations.
    pub steps: u64,
    pub seconds: f64,
    pub budget_exhausted: bool,
    pub warnings: Vec<String>,
}

impl ExplorationResult {
    /// Every state the run ended with, in stash order.
    pub fn all_states(&self) -> impl Iterator<Item = &SimState> {
        self.finished
            .iter()
            .chain(&self.errored)
            .chain(&self.active)
            .chain(&self.deferred)
    }
}

pub struct ExplorationManager {
    pub engine: Engine,
    pub config: ManagerConfig,
    pub active: Vec<SimState>,
    pub deferred: VecDeque<SimState>,
    pub finished: Vec<SimState>,
    pub errored: Vec<SimState>,
    pub discarded: usize,
    pub iterations: u64,
    pub warnings: Vec<String>,
}

impl ExplorationManager {
    pub fn new(engine: Engine, config: ManagerConfig, initial: Vec<SimState>) -> Self {
        ExplorationManager {
            engine,
            config,
            active: initial,
            deferred: VecDeque::new(),
            finished: Vec::new(),
            errored: Vec::new(),
            discarded: 0,
            iterations: 0,
            warnings: Vec::new(),
        }
    }

    pub fn register_breakpoint(&mut self, b: super::Breakpoint) {
        self.engine.register_breakpoint(b);
    }

    /// Forks one state per registered handler not yet entered in `s`'s
    /// lineage. Only symbolic exploration does this; replay delivers the
    /// witness signals itself.
    pub fn schedule_signal_paths(s: &mut SimState) -> Vec<SimState> {
        if s.is_concrete() {
            return Vec::new();
        }
        let mut out = Vec::new();
        let pending = s.pending_signals.clone();
        for h in pending {
            if !s.explored_signals.insert(h.handler) {
                continue;
            }
            let mut child = s.split();
            enter_handler(&mut child, h.signo, h.handler);
            out.push(child);
        }
        out
    }

    /// Runs one iteration: steps every active state, then prunes.
    pub fn iterate(&mut self) {
        while self.active.len() < self.config.max_active {
            match self.deferred.pop_front() {
                Some(s) => self.active.push(s),
                None => break,
            }
        }
        self.iterations += 1;
        let batch = std::mem::take(&mut self.active);
        let mut next = Vec::with_capacity(batch.len());
        for s in batch {
            for succ in self.engine.step(s) {
                match succ.status {
                    Status::Active => next.push(succ),
                    Status::Finished(_) => self.finished.push(succ),
                    Status::Errored(_) => self.errored.push(succ),
                }
            }
        }
        let mut extra = Vec::new();
        for s in next.iter_mut() {
            if !s.pending_signals.is_empty() {
                extra.extend(Self::schedule_signal_paths(s));
            }
        }
        next.extend(extra);
        self.prune(next);
    }

    /// Keeps the states with the smallest step counters active, defers the
    /// rest in order, and discards past the deferred capacity.
    fn prune(&mut self, mut next: Vec<SimState>) {
        if next.len() > self.config.max_active {
            next.sort_by_key(|s| (s.steps, s.id()));
            let excess = next.split_off(self.config.max_active);
            for s in excess {
                if self.deferred.len() < self.config.deferred_capacity {
                    self.deferred.push_back(s);
                } else {
                    self.discarded += 1;
                    self.warnings
                        .push(format!("deferred stash full; discarded state {} at {:#x}", s.id(), s.pc));
                }
            }
        }
        self.active = next;
    }

    pub fn run(mut self) -> ExplorationResult {
        let start = Instant::now();
        let mut exhausted = false;
        loop {
            if self.active.is_empty() && self.deferred.is_empty() {
                break;
            }
            if self.iterations >= self.config.step_budget {
                exhausted = true;
                self.warnings
                    .push(format!("step budget of {} exhausted", self.config.step_budget));
                break;
            }
            self.iterate();
        }
        ExplorationResult {
            finished: self.finished,
            errored: self.errored,
            active: self.active,
            deferred: self.deferred.into_iter().collect(),
            discarded: self.discarded,
            steps: self.iterations,
            seconds: start.elapsed().as_secs_f64(),
            budget_exhausted: exhausted,
            warnings: self.warnings,
        }
    }
}
