//! Cross-level correlation: descriptor, handle and symbol maps, the event log
//! and explicit-flow taint chains.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::state::{SimState, TaintOrigin};

/// Kind of a recorded control transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Call,
    Jump,
    Return,
}

/// Outcome of classifying a store into executable memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum SmcClass {
    JmpCallHook { imm: i32, target: u64 },
    PushRetRedirect { pushed: Option<u64> },
    GenericSmc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmcReport {
    pub site: u64,
    pub target: u64,
    #[serde(flatten)]
    pub class: SmcClass,
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub seq: u64,
    pub kind: String,
    pub detail: String,
}

/// Data flow from a taint source to a loading sink.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowChain {
    pub origin: TaintOrigin,
    pub source: String,
    pub hops: Vec<Hop>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Load {
        path: String,
        library: String,
        base: u64,
        mechanism: String,
    },
    LoadFailure {
        function: String,
        reason: String,
    },
    SymbolResolve {
        symbol: String,
        address: u64,
        library: String,
        site: u64,
        via: String,
    },
    Transfer {
        site: u64,
        transfer: TransferKind,
        target: String,
        resolved: Vec<u64>,
        symbol: Option<String>,
    },
    RopRedirect {
        site: u64,
        target: u64,
        library: String,
    },
    Taint {
        chain: FlowChain,
    },
    TaintedWrite {
        site: u64,
        addr: u64,
        vars: Vec<String>,
    },
    Smc {
        report: SmcReport,
    },
    AntiDebug {
        function: String,
        request: u64,
    },
    ProcessReplace {
        function: String,
        path: String,
    },
    Concretize {
        expr: String,
        value: u64,
    },
    Io {
        function: String,
        fd: i64,
        len: u64,
        detail: String,
    },
    Protect {
        addr: u64,
        len: u64,
        perms: String,
        write_to_exec: bool,
    },
    Signal {
        signo: u64,
        handler: u64,
    },
    Process {
        function: String,
        detail: String,
    },
    Warning {
        message: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Load { .. } => "load",
            EventKind::LoadFailure { .. } => "load_failure",
            EventKind::SymbolResolve { .. } => "symbol_resolve",
            EventKind::Transfer { .. } => "transfer",
            EventKind::RopRedirect { .. } => "rop_redirect",
            EventKind::Taint { .. } => "taint",
            EventKind::TaintedWrite { .. } => "tainted_write",
            EventKind::Smc { .. } => "smc",
            EventKind::AntiDebug { .. } => "anti_debug",
            EventKind::ProcessReplace { .. } => "process_replace",
            EventKind::Concretize { .. } => "concretize",
            EventKind::Io { .. } => "io",
            EventKind::Protect { .. } => "protect",
            EventKind::Signal { .. } => "signal",
            EventKind::Process { .. } => "process",
            EventKind::Warning { .. } => "warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub state: u64,
    pub step: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolSites {
    pub symbol: String,
    pub library: String,
    /// Call site of the resolving `dlsym`, or `None` for manual lookups.
    pub resolver: Option<u64>,
    pub call_sites: BTreeSet<u64>,
}

/// The three cross-level maps, copied along with the owning state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorrelationStore {
    fd_to_path: BTreeMap<i64, String>,
    /// Handle value to the loaded image's source identifier.
    handle_to_lib: BTreeMap<u64, String>,
    symaddr_to_sites: BTreeMap<u64, SymbolSites>,
    refcounts: BTreeMap<u64, u32>,
}

impl CorrelationStore {
    pub fn record_fd(&mut self, fd: i64, path: &str) {
        self.fd_to_path.insert(fd, path.to_string());
    }

    pub fn path_of_fd(&self, fd: i64) -> Option<&str> {
        self.fd_to_path.get(&fd).map(String::as_str)
    }

    pub fn record_handle(&mut self, handle: u64, lib: &str) {
        self.handle_to_lib.insert(handle, lib.to_string());
        *self.refcounts.entry(handle).or_insert(0) += 1;
    }

    pub fn lib_of_handle(&self, handle: u64) -> Option<&str> {
        self.handle_to_lib.get(&handle).map(String::as_str)
    }

    /// Drops one reference; returns false for unknown handles.
    pub fn release_handle(&mut self, handle: u64) -> bool {
        match self.refcounts.get_mut(&handle) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        }
    }

    pub fn refcount(&self, handle: u64) -> u32 {
        self.refcounts.get(&handle).copied().unwrap_or(0)
    }

    pub fn record_symbol(&mut self, addr: u64, symbol: &str, library: &str, resolver: Option<u64>) {
        let entry = self.symaddr_to_sites.entry(addr).or_default();
        entry.symbol = symbol.to_string();
        entry.library = library.to_string();
        if resolver.is_some() || entry.resolver.is_none() {
            entry.resolver = resolver;
        }
    }

    pub fn symbol_at(&self, addr: u64) -> Option<&SymbolSites> {
        self.symaddr_to_sites.get(&addr)
    }

    pub fn note_call_site(&mut self, addr: u64, site: u64) {
        if let Some(e) = self.symaddr_to_sites.get_mut(&addr) {
            e.call_sites.insert(site);
        }
    }

    pub fn symbols(&self) -> impl Iterator<Item = (u64, &SymbolSites)> {
        self.symaddr_to_sites.iter().map(|(a, s)| (*a, s))
    }
}

/// Builds the taint chain for a sink consuming `arg`, if it carries network
/// data, and appends it to the state's log.
pub fn check_taint_flow(sink: &str, sink_seq: u64, arg: &[Expr], s: &mut SimState) -> Option<FlowChain> {
    let mut names = BTreeSet::new();
    for e in arg {
        for (name, _) in e.vars() {
            if s.taint_of(&name).is_some_and(|t| t.origin == TaintOrigin::Network) {
                names.insert(name.to_string());
            }
        }
    }
    if names.is_empty() {
        return None;
    }
    let birth = names
        .iter()
        .filter_map(|n| s.taint_of(n))
        .min_by_key(|t| t.birth_seq)
        .cloned()?;
    let mut hops = Vec::new();
    for ev in s.events() {
        match &ev.kind {
            EventKind::Io { function, fd, len, .. } if ev.seq == birth.birth_seq => hops.push(Hop {
                seq: ev.seq,
                kind: function.clone(),
                detail: format!("fd {fd}, {len} bytes"),
            }),
            EventKind::TaintedWrite { site, addr, vars }
                if ev.seq > birth.birth_seq && vars.iter().any(|v| names.contains(v)) =>
            {
                hops.push(Hop {
                    seq: ev.seq,
                    kind: "write".into(),
                    detail: format!("{site:#x} -> {addr:#x}"),
                })
            }
            _ => {}
        }
    }
    if hops.first().map(|h| h.kind.as_str()) != Some("recv") && hops.first().map(|h| h.kind.as_str()) != Some("recvfrom") {
        return None;
    }
    hops.push(Hop {
        seq: sink_seq,
        kind: sink.to_string(),
        detail: format!("{} tainted bytes", names.len()),
    });
    let chain = FlowChain {
        origin: birth.origin,
        source: birth.source,
        hops,
    };
    s.record(EventKind::Taint { chain: chain.clone() });
    Some(chain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_bindings_are_keyed_by_descriptor() {
        let mut c = CorrelationStore::default();
        c.record_fd(3, "a.so");
        c.record_fd(4, "b.so");
        assert_eq!(c.path_of_fd(3), Some("a.so"));
        assert_eq!(c.path_of_fd(4), Some("b.so"));
        assert_eq!(c.path_of_fd(5), None);
        c.record_fd(3, "c.so");
        assert_eq!(c.path_of_fd(3), Some("c.so"));
    }

    #[test]
    fn unknown_handle_is_absent() {
        let c = CorrelationStore::default();
        assert_eq!(c.lib_of_handle(0x500000), None);
    }

    #[test]
    fn handle_refcounts() {
        let mut c = CorrelationStore::default();
        c.record_handle(0x500000, "/x/libp.so");
        c.record_handle(0x500000, "/x/libp.so");
        assert_eq!(c.refcount(0x500000), 2);
        assert!(c.release_handle(0x500000));
        assert_eq!(c.refcount(0x500000), 1);
        assert!(!c.release_handle(0x600000));
    }

    #[test]
    fn events_serialize_with_kind_tag() {
        let ev = EventRecord {
            seq: 4,
            state: 1,
            step: 9,
            kind: EventKind::Load {
                path: "libp.so".into(),
                library: "libp.so".into(),
                base: 0x500000,
                mechanism: "dlopen".into(),
            },
        };
        let v = serde_json::to_value(&ev).unwrap();
        assert_eq!(v["kind"], "load");
        assert_eq!(v["seq"], 4);
        let back: EventRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, ev);
    }
}
