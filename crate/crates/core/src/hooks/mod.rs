//! Host-side replacements for intercepted library functions.
//!
//! Every import of image `k` at ordinal `i` resolves to a fixed address in
//! the hook window. When a state's pc lands there the engine asks the
//! registry to run the named procedure instead of decoding guest code.

mod dl;
mod file;
mod memory;
mod net;
mod process;
pub mod strings;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::correlate::EventKind;
use crate::expr::{Expr, VarOrigin};
use crate::state::{FdKind, SimState};

pub use strings::{
    get_preloaded_candidates, unified_string_extraction, Candidate, CandidatePool, Encoding, Extraction, Provenance,
};

pub const HOOK_BASE: u64 = 0x7000_0000_0000;
const HOOK_IMAGE_STRIDE: u64 = 0x1_0000;
const HOOK_SLOT: u64 = 16;
const HOOK_WINDOW: u64 = 0x1_0000_0000;

/// Address the import at `ordinal` of image `k` resolves to.
pub fn hook_address(k: usize, ordinal: u64) -> u64 {
    HOOK_BASE + k as u64 * HOOK_IMAGE_STRIDE + ordinal * HOOK_SLOT
}

pub fn is_hook_address(addr: u64) -> bool {
    (HOOK_BASE..HOOK_BASE + HOOK_WINDOW).contains(&addr) && addr != crate::state::RETURN_SENTINEL
}

/// Name of the import behind a hook address.
pub fn import_at(s: &SimState, addr: u64) -> Option<String> {
    let off = addr.checked_sub(HOOK_BASE)?;
    if off % HOOK_SLOT != 0 {
        return None;
    }
    let k = (off / HOOK_IMAGE_STRIDE) as usize;
    let i = (off % HOOK_IMAGE_STRIDE) / HOOK_SLOT;
    let img = s.images().get(k)?;
    img.image.import_name(i as usize).map(str::to_string)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HookError {
    #[error("string bytes are not valid {0}")]
    DecodeError(&'static str),
    #[error("unknown library handle {0:#x}")]
    BadHandle(u64),
    #[error("bad file descriptor {0}")]
    BadFd(i64),
    #[error("no such file: {0}")]
    NotFound(String),
}

/// What a hook hands back to the engine.
#[derive(Debug, Clone)]
pub enum HookOutcome {
    /// Value for r0; execution resumes at the return address.
    Return(Expr),
    /// The path ends (e.g. the process image was replaced).
    Finish(String),
}

/// Arguments and context of one intercepted call.
pub struct HookCall<'a> {
    pub name: &'a str,
    pub state: &'a mut SimState,
    pub args: [Expr; 6],
    /// Address of the calling instruction.
    pub site: u64,
}

impl HookCall<'_> {
    /// Argument `i` pinned to one concrete value.
    pub fn concrete(&mut self, i: usize) -> u64 {
        let a = self.args[i].clone();
        self.state.concretize(&a)
    }

    pub fn signed(&mut self, i: usize) -> i64 {
        self.concrete(i) as i64
    }

    /// Argument `i` read as a concrete ASCII string, if it is one.
    pub fn string_arg(&mut self, i: usize) -> Option<String> {
        let max = self.state.loader().max_string_len.max(1);
        let p = self.args[i].clone();
        match unified_string_extraction(self.state, &p, max, Encoding::Ascii) {
            Ok(Extraction::ConcreteString(s)) => Some(s),
            _ => None,
        }
    }
}

pub type HookFn = fn(&mut HookCall<'_>) -> HookOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    DynamicLoading,
    Memory,
    Process,
    Security,
    Network,
    File,
    Plumbing,
}

/// The intercepted-function table.
pub struct HookRegistry {
    table: BTreeMap<&'static str, (Family, HookFn)>,
}

/// The functions listed in the interception table, by family.
pub const TABLE_FUNCTIONS: [(Family, &[&str]); 6] = [
    (
        Family::DynamicLoading,
        &["dlopen", "dlsym", "dlclose", "dlmopen", "dlvsym", "dladdr", "dlinfo"],
    ),
    (Family::Memory, &["mmap", "mmap64", "mprotect", "mremap", "memfd_create"]),
    (Family::Process, &["execve", "execveat", "fexecve", "clone", "clone3"]),
    (
        Family::Security,
        &["ptrace", "prctl", "setenv", "putenv", "process_vm_writev"],
    ),
    (
        Family::Network,
        &["socket", "connect", "recv", "recvfrom", "send", "sendto", "bind", "listen", "accept"],
    ),
    (Family::File, &["open", "openat", "fopen", "sigaction"]),
];

/// Internal loader entry point handled exactly like `dlopen`.
pub const DLOPEN_ALIAS: &str = "__libc_dlopen_mode";

/// Helpers outside the table that guest code needs.
pub const PLUMBING: [&str; 4] = ["getenv", "read_string", "strlen", "close"];

impl HookRegistry {
    pub fn empty() -> Self {
        HookRegistry { table: BTreeMap::new() }
    }

    /// Every intercepted function plus the plumbing helpers.
    pub fn full() -> Self {
        let mut r = HookRegistry::empty();
        for (family, names) in TABLE_FUNCTIONS {
            let f: HookFn = match family {
                Family::DynamicLoading => dl::hook_dynamic_loading_family,
                Family::Memory => memory::hook_memory_family,
                Family::Process | Family::Security => process::hook_process_and_security_families,
                Family::Network => net::hook_network_family,
                Family::File => file::hook_file_family,
                Family::Plumbing => plumbing,
            };
            for n in names {
                r.table.insert(n, (family, f));
            }
        }
        r.table
            .insert(DLOPEN_ALIAS, (Family::DynamicLoading, dl::hook_dynamic_loading_family));
        for n in PLUMBING {
            r.table.insert(n, (Family::Plumbing, plumbing));
        }
        r
    }

    pub fn insert(&mut self, name: &'static str, family: Family, f: HookFn) {
        self.table.insert(name, (family, f));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.table.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.table.keys().copied()
    }

    pub fn family(&self, name: &str) -> Option<Family> {
        self.table.get(name).map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Runs the procedure for `name` with arguments taken from r0..r5.
    pub fn dispatch(&self, name: &str, s: &mut SimState, site: u64) -> HookOutcome {
        let args: [Expr; 6] = std::array::from_fn(|i| s.regs[i].clone());
        let mut call = HookCall {
            name,
            state: s,
            args,
            site,
        };
        match self.table.get(name) {
            Some((_, f)) => f(&mut call),
            None => default_stub(&mut call),
        }
    }
}

/// Procedure name in the `Dyn<Name>` convention.
pub fn procedure_name(function: &str) -> String {
    let mut out = String::from("Dyn");
    for part in function.split('_').filter(|p| !p.is_empty()) {
        let mut cs = part.chars();
        if let Some(c) = cs.next() {
            out.extend(c.to_uppercase());
            out.push_str(cs.as_str());
        }
    }
    out
}

fn default_stub(c: &mut HookCall<'_>) -> HookOutcome {
    c.state.warn(format!("unmodeled import {} returns an unconstrained value", c.name));
    if c.state.is_concrete() {
        return HookOutcome::Return(Expr::c64(0));
    }
    let v = c.state.fresh_var(&format!("ret_{}", c.name), 64, VarOrigin::Hook);
    HookOutcome::Return(v)
}

pub(crate) fn ret(v: u64) -> HookOutcome {
    HookOutcome::Return(Expr::c64(v))
}

pub(crate) fn ret_err() -> HookOutcome {
    HookOutcome::Return(Expr::c64(u64::MAX))
}

/// Copies `bytes` plus a terminating NUL into scratch memory; NULL when
/// the address space has no room left.
pub(crate) fn place_string(s: &mut SimState, bytes: &[Expr]) -> u64 {
    let Some(p) = s.alloc_scratch(bytes.len() as u64 + 1) else {
        s.warn("no room for scratch memory");
        return 0;
    };
    s.write_bytes(p, bytes);
    s.write_bytes(p + bytes.len() as u64, &[Expr::c8(0)]);
    p
}

/// Length of symbolic content handed out for an unset environment variable.
pub const SYMBOLIC_ENV_LEN: usize = 16;

fn plumbing(c: &mut HookCall<'_>) -> HookOutcome {
    match c.name {
        "getenv" => {
            let Some(name) = c.string_arg(0) else {
                c.state.warn("getenv with a non-concrete name");
                return ret(0);
            };
            if let Some(v) = c.state.env.get(&name).cloned() {
                let bytes: Vec<Expr> = v.bytes().map(Expr::c8).collect();
                return ret(place_string(c.state, &bytes));
            }
            if c.state.is_concrete() {
                return ret(0);
            }
            let bytes = c.state.env_bytes(&name, SYMBOLIC_ENV_LEN);
            ret(place_string(c.state, &bytes))
        }
        "strlen" | "read_string" => {
            let p = c.concrete(0);
            let max = c.state.loader().max_string_len.max(1) as u64;
            let n = (0..max)
                .find(|&i| c.state.load_byte(p.wrapping_add(i)).as_const() == Some(0))
                .unwrap_or(max);
            ret(n)
        }
        "close" => {
            let fd = c.signed(0);
            if c.state.close_fd(fd) {
                ret(0)
            } else {
                ret_err()
            }
        }
        _ => default_stub(c),
    }
}

/// `read`, `write` and `time` system calls. Exit is handled by the engine.
pub fn syscall(s: &mut SimState, n: i32) -> Expr {
    match n {
        0 => {
            let fd = s.concretize(&s.regs[0].clone()) as i64;
            let buf = s.concretize(&s.regs[1].clone());
            let len = s.concretize(&s.regs[2].clone()).min(1 << 16) as usize;
            let is_socket = matches!(s.fd(fd).map(|o| &o.kind), Some(FdKind::Socket { .. }));
            if is_socket {
                return net::receive(s, "read", fd, buf, len);
            }
            let Some(obj) = s.fd_mut(fd) else {
                return Expr::c64(u64::MAX);
            };
            let start = obj.cursor.min(obj.backing.len());
            let end = (start + len).min(obj.backing.len());
            let data: Vec<Expr> = obj.backing[start..end].to_vec();
            obj.cursor = end;
            s.write_bytes(buf, &data);
            Expr::c64(data.len() as u64)
        }
        1 => {
            let fd = s.concretize(&s.regs[0].clone()) as i64;
            let buf = s.concretize(&s.regs[1].clone());
            let len = s.concretize(&s.regs[2].clone()).min(1 << 20) as usize;
            let data = s.read_bytes(buf, len);
            if fd == 1 || fd == 2 {
                let text: String = data
                    .iter()
                    .map(|b| b.as_const().map(|v| v as u8 as char).unwrap_or('?'))
                    .collect();
                s.record(EventKind::Io {
                    function: "write".into(),
                    fd,
                    len: len as u64,
                    detail: text,
                });
                return Expr::c64(len as u64);
            }
            let is_socket = matches!(s.fd(fd).map(|o| &o.kind), Some(FdKind::Socket { .. }));
            let Some(obj) = s.fd_mut(fd) else {
                return Expr::c64(u64::MAX);
            };
            if !is_socket {
                let at = obj.cursor;
                if obj.backing.len() < at + len {
                    obj.backing.resize(at + len, Expr::c8(0));
                }
                obj.backing[at..at + len].clone_from_slice(&data);
                obj.cursor = at + len;
            }
            s.record(EventKind::Io {
                function: "write".into(),
                fd,
                len: len as u64,
                detail: String::new(),
            });
            Expr::c64(len as u64)
        }
        2 => s.time_value(),
        other => {
            s.warn(format!("unknown syscall {other}"));
            Expr::c64(u64::MAX)
        }
    }
}
