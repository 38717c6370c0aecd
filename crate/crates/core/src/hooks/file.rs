//! open, openat, fopen and sigaction.

use crate::correlate::{check_taint_flow, EventKind};
use crate::expr::Expr;
use crate::image::resolve_host_path;
use crate::state::{FdKind, SignalHandler};

use super::strings::{unified_string_extraction, Encoding, Extraction};
use super::{ret, HookCall, HookError, HookOutcome};

pub(super) fn hook_file_family(c: &mut HookCall<'_>) -> HookOutcome {
    match c.name {
        "open" | "fopen" => open(c, 0),
        "openat" => open(c, 1),
        "sigaction" => {
            let signo = c.concrete(0);
            let act = c.concrete(1);
            if act == 0 {
                return ret(0);
            }
            let h = c.state.read_mem(&Expr::c64(act), 8);
            let handler = c.state.concretize(&h);
            c.state.pending_signals.push(SignalHandler { signo, handler });
            c.state.record(EventKind::Signal { signo, handler });
            ret(0)
        }
        _ => unreachable!("{} is not a file function", c.name),
    }
}

fn open(c: &mut HookCall<'_>, path_arg: usize) -> HookOutcome {
    let failure = if c.name == "fopen" { 0 } else { u64::MAX };
    let p = c.args[path_arg].clone();
    let max = c.state.loader().max_string_len.max(1);
    let path = match unified_string_extraction(c.state, &p, max, Encoding::Ascii) {
        Ok(Extraction::ConcreteString(path)) => path,
        _ => {
            c.state.warn(format!("{} with an unresolvable path", c.name));
            return ret(failure);
        }
    };
    let host = resolve_host_path(&c.state.loader().search_paths, &path);
    let Some(bytes) = host.and_then(|h| std::fs::read(h).ok()) else {
        c.state.warn(HookError::NotFound(path).to_string());
        return ret(failure);
    };
    let backing: Vec<Expr> = bytes.iter().map(|&b| Expr::c8(b)).collect();
    let fd = c.state.alloc_fd(FdKind::File { path: path.clone() }, backing);
    c.state.corr.record_fd(fd, &path);
    let seq = c.state.record(EventKind::Io {
        function: c.name.to_string(),
        fd,
        len: bytes.len() as u64,
        detail: path.clone(),
    });
    if let Some(addr) = p.as_const() {
        let arg = c.state.read_bytes(addr, path.len());
        check_taint_flow("open", seq, &arg, c.state);
    }
    ret(fd as u64)
}
