//! Sockets. Received bytes are fresh symbolic variables tainted with the
//! descriptor they arrived on.

use crate::correlate::EventKind;
use crate::expr::Expr;
use crate::state::{FdKind, SimState};

use super::{ret, ret_err, HookCall, HookError, HookOutcome};

/// Largest receive modeled in one call.
const MAX_RECV: usize = 4096;

fn is_socket(s: &SimState, fd: i64) -> bool {
    matches!(s.fd(fd).map(|o| &o.kind), Some(FdKind::Socket { .. }))
}

pub(super) fn hook_network_family(c: &mut HookCall<'_>) -> HookOutcome {
    match c.name {
        "socket" => {
            let fd = c.state.alloc_fd(FdKind::Socket { peer: None }, Vec::new());
            c.state.record(EventKind::Io {
                function: "socket".into(),
                fd,
                len: 0,
                detail: String::new(),
            });
            ret(fd as u64)
        }
        "connect" | "bind" | "listen" => {
            let fd = c.signed(0);
            if !is_socket(c.state, fd) {
                c.state.warn(HookError::BadFd(fd).to_string());
                return ret_err();
            }
            c.state.record(EventKind::Io {
                function: c.name.to_string(),
                fd,
                len: 0,
                detail: String::new(),
            });
            ret(0)
        }
        "accept" => {
            let fd = c.signed(0);
            if !is_socket(c.state, fd) {
                c.state.warn(HookError::BadFd(fd).to_string());
                return ret_err();
            }
            let peer = c.state.alloc_fd(
                FdKind::Socket {
                    peer: Some(format!("accepted on {fd}")),
                },
                Vec::new(),
            );
            ret(peer as u64)
        }
        "recv" | "recvfrom" => {
            let fd = c.signed(0);
            let buf = c.concrete(1);
            let len = (c.concrete(2) as usize).min(MAX_RECV);
            if !is_socket(c.state, fd) {
                c.state.warn(HookError::BadFd(fd).to_string());
                return ret_err();
            }
            let function = c.name.to_string();
            HookOutcome::Return(receive(c.state, &function, fd, buf, len))
        }
        "send" | "sendto" => {
            let fd = c.signed(0);
            let buf = c.concrete(1);
            let len = c.concrete(2);
            if !is_socket(c.state, fd) {
                c.state.warn(HookError::BadFd(fd).to_string());
                return ret_err();
            }
            let shown = c.state.read_bytes(buf, len.min(32) as usize);
            let detail = shown.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" ");
            c.state.record(EventKind::Io {
                function: c.name.to_string(),
                fd,
                len,
                detail,
            });
            ret(len)
        }
        _ => unreachable!("{} is not a network function", c.name),
    }
}

/// Fills `buf` with `len` received bytes and returns the count.
pub(super) fn receive(s: &mut SimState, function: &str, fd: i64, buf: u64, len: usize) -> Expr {
    let seq = s.record(EventKind::Io {
        function: function.to_string(),
        fd,
        len: len as u64,
        detail: String::new(),
    });
    let bytes = s.network_bytes(fd, len, seq);
    s.write_bytes(buf, &bytes);
    Expr::c64(len as u64)
}
