//! Process-replacement, cloning and the security-relevant calls.

use crate::correlate::EventKind;

use super::{ret, HookCall, HookOutcome};

pub(super) fn hook_process_and_security_families(c: &mut HookCall<'_>) -> HookOutcome {
    match c.name {
        "execve" | "execveat" | "fexecve" => {
            let path = match c.name {
                "execve" => c.string_arg(0),
                "execveat" => c.string_arg(1),
                _ => {
                    let fd = c.signed(0);
                    c.state.corr.path_of_fd(fd).map(str::to_string)
                }
            }
            .unwrap_or_else(|| "<unknown>".into());
            c.state.record(EventKind::ProcessReplace {
                function: c.name.to_string(),
                path: path.clone(),
            });
            HookOutcome::Finish(format!("{} replaced the process with {path}", c.name))
        }
        "clone" | "clone3" => {
            let child = 1000 + c.state.clone_counter;
            c.state.clone_counter += 1;
            c.state.record(EventKind::Process {
                function: c.name.to_string(),
                detail: format!("child {child}"),
            });
            ret(child)
        }
        "ptrace" => {
            let request = c.concrete(0);
            c.state.record(EventKind::AntiDebug {
                function: "ptrace".into(),
                request,
            });
            ret(0)
        }
        "prctl" => {
            let option = c.concrete(0);
            c.state.record(EventKind::Process {
                function: "prctl".into(),
                detail: format!("option {option}"),
            });
            ret(0)
        }
        "setenv" => {
            let (Some(name), Some(value)) = (c.string_arg(0), c.string_arg(1)) else {
                c.state.warn("setenv with non-concrete arguments");
                return ret(u64::MAX);
            };
            let overwrite = c.concrete(2) != 0;
            if overwrite || !c.state.env.contains_key(&name) {
                c.state.env.insert(name, value);
            }
            ret(0)
        }
        "putenv" => {
            let Some(entry) = c.string_arg(0) else {
                c.state.warn("putenv with a non-concrete argument");
                return ret(u64::MAX);
            };
            match entry.split_once('=') {
                Some((k, v)) => {
                    c.state.env.insert(k.to_string(), v.to_string());
                }
                None => {
                    c.state.env.remove(&entry);
                }
            }
            ret(0)
        }
        "process_vm_writev" => {
            let pid = c.concrete(0);
            let local = c.concrete(1);
            let liovcnt = c.concrete(2).min(64);
            let remote = c.concrete(3);
            let mut total = 0u64;
            for k in 0..liovcnt {
                let len = c.state.read_mem(&crate::expr::Expr::c64(local.wrapping_add(16 * k + 8)), 8);
                total = total.wrapping_add(c.state.concretize(&len));
            }
            let target = c.state.read_mem(&crate::expr::Expr::c64(remote), 8);
            let target = c.state.concretize(&target);
            c.state.record(EventKind::Process {
                function: "process_vm_writev".into(),
                detail: format!("pid {pid} addr {target:#x} len {total}"),
            });
            ret(total)
        }
        _ => unreachable!("{} is not a process or security function", c.name),
    }
}
