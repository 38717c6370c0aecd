//! dlopen and friends.

use crate::correlate::{check_taint_flow, EventKind};
use crate::expr::{Expr, VarOrigin};
use crate::image::{dynamic_load, note_load, SymbolKind};

use super::strings::{unified_string_extraction, Encoding, Extraction};
use super::{place_string, ret, HookCall, HookError, HookOutcome, DLOPEN_ALIAS};

pub(super) fn hook_dynamic_loading_family(c: &mut HookCall<'_>) -> HookOutcome {
    match c.name {
        "dlopen" => open(c, 0),
        "dlmopen" => open(c, 1),
        n if n == DLOPEN_ALIAS => open(c, 0),
        "dlsym" => sym(c, None),
        "dlvsym" => {
            let version = c.string_arg(2).unwrap_or_default();
            sym(c, Some(version))
        }
        "dlclose" => {
            let h = c.concrete(0);
            if !c.state.corr.release_handle(h) {
                c.state.warn(format!("dlclose of unknown handle {h:#x}"));
            }
            ret(0)
        }
        "dladdr" => {
            let addr = c.concrete(0);
            let info = c.concrete(1);
            let Some((_, img)) = c.state.image_at(addr) else {
                return ret(0);
            };
            let (path, base) = (img.path.clone(), img.base);
            let bytes: Vec<Expr> = path.bytes().map(Expr::c8).collect();
            let p = place_string(c.state, &bytes);
            for (k, v) in [p, base, 0, 0].into_iter().enumerate() {
                c.state.write_mem(&Expr::c64(info.wrapping_add(8 * k as u64)), &Expr::c64(v));
            }
            ret(1)
        }
        "dlinfo" => {
            let h = c.concrete(0);
            let info = c.concrete(2);
            if c.state.corr.lib_of_handle(h).is_none() {
                c.state.warn(HookError::BadHandle(h).to_string());
                return ret(u64::MAX);
            }
            c.state.write_mem(&Expr::c64(info), &Expr::c64(h));
            ret(0)
        }
        _ => unreachable!("{} is not a loader function", c.name),
    }
}

fn mechanism_for(function: &str, path: &str) -> String {
    if path.starts_with("/proc/self/fd/") {
        "memfd".into()
    } else {
        function.into()
    }
}

fn open(c: &mut HookCall<'_>, path_arg: usize) -> HookOutcome {
    let p = c.args[path_arg].clone();
    let max = c.state.loader().max_string_len.max(1);
    let extracted = unified_string_extraction(c.state, &p, max, Encoding::Ascii);
    let path = match extracted {
        Ok(Extraction::ConcreteString(path)) => path,
        other => {
            let reason = match other {
                Ok(Extraction::SymbolicPointer) => "symbolic pointer".to_string(),
                Ok(_) => "no candidate matches the symbolic name".to_string(),
                Err(e) => e.to_string(),
            };
            c.state.record(EventKind::LoadFailure {
                function: c.name.to_string(),
                reason,
            });
            if c.state.is_concrete() {
                return ret(0);
            }
            let v = c.state.fresh_var(&format!("{}_ret", c.name), 64, VarOrigin::Hook);
            return HookOutcome::Return(v);
        }
    };
    match dynamic_load(c.state, &path) {
        Ok((img, fresh)) => {
            c.state.corr.record_handle(img.base, &img.path);
            let seq = if fresh {
                let mech = mechanism_for(c.name, &path);
                note_load(c.state, &img, &path, &mech)
            } else {
                c.state.record(EventKind::Process {
                    function: c.name.to_string(),
                    detail: format!("{} already loaded", img.name),
                })
            };
            if let Some(addr) = p.as_const() {
                let bytes = c.state.read_bytes(addr, path.len());
                check_taint_flow(c.name, seq, &bytes, c.state);
            }
            ret(img.base)
        }
        Err(e) => {
            c.state.record(EventKind::LoadFailure {
                function: c.name.to_string(),
                reason: e.to_string(),
            });
            ret(0)
        }
    }
}

fn sym(c: &mut HookCall<'_>, version: Option<String>) -> HookOutcome {
    let h = c.concrete(0);
    if let Some(v) = version {
        c.state.record(EventKind::Process {
            function: c.name.to_string(),
            detail: format!("version {v} ignored"),
        });
    }
    let Some(lib) = c.state.corr.lib_of_handle(h).map(str::to_string) else {
        c.state.warn(HookError::BadHandle(h).to_string());
        return ret(0);
    };
    let Some(name) = c.string_arg(1) else {
        c.state.warn(format!("{} with a non-concrete symbol name", c.name));
        return ret(0);
    };
    let Some(img) = c.state.images().iter().find(|i| i.path == lib).cloned() else {
        return ret(0);
    };
    let found = img
        .image
        .find_symbol(&name)
        .filter(|s| s.kind == SymbolKind::Function)
        .and_then(|s| img.to_absolute(s.value));
    match found {
        Some(addr) => {
            c.state.corr.record_symbol(addr, &name, &img.name, Some(c.site));
            c.state.record(EventKind::SymbolResolve {
                symbol: name,
                address: addr,
                library: img.name.clone(),
                site: c.site,
                via: c.name.to_string(),
            });
            ret(addr)
        }
        None => ret(0),
    }
}
