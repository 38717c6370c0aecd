//! mmap, mprotect, mremap and memfd_create.

use std::sync::Arc;

use crate::correlate::EventKind;
use crate::image::{looks_like_image, HEADER_SIZE, parse_image, LoadedImage, Perms, Placement, SymbolKind};
use crate::state::{FdKind, MapLabel, SimState, MAX_REGION};

use super::{ret, ret_err, HookCall, HookError, HookOutcome};

const MAP_FIXED: u64 = 0x10;
const MAP_ANONYMOUS: u64 = 0x20;
/// Bytes read when looking for an image at an executable mapping.
const MAX_IMAGE_SCAN: u64 = 1 << 24;

pub(super) fn hook_memory_family(c: &mut HookCall<'_>) -> HookOutcome {
    match c.name {
        "mmap" | "mmap64" => mmap(c),
        "mprotect" => {
            let addr = c.concrete(0);
            let len = c.concrete(1);
            let prot = Perms((c.concrete(2) & 7) as u32);
            let old = c.state.memory_mut().protect(addr, len, prot);
            let was_writable = old.iter().any(|m| m.perms.write() && !m.perms.exec());
            let w2x = was_writable && prot.exec();
            c.state.record(EventKind::Protect {
                addr,
                len,
                perms: prot.to_string(),
                write_to_exec: w2x,
            });
            if prot.exec() {
                adopt_raw_image(c.state, addr, len, None, Some("mprotect_exec"));
            }
            ret(0)
        }
        "mremap" => {
            let old = c.concrete(0);
            let old_len = c.concrete(1);
            let new_len = c.concrete(2);
            if old_len > MAX_REGION || new_len > MAX_REGION {
                return ret_err();
            }
            let perms = c.state.memory().perms_at(old).unwrap_or(Perms::RW);
            let Some(base) = c.state.alloc_region(new_len) else {
                return ret_err();
            };
            let keep = old_len.min(new_len) as usize;
            let bytes = c.state.read_bytes(old, keep);
            c.state.memory_mut().map(base, new_len, perms, MapLabel::Anonymous);
            c.state.write_bytes(base, &bytes);
            c.state.memory_mut().unmap(old, old_len);
            ret(base)
        }
        "memfd_create" => {
            let name = c.string_arg(0).unwrap_or_else(|| "anon".into());
            let fd = c.state.alloc_fd(FdKind::Memfd { name: name.clone() }, Vec::new());
            c.state.corr.record_fd(fd, &format!("/memfd:{name}"));
            c.state.record(EventKind::Io {
                function: "memfd_create".into(),
                fd,
                len: 0,
                detail: name,
            });
            ret(fd as u64)
        }
        _ => unreachable!("{} is not a memory function", c.name),
    }
}

fn mmap(c: &mut HookCall<'_>) -> HookOutcome {
    let hint = c.concrete(0);
    let len = c.concrete(1).max(1);
    let prot = Perms((c.concrete(2) & 7) as u32);
    let flags = c.concrete(3);
    let fd = c.signed(4);
    let off = c.concrete(5) as usize;
    let file_backed = fd >= 0 && flags & MAP_ANONYMOUS == 0;
    let backing = if file_backed {
        match c.state.fd(fd) {
            Some(obj) => Some(obj.backing.clone()),
            None => {
                c.state.warn(HookError::BadFd(fd).to_string());
                return ret_err();
            }
        }
    } else {
        None
    };
    if len > MAX_REGION {
        c.state.warn(format!("mmap of {len:#x} bytes refused"));
        return ret_err();
    }
    let base = if flags & MAP_FIXED != 0 && hint != 0 {
        hint
    } else {
        match c.state.alloc_region(len) {
            Some(b) => b,
            None => return ret_err(),
        }
    };
    let path = file_backed.then(|| c.state.corr.path_of_fd(fd).map(str::to_string)).flatten();
    let label = match &path {
        Some(p) => MapLabel::File(p.clone()),
        None => MapLabel::Anonymous,
    };
    c.state.memory_mut().map(base, len, prot, label);
    if let Some(data) = backing {
        let end = data.len().min(off.saturating_add(len as usize));
        if off < end {
            c.state.write_bytes(base, &data[off..end]);
        }
        if prot.exec() && path.is_none() {
            c.state.warn(format!("executable mapping of fd {fd} with no recorded path"));
        }
        // Non-executable mappings are registered silently; a later header
        // read or permission change is what reveals them.
        let mech = prot.exec().then_some("mmap_exec");
        adopt_raw_image(c.state, base, len, path, mech);
    }
    ret(base)
}

/// Registers an SBF image found verbatim at `base`, if there is one.
fn adopt_raw_image(s: &mut SimState, base: u64, len: u64, path: Option<String>, mechanism: Option<&str>) {
    if s.images().iter().any(|i| i.base == base) {
        return;
    }
    let head = s.memory().concrete_bytes(base, len.min(HEADER_SIZE as u64));
    if !head.is_some_and(|h| looks_like_image(&h)) {
        return;
    }
    let Some(bytes) = s.memory().concrete_bytes(base, len.min(MAX_IMAGE_SCAN)) else {
        return;
    };
    let Ok(img) = parse_image(&bytes) else {
        s.warn(format!("executable region at {base:#x} has an SBF header but does not parse"));
        return;
    };
    let path = path.unwrap_or_else(|| format!("anon@{base:#x}"));
    let name = crate::image::library_name(&path);
    let loaded = LoadedImage::new(Arc::new(img), base, path.clone(), name.clone(), Placement::RawFile);
    s.push_image(loaded.clone());
    if let Some(mech) = mechanism {
        crate::image::note_load(s, &loaded, &path, mech);
    }
    let funcs: Vec<(String, u64)> = loaded
        .image
        .symbols
        .iter()
        .filter(|sym| sym.kind == SymbolKind::Function)
        .filter_map(|sym| Some((loaded.image.symbol_name(sym).to_string(), loaded.to_absolute(sym.value)?)))
        .collect();
    for (sym, addr) in funcs {
        s.corr.record_symbol(addr, &sym, &name, None);
        s.record(EventKind::SymbolResolve {
            symbol: sym,
            address: addr,
            library: name.clone(),
            site: 0,
            via: "manual".into(),
        });
    }
}
