//! The benchmark programs, written in assembler.
//!
//! Mains use absolute `@label` addresses (they load at a fixed base);
//! libraries use `lea`. Constants such as the XOR key and the time gate
//! are arbitrary.

use crate::image::{emit_image, BinaryImage};
use crate::state::Witness;

use super::asm::{assemble, AsmError};
use super::GroundTruth;

/// Flags passed to every loader call (`RTLD_NOW`).
const RTLD_NOW: i32 = 2;
pub const XOR_KEY: u8 = 0x5A;
/// `time` value at or above which time_triggered loads its payload.
pub const TIME_GATE: u32 = 1_700_000_000;
pub const SIGNO: u64 = 10;

/// A library shipped next to a benchmark.
#[derive(Debug, Clone)]
pub struct LibSource {
    pub name: String,
    pub image: BinaryImage,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: &'static str,
    pub main: BinaryImage,
    pub libs: Vec<LibSource>,
    pub truth: GroundTruth,
    pub witness: Witness,
}

/// Text written by a payload function when it runs.
pub fn marker(lib: &str) -> String {
    format!("payload:{lib}\n")
}

fn esc(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('"', "\\\"")
}

/// A library exporting `func`, which writes its marker and returns. Code and
/// marker share one RX segment so raw file mappings work too.
pub fn payload_lib_src(lib: &str, func: &str) -> String {
    let m = marker(lib);
    format!(
        ".type lib
.seg text rx
.sym {func}
{func}:
    lea r1, marker
    movi r2, {len}
    call emit
    ret
emit:
    movi r0, 1
    syscall 1
    ret
marker: .str \"{m}\"
",
        len = m.len(),
        m = esc(&m)
    )
}

/// A library whose export writes its marker, then loads `next` and calls
/// `next_func` from it.
pub fn chain_lib_src(lib: &str, func: &str, next: &str, next_func: &str) -> String {
    let m = marker(lib);
    format!(
        ".type lib
.import dlopen
.import dlsym
.seg text rx
.sym {func}
{func}:
    lea r1, marker
    movi r2, {len}
    call emit
    lea r0, next_name
    movi r1, {RTLD_NOW}
    callimp dlopen
    movi r13, 0
    beq r0, r13, out
    lea r1, next_sym
    callimp dlsym
    movi r13, 0
    beq r0, r13, out
    callr r0
out:
    ret
emit:
    movi r0, 1
    syscall 1
    ret
marker: .str \"{m}\"
next_name: .str \"{next}\"
next_sym: .str \"{next_func}\"
",
        len = m.len(),
        m = esc(&m)
    )
}

/// dlopen(r0) then dlsym(`sym_label`) and call it; exits 0, or 1 on failure.
fn load_and_call(opener: &str, sym_label: &str) -> String {
    format!(
        "    movi r1, {RTLD_NOW}
    callimp {opener}
    movi r13, 0
    beq r0, r13, fail
    movi r1, @{sym_label}
    callimp dlsym
    movi r13, 0
    beq r0, r13, fail
    callr r0
    movi r0, 0
    syscall 3
fail:
    movi r0, 1
    syscall 3
"
    )
}

fn main_src(imports: &[&str], body: &str, data: &str) -> String {
    let mut s = String::from(".type exec\n.entry main\n");
    for i in imports {
        s.push_str(&format!(".import {i}\n"));
    }
    s.push_str(".seg text rx\nmain:\n");
    s.push_str(body);
    s.push_str(".seg data rw\n");
    s.push_str(data);
    s
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

fn lib(name: &str, src: &str) -> Result<LibSource, AsmError> {
    Ok(LibSource {
        name: name.to_string(),
        image: assemble(src)?,
    })
}

fn truth(name: &str, mechanism: &str, libs: &[&str]) -> GroundTruth {
    GroundTruth {
        benchmark: name.to_string(),
        mechanism: mechanism.to_string(),
        expected_libraries: libs.iter().map(|s| s.to_string()).collect(),
        expected_min_objects: 1 + libs.len() as u64,
    }
}

fn simple(
    name: &'static str,
    mechanism: &str,
    libname: &str,
    extra_imports: &[&str],
    body_before: &str,
    data: &str,
    witness: Witness,
) -> Result<Benchmark, AsmError> {
    let body = format!("{body_before}{}", load_and_call("dlopen", "symname"));
    let data = format!("{data}symname: .str \"payload_fn\"\n");
    let mut imports = vec!["dlopen", "dlsym"];
    imports.extend_from_slice(extra_imports);
    Ok(Benchmark {
        name,
        main: assemble(&main_src(&imports, &body, &data))?,
        libs: vec![lib(libname, &payload_lib_src(libname, "payload_fn"))?],
        truth: truth(name, mechanism, &[libname]),
        witness,
    })
}

fn simple_dlopen() -> Result<Benchmark, AsmError> {
    simple(
        "simple_dlopen",
        "dlopen-variant",
        "libpayload.so",
        &[],
        "    movi r0, @libname\n",
        "libname: .str \"libpayload.so\"\n",
        Witness::default(),
    )
}

fn environment_path() -> Result<Benchmark, AsmError> {
    let body = "    movi r0, @varname
    callimp getenv
    movi r13, 0
    movi r4, 1
    movi r2, @buf
    beq r0, r13, suffix
copy:
    ld8 r3, [r0]
    beq r3, r13, suffix
    st8 [r2], r3
    add r0, r0, r4
    add r2, r2, r4
    jmp copy
suffix:
    movi r1, @sfx
scopy:
    ld8 r3, [r1]
    st8 [r2], r3
    beq r3, r13, go
    add r1, r1, r4
    add r2, r2, r4
    jmp scopy
go:
    movi r0, @buf
";
    let data = "varname: .str \"LIB_DIR\"\nsfx: .str \"/libenv.so\"\nbuf: .zero 96\n";
    let mut w = Witness::default();
    w.env.insert("LIB_DIR".into(), "/opt/plugins".into());
    let body = format!("{body}{}", load_and_call("dlopen", "symname"));
    let data = format!("{data}symname: .str \"payload_fn\"\n");
    Ok(Benchmark {
        name: "environment_path",
        main: assemble(&main_src(&["dlopen", "dlsym", "getenv"], &body, &data))?,
        libs: vec![lib("libenv.so", &payload_lib_src("libenv.so", "payload_fn"))?],
        truth: truth("environment_path", "dlopen-variant", &["libenv.so"]),
        witness: w,
    })
}

fn xor_encrypted() -> Result<Benchmark, AsmError> {
    let name = "libxor.so";
    let blob: Vec<u8> = name.bytes().map(|b| b ^ XOR_KEY).collect();
    let body = format!(
        "    movi r1, @blob
    movi r2, @buf
    movi r3, {n}
    movi r4, {XOR_KEY}
    movi r5, 0
    movi r8, 1
dec:
    beq r5, r3, done
    add r6, r1, r5
    ld8 r7, [r6]
    xor r7, r7, r4
    add r6, r2, r5
    st8 [r6], r7
    add r5, r5, r8
    jmp dec
done:
    movi r0, @buf
",
        n = blob.len()
    );
    let data = format!("blob: .bytes {}\nbuf: .zero 32\n", hex(&blob));
    simple("xor_encrypted", "dlopen-variant", name, &[], &body, &data, Witness::default())
}

fn computed_path() -> Result<Benchmark, AsmError> {
    let name = "libcomputed.so";
    let mut body = String::from("    movi r10, @buf\n");
    for (i, c) in name.bytes().enumerate() {
        let k = 13 + (i as i64 * 7) % 41;
        if i % 2 == 0 {
            body.push_str(&format!(
                "    movi r1, {}\n    movi r2, {k}\n    sub r3, r1, r2\n    st8 [r10+{i}], r3\n",
                c as i64 + k
            ));
        } else {
            body.push_str(&format!(
                "    movi r1, {}\n    movi r2, {k}\n    add r3, r1, r2\n    st8 [r10+{i}], r3\n",
                c as i64 - k
            ));
        }
    }
    body.push_str("    movi r0, @buf\n");
    simple("computed_path", "dlopen-variant", name, &[], &body, "buf: .zero 32\n", Witness::default())
}

fn multi_stage() -> Result<Benchmark, AsmError> {
    let body = format!("    movi r0, @libname\n{}", load_and_call("dlopen", "symname"));
    let data = "libname: .str \"libstage1.so\"\nsymname: .str \"stage1_entry\"\n";
    Ok(Benchmark {
        name: "multi_stage",
        main: assemble(&main_src(&["dlopen", "dlsym"], &body, data))?,
        libs: vec![
            lib(
                "libstage1.so",
                &chain_lib_src("libstage1.so", "stage1_entry", "libstage2.so", "stage2_entry"),
            )?,
            lib(
                "libstage2.so",
                &chain_lib_src("libstage2.so", "stage2_entry", "libstage3.so", "stage3_entry"),
            )?,
            lib("libstage3.so", &payload_lib_src("libstage3.so", "stage3_entry"))?,
        ],
        truth: truth("multi_stage", "dlopen-variant", &["libstage1.so", "libstage2.so", "libstage3.so"]),
        witness: Witness::default(),
    })
}

fn stack_strings() -> Result<Benchmark, AsmError> {
    let name = "libstack.so";
    let mut body = String::from("    movi r14, 64\n    sub sp, sp, r14\n");
    for (i, c) in name.bytes().chain(std::iter::once(0)).enumerate() {
        body.push_str(&format!("    movi r1, {c}\n    st8 [sp+{i}], r1\n"));
    }
    body.push_str("    mov r0, sp\n");
    simple("stack_strings", "dlopen-variant", name, &[], &body, "", Witness::default())
}

fn time_triggered() -> Result<Benchmark, AsmError> {
    let body = format!(
        "    syscall 2
    movi r1, {TIME_GATE}
    bltu r0, r1, early
    movi r0, @libname
{}early:
    movi r0, 0
    syscall 3
",
        load_and_call("dlopen", "symname")
    );
    let data = "libname: .str \"libtime.so\"\nsymname: .str \"payload_fn\"\n";
    Ok(Benchmark {
        name: "time_triggered",
        main: assemble(&main_src(&["dlopen", "dlsym"], &body, data))?,
        libs: vec![lib("libtime.so", &payload_lib_src("libtime.so", "payload_fn"))?],
        truth: truth("time_triggered", "dlopen-variant", &["libtime.so"]),
        witness: Witness {
            time: TIME_GATE as u64 + 100_000_000,
            ..Witness::default()
        },
    })
}

fn anti_debug() -> Result<Benchmark, AsmError> {
    let body = format!(
        "    movi r0, 0
    movi r1, 0
    callimp ptrace
    movi r13, 0
    bne r0, r13, traced
    movi r0, @libname
{}traced:
    movi r0, 2
    syscall 3
",
        load_and_call("__libc_dlopen_mode", "symname")
    );
    let data = "libname: .str \"libantidebug.so\"\nsymname: .str \"payload_fn\"\n";
    Ok(Benchmark {
        name: "anti_debug",
        main: assemble(&main_src(&["__libc_dlopen_mode", "dlsym", "ptrace"], &body, data))?,
        libs: vec![lib("libantidebug.so", &payload_lib_src("libantidebug.so", "payload_fn"))?],
        truth: truth("anti_debug", "internal-api", &["libantidebug.so"]),
        witness: Witness::default(),
    })
}

fn memfd() -> Result<Benchmark, AsmError> {
    let payload = lib("libmemfd.so", &payload_lib_src("libmemfd.so", "payload_fn"))?;
    let bytes = emit_image(&payload.image)?;
    let body = format!(
        "    movi r0, @mname
    movi r1, 0
    callimp memfd_create
    mov r10, r0
    movi r1, @blob
    movi r2, {n}
    syscall 1
    movi r1, @path
    movi r2, '0'
    add r2, r10, r2
    st8 [r1+14], r2
    movi r0, @path
{}",
        load_and_call("dlopen", "symname"),
        n = bytes.len()
    );
    let data = format!(
        "mname: .str \"libmemfd.so\"\npath: .str \"/proc/self/fd/X\"\nsymname: .str \"payload_fn\"\n.align 8\nblob: .bytes {}\n",
        hex(&bytes)
    );
    Ok(Benchmark {
        name: "memfd_create",
        main: assemble(&main_src(&["dlopen", "dlsym", "memfd_create"], &body, &data))?,
        libs: vec![payload],
        truth: truth("memfd_create", "memfd-fileless", &["libmemfd.so"]),
        witness: Witness::default(),
    })
}

fn indirect_call() -> Result<Benchmark, AsmError> {
    let body = "    movi r0, @libname
    movi r1, 2
    callimp dlopen
    movi r13, 0
    beq r0, r13, fail
    movi r1, @symname
    callimp dlsym
    movi r1, @slot
    st64 [r1], r0
    movi r2, 0
    movi r3, 4
    movi r4, 1
spin:
    beq r2, r3, later
    add r2, r2, r4
    jmp spin
later:
    movi r1, @slot
    ld64 r5, [r1]
    beq r5, r13, fail
    callr r5
    movi r0, 0
    syscall 3
fail:
    movi r0, 1
    syscall 3
";
    let data = "libname: .str \"libindirect.so\"\nsymname: .str \"payload_fn\"\n.align 8\nslot: .quad 0\n";
    Ok(Benchmark {
        name: "indirect_call",
        main: assemble(&main_src(&["dlopen", "dlsym"], body, data))?,
        libs: vec![lib("libindirect.so", &payload_lib_src("libindirect.so", "payload_fn"))?],
        truth: truth("indirect_call", "dlopen-variant", &["libindirect.so"]),
        witness: Witness::default(),
    })
}

fn multi_encoding() -> Result<Benchmark, AsmError> {
    let body = "    movi r1, @wname
    movi r2, @buf
    movi r13, 0
    movi r4, 2
    movi r5, 1
widen:
    ld16 r3, [r1]
    st8 [r2], r3
    beq r3, r13, go
    add r1, r1, r4
    add r2, r2, r5
    jmp widen
go:
    movi r0, @buf
";
    let data = ".align 2\nwname: .wstr \"libwide.so\"\nbuf: .zero 32\n";
    simple("multi_encoding", "dlopen-variant", "libwide.so", &[], body, data, Witness::default())
}

fn open_and_map(prot: u32, map_len: u64) -> String {
    format!(
        "    movi r0, @libpath
    movi r1, 0
    callimp open
    movi r13, 0
    blts r0, r13, fail
    mov r10, r0
    movi r0, 0
    movi r1, {map_len}
    movi r2, {prot}
    movi r3, 2
    mov r4, r10
    movi r5, 0
    callimp mmap
    mov r11, r0
"
    )
}

fn map_len(img: &BinaryImage) -> u64 {
    crate::image::align_up(img.canonical_layout().total, 0x1000)
}

fn manual_elf_load() -> Result<Benchmark, AsmError> {
    let payload = lib("libmanual.so", &payload_lib_src("libmanual.so", "payload_fn"))?;
    let len = map_len(&payload.image);
    let body = format!(
        "{}    ld32 r1, [r11+0x18]
    add r1, r1, r11
    ld64 r2, [r1+8]
    ld32 r3, [r11+0x10]
    add r3, r3, r11
    ld64 r4, [r3]
    ld32 r5, [r3+12]
    sub r2, r2, r4
    add r2, r2, r5
    add r12, r2, r11
    mov r0, r11
    movi r1, {len}
    movi r2, 5
    callimp mprotect
    callr r12
    movi r0, 0
    syscall 3
fail:
    movi r0, 1
    syscall 3
",
        open_and_map(1, len)
    );
    let data = "libpath: .str \"libmanual.so\"\n";
    Ok(Benchmark {
        name: "manual_elf_load",
        main: assemble(&main_src(&["open", "mmap", "mprotect"], &body, data))?,
        libs: vec![payload],
        truth: truth("manual_elf_load", "manual-load", &["libmanual.so"]),
        witness: Witness::default(),
    })
}

fn mmap_exec() -> Result<Benchmark, AsmError> {
    let payload = lib("libmmap.so", &payload_lib_src("libmmap.so", "payload_fn"))?;
    let layout = payload.image.canonical_layout();
    let sym = payload.image.find_symbol("payload_fn").expect("payload export").value;
    let seg = payload.image.segment_for(sym).expect("payload segment");
    let seg_idx = payload.image.segments.iter().position(|s| s.vaddr == seg.vaddr).unwrap();
    let off = layout.data_offs[seg_idx] + (sym - seg.vaddr);
    let body = format!(
        "{}    movi r1, {off}
    add r1, r11, r1
    callr r1
    movi r0, 0
    syscall 3
fail:
    movi r0, 1
    syscall 3
",
        open_and_map(5, map_len(&payload.image))
    );
    let data = "libpath: .str \"libmmap.so\"\n";
    Ok(Benchmark {
        name: "mmap_exec",
        main: assemble(&main_src(&["open", "mmap"], &body, data))?,
        libs: vec![payload],
        truth: truth("mmap_exec", "mmap-exec", &["libmmap.so"]),
        witness: Witness::default(),
    })
}

fn rop_chain() -> Result<Benchmark, AsmError> {
    let body = "    movi r0, @libname
    movi r1, 2
    callimp dlopen
    movi r13, 0
    beq r0, r13, fail
    movi r1, @symname
    callimp dlsym
    beq r0, r13, fail
    movi r1, @after
    push r1
    push r0
    ret
after:
    movi r0, 0
    syscall 3
fail:
    movi r0, 1
    syscall 3
";
    let data = "libname: .str \"librop.so\"\nsymname: .str \"payload_fn\"\n";
    Ok(Benchmark {
        name: "rop_chain",
        main: assemble(&main_src(&["dlopen", "dlsym"], body, data))?,
        libs: vec![lib("librop.so", &payload_lib_src("librop.so", "payload_fn"))?],
        truth: truth("rop_chain", "dlopen-variant", &["librop.so"]),
        witness: Witness::default(),
    })
}

fn signal_handler() -> Result<Benchmark, AsmError> {
    let body = format!(
        "    movi r0, @basename
    movi r1, 2
    callimp dlopen
    movi r13, 0
    beq r0, r13, fail
    movi r1, @basesym
    callimp dlsym
    beq r0, r13, fail
    callr r0
    movi r0, {SIGNO}
    movi r1, @act
    movi r2, 0
    callimp sigaction
    movi r0, 0
    syscall 3
fail:
    movi r0, 1
    syscall 3
.sym handler
handler:
    movi r0, @hname
    movi r1, 2
    callimp dlopen
    movi r13, 0
    beq r0, r13, hout
    movi r1, @hsym
    callimp dlsym
    beq r0, r13, hout
    callr r0
hout:
    ret
"
    );
    let data = "basename: .str \"libsigbase.so\"\nbasesym: .str \"base_fn\"\nhname: .str \"libsighandler.so\"\nhsym: .str \"handler_fn\"\n.align 8\nact: .quad handler\n.quad 0\n";
    Ok(Benchmark {
        name: "signal_handler",
        main: assemble(&main_src(&["dlopen", "dlsym", "sigaction"], &body, data))?,
        libs: vec![
            lib("libsigbase.so", &payload_lib_src("libsigbase.so", "base_fn"))?,
            lib(
                "libsighandler.so",
                &chain_lib_src("libsighandler.so", "handler_fn", "libsigdeferred.so", "deferred_fn"),
            )?,
            lib("libsigdeferred.so", &payload_lib_src("libsigdeferred.so", "deferred_fn"))?,
        ],
        truth: truth(
            "signal_handler",
            "dlopen-variant",
            &["libsigbase.so", "libsighandler.so", "libsigdeferred.so"],
        ),
        witness: Witness {
            signals: vec![SIGNO],
            ..Witness::default()
        },
    })
}

/// Bytes the network_socket witness delivers.
pub fn network_payload(name: &str) -> Vec<u8> {
    let mut v = name.as_bytes().to_vec();
    v.resize(32, 0);
    v
}

fn network_socket() -> Result<Benchmark, AsmError> {
    let body = "    movi r0, 2
    movi r1, 1
    movi r2, 0
    callimp socket
    movi r13, 0
    blts r0, r13, fail
    mov r10, r0
    movi r1, @peer
    movi r2, 16
    callimp connect
    mov r0, r10
    movi r1, @buf
    movi r2, 32
    movi r3, 0
    callimp recv
    movi r0, @buf
";
    let data = ".align 8\npeer: .bytes 02 00 1f 90 7f 00 00 01 00 00 00 00 00 00 00 00\nbuf: .zero 48\n";
    let mut w = Witness::default();
    w.set_network_bytes(&network_payload("libnet.so"));
    simple(
        "network_socket",
        "dlopen-variant",
        "libnet.so",
        &["socket", "connect", "recv"],
        body,
        data,
        w,
    )
}

/// The 16 benchmarks in table order.
pub fn suite() -> Result<Vec<Benchmark>, AsmError> {
    Ok(vec![
        simple_dlopen()?,
        environment_path()?,
        xor_encrypted()?,
        computed_path()?,
        multi_stage()?,
        stack_strings()?,
        time_triggered()?,
        anti_debug()?,
        memfd()?,
        indirect_call()?,
        multi_encoding()?,
        manual_elf_load()?,
        mmap_exec()?,
        rop_chain()?,
        signal_handler()?,
        network_socket()?,
    ])
}

/// Number of states the CFF fixture's dispatcher switches over.
pub const CFF_STATES: usize = 9;

/// A flattened loop: every case sets r5 and jumps back to one dispatcher
/// that indexes a jump table with it.
pub fn cff_dispatcher_src() -> String {
    let mut s = String::from(
        ".type exec
.entry main
.seg text rx
main:
    movi r5, 0
dispatch:
    movi r6, @table
    add r7, r5, r5
    add r7, r7, r7
    add r7, r7, r7
    add r7, r7, r6
    ld64 r8, [r7]
    jmpr r8
",
    );
    for k in 0..CFF_STATES - 1 {
        s.push_str(&format!("case{k}:\n    movi r9, {}\n    movi r5, {}\n    jmp dispatch\n", k * 3, k + 1));
    }
    s.push_str(&format!("case{}:\n    movi r0, 0\n    syscall 3\n", CFF_STATES - 1));
    s.push_str(".seg data r\n.align 8\ntable:\n");
    for k in 0..CFF_STATES {
        s.push_str(&format!("    .quad case{k}\n"));
    }
    s
}

/// Patches an inline `jmp` into one slot and a `push` before an existing
/// `ret` in another, then runs both.
pub fn smc_patch_src() -> String {
    ".type exec
.entry main
.seg text rwx
main:
    movi r1, @patch_jmp
    ld64 r2, [r1]
    movi r4, @slot_a
    st64 [r4], r2
    movi r3, @landing
    movi r1, @patch_push
    ld64 r2, [r1]
    movi r4, @slot_b
    st64 [r4], r2
    jmp slot_a
slot_a:
    halt
    halt
    jmp slot_b
slot_b:
    halt
    ret
landing:
    movi r0, 0
    syscall 3
.seg data r
.align 8
patch_jmp: .insn jmp 8
patch_push: .insn push r3
"
    .to_string()
}

/// Offset of the patched slots from the image base, for test oracles.
pub const SMC_SLOT_A_OFFSET: u64 = 10 * 8;
pub const SMC_SLOT_B_OFFSET: u64 = 13 * 8;
pub const SMC_JMP_IMM: i32 = 8;
pub const SMC_LANDING_OFFSET: u64 = 15 * 8;

pub fn fixtures() -> Result<Vec<(&'static str, BinaryImage)>, AsmError> {
    Ok(vec![
        ("cff_dispatcher", assemble(&cff_dispatcher_src())?),
        ("smc_patch", assemble(&smc_patch_src())?),
    ])
}
