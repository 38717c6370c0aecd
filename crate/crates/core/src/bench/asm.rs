//! Two-pass assembler for the textual SBF form.
//!
//! ```text
//! .type exec            ; or lib
//! .entry main
//! .import dlopen        ; ordinals follow declaration order
//! .seg text rx          ; segments are laid out 0x1000-aligned from vaddr 0
//! .sym main             ; exported function (add `object` for data)
//! main:
//!     movi r0, @name    ; absolute address, executables only
//!     lea  r1, name     ; position independent, expands to four instructions
//!     callimp dlopen
//!     halt
//! .seg data rw
//! name: .str "libx.so"
//! ```
//!
//! Other data directives: `.wstr` (UTF-16LE), `.bytes`, `.quad`, `.zero`,
//! `.align` and `.insn` (an encoded instruction as data).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::{Instruction, Opcode, INSN_SIZE};
use crate::image::{align_up, BinaryImage, ImageBuilder, ImageError, ImageType, Perms, SymbolKind, MAIN_BASE};

const SEG_ALIGN: u64 = 0x1000;
/// Scratch register clobbered by `lea`.
pub const TEMP_REG: u8 = 14;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: undefined label `{label}`")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: label `{label}` defined twice")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: {msg}")]
    BadOperand { line: usize, msg: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

fn bad(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::BadOperand { line, msg: msg.into() }
}

#[derive(Debug, Clone)]
enum Item {
    Insn { mnemonic: String, ops: Vec<String> },
    Lea { rd: String, label: String },
    Data(Vec<u8>),
    Quad(String),
    Pad(u64),
    EncodedInsn(String),
}

#[derive(Debug, Clone)]
struct Placed {
    line: usize,
    seg: usize,
    off: u64,
    item: Item,
}

#[derive(Debug)]
struct SegDef {
    perms: Perms,
    size: u64,
    vaddr: u64,
}

struct Program {
    image_type: ImageType,
    entry: Option<(usize, String)>,
    imports: Vec<String>,
    syms: Vec<(usize, String, SymbolKind)>,
    labels: BTreeMap<String, (usize, u64)>,
    segs: Vec<SegDef>,
    items: Vec<Placed>,
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut in_chr = false;
    let mut prev = '\0';
    for (i, c) in line.char_indices() {
        match c {
            '"' if !in_chr && prev != '\\' => in_str = !in_str,
            '\'' if !in_str && prev != '\\' => in_chr = !in_chr,
            ';' | '#' if !in_str && !in_chr => return &line[..i],
            _ => {}
        }
        prev = if prev == '\\' && c == '\\' { '\0' } else { c };
    }
    line
}

fn unescape(line: usize, body: &str) -> Result<Vec<u8>, AsmError> {
    let mut out = Vec::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('n') => out.push(b'\n'),
            Some('t') => out.push(b'\t'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('"') => out.push(b'"'),
            Some('\'') => out.push(b'\''),
            Some('x') => {
                let h: String = chars.by_ref().take(2).collect();
                let v = u8::from_str_radix(&h, 16).map_err(|_| bad(line, format!("bad escape \\x{h}")))?;
                out.push(v);
            }
            other => return Err(bad(line, format!("bad escape {other:?}"))),
        }
    }
    Ok(out)
}

fn quoted(line: usize, s: &str) -> Result<Vec<u8>, AsmError> {
    let s = s.trim();
    let body = s
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .ok_or_else(|| bad(line, format!("expected a quoted string, got `{s}`")))?;
    unescape(line, body)
}

/// Parses an integer literal: decimal, `0x` hex, `0b` binary, or `'c'`.
pub fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Some(body) = s.strip_prefix('\'').and_then(|r| r.strip_suffix('\'')) {
        let bytes = unescape(0, body).ok()?;
        return (bytes.len() == 1).then(|| bytes[0] as i64);
    }
    let (neg, digits) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = if let Some(h) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        i64::from_str_radix(&h.replace('_', ""), 16).ok()?
    } else if let Some(b) = digits.strip_prefix("0b") {
        i64::from_str_radix(&b.replace('_', ""), 2).ok()?
    } else {
        digits.replace('_', "").parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_chr = false;
    for c in s.chars() {
        match c {
            '\'' => {
                in_chr = !in_chr;
                cur.push(c);
            }
            ',' if !in_chr => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_perms(line: usize, s: &str) -> Result<Perms, AsmError> {
    let mut p = Perms::NONE;
    for c in s.chars() {
        p = p.union(match c {
            'r' => Perms::R,
            'w' => Perms::W,
            'x' => Perms::X,
            _ => return Err(bad(line, format!("bad permission string `{s}`"))),
        });
    }
    Ok(p)
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Byte length of an item at `off`.
fn item_size(item: &Item, off: u64) -> u64 {
    match item {
        Item::Insn { .. } | Item::EncodedInsn(_) | Item::Quad(_) => 8,
        Item::Lea { .. } => 4 * INSN_SIZE,
        Item::Data(d) => d.len() as u64,
        Item::Pad(to) => align_up(off, *to) - off,
    }
}

fn first_pass(src: &str) -> Result<Program, AsmError> {
    let mut p = Program {
        image_type: ImageType::Executable,
        entry: None,
        imports: Vec::new(),
        syms: Vec::new(),
        labels: BTreeMap::new(),
        segs: Vec::new(),
        items: Vec::new(),
    };
    for (idx, raw) in src.lines().enumerate() {
        let line = idx + 1;
        let mut text = strip_comment(raw).trim();
        // Any number of `label:` prefixes.
        while let Some(colon) = text.find(':') {
            let head = text[..colon].trim();
            if !is_ident(head) || head.starts_with('.') {
                break;
            }
            let seg = p.segs.len().checked_sub(1).ok_or_else(|| bad(line, "label before any .seg"))?;
            let off = p.segs[seg].size;
            if p.labels.insert(head.to_string(), (seg, off)).is_some() {
                return Err(AsmError::DuplicateLabel {
                    line,
                    label: head.to_string(),
                });
            }
            text = text[colon + 1..].trim();
        }
        if text.is_empty() {
            continue;
        }
        let (word, rest) = match text.find(char::is_whitespace) {
            Some(i) => (&text[..i], text[i..].trim()),
            None => (text, ""),
        };
        let item = match word {
            ".type" => {
                p.image_type = match rest {
                    "exec" => ImageType::Executable,
                    "lib" => ImageType::Library,
                    _ => return Err(bad(line, format!("unknown image type `{rest}`"))),
                };
                continue;
            }
            ".entry" => {
                p.entry = Some((line, rest.to_string()));
                continue;
            }
            ".import" => {
                if !p.imports.iter().any(|i| i == rest) {
                    p.imports.push(rest.to_string());
                }
                continue;
            }
            ".sym" => {
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| bad(line, ".sym needs a label"))?;
                let kind = match parts.next() {
                    None | Some("func") => SymbolKind::Function,
                    Some("object") => SymbolKind::Object,
                    Some(k) => return Err(bad(line, format!("unknown symbol kind `{k}`"))),
                };
                p.syms.push((line, name.to_string(), kind));
                continue;
            }
            ".seg" => {
                let mut parts = rest.split_whitespace();
                let _name = parts.next().ok_or_else(|| bad(line, ".seg needs a name"))?;
                let perms = parse_perms(line, parts.next().unwrap_or("r"))?;
                p.segs.push(SegDef {
                    perms,
                    size: 0,
                    vaddr: 0,
                });
                continue;
            }
            ".str" => {
                let mut d = quoted(line, rest)?;
                d.push(0);
                Item::Data(d)
            }
            ".wstr" => {
                let d = quoted(line, rest)?;
                let s = String::from_utf8(d).map_err(|_| bad(line, ".wstr text is not UTF-8"))?;
                let mut out: Vec<u8> = s.encode_utf16().flat_map(|u| u.to_le_bytes()).collect();
                out.extend_from_slice(&[0, 0]);
                Item::Data(out)
            }
            ".bytes" => {
                let mut d = Vec::new();
                for tok in rest.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                    let v = u8::from_str_radix(tok.trim_start_matches("0x"), 16)
                        .map_err(|_| bad(line, format!("bad byte `{tok}`")))?;
                    d.push(v);
                }
                Item::Data(d)
            }
            ".quad" => Item::Quad(rest.to_string()),
            ".zero" => {
                let n = parse_int(rest).filter(|n| *n >= 0).ok_or_else(|| bad(line, "bad .zero count"))?;
                Item::Data(vec![0; n as usize])
            }
            ".align" => {
                let n = parse_int(rest)
                    .filter(|n| *n > 0 && (*n as u64).is_power_of_two())
                    .ok_or_else(|| bad(line, "alignment must be a power of two"))?;
                Item::Pad(n as u64)
            }
            ".insn" => Item::EncodedInsn(rest.to_string()),
            "lea" => {
                let ops = split_operands(rest);
                if ops.len() != 2 {
                    return Err(bad(line, "lea takes a register and a label"));
                }
                Item::Lea {
                    rd: ops[0].clone(),
                    label: ops[1].clone(),
                }
            }
            w if w.starts_with('.') => return Err(bad(line, format!("unknown directive `{w}`"))),
            w => Item::Insn {
                mnemonic: w.to_ascii_lowercase(),
                ops: split_operands(rest),
            },
        };
        let seg = p.segs.len().checked_sub(1).ok_or_else(|| bad(line, "content before any .seg"))?;
        let off = p.segs[seg].size;
        p.segs[seg].size += item_size(&item, off);
        p.items.push(Placed { line, seg, off, item });
    }
    let mut next = 0;
    for s in &mut p.segs {
        s.vaddr = next;
        next = align_up(next + s.size.max(1), SEG_ALIGN);
    }
    Ok(p)
}

impl Program {
    fn vaddr(&self, line: usize, label: &str) -> Result<u64, AsmError> {
        let (seg, off) = self.labels.get(label).ok_or_else(|| AsmError::UndefinedLabel {
            line,
            label: label.to_string(),
        })?;
        Ok(self.segs[*seg].vaddr + off)
    }

    /// Absolute address of a label; only executables have a fixed base.
    fn absolute(&self, line: usize, label: &str) -> Result<u64, AsmError> {
        if self.image_type != ImageType::Executable {
            return Err(bad(line, format!("absolute address of `{label}` in a library; use lea")));
        }
        Ok(MAIN_BASE + self.vaddr(line, label)?)
    }

    fn reg(&self, line: usize, s: &str) -> Result<u8, AsmError> {
        let s = s.trim();
        if s == "sp" {
            return Ok(15);
        }
        s.strip_prefix('r')
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|n| *n < 16)
            .ok_or_else(|| bad(line, format!("expected a register, got `{s}`")))
    }

    fn imm32(&self, line: usize, v: i64) -> Result<i32, AsmError> {
        i32::try_from(v)
            .or_else(|_| u32::try_from(v).map(|u| u as i32))
            .map_err(|_| bad(line, format!("immediate {v} does not fit in 32 bits")))
    }

    /// `[rN]`, `[rN+imm]` or `[rN-imm]`.
    fn mem(&self, line: usize, s: &str) -> Result<(u8, i32), AsmError> {
        let body = s
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| bad(line, format!("expected a memory operand, got `{s}`")))?;
        let split = body.find(['+', '-']);
        let (r, off) = match split {
            Some(i) => (&body[..i], parse_int(&body[i..]).ok_or_else(|| bad(line, format!("bad offset in `{s}`")))?),
            None => (body, 0),
        };
        Ok((self.reg(line, r)?, self.imm32(line, off)?))
    }

    /// A pc-relative target: a label, or a raw displacement.
    fn rel(&self, line: usize, s: &str, site: u64) -> Result<i32, AsmError> {
        if let Some(v) = parse_int(s) {
            return self.imm32(line, v);
        }
        let t = self.vaddr(line, s)?;
        self.imm32(line, t as i64 - site as i64 - INSN_SIZE as i64)
    }

    fn value(&self, line: usize, s: &str) -> Result<i64, AsmError> {
        let s = s.trim();
        if let Some(label) = s.strip_prefix('@') {
            return Ok(self.absolute(line, label)? as i64);
        }
        parse_int(s).ok_or_else(|| bad(line, format!("expected an immediate, got `{s}`")))
    }

    fn encode(&self, line: usize, mnemonic: &str, ops: &[String], site: u64) -> Result<Instruction, AsmError> {
        let op = Opcode::from_mnemonic(mnemonic).ok_or_else(|| bad(line, format!("unknown mnemonic `{mnemonic}`")))?;
        let want = |n: usize| -> Result<(), AsmError> {
            if ops.len() == n {
                Ok(())
            } else {
                Err(bad(line, format!("{mnemonic} takes {n} operand(s), got {}", ops.len())))
            }
        };
        use Opcode::*;
        let i = match op {
            Halt | Ret => {
                want(0)?;
                Instruction::new(op, 0, 0, 0, 0)
            }
            Movi => {
                want(2)?;
                let v = self.value(line, &ops[1])?;
                Instruction::new(op, self.reg(line, &ops[0])?, 0, 0, self.imm32(line, v)?)
            }
            Mov => {
                want(2)?;
                Instruction::new(op, self.reg(line, &ops[0])?, self.reg(line, &ops[1])?, 0, 0)
            }
            Add | Sub | Xor | And | Or | Shl | Shr | Mul => {
                want(3)?;
                Instruction::new(
                    op,
                    self.reg(line, &ops[0])?,
                    self.reg(line, &ops[1])?,
                    self.reg(line, &ops[2])?,
                    0,
                )
            }
            Ld8 | Ld16 | Ld32 | Ld64 => {
                want(2)?;
                let (base, off) = self.mem(line, &ops[1])?;
                Instruction::new(op, self.reg(line, &ops[0])?, base, 0, off)
            }
            St8 | St16 | St32 | St64 => {
                want(2)?;
                let (base, off) = self.mem(line, &ops[0])?;
                Instruction::new(op, 0, base, self.reg(line, &ops[1])?, off)
            }
            Jmp | Call => {
                want(1)?;
                if op == Call && self.imports.contains(&ops[0]) && !self.labels.contains_key(&ops[0]) {
                    return self.encode(line, "callimp", ops, site);
                }
                Instruction::new(op, 0, 0, 0, self.rel(line, &ops[0], site)?)
            }
            Jmpr | Callr | Push => {
                want(1)?;
                Instruction::new(op, 0, self.reg(line, &ops[0])?, 0, 0)
            }
            Pop => {
                want(1)?;
                Instruction::new(op, self.reg(line, &ops[0])?, 0, 0, 0)
            }
            Beq | Bne | Bltu | Blts => {
                want(3)?;
                Instruction::new(
                    op,
                    0,
                    self.reg(line, &ops[0])?,
                    self.reg(line, &ops[1])?,
                    self.rel(line, &ops[2], site)?,
                )
            }
            Callimp => {
                want(1)?;
                let ord = match self.imports.iter().position(|i| *i == ops[0]) {
                    Some(o) => o as i64,
                    None => parse_int(&ops[0]).ok_or_else(|| bad(line, format!("`{}` is not an import", ops[0])))?,
                };
                Instruction::new(op, 0, 0, 0, self.imm32(line, ord)?)
            }
            Syscall => {
                want(1)?;
                let n = self.value(line, &ops[0])?;
                Instruction::new(op, 0, 0, 0, self.imm32(line, n)?)
            }
        };
        Ok(i)
    }

    fn emit_item(&self, p: &Placed, out: &mut Vec<u8>) -> Result<(), AsmError> {
        let site = self.segs[p.seg].vaddr + p.off;
        match &p.item {
            Item::Insn { mnemonic, ops } => out.extend_from_slice(&self.encode(p.line, mnemonic, ops, site)?.encode()),
            Item::EncodedInsn(text) => {
                let (w, rest) = match text.find(char::is_whitespace) {
                    Some(i) => (&text[..i], text[i..].trim()),
                    None => (text.as_str(), ""),
                };
                out.extend_from_slice(&self.encode(p.line, w, &split_operands(rest), site)?.encode());
            }
            Item::Lea { rd, label } => {
                let rd = self.reg(p.line, rd)?;
                if rd == TEMP_REG {
                    return Err(bad(p.line, "lea cannot target the temp register r14"));
                }
                let t = self.vaddr(p.line, label)? as i64;
                let after_call = site as i64 + INSN_SIZE as i64;
                let delta = self.imm32(p.line, t - after_call)?;
                for i in [
                    Instruction::new(Opcode::Call, 0, 0, 0, 0),
                    Instruction::new(Opcode::Pop, rd, 0, 0, 0),
                    Instruction::new(Opcode::Movi, TEMP_REG, 0, 0, delta),
                    Instruction::new(Opcode::Add, rd, rd, TEMP_REG, 0),
                ] {
                    out.extend_from_slice(&i.encode());
                }
            }
            Item::Data(d) => out.extend_from_slice(d),
            Item::Quad(s) => {
                let v = match parse_int(s) {
                    Some(v) => v as u64,
                    None => self.absolute(p.line, s.trim())?,
                };
                out.extend_from_slice(&v.to_le_bytes());
            }
            Item::Pad(_) => {
                let n = item_size(&p.item, p.off);
                out.extend(std::iter::repeat_n(0u8, n as usize));
            }
        }
        Ok(())
    }
}

/// Assembles source text into an image.
pub fn assemble(src: &str) -> Result<BinaryImage, AsmError> {
    let p = first_pass(src)?;
    let mut data: Vec<Vec<u8>> = p.segs.iter().map(|s| Vec::with_capacity(s.size as usize)).collect();
    for item in &p.items {
        p.emit_item(item, &mut data[item.seg])?;
    }
    let mut b = ImageBuilder::new(p.image_type);
    for (seg, bytes) in p.segs.iter().zip(data) {
        let n = bytes.len() as u32;
        b.segment(seg.vaddr, seg.perms, bytes, n);
    }
    for imp in &p.imports {
        b.import(imp);
    }
    for (line, name, kind) in &p.syms {
        let v = p.vaddr(*line, name)?;
        b.symbol(name, *kind, v);
    }
    match (&p.entry, p.image_type) {
        (Some((line, label)), _) => {
            let v = p.vaddr(*line, label)?;
            b.entry(v);
        }
        (None, ImageType::Executable) => return Err(bad(0, "executable without .entry")),
        (None, ImageType::Library) => {}
    }
    Ok(b.build()?)
}
