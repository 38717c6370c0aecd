//! Fixed-width instruction encoding.
//!
//! Every instruction is eight bytes: opcode, rd, rs1, rs2, then a
//! little-endian 32-bit immediate.

use thiserror::Error;

pub const INSN_SIZE: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Halt,
    Movi,
    Mov,
    Add,
    Sub,
    Xor,
    And,
    Or,
    Shl,
    Shr,
    Mul,
    Ld8,
    Ld16,
    Ld32,
    Ld64,
    St8,
    St16,
    St32,
    St64,
    Jmp,
    Jmpr,
    Beq,
    Bne,
    Bltu,
    Blts,
    Call,
    Callr,
    Callimp,
    Ret,
    Push,
    Pop,
    Syscall,
}

const TABLE: [(Opcode, u8, &str); 32] = [
    (Opcode::Halt, 0x00, "halt"),
    (Opcode::Movi, 0x01, "movi"),
    (Opcode::Mov, 0x03, "mov"),
    (Opcode::Add, 0x04, "add"),
    (Opcode::Sub, 0x05, "sub"),
    (Opcode::Xor, 0x06, "xor"),
    (Opcode::And, 0x07, "and"),
    (Opcode::Or, 0x08, "or"),
    (Opcode::Shl, 0x09, "shl"),
    (Opcode::Shr, 0x0A, "shr"),
    (Opcode::Mul, 0x0B, "mul"),
    (Opcode::Ld8, 0x10, "ld8"),
    (Opcode::Ld16, 0x11, "ld16"),
    (Opcode::Ld32, 0x12, "ld32"),
    (Opcode::Ld64, 0x13, "ld64"),
    (Opcode::St8, 0x14, "st8"),
    (Opcode::St16, 0x15, "st16"),
    (Opcode::St32, 0x16, "st32"),
    (Opcode::St64, 0x17, "st64"),
    (Opcode::Jmp, 0x20, "jmp"),
    (Opcode::Jmpr, 0x21, "jmpr"),
    (Opcode::Beq, 0x22, "beq"),
    (Opcode::Bne, 0x23, "bne"),
    (Opcode::Bltu, 0x24, "bltu"),
    (Opcode::Blts, 0x25, "blts"),
    (Opcode::Call, 0x26, "call"),
    (Opcode::Callr, 0x27, "callr"),
    (Opcode::Callimp, 0x28, "callimp"),
    (Opcode::Ret, 0x29, "ret"),
    (Opcode::Push, 0x2A, "push"),
    (Opcode::Pop, 0x2B, "pop"),
    (Opcode::Syscall, 0x30, "syscall"),
];

impl Opcode {
    pub fn from_byte(b: u8) -> Option<Opcode> {
        TABLE.iter().find(|e| e.1 == b).map(|e| e.0)
    }

    pub fn byte(self) -> u8 {
        TABLE.iter().find(|e| e.0 == self).unwrap().1
    }

    pub fn mnemonic(self) -> &'static str {
        TABLE.iter().find(|e| e.0 == self).unwrap().2
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        TABLE.iter().find(|e| e.2 == s).map(|e| e.0)
    }

    pub fn all() -> impl Iterator<Item = Opcode> {
        TABLE.iter().map(|e| e.0)
    }

    /// Bytes moved by a load or store.
    pub fn access_size(self) -> Option<usize> {
        match self {
            Opcode::Ld8 | Opcode::St8 => Some(1),
            Opcode::Ld16 | Opcode::St16 => Some(2),
            Opcode::Ld32 | Opcode::St32 => Some(4),
            Opcode::Ld64 | Opcode::St64 => Some(8),
            _ => None,
        }
    }

    pub fn is_conditional_branch(self) -> bool {
        matches!(self, Opcode::Beq | Opcode::Bne | Opcode::Bltu | Opcode::Blts)
    }

    pub fn is_call(self) -> bool {
        matches!(self, Opcode::Call | Opcode::Callr | Opcode::Callimp)
    }

    /// Ends a basic block.
    pub fn is_terminator(self) -> bool {
        matches!(
            self,
            Opcode::Halt | Opcode::Jmp | Opcode::Jmpr | Opcode::Ret | Opcode::Call | Opcode::Callr | Opcode::Callimp
        ) || self.is_conditional_branch()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: i32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("illegal opcode {0:#04x}")]
    IllegalOpcode(u8),
    #[error("register index {0} out of range")]
    BadRegister(u8),
}

impl Instruction {
    pub fn new(opcode: Opcode, rd: u8, rs1: u8, rs2: u8, imm: i32) -> Self {
        Instruction {
            opcode,
            rd,
            rs1,
            rs2,
            imm,
        }
    }

    pub fn decode(bytes: &[u8; 8]) -> Result<Instruction, DecodeError> {
        let opcode = Opcode::from_byte(bytes[0]).ok_or(DecodeError::IllegalOpcode(bytes[0]))?;
        for &r in &bytes[1..4] {
            if r >= 16 {
                return Err(DecodeError::BadRegister(r));
            }
        }
        Ok(Instruction {
            opcode,
            rd: bytes[1],
            rs1: bytes[2],
            rs2: bytes[3],
            imm: i32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        })
    }

    pub fn encode(&self) -> [u8; 8] {
        let mut out = [0u8; 8];
        out[0] = self.opcode.byte();
        out[1] = self.rd;
        out[2] = self.rs1;
        out[3] = self.rs2;
        out[4..].copy_from_slice(&self.imm.to_le_bytes());
        out
    }

    /// Target of a pc-relative transfer located at `pc`.
    pub fn relative_target(&self, pc: u64) -> u64 {
        pc.wrapping_add(INSN_SIZE).wrapping_add(self.imm as i64 as u64)
    }
}
