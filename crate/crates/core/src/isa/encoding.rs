use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::IsaError;

pub const INSTRUCTION_BYTES: usize = 32;
pub const MAGIC: &[u8; 4] = b"GCVI";
pub const VERSION: u8 = 1;
/// `pe_hint` value that leaves placement to the scheduler.
pub const ANY_PE: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Opcode {
    Ddmm = 1,
    Spdmm = 2,
    Sddmm = 3,
    Psvm = 4,
    Pvva = 5,
    DmTransform = 6,
    MemRead = 16,
    MemWrite = 17,
    Barrier = 32,
}

impl Opcode {
    pub fn from_u8(b: u8) -> Result<Self, IsaError> {
        Ok(match b {
            1 => Opcode::Ddmm,
            2 => Opcode::Spdmm,
            3 => Opcode::Sddmm,
            4 => Opcode::Psvm,
            5 => Opcode::Pvva,
            6 => Opcode::DmTransform,
            16 => Opcode::MemRead,
            17 => Opcode::MemWrite,
            32 => Opcode::Barrier,
            other => return Err(IsaError::UnknownOpcode(other)),
        })
    }

    pub fn is_compute(self) -> bool {
        matches!(self, Opcode::Ddmm | Opcode::Spdmm | Opcode::Sddmm | Opcode::Psvm | Opcode::Pvva)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Ddmm => "DDMM",
            Opcode::Spdmm => "SPDMM",
            Opcode::Sddmm => "SDDMM",
            Opcode::Psvm => "PSVM",
            Opcode::Pvva => "PVVA",
            Opcode::DmTransform => "DMT",
            Opcode::MemRead => "MEMRD",
            Opcode::MemWrite => "MEMWR",
            Opcode::Barrier => "BARRIER",
        }
    }
}

pub mod flags {
    pub const ACCUMULATE: u16 = 0x1;
    pub const RELU: u16 = 0x2;
    /// `norm_id` selects an epilogue table entry.
    pub const NORM: u16 = 0x4;
    pub const SOFTMAX: u16 = 0x8;
    /// `shuffle_id` selects a table entry of the opcode's kind.
    pub const SHUFFLE: u16 = 0x10;
    pub const MAX_REDUCE: u16 = 0x20;
    pub const TRANSPOSE: u16 = 0x40;
    /// Not the last reduction tile: keep the accumulator, write nothing.
    pub const PARTIAL: u16 = 0x80;
    pub const DEFINED: u16 = 0xff;
}

/// One fixed-width instruction. Addresses count 16-bit words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: Opcode,
    pub pe_hint: u8,
    pub dims: [u16; 3],
    pub nnz: u32,
    pub addr_a: u32,
    pub addr_b: u32,
    pub addr_z: u32,
    pub flags: u16,
    pub shuffle_id: u16,
    pub norm_id: u16,
}

impl Instruction {
    pub fn new(opcode: Opcode) -> Self {
        Self {
            opcode,
            pe_hint: ANY_PE,
            dims: [0; 3],
            nnz: 0,
            addr_a: 0,
            addr_b: 0,
            addr_z: 0,
            flags: 0,
            shuffle_id: 0,
            norm_id: 0,
        }
    }

    pub fn barrier() -> Self {
        Self {
            pe_hint: 0,
            ..Self::new(Opcode::Barrier)
        }
    }

    /// Strided transfer of `rows` runs of `row_words` words.
    pub fn mem(opcode: Opcode, start: u32, stride: u32, row_words: u32, rows: u16) -> Self {
        let mut i = Self::new(opcode);
        i.pe_hint = 0;
        i.dims = [rows, 0, 0];
        i.nnz = row_words;
        i.addr_b = stride;
        match opcode {
            Opcode::MemWrite => i.addr_z = start,
            _ => i.addr_a = start,
        }
        i
    }

    pub fn has(&self, flag: u16) -> bool {
        self.flags & flag != 0
    }

    /// Bytes moved by a memory instruction.
    pub fn transfer_bytes(&self) -> u64 {
        self.dims[0] as u64 * self.nnz as u64 * 2
    }

    /// Start word, stride, row words and rows of a memory instruction.
    pub fn transfer(&self) -> (u32, u32, u32, u16) {
        let start = if self.opcode == Opcode::MemWrite { self.addr_z } else { self.addr_a };
        (start, self.addr_b, self.nnz, self.dims[0])
    }

    pub fn encode(&self) -> [u8; INSTRUCTION_BYTES] {
        let mut b = [0u8; INSTRUCTION_BYTES];
        b[0] = self.opcode as u8;
        b[1] = self.pe_hint;
        for (n, d) in self.dims.iter().enumerate() {
            b[2 + 2 * n..4 + 2 * n].copy_from_slice(&d.to_le_bytes());
        }
        b[8..12].copy_from_slice(&self.nnz.to_le_bytes());
        b[12..16].copy_from_slice(&self.addr_a.to_le_bytes());
        b[16..20].copy_from_slice(&self.addr_b.to_le_bytes());
        b[20..24].copy_from_slice(&self.addr_z.to_le_bytes());
        b[24..26].copy_from_slice(&self.flags.to_le_bytes());
        b[26..28].copy_from_slice(&self.shuffle_id.to_le_bytes());
        b[28..30].copy_from_slice(&self.norm_id.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, IsaError> {
        if b.len() != INSTRUCTION_BYTES {
            return Err(IsaError::Truncated(b.len()));
        }
        let opcode = Opcode::from_u8(b[0])?;
        let u16_at = |o: usize| u16::from_le_bytes([b[o], b[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
        if b[30] != 0 || b[31] != 0 {
            return Err(IsaError::ReservedBits);
        }
        let flags = u16_at(24);
        if flags & !flags::DEFINED != 0 {
            return Err(IsaError::UnknownFlags(flags));
        }
        Ok(Self {
            opcode,
            pe_hint: b[1],
            dims: [u16_at(2), u16_at(4), u16_at(6)],
            nnz: u32_at(8),
            addr_a: u32_at(12),
            addr_b: u32_at(16),
            addr_z: u32_at(20),
            flags,
            shuffle_id: u16_at(26),
            norm_id: u16_at(28),
        })
    }
}

impl std::fmt::Display for Instruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<7} dims={}x{}x{} nnz={} a={} b={} z={} flags={:#04x}",
            self.opcode.mnemonic(),
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.nnz,
            self.addr_a,
            self.addr_b,
            self.addr_z,
            self.flags
        )?;
        if self.has(flags::SHUFFLE) {
            write!(f, " tab={}", self.shuffle_id)?;
        }
        if self.has(flags::NORM) {
            write!(f, " epi={}", self.norm_id)?;
        }
        Ok(())
    }
}

pub fn write_program<W: Write>(mut w: W, instrs: &[Instruction]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(instrs.len() as u32).to_le_bytes())?;
    for i in instrs {
        w.write_all(&i.encode())?;
    }
    Ok(())
}

pub fn encode_program(instrs: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + instrs.len() * INSTRUCTION_BYTES);
    write_program(&mut out, instrs).expect("writing to a vec");
    out
}

pub fn read_program<R: Read>(mut r: R) -> Result<Vec<Instruction>, IsaError> {
    let mut head = [0u8; 9];
    r.read_exact(&mut head).map_err(|_| IsaError::BadHeader)?;
    if &head[..4] != MAGIC || head[4] != VERSION {
        return Err(IsaError::BadHeader);
    }
    let n = u32::from_le_bytes([head[5], head[6], head[7], head[8]]) as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut buf = [0u8; INSTRUCTION_BYTES];
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(|_| IsaError::Truncated(out.len()))?;
        out.push(Instruction::decode(&buf)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|_| IsaError::BadHeader)? != 0 {
        return Err(IsaError::TrailingBytes);
    }
    Ok(out)
}
