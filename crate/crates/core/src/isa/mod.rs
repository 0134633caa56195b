//! Fixed-width instruction set, external-memory layout and emission.
//!
//! Instructions are 32 bytes, little-endian:
//!
//! | bytes  | field                         |
//! |--------|-------------------------------|
//! | 0      | opcode                        |
//! | 1      | pe_hint (255 = any)           |
//! | 2..8   | dims, 3 x u16                 |
//! | 8..12  | nnz                           |
//! | 12..24 | addr_a, addr_b, addr_z (u32)  |
//! | 24..26 | flags                         |
//! | 26..28 | shuffle_id                    |
//! | 28..30 | norm_id                       |
//! | 30..32 | reserved, zero                |
//!
//! Memory instructions reuse the fields: `addr_a` (read) or `addr_z`
//! (write) is the first word, `addr_b` the row stride, `nnz` the words per
//! row and `dims[0]` the row count.

mod emit;
mod encoding;
mod layout;

pub use emit::emit;
pub use encoding::{
    encode_program, flags, read_program, write_program, Instruction, Opcode, ANY_PE,
    INSTRUCTION_BYTES, MAGIC, VERSION,
};
pub use layout::{DmEntry, Layout, OutputEntry, Rect, Region, RegionKind, COO_WORDS};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IsaError {
    #[error("unknown opcode {0}")]
    UnknownOpcode(u8),
    #[error("reserved bits are set")]
    ReservedBits,
    #[error("undefined flag bits in {0:#06x}")]
    UnknownFlags(u16),
    #[error("truncated instruction stream after {0} instructions")]
    Truncated(usize),
    #[error("not a GCVI v1 program")]
    BadHeader,
    #[error("bytes after the last instruction")]
    TrailingBytes,
    #[error("word address {0} is outside every region")]
    Unmapped(u32),
    #[error("access at word {addr} runs past region {name}")]
    OutOfRegion { addr: u32, name: String },
    #[error("no {0} table entry {1}")]
    MissingTable(&'static str, u16),
    #[error("layout: {0}")]
    Layout(String),
    #[error("image needs {needed} bytes, external memory holds {limit}")]
    ImageOverflow { needed: u64, limit: u64 },
    #[error("field out of range: {0}")]
    FieldRange(String),
    #[error("{0}")]
    Io(String),
}

/// Instruction stream, data image and memory map of a compiled model.
#[derive(Clone, Debug, PartialEq)]
pub struct Module {
    pub instructions: Vec<Instruction>,
    pub image: Vec<u8>,
    pub layout: Layout,
}

pub const PROGRAM_FILE: &str = "program.gcvi";
pub const IMAGE_FILE: &str = "image.bin";
pub const LAYOUT_FILE: &str = "layout.json";

fn io(e: std::io::Error, p: &Path) -> IsaError {
    IsaError::Io(format!("{}: {e}", p.display()))
}

impl Module {
    pub fn write_to(&self, dir: &Path) -> Result<(), IsaError> {
        std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
        let p = dir.join(PROGRAM_FILE);
        std::fs::write(&p, self.program_bytes()).map_err(|e| io(e, &p))?;
        let p = dir.join(IMAGE_FILE);
        std::fs::write(&p, &self.image).map_err(|e| io(e, &p))?;
        let p = dir.join(LAYOUT_FILE);
        std::fs::write(&p, self.layout.to_json()).map_err(|e| io(e, &p))?;
        Ok(())
    }

    pub fn read_from(dir: &Path) -> Result<Self, IsaError> {
        let p = dir.join(PROGRAM_FILE);
        let bytes = std::fs::read(&p).map_err(|e| io(e, &p))?;
        let instructions = read_program(bytes.as_slice())?;
        let p = dir.join(IMAGE_FILE);
        let image = std::fs::read(&p).map_err(|e| io(e, &p))?;
        let p = dir.join(LAYOUT_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| io(e, &p))?;
        Ok(Self {
            instructions,
            image,
            layout: Layout::from_json(&text)?,
        })
    }

    pub fn program_bytes(&self) -> Vec<u8> {
        encode_program(&self.instructions)
    }

    /// One instruction per line.
    pub fn disassemble(&self) -> String {
        self.instructions.iter().map(|i| format!("{i}\n")).collect()
    }

    pub fn count(&self, op: Opcode) -> usize {
        self.instructions.iter().filter(|i| i.opcode == op).count()
    }
}

#[cfg(test)]
pub(crate) mod tests;
