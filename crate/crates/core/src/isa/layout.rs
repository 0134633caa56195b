use serde::{Deserialize, Serialize};

use crate::lowering::{EpilogueOp, Provenance, Shift, ValueId};
use crate::model_ir::DmSpec;

use super::encoding::{flags, Instruction, Opcode};
use super::IsaError;

/// Words per COO triple in the image: src u32, dst u32, value, pad.
pub const COO_WORDS: u32 = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionKind {
    Dense { rows: usize, cols: usize },
    Coo { rows: usize, cols: usize, nnz: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    /// Program value held here; absent for per-tile operand copies.
    pub value: Option<ValueId>,
    /// Start, in words.
    pub offset: u32,
    /// Length, in words.
    pub length: u32,
    #[serde(flatten)]
    pub kind: RegionKind,
    pub provenance: Option<Provenance>,
}

impl Region {
    /// Row and column of the word at `addr` inside a dense region.
    pub fn position(&self, addr: u32) -> (usize, usize) {
        let rel = (addr - self.offset) as usize;
        match self.kind {
            RegionKind::Dense { cols, .. } => (rel / cols.max(1), rel % cols.max(1)),
            RegionKind::Coo { .. } => (rel / COO_WORDS as usize, 0),
        }
    }

    pub fn cols(&self) -> usize {
        match self.kind {
            RegionKind::Dense { cols, .. } | RegionKind::Coo { cols, .. } => cols,
        }
    }

    pub fn end(&self) -> u32 {
        self.offset + self.length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub layer: String,
    pub value: ValueId,
    pub region: usize,
    pub dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmEntry {
    pub dm: DmSpec,
    pub in_hw: Option<(usize, usize)>,
    pub rows: usize,
    pub cols: usize,
}

/// Memory map and side tables of a compiled module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub regions: Vec<Region>,
    pub outputs: Vec<OutputEntry>,
    /// Row permutations referenced by compute instructions.
    pub shuffles: Vec<Vec<usize>>,
    /// Epilogue op lists referenced by `norm_id`.
    pub epilogues: Vec<Vec<EpilogueOp>>,
    /// Operand shifts referenced by PVVA `shuffle_id`.
    pub shifts: Vec<[Option<Shift>; 2]>,
    /// Transform descriptors referenced by DM `shuffle_id`.
    pub dm: Vec<DmEntry>,
    /// Label per barrier-delimited stage.
    pub stages: Vec<String>,
    pub image_words: u64,
}

/// A strided run of words: `rows` runs of `row_words`, `stride` apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub start: u32,
    pub stride: u32,
    pub row_words: u32,
    pub rows: u32,
}

impl Rect {
    pub fn contiguous(start: u32, words: u32) -> Self {
        Self {
            start,
            stride: words,
            row_words: words,
            rows: 1,
        }
    }

    pub fn words(&self) -> u64 {
        self.rows as u64 * self.row_words as u64
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.row_words == 0
    }

    /// `[start, end)` word ranges, merged where rows abut.
    pub fn ranges(&self) -> Vec<(u32, u32)> {
        if self.is_empty() {
            return Vec::new();
        }
        if self.stride == self.row_words {
            return vec![(self.start, self.start + self.row_words * self.rows)];
        }
        (0..self.rows)
            .map(|r| {
                let s = self.start + r * self.stride;
                (s, s + self.row_words)
            })
            .collect()
    }
}

impl Layout {
    /// Region containing word `addr`.
    pub fn region_at(&self, addr: u32) -> Result<&Region, IsaError> {
        let i = self.regions.partition_point(|r| r.offset <= addr);
        match i.checked_sub(1).map(|i| &self.regions[i]) {
            Some(r) if addr < r.end() => Ok(r),
            _ => Err(IsaError::Unmapped(addr)),
        }
    }

    pub fn region_index(&self, addr: u32) -> Result<usize, IsaError> {
        let r = self.region_at(addr)?;
        Ok(self.regions.iter().position(|x| x.offset == r.offset).expect("found above"))
    }

    fn dense_rect(&self, addr: u32, row_words: u32, rows: u32) -> Result<Rect, IsaError> {
        let r = self.region_at(addr)?;
        let stride = r.cols() as u32;
        let rect = Rect {
            start: addr,
            stride,
            row_words,
            rows,
        };
        let last = addr as u64 + (rows.max(1) as u64 - 1) * stride as u64 + row_words as u64;
        if last > r.end() as u64 {
            return Err(IsaError::OutOfRegion { addr, name: r.name.clone() });
        }
        Ok(rect)
    }

    fn coo_rect(&self, addr: u32, nnz: u32) -> Result<Rect, IsaError> {
        let r = self.region_at(addr)?;
        let rect = Rect::contiguous(addr, nnz * COO_WORDS);
        if addr as u64 + rect.words() > r.end() as u64 {
            return Err(IsaError::OutOfRegion { addr, name: r.name.clone() });
        }
        Ok(rect)
    }

    /// Words a compute or DM instruction reads.
    pub fn operand_footprint(&self, i: &Instruction) -> Result<Vec<Rect>, IsaError> {
        let [t1, t2, t3] = i.dims.map(u32::from);
        let mut out = Vec::with_capacity(3);
        match i.opcode {
            Opcode::Ddmm => {
                out.push(self.dense_rect(i.addr_a, t2, t1)?);
                out.push(self.dense_rect(i.addr_b, t3, t2)?);
            }
            Opcode::Spdmm => {
                if i.nnz > 0 {
                    out.push(self.coo_rect(i.addr_a, i.nnz)?);
                }
                if i.has(flags::TRANSPOSE) {
                    out.push(self.dense_rect(i.addr_b, t2, t1)?);
                } else {
                    out.push(self.dense_rect(i.addr_b, t3, t2)?);
                }
            }
            Opcode::Sddmm => {
                out.push(self.dense_rect(i.addr_a, t2, t1)?);
                out.push(self.dense_rect(i.addr_b, t2, t3)?);
                if i.nnz > 0 {
                    out.push(self.coo_rect(i.addr_z, i.nnz)?);
                }
            }
            Opcode::Psvm => {
                out.push(self.dense_rect(i.addr_a, 1, t1)?);
                out.push(self.dense_rect(i.addr_b, t3, t1)?);
            }
            Opcode::Pvva => {
                let shifts = self.shift_entry(i)?;
                for (n, addr) in [i.addr_a, i.addr_b].into_iter().enumerate() {
                    let words = match shifts[n] {
                        Some(_) => self.region_at(addr)?.cols() as u32,
                        None => t3,
                    };
                    out.push(self.dense_rect(addr, words, t1)?);
                }
            }
            Opcode::DmTransform => {
                let e = self.dm_entry(i)?;
                out.push(self.dense_rect(i.addr_a, e.cols as u32, e.rows as u32)?);
            }
            Opcode::MemRead | Opcode::MemWrite | Opcode::Barrier => {}
        }
        out.retain(|r| !r.is_empty());
        Ok(out)
    }

    pub fn shift_entry(&self, i: &Instruction) -> Result<[Option<Shift>; 2], IsaError> {
        if !i.has(flags::SHUFFLE) {
            return Ok([None, None]);
        }
        self.shifts
            .get(i.shuffle_id as usize)
            .copied()
            .ok_or(IsaError::MissingTable("shift", i.shuffle_id))
    }

    pub fn dm_entry(&self, i: &Instruction) -> Result<&DmEntry, IsaError> {
        self.dm
            .get(i.shuffle_id as usize)
            .ok_or(IsaError::MissingTable("dm", i.shuffle_id))
    }

    pub fn shuffle(&self, i: &Instruction) -> Result<Option<&[usize]>, IsaError> {
        if !i.has(flags::SHUFFLE) || matches!(i.opcode, Opcode::Pvva | Opcode::DmTransform) {
            return Ok(None);
        }
        self.shuffles
            .get(i.shuffle_id as usize)
            .map(|v| Some(v.as_slice()))
            .ok_or(IsaError::MissingTable("shuffle", i.shuffle_id))
    }

    pub fn epilogue(&self, i: &Instruction) -> Result<Vec<EpilogueOp>, IsaError> {
        if i.has(flags::NORM) {
            return self
                .epilogues
                .get(i.norm_id as usize)
                .cloned()
                .ok_or(IsaError::MissingTable("epilogue", i.norm_id));
        }
        let mut ops = Vec::new();
        if i.has(flags::RELU) {
            ops.push(EpilogueOp::Relu);
        }
        if i.has(flags::SOFTMAX) {
            ops.push(EpilogueOp::RowSoftmax);
        }
        Ok(ops)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IsaError> {
        serde_json::from_str(text).map_err(|e| IsaError::Layout(e.to_string()))
    }
}
