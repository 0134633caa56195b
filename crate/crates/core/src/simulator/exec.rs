use std::collections::BTreeMap;

use half::f16;

use crate::isa::{flags, Instruction, Layout, Opcode, RegionKind, COO_WORDS};
use crate::lowering::{apply_dm_transform, apply_epilogue, shifted_add};
use crate::model_ir::{Reduction, Tensor};
use crate::primitives::kernels::{ddmm_acc, sddmm_acc, spdmm_acc, spdmm_columns_acc, Accumulator, MatRef};
use crate::primitives::{fp16_round, psvm};

use super::SimError;

enum Acc {
    Matrix(Accumulator),
    Scores(Vec<f32>),
}

/// External memory plus the on-chip accumulators of unfinished tiles.
pub struct Machine<'a> {
    pub mem: Vec<u16>,
    layout: &'a Layout,
    acc: BTreeMap<u32, Acc>,
}

struct CooEntry {
    src: usize,
    dst: usize,
    val: f32,
}

impl<'a> Machine<'a> {
    pub fn new(image: &[u8], layout: &'a Layout) -> Result<Self, SimError> {
        if !image.len().is_multiple_of(2) || (image.len() / 2) as u64 != layout.image_words {
            return Err(SimError::ImageSize {
                bytes: image.len(),
                words: layout.image_words,
            });
        }
        let mem = image.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
        Ok(Self {
            mem,
            layout,
            acc: BTreeMap::new(),
        })
    }

    fn word(&self, a: usize) -> Result<u16, SimError> {
        self.mem.get(a).copied().ok_or(SimError::Address(a as u64))
    }

    /// `rows x cols` block starting at `addr`, strided by the region width.
    fn read_tile(&self, addr: u32, rows: usize, cols: usize) -> Result<Vec<f32>, SimError> {
        let stride = self.layout.region_at(addr)?.cols();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let base = addr as usize + r * stride;
            let row = self.mem.get(base..base + cols).ok_or(SimError::Address((base + cols) as u64))?;
            out.extend(row.iter().map(|w| f16::from_bits(*w).to_f32()));
        }
        Ok(out)
    }

    fn read_coo(&self, addr: u32, nnz: usize) -> Result<Vec<CooEntry>, SimError> {
        (0..nnz)
            .map(|n| {
                let b = addr as usize + n * COO_WORDS as usize;
                let w = |o: usize| self.word(b + o).map(u32::from);
                Ok(CooEntry {
                    src: (w(0)? | w(1)? << 16) as usize,
                    dst: (w(2)? | w(3)? << 16) as usize,
                    val: f16::from_bits(self.word(b + 4)?).to_f32(),
                })
            })
            .collect()
    }

    fn store(&mut self, a: usize, v: f32) -> Result<(), SimError> {
        let w = self.mem.get_mut(a).ok_or(SimError::Address(a as u64))?;
        *w = f16::from_f32(v).to_bits();
        Ok(())
    }

    fn position(&self, addr: u32) -> Result<(usize, usize), SimError> {
        Ok(self.layout.region_at(addr)?.position(addr))
    }

    fn matrix_acc(&mut self, i: &Instruction, rows: usize, cols: usize, red: Reduction) -> Result<Accumulator, SimError> {
        if i.has(flags::ACCUMULATE) {
            match self.acc.remove(&i.addr_z) {
                Some(Acc::Matrix(a)) if a.rows == rows && a.cols == cols => return Ok(a),
                _ => return Err(SimError::Malformed(format!("accumulate into {} without a partial tile", i.addr_z))),
            }
        }
        Ok(Accumulator::new(rows, cols, red))
    }

    /// Writes a finished `rows x cols` tile at `addr_z`, after the epilogue
    /// and through the output permutation.
    fn write_tile(&mut self, i: &Instruction, mut values: Vec<f32>, rows: usize, cols: usize) -> Result<(), SimError> {
        let (row0, col0) = self.position(i.addr_z)?;
        let ops = self.layout.epilogue(i)?;
        apply_epilogue(&mut values, cols, row0, col0, &ops, None);
        let region = self.layout.region_at(i.addr_z)?;
        let (base, width) = (region.offset as usize, region.cols());
        let shuffle = self.layout.shuffle(i)?.map(<[usize]>::to_vec);
        for r in 0..rows {
            let dst = match &shuffle {
                Some(p) => *p.get(row0 + r).ok_or_else(|| SimError::Malformed("shuffle shorter than output".into()))?,
                None => row0 + r,
            };
            for c in 0..cols {
                self.store(base + dst * width + col0 + c, values[r * cols + c])?;
            }
        }
        Ok(())
    }

    fn finish_matrix(&mut self, i: &Instruction, acc: Accumulator) -> Result<(), SimError> {
        if i.has(flags::PARTIAL) {
            self.acc.insert(i.addr_z, Acc::Matrix(acc));
            return Ok(());
        }
        let (rows, cols) = (acc.rows, acc.cols);
        self.write_tile(i, acc.finish(), rows, cols)
    }

    pub fn execute(&mut self, i: &Instruction) -> Result<(), SimError> {
        let [t1, t2, t3] = i.dims.map(usize::from);
        let red = if i.has(flags::MAX_REDUCE) { Reduction::Max } else { Reduction::Sum };
        match i.opcode {
            Opcode::Ddmm => {
                let a = self.read_tile(i.addr_a, t1, t2)?;
                let b = self.read_tile(i.addr_b, t2, t3)?;
                let mut acc = self.matrix_acc(i, t1, t3, Reduction::Sum)?;
                ddmm_acc(&mut acc, MatRef::new(&a, t1, t2), MatRef::new(&b, t2, t3));
                self.finish_matrix(i, acc)
            }
            Opcode::Spdmm => {
                let coo = self.read_coo(i.addr_a, i.nnz as usize)?;
                let (zr, zc) = self.position(i.addr_z)?;
                let mut acc = self.matrix_acc(i, t1, t3, red)?;
                let (br, bc) = self.position(i.addr_b)?;
                let local = |e: &CooEntry, s0: usize, d0: usize| -> Result<(usize, usize, f32), SimError> {
                    match (e.src.checked_sub(s0), e.dst.checked_sub(d0)) {
                        (Some(s), Some(d)) => Ok((s, d, e.val)),
                        _ => Err(SimError::Malformed(format!("triple ({}, {}) outside its tile", e.src, e.dst))),
                    }
                };
                if i.has(flags::TRANSPOSE) {
                    let d = self.read_tile(i.addr_b, t1, t2)?;
                    let tr = coo.iter().map(|e| local(e, bc, zc)).collect::<Result<Vec<_>, _>>()?;
                    spdmm_columns_acc(&mut acc, &tr, MatRef::new(&d, t1, t2));
                } else {
                    let y = self.read_tile(i.addr_b, t2, t3)?;
                    let tr = coo.iter().map(|e| local(e, br, zr)).collect::<Result<Vec<_>, _>>()?;
                    spdmm_acc(&mut acc, &tr, MatRef::new(&y, t2, t3));
                }
                self.finish_matrix(i, acc)
            }
            Opcode::Sddmm => {
                let n = i.nnz as usize;
                let coo = self.read_coo(i.addr_z, n)?;
                let (row0, _) = self.position(i.addr_a)?;
                let x = self.read_tile(i.addr_a, t1, t2)?;
                let y = self.read_tile(i.addr_b, t3, t2)?;
                let mut acc = if i.has(flags::ACCUMULATE) {
                    match self.acc.remove(&i.addr_z) {
                        Some(Acc::Scores(v)) if v.len() == n => v,
                        _ => return Err(SimError::Malformed("SDDMM accumulate without a partial tile".into())),
                    }
                } else {
                    vec![0.0; n]
                };
                let samples: Vec<(usize, usize)> = coo
                    .iter()
                    .map(|e| (e.dst.wrapping_sub(row0), e.src))
                    .collect();
                if samples.iter().any(|(r, c)| *r >= t1 || *c >= t3) {
                    return Err(SimError::Malformed("sample outside the SDDMM tile".into()));
                }
                sddmm_acc(&mut acc, &samples, MatRef::new(&x, t1, t2), MatRef::new(&y, t3, t2));
                if i.has(flags::PARTIAL) {
                    self.acc.insert(i.addr_z, Acc::Scores(acc));
                    return Ok(());
                }
                let mut vals: Vec<f32> = acc.into_iter().map(fp16_round).collect();
                let keys: Vec<u32> = coo.iter().map(|e| e.dst as u32).collect();
                apply_epilogue(&mut vals, 1, 0, 0, &self.layout.epilogue(i)?, Some(&keys));
                for (n, v) in vals.into_iter().enumerate() {
                    self.store(i.addr_z as usize + n * COO_WORDS as usize + 4, v)?;
                }
                Ok(())
            }
            Opcode::Psvm => {
                let a = self.read_tile(i.addr_a, t1, 1)?;
                let y = self.read_tile(i.addr_b, t1, t3)?;
                let y = Tensor::new(vec![t1, t3], y).map_err(|e| SimError::Malformed(e.to_string()))?;
                let z = psvm(&a, &y).map_err(|e| SimError::Malformed(e.to_string()))?;
                self.write_tile(i, z.into_values(), t1, t3)
            }
            Opcode::Pvva => {
                let shifts = self.layout.shift_entry(i)?;
                let wa = if shifts[0].is_some() { self.layout.region_at(i.addr_a)?.cols() } else { t3 };
                let wb = if shifts[1].is_some() { self.layout.region_at(i.addr_b)?.cols() } else { t3 };
                let a = self.read_tile(i.addr_a, t1, wa)?;
                let b = self.read_tile(i.addr_b, t1, wb)?;
                let mut z = vec![0.0f32; t1 * t3];
                for r in 0..t1 {
                    shifted_add(
                        &a[r * wa..(r + 1) * wa],
                        shifts[0].as_ref(),
                        &b[r * wb..(r + 1) * wb],
                        shifts[1].as_ref(),
                        &mut z[r * t3..(r + 1) * t3],
                    );
                }
                self.write_tile(i, z, t1, t3)
            }
            Opcode::DmTransform => {
                let e = self.layout.dm_entry(i)?.clone();
                let x = self.read_tile(i.addr_a, e.rows, e.cols)?;
                let out = apply_dm_transform(&x, e.rows, e.cols, &e.dm, e.in_hw);
                for (n, v) in out.into_iter().enumerate() {
                    self.store(i.addr_z as usize + n, v)?;
                }
                Ok(())
            }
            Opcode::MemRead | Opcode::MemWrite | Opcode::Barrier => Ok(()),
        }
    }

    /// Graph outputs read back from memory.
    pub fn outputs(&self) -> Result<BTreeMap<String, Tensor>, SimError> {
        let mut out = BTreeMap::new();
        for o in &self.layout.outputs {
            let r = self.layout.regions.get(o.region).ok_or(SimError::Malformed("output region".into()))?;
            let mut values = match r.kind {
                RegionKind::Dense { rows, cols } => self.read_tile(r.offset, rows, cols)?,
                RegionKind::Coo { nnz, .. } => self.read_coo(r.offset, nnz)?.into_iter().map(|e| e.val).collect(),
            };
            // an empty score vector reads back as a single zero
            if values.is_empty() {
                values.push(0.0);
            }
            let t = Tensor::new(o.dims.clone(), values).map_err(|e| SimError::Malformed(e.to_string()))?;
            out.insert(o.layer.clone(), t);
        }
        Ok(out)
    }
}
