use std::collections::{BTreeMap, BTreeSet};

use half::f16;

use crate::arch::ArchConfig;
use crate::lowering::{Constant, EpilogueOp, MatrixProgram, OpKind, Storage, ValueId};
use crate::model_ir::{Reduction, Triple};
use crate::planner::{Primitive, SparseSlice, TileTask, TiledProgram};

use super::encoding::{flags, Instruction, Opcode};
use super::layout::{DmEntry, Layout, OutputEntry, Rect, Region, RegionKind, COO_WORDS};
use super::{IsaError, Module};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Form {
    AsIs,
    /// Dense copy of a sparse constant.
    Dense,
    /// Dense copy of a sparse constant's transpose.
    DenseT,
}

struct Image<'a> {
    words: Vec<u16>,
    layout: Layout,
    limit_words: u64,
    forms: BTreeMap<(ValueId, Form), u32>,
    prog: &'a MatrixProgram,
}

fn put_coo(words: &mut [u16], at: usize, triples: &[Triple]) {
    for (n, t) in triples.iter().enumerate() {
        let w = &mut words[at + n * COO_WORDS as usize..at + (n + 1) * COO_WORDS as usize];
        w[0] = t.src as u16;
        w[1] = (t.src >> 16) as u16;
        w[2] = t.dst as u16;
        w[3] = (t.dst >> 16) as u16;
        w[4] = f16::from_f32(t.val).to_bits();
        w[5] = 0;
    }
}

impl<'a> Image<'a> {
    fn alloc(&mut self, name: String, value: Option<ValueId>, kind: RegionKind, length: u64) -> Result<u32, IsaError> {
        // empty values still get an addressable word
        let length = length.max(1);
        let offset = self.words.len() as u64;
        let end = offset + length;
        if end > self.limit_words || end > u32::MAX as u64 {
            return Err(IsaError::ImageOverflow {
                needed: end * 2,
                limit: self.limit_words * 2,
            });
        }
        self.words.resize(end as usize, 0);
        let provenance = value.and_then(|v| match self.prog.value(v).def {
            crate::lowering::Def::Op(o) => Some(self.prog.ops[o].provenance),
            _ => None,
        });
        self.layout.regions.push(Region {
            name,
            value,
            offset: offset as u32,
            length: length as u32,
            kind,
            provenance,
        });
        Ok(offset as u32)
    }

    fn dense(&mut self, name: String, value: Option<ValueId>, rows: usize, cols: usize, data: Option<&[f32]>) -> Result<u32, IsaError> {
        let off = self.alloc(name, value, RegionKind::Dense { rows, cols }, (rows * cols) as u64)?;
        if let Some(d) = data {
            for (w, v) in self.words[off as usize..].iter_mut().zip(d) {
                *w = f16::from_f32(*v).to_bits();
            }
        }
        Ok(off)
    }

    fn coo(&mut self, name: String, value: Option<ValueId>, rows: usize, cols: usize, triples: &[Triple]) -> Result<u32, IsaError> {
        let kind = RegionKind::Coo {
            rows,
            cols,
            nnz: triples.len(),
        };
        let off = self.alloc(name, value, kind, triples.len() as u64 * COO_WORDS as u64)?;
        put_coo(&mut self.words, off as usize, triples);
        Ok(off)
    }

    /// Base address of a value in the requested form, allocating constant
    /// copies on first use.
    fn base(&mut self, id: ValueId, form: Form) -> Result<u32, IsaError> {
        if let Some(o) = self.forms.get(&(id, form)) {
            return Ok(*o);
        }
        let v = self.prog.value(id).clone();
        let off = match (self.prog.constants.get(&id), form) {
            (Some(Constant::Dense(t)), _) => self.dense(v.name.clone(), Some(id), v.rows, v.cols, Some(t.values()))?,
            (Some(Constant::Vector(x)), _) => self.dense(v.name.clone(), Some(id), x.len(), 1, Some(x))?,
            (Some(Constant::Sparse(s)), Form::Dense) => {
                self.dense(format!("{}.dense", v.name), Some(id), v.rows, v.cols, Some(s.to_dense().values()))?
            }
            (Some(Constant::Sparse(s)), Form::DenseT) => {
                let t = s.transpose().to_dense();
                self.dense(format!("{}.denseT", v.name), Some(id), v.cols, v.rows, Some(t.values()))?
            }
            (Some(Constant::Sparse(s)), Form::AsIs) => self.coo(v.name.clone(), Some(id), v.rows, v.cols, s.triples())?,
            (None, _) => return Err(IsaError::FieldRange(format!("%{id} has no storage"))),
        };
        self.forms.insert((id, form), off);
        Ok(off)
    }

    fn at(&mut self, id: ValueId, form: Form, r: usize, c: usize) -> Result<u32, IsaError> {
        let base = self.base(id, form)?;
        let v = self.prog.value(id);
        let cols = if form == Form::DenseT { v.rows } else { v.cols };
        Ok(base + (r * cols + c) as u32)
    }
}

fn u16_dim(x: usize) -> Result<u16, IsaError> {
    u16::try_from(x).map_err(|_| IsaError::FieldRange(format!("extent {x} exceeds 16 bits")))
}

struct OpTables {
    shuffle: Option<u16>,
    epilogue: Option<u16>,
    shift: Option<u16>,
    dm: Option<u16>,
}

fn tables_for(prog: &MatrixProgram, layout: &mut Layout) -> Vec<OpTables> {
    prog.ops
        .iter()
        .map(|op| {
            let mut t = OpTables {
                shuffle: None,
                epilogue: None,
                shift: None,
                dm: None,
            };
            let simple = matches!(op.epilogue.as_slice(), [] | [EpilogueOp::Relu] | [EpilogueOp::RowSoftmax]);
            if !simple {
                layout.epilogues.push(op.epilogue.clone());
                t.epilogue = Some((layout.epilogues.len() - 1) as u16);
            }
            let scores = matches!(prog.value(op.out).storage, Storage::Scores { .. });
            if let (Some(p), false) = (&op.output_shuffle, scores) {
                layout.shuffles.push(p.clone());
                t.shuffle = Some((layout.shuffles.len() - 1) as u16);
            }
            match &op.kind {
                OpKind::Add { shifts, .. } if shifts.iter().any(Option::is_some) => {
                    layout.shifts.push(*shifts);
                    t.shift = Some((layout.shifts.len() - 1) as u16);
                }
                OpKind::Transpose { input, dm, in_hw } => {
                    let v = prog.value(*input);
                    layout.dm.push(DmEntry {
                        dm: dm.clone(),
                        in_hw: *in_hw,
                        rows: v.rows,
                        cols: v.cols,
                    });
                    t.dm = Some((layout.dm.len() - 1) as u16);
                }
                _ => {}
            }
            t
        })
        .collect()
}

fn compute_instr(img: &mut Image<'_>, t: &TileTask, tab: &OpTables, n: usize) -> Result<Instruction, IsaError> {
    let prog = img.prog;
    let op = &prog.ops[t.op];
    let opcode = match t.primitive {
        Primitive::Ddmm => Opcode::Ddmm,
        Primitive::Spdmm => Opcode::Spdmm,
        Primitive::Sddmm => Opcode::Sddmm,
        Primitive::Psvm => Opcode::Psvm,
        Primitive::Pvva => Opcode::Pvva,
        Primitive::DmTransform => Opcode::DmTransform,
    };
    let mut i = Instruction::new(opcode);
    i.dims = [u16_dim(t.t1)?, u16_dim(t.t2)?, u16_dim(t.t3)?];
    i.nnz = t.nnz as u32;
    if t.accumulate {
        i.flags |= flags::ACCUMULATE;
    }
    if !t.last_k {
        i.flags |= flags::PARTIAL;
    }
    if t.last_k {
        for e in &op.epilogue {
            i.flags |= match e {
                EpilogueOp::Relu => flags::RELU,
                EpilogueOp::NormAffine { .. } => flags::NORM,
                EpilogueOp::RowSoftmax => flags::SOFTMAX,
            };
        }
        if let Some(id) = tab.epilogue {
            i.flags |= flags::NORM;
            i.norm_id = id;
        }
        if let Some(id) = tab.shuffle {
            i.flags |= flags::SHUFFLE;
            i.shuffle_id = id;
        }
    }
    let block = |img: &mut Image<'_>, adj: ValueId| -> Result<u32, IsaError> {
        let SparseSlice::Block(tr) = &t.sparse else {
            return Err(IsaError::FieldRange(format!("op{} SpDMM tile has no block", t.op)));
        };
        let (rows, cols) = (prog.value(adj).rows, prog.value(adj).cols);
        let name = format!("{}.blk{n}", prog.value(adj).name);
        img.coo(name, None, rows, cols, tr)
    };
    let out = op.out;
    match (&op.kind, t.primitive) {
        (OpKind::MatMul { lhs, rhs, .. }, Primitive::Ddmm) => {
            i.addr_a = img.at(*lhs, Form::AsIs, t.row0, t.k0)?;
            i.addr_b = img.at(*rhs, Form::AsIs, t.k0, t.col0)?;
        }
        (OpKind::MatMul { lhs, rhs, .. }, _) => {
            if t.transposed {
                i.flags |= flags::TRANSPOSE;
                i.addr_a = block(img, *rhs)?;
                i.addr_b = img.at(*lhs, Form::AsIs, t.row0, t.k0)?;
            } else {
                i.addr_a = block(img, *lhs)?;
                i.addr_b = img.at(*rhs, Form::AsIs, t.k0, t.col0)?;
            }
        }
        (
            OpKind::SparseMatMul {
                adj,
                rhs,
                reduction,
                transposed,
            },
            prim,
        ) => {
            if *reduction == Reduction::Max {
                i.flags |= flags::MAX_REDUCE;
            }
            let runtime = !prog.constants.contains_key(adj);
            match (prim, *transposed) {
                (Primitive::Ddmm, false) => {
                    i.addr_a = img.at(*adj, Form::Dense, t.row0, t.k0)?;
                    i.addr_b = img.at(*rhs, Form::AsIs, t.k0, t.col0)?;
                }
                (Primitive::Ddmm, true) => {
                    i.addr_a = img.at(*rhs, Form::AsIs, t.row0, t.k0)?;
                    i.addr_b = img.at(*adj, Form::DenseT, t.k0, t.col0)?;
                }
                (_, tr) => {
                    i.addr_a = match (&t.sparse, runtime) {
                        (SparseSlice::Rows(r), true) => img.base(*adj, Form::AsIs)? + r.start as u32 * COO_WORDS,
                        _ => block(img, *adj)?,
                    };
                    if tr {
                        i.flags |= flags::TRANSPOSE;
                        i.addr_b = img.at(*rhs, Form::AsIs, t.row0, t.k0)?;
                    } else {
                        i.addr_b = img.at(*rhs, Form::AsIs, t.k0, t.col0)?;
                    }
                }
            }
        }
        (OpKind::SampledMatMul { lhs, rhs, .. }, _) => {
            let SparseSlice::Rows(r) = &t.sparse else {
                return Err(IsaError::FieldRange(format!("op{} SDDMM tile has no row range", t.op)));
            };
            i.addr_a = img.at(*lhs, Form::AsIs, t.row0, t.k0)?;
            i.addr_b = img.at(*rhs, Form::AsIs, 0, t.k0)?;
            i.addr_z = img.base(out, Form::AsIs)? + r.start as u32 * COO_WORDS;
            return Ok(i);
        }
        (OpKind::ScaleRows { scale, rhs }, _) => {
            i.addr_a = img.at(*scale, Form::AsIs, t.row0, 0)?;
            i.addr_b = img.at(*rhs, Form::AsIs, t.row0, t.col0)?;
        }
        (OpKind::Add { lhs, rhs, .. }, _) => {
            i.addr_a = img.at(*lhs, Form::AsIs, t.row0, t.col0)?;
            i.addr_b = img.at(*rhs, Form::AsIs, t.row0, t.col0)?;
            if let Some(id) = tab.shift {
                i.flags |= flags::SHUFFLE;
                i.shuffle_id = id;
            }
        }
        (OpKind::Transpose { input, .. }, _) => {
            i.dims = [0; 3];
            i.addr_a = img.base(*input, Form::AsIs)?;
            i.addr_z = img.base(out, Form::AsIs)?;
            i.flags = flags::SHUFFLE;
            i.shuffle_id = tab.dm.expect("transpose has a descriptor");
            return Ok(i);
        }
    }
    i.addr_z = img.at(out, Form::AsIs, t.row0, t.col0)?;
    Ok(i)
}

/// Covered word ranges, merged.
#[derive(Default)]
struct Resident(BTreeMap<u32, u32>);

impl Resident {
    fn covers(&self, (s, e): (u32, u32)) -> bool {
        let mut at = s;
        while at < e {
            match self.0.range(..=at).next_back() {
                Some((_, &end)) if end > at => at = end,
                _ => return false,
            }
        }
        true
    }

    fn insert(&mut self, (mut s, mut e): (u32, u32)) {
        let overlapping: Vec<(u32, u32)> = self
            .0
            .range(..=e)
            .filter(|(_, &end)| end >= s)
            .map(|(a, b)| (*a, *b))
            .collect();
        for (a, b) in overlapping {
            self.0.remove(&a);
            s = s.min(a);
            e = e.max(b);
        }
        self.0.insert(s, e);
    }
}

fn mem_instr(op: Opcode, r: Rect) -> Result<Instruction, IsaError> {
    Ok(Instruction::mem(op, r.start, r.stride, r.row_words, u16_dim(r.rows as usize)?))
}

/// Rects a finished tile writes back, one per run of contiguous
/// destination rows.
fn write_back(img: &mut Image<'_>, t: &TileTask, i: &Instruction) -> Result<Vec<Rect>, IsaError> {
    let prog = img.prog;
    let op = &prog.ops[t.op];
    let v = prog.value(op.out);
    if let Storage::Scores { .. } = v.storage {
        return Ok(vec![Rect::contiguous(i.addr_z, i.nnz * COO_WORDS)]);
    }
    let base = img.base(op.out, Form::AsIs)?;
    let cols = v.cols as u32;
    if let OpKind::Transpose { .. } = op.kind {
        if op.streamed {
            return Ok(Vec::new());
        }
        return Ok(vec![Rect::contiguous(base, (v.rows * v.cols) as u32)]);
    }
    let rows: Vec<u32> = match &op.output_shuffle {
        Some(p) => (t.row0..t.row0 + t.t1).map(|r| p[r] as u32).collect(),
        None => (t.row0 as u32..(t.row0 + t.t1) as u32).collect(),
    };
    let mut out = Vec::new();
    let mut n = 0;
    while n < rows.len() {
        let mut m = n + 1;
        while m < rows.len() && rows[m] == rows[m - 1] + 1 {
            m += 1;
        }
        out.push(Rect {
            start: base + rows[n] * cols + t.col0 as u32,
            stride: cols,
            row_words: t.t3 as u32,
            rows: (m - n) as u32,
        });
        n = m;
    }
    Ok(out)
}

/// Lays out every value in the external-memory image and emits the
/// instruction stream, stage by stage.
pub fn emit(tp: &TiledProgram, arch: &ArchConfig) -> Result<Module, IsaError> {
    let prog = &tp.program;
    let mut img = Image {
        words: Vec::new(),
        layout: Layout::default(),
        limit_words: arch.external_memory_bytes / 2,
        forms: BTreeMap::new(),
        prog,
    };
    for (name, id, t) in &prog.inputs {
        let v = prog.value(*id);
        let off = img.dense(name.clone(), Some(*id), v.rows, v.cols, Some(t.values()))?;
        img.forms.insert((*id, Form::AsIs), off);
    }
    for op in &prog.ops {
        let v = prog.value(op.out).clone();
        let off = match v.storage {
            Storage::Dense => img.dense(v.name.clone(), Some(op.out), v.rows, v.cols, None)?,
            Storage::Scores { pattern } => {
                let Some(Constant::Sparse(p)) = prog.constants.get(&pattern) else {
                    return Err(IsaError::FieldRange(format!("%{} pattern is not sparse", op.out)));
                };
                let zeroed: Vec<Triple> = p.triples().iter().map(|t| Triple::new(t.src, t.dst, 0.0)).collect();
                img.coo(v.name.clone(), Some(op.out), p.n_rows(), p.n_cols(), &zeroed)?
            }
        };
        img.forms.insert((op.out, Form::AsIs), off);
    }
    let tables = tables_for(prog, &mut img.layout);

    let mut stream = Vec::new();
    let mut n = 0usize;
    for stage in &tp.stages {
        let mut dm_instrs = Vec::new();
        let mut computes = Vec::new();
        let mut writes = Vec::new();
        for t in &stage.tasks {
            let i = compute_instr(&mut img, t, &tables[t.op], n)?;
            n += 1;
            if t.last_k {
                for r in write_back(&mut img, t, &i)? {
                    if !r.is_empty() {
                        writes.push(mem_instr(Opcode::MemWrite, r)?);
                    }
                }
            }
            if i.opcode == Opcode::DmTransform {
                dm_instrs.push((i, prog.ops[t.op].streamed, t.op));
            } else {
                computes.push(i);
            }
        }
        let mut resident = Resident::default();
        // streamed transforms land in the buffers, not in memory
        for (i, streamed, op) in &dm_instrs {
            if *streamed {
                let v = prog.value(prog.ops[*op].out);
                resident.insert((i.addr_z, i.addr_z + (v.rows * v.cols) as u32));
            }
        }
        let mut reads = Vec::new();
        let mut seen = BTreeSet::new();
        for i in dm_instrs.iter().map(|d| &d.0).chain(computes.iter()) {
            for r in img.layout.operand_footprint(i)? {
                let ranges = r.ranges();
                if ranges.iter().all(|x| resident.covers(*x)) || !seen.insert(r) {
                    continue;
                }
                ranges.into_iter().for_each(|x| resident.insert(x));
                reads.push(mem_instr(Opcode::MemRead, r)?);
            }
        }
        stream.extend(reads);
        stream.extend(dm_instrs.iter().map(|d| d.0));
        stream.extend(computes);
        stream.extend(writes);
        stream.push(Instruction::barrier());
        let mut names: Vec<&str> = Vec::new();
        for &o in &stage.ops {
            let l = prog.ops[o].layer.as_str();
            if !names.contains(&l) {
                names.push(l);
            }
        }
        img.layout.stages.push(names.join(","));
    }
    for (layer, id, shape) in &prog.outputs {
        let off = img.base(*id, Form::AsIs)?;
        img.layout.outputs.push(OutputEntry {
            layer: layer.clone(),
            value: *id,
            region: img.layout.region_index(off)?,
            dims: shape.dims(),
        });
    }
    img.layout.image_words = img.words.len() as u64;
    let image = img.words.iter().flat_map(|w| w.to_le_bytes()).collect();
    Ok(Module {
        instructions: stream,
        image,
        layout: img.layout,
    })
}
