//! Buffer-sized tiling of matrix ops and per-tile primitive selection.

mod tiling;

pub use tiling::{search_tiles, TileRules, TileShape};

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::arch::{ArchConfig, ArchError};
use crate::lowering::{Constant, MatrixOp, MatrixProgram, OpKind, Provenance, Storage, ValueId};
use crate::model_ir::{coo_from_dense, Reduction, SparseMatrix, Triple};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("op{op}: no tile fits the buffers ({detail})")]
    ArchTooSmall { op: usize, detail: String },
    #[error("op{op}: extent {extent} does not fit a 16-bit tile dimension")]
    ExtentTooLarge { op: usize, extent: usize },
    #[error("op{op}: {detail}")]
    Unsupported { op: usize, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Primitive {
    Ddmm,
    Spdmm,
    Sddmm,
    Psvm,
    Pvva,
    DmTransform,
}

impl Primitive {
    pub fn label(self) -> &'static str {
        match self {
            Primitive::Ddmm => "DDMM",
            Primitive::Spdmm => "SpDMM",
            Primitive::Sddmm => "SDDMM",
            Primitive::Psvm => "PSVM",
            Primitive::Pvva => "PVVA",
            Primitive::DmTransform => "DM",
        }
    }
}

/// Which primitives a tile may map to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mapping {
    /// DDMM or SpDMM, whichever the cost model prefers.
    Selectable,
    SparseOnly,
    DenseOnly,
    Sampled,
    RowScale,
    VectorAdd,
    Layout,
}

/// Non-zeros a tile reads.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SparseSlice {
    None,
    /// Triples of a constant operand, global indices, `(dst, src)` order.
    Block(Vec<Triple>),
    /// Index range into a runtime value's pattern.
    Rows(Range<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TileTask {
    pub op: usize,
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub row0: usize,
    pub k0: usize,
    pub col0: usize,
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
    pub mapping: Mapping,
    pub primitive: Primitive,
    /// Sparse operand indexed `(dst, src)` = `(output column, k)`.
    pub transposed: bool,
    /// Adds into the output tile written by the previous `k`.
    pub accumulate: bool,
    /// Final `k` tile: the epilogue and write-back happen here.
    pub last_k: bool,
    pub nnz: usize,
    pub cycles: u64,
    /// Cost of the primitive not chosen, when there was a choice.
    pub alternative_cycles: Option<u64>,
    pub provenance: Provenance,
    pub sparse: SparseSlice,
}

/// Ops whose tasks are mutually independent apart from accumulate chains.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stage {
    pub ops: Vec<usize>,
    pub tasks: Vec<TileTask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiledProgram {
    pub program: MatrixProgram,
    pub stages: Vec<Stage>,
    pub shapes: Vec<TileShape>,
}

impl TiledProgram {
    pub fn task_count(&self) -> usize {
        self.stages.iter().map(|s| s.tasks.len()).sum()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TileTask> {
        self.stages.iter().flat_map(|s| s.tasks.iter())
    }

    /// One line per task.
    pub fn dump(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TiledProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (si, stage) in self.stages.iter().enumerate() {
            for t in &stage.tasks {
                write!(
                    f,
                    "s{si} op{} ({},{},{}) @({},{},{}) {}x{}x{} {} nnz={} cycles={}",
                    t.op, t.i, t.j, t.k, t.row0, t.k0, t.col0, t.t1, t.t2, t.t3,
                    t.primitive.label(), t.nnz, t.cycles
                )?;
                if let Some(a) = t.alternative_cycles {
                    write!(f, " alt={a}")?;
                }
                if t.transposed {
                    write!(f, " T")?;
                }
                if t.accumulate {
                    write!(f, " acc")?;
                }
                if t.last_k {
                    write!(f, " last")?;
                }
                writeln!(f, " {}", t.provenance.label())?;
            }
        }
        Ok(())
    }
}

/// Sets the primitive, its cycles and the alternative from the tile's
/// mapping, extents and non-zero count. Ties go to DDMM.
pub fn select_primitive(mut t: TileTask, arch: &ArchConfig) -> TileTask {
    let cm = arch.cost_model();
    let (t1, t2, t3, nnz) = (t.t1 as u64, t.t2 as u64, t.t3 as u64, t.nnz as u64);
    let sparse_n = if t.transposed { t1 } else { t3 };
    let dense = || cm.ddmm(t1, t2, t3).expect("non-empty tile");
    let sparse = || cm.spdmm(nnz, sparse_n).expect("non-empty tile");
    let (p, c, alt) = match t.mapping {
        Mapping::Selectable => {
            let (d, s) = (dense(), sparse());
            if s < d {
                (Primitive::Spdmm, s, Some(d))
            } else {
                (Primitive::Ddmm, d, Some(s))
            }
        }
        Mapping::SparseOnly => (Primitive::Spdmm, sparse(), None),
        Mapping::DenseOnly => (Primitive::Ddmm, dense(), None),
        Mapping::Sampled => (Primitive::Sddmm, cm.sddmm(nnz, t2).expect("non-empty tile"), None),
        Mapping::RowScale => (Primitive::Psvm, cm.psvm_pvva(t1, t3).expect("non-empty tile"), None),
        Mapping::VectorAdd => (Primitive::Pvva, cm.psvm_pvva(t1, t3).expect("non-empty tile"), None),
        Mapping::Layout => (Primitive::DmTransform, cm.dm_transform(t1 * t3), None),
    };
    t.primitive = p;
    t.cycles = c;
    t.alternative_cycles = alt;
    if p != Primitive::Spdmm && matches!(t.sparse, SparseSlice::Block(_)) {
        t.sparse = SparseSlice::None;
    }
    t
}

/// Sparse view of an operand, indexed `(dst, src)`.
enum View<'a> {
    Constant(std::borrow::Cow<'a, SparseMatrix>),
    Runtime(&'a SparseMatrix),
    Dense,
}

struct OpPlan<'a> {
    dims: (usize, usize, usize),
    mapping: Mapping,
    transposed: bool,
    view: View<'a>,
    rules: TileRules,
}

const fn rules(full: [bool; 3], checks: [bool; 3], fine: [bool; 3]) -> TileRules {
    TileRules { full, checks, fine }
}

const MATRIX: TileRules = rules([false; 3], [true; 3], [false; 3]);

fn const_sparse(prog: &MatrixProgram, id: ValueId) -> Option<&SparseMatrix> {
    match prog.constants.get(&id) {
        Some(Constant::Sparse(s)) => Some(s),
        _ => None,
    }
}

fn classify<'a>(prog: &'a MatrixProgram, oi: usize, op: &MatrixOp) -> Result<OpPlan<'a>, PlanError> {
    let v = |id: ValueId| prog.value(id);
    let unsupported = |d: &str| PlanError::Unsupported {
        op: oi,
        detail: d.to_string(),
    };
    let dense_of = |id: ValueId| -> Option<SparseMatrix> {
        match prog.constants.get(&id)? {
            Constant::Dense(t) => coo_from_dense(t, 0.0).ok(),
            _ => None,
        }
    };
    let plan = match &op.kind {
        OpKind::MatMul { lhs, rhs, dims, .. } => {
            let base = |mapping, transposed, view| OpPlan {
                dims: *dims,
                mapping,
                transposed,
                view,
                rules: MATRIX,
            };
            if let Some(s) = dense_of(*lhs) {
                base(Mapping::Selectable, false, View::Constant(std::borrow::Cow::Owned(s)))
            } else if let Some(s) = dense_of(*rhs) {
                base(Mapping::Selectable, true, View::Constant(std::borrow::Cow::Owned(s.transpose())))
            } else {
                base(Mapping::DenseOnly, false, View::Dense)
            }
        }
        OpKind::SparseMatMul {
            adj,
            rhs,
            reduction,
            transposed,
        } => {
            let a = v(*adj);
            let dims = if *transposed {
                (v(*rhs).rows, a.cols, a.rows)
            } else {
                (a.rows, a.cols, v(*rhs).cols)
            };
            let forced = *reduction == Reduction::Max;
            if let Some(s) = const_sparse(prog, *adj) {
                OpPlan {
                    dims,
                    mapping: if forced { Mapping::SparseOnly } else { Mapping::Selectable },
                    transposed: *transposed,
                    view: View::Constant(std::borrow::Cow::Borrowed(s)),
                    rules: MATRIX,
                }
            } else if let Storage::Scores { pattern } = a.storage {
                if *transposed {
                    return Err(unsupported("runtime scores cannot be read transposed"));
                }
                let p = const_sparse(prog, pattern).ok_or_else(|| unsupported("score pattern is not constant"))?;
                OpPlan {
                    dims,
                    mapping: Mapping::SparseOnly,
                    transposed: false,
                    view: View::Runtime(p),
                    rules: rules([false, true, false], [false, true, true], [false; 3]),
                }
            } else {
                return Err(unsupported("adjacency is neither constant nor scores"));
            }
        }
        OpKind::SampledMatMul { pattern, lhs, .. } => {
            let p = const_sparse(prog, *pattern).ok_or_else(|| unsupported("sampling pattern is not constant"))?;
            let l = v(*lhs);
            OpPlan {
                dims: (l.rows, l.cols, p.n_cols()),
                mapping: Mapping::Sampled,
                transposed: false,
                view: View::Runtime(p),
                rules: rules([false, false, true], [true, true, false], [false; 3]),
            }
        }
        OpKind::ScaleRows { .. } | OpKind::Add { .. } => {
            let r = v(op.out);
            let (mapping, whole_rows) = match &op.kind {
                OpKind::Add { shifts, .. } => (Mapping::VectorAdd, shifts.iter().any(Option::is_some)),
                _ => (Mapping::RowScale, false),
            };
            OpPlan {
                dims: (r.rows, 1, r.cols),
                mapping,
                transposed: false,
                view: View::Dense,
                rules: rules([false, true, whole_rows], [true; 3], [true, false, false]),
            }
        }
        OpKind::Transpose { input, .. } => {
            let r = v(*input);
            OpPlan {
                dims: (r.rows, 1, r.cols),
                mapping: Mapping::Layout,
                transposed: false,
                view: View::Dense,
                rules: rules([true; 3], [false; 3], [false; 3]),
            }
        }
    };
    Ok(plan)
}

/// Tiles one op and selects each tile's primitive.
pub fn tile_matmul(prog: &MatrixProgram, oi: usize, arch: &ArchConfig) -> Result<(TileShape, Vec<TileTask>), PlanError> {
    arch.validate()?;
    let op = &prog.ops[oi];
    let plan = classify(prog, oi, op)?;
    let (s1, s2, s3) = plan.dims;
    if s1 == 0 || s2 == 0 || s3 == 0 {
        return Ok((TileShape { t1: 0, t2: 0, t3: 0 }, Vec::new()));
    }
    let shape = if plan.mapping == Mapping::Layout {
        TileShape { t1: s1, t2: 1, t3: s3 }
    } else {
        search_tiles(oi, plan.dims, arch, plan.rules)?
    };
    let (n1, n2, n3) = (s1.div_ceil(shape.t1), s2.div_ceil(shape.t2), s3.div_ceil(shape.t3));
    let mut tasks = Vec::with_capacity(n1 * n2 * n3);
    for i in 0..n1 {
        let row0 = i * shape.t1;
        let t1 = shape.t1.min(s1 - row0);
        for j in 0..n3 {
            let col0 = j * shape.t3;
            let t3 = shape.t3.min(s3 - col0);
            for k in 0..n2 {
                let k0 = k * shape.t2;
                let t2 = shape.t2.min(s2 - k0);
                let out_rows = if plan.transposed { col0..col0 + t3 } else { row0..row0 + t1 };
                let (nnz, sparse) = match &plan.view {
                    View::Constant(s) => {
                        let b = s.block(out_rows, k0..k0 + t2);
                        (b.len(), SparseSlice::Block(b))
                    }
                    View::Runtime(p) => {
                        let r = p.row_range(out_rows);
                        (r.len(), SparseSlice::Rows(r))
                    }
                    View::Dense => (0, SparseSlice::None),
                };
                let task = TileTask {
                    op: oi,
                    i,
                    j,
                    k,
                    row0,
                    k0,
                    col0,
                    t1,
                    t2,
                    t3,
                    mapping: plan.mapping,
                    primitive: Primitive::Ddmm,
                    transposed: plan.transposed,
                    accumulate: k > 0,
                    last_k: k + 1 == n2,
                    nnz,
                    cycles: 0,
                    alternative_cycles: None,
                    provenance: op.provenance,
                    sparse,
                };
                tasks.push(select_primitive(task, arch));
            }
        }
    }
    Ok((shape, tasks))
}

/// Groups ops into stages: an op joins the open stage unless it reads a
/// value computed there by a non-streamed op.
pub fn stage_ops(prog: &MatrixProgram) -> Vec<Vec<usize>> {
    let mut stages: Vec<Vec<usize>> = Vec::new();
    let mut in_stage: BTreeMap<ValueId, bool> = BTreeMap::new();
    for (oi, op) in prog.ops.iter().enumerate() {
        let blocked = op.kind.operands().iter().any(|v| in_stage.get(v) == Some(&false));
        if blocked || stages.is_empty() {
            stages.push(Vec::new());
            in_stage.clear();
        }
        stages.last_mut().expect("stage open").push(oi);
        in_stage.insert(op.out, op.streamed);
    }
    stages
}

/// Tiles and maps every op, stage by stage.
pub fn plan(prog: &MatrixProgram, arch: &ArchConfig) -> Result<TiledProgram, PlanError> {
    arch.validate()?;
    let mut shapes = Vec::with_capacity(prog.ops.len());
    let mut per_op = Vec::with_capacity(prog.ops.len());
    for oi in 0..prog.ops.len() {
        let (shape, tasks) = tile_matmul(prog, oi, arch)?;
        shapes.push(shape);
        per_op.push(tasks);
    }
    let stages = stage_ops(prog)
        .into_iter()
        .map(|ops| Stage {
            tasks: ops.iter().flat_map(|&o| std::mem::take(&mut per_op[o])).collect(),
            ops,
        })
        .collect();
    Ok(TiledProgram {
        program: prog.clone(),
        stages,
        shapes,
    })
}
