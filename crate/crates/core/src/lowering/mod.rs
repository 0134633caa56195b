//! Graph optimisation passes and lowering of layers to matrix operations.

mod epilogue;
mod interp;
mod lower;
mod passes;

pub use epilogue::{apply_dm_transform, apply_epilogue, shifted_add};
pub use interp::{interpret, Values};
pub use lower::{lower_conv, lower_graph, lower_linear, lower_mp, lower_pool, lower_vip};
pub use passes::{fuse_layers, fuse_layers_with_report, insert_dm_layers, FusionReport};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{DmSpec, IrError, Reduction, Shape, SparseMatrix, Tensor};
use crate::primitives::PrimitiveError;

pub type ValueId = usize;

#[derive(Debug, Error)]
pub enum LowerError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Primitive(#[from] PrimitiveError),
    #[error("layer {layer}: {message}")]
    Layer { layer: String, message: String },
    #[error("no DM mode reconciles {producer} {from} with {consumer}: {detail}")]
    NoDmMode {
        producer: String,
        consumer: String,
        from: Shape,
        detail: String,
    },
    #[error("program: {0}")]
    Program(String),
}

/// Which portion of the model an op is accounted to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Cnn,
    Gnn,
    Dm,
    Other,
}

impl Provenance {
    pub const ALL: [Provenance; 4] = [Provenance::Cnn, Provenance::Gnn, Provenance::Dm, Provenance::Other];

    pub fn label(self) -> &'static str {
        match self {
            Provenance::Cnn => "CNN",
            Provenance::Gnn => "GNN",
            Provenance::Dm => "DM",
            Provenance::Other => "Other",
        }
    }
}

/// Normalisation axis: rows of a feature map are channels, columns of a
/// node-feature matrix are features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Row,
    Col,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EpilogueOp {
    Relu,
    NormAffine {
        scale: Vec<f32>,
        shift: Vec<f32>,
        axis: Axis,
    },
    /// Softmax over the scores that share a destination vertex.
    RowSoftmax,
}

impl EpilogueOp {
    fn short(&self) -> &'static str {
        match self {
            EpilogueOp::Relu => "relu",
            EpilogueOp::NormAffine { .. } => "norm",
            EpilogueOp::RowSoftmax => "softmax",
        }
    }
}

/// Spatially shifted view of a `C x (src_h*src_w)` operand read into a
/// `C x (dst_h*dst_w)` result: `out[y][x] = in[y+dr][x+dc]`, zero when the
/// source position falls outside the map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shift {
    pub src_h: usize,
    pub src_w: usize,
    pub dst_h: usize,
    pub dst_w: usize,
    pub dr: isize,
    pub dc: isize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OpKind {
    /// Dense product `lhs (s1 x s2) * rhs (s2 x s3)`.
    MatMul {
        lhs: ValueId,
        rhs: ValueId,
        dims: (usize, usize, usize),
        /// Density of the constant weight operand.
        lhs_sparsity_hint: f64,
    },
    /// `Z = A * H` or, when `transposed`, `Z = H * Aᵀ`.
    SparseMatMul {
        adj: ValueId,
        rhs: ValueId,
        reduction: Reduction,
        transposed: bool,
    },
    /// Scores on `pattern` from rows of `lhs` and rows of `rhs`.
    SampledMatMul {
        pattern: ValueId,
        lhs: ValueId,
        rhs: ValueId,
    },
    ScaleRows {
        scale: ValueId,
        rhs: ValueId,
    },
    Add {
        lhs: ValueId,
        rhs: ValueId,
        shifts: [Option<Shift>; 2],
    },
    /// Layout transformation executed by the data manipulation module.
    Transpose {
        input: ValueId,
        dm: DmSpec,
        in_hw: Option<(usize, usize)>,
    },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul { .. } => "MatMul",
            OpKind::SparseMatMul { .. } => "SparseMatMul",
            OpKind::SampledMatMul { .. } => "SampledMatMul",
            OpKind::ScaleRows { .. } => "ScaleRows",
            OpKind::Add { .. } => "Add",
            OpKind::Transpose { .. } => "Transpose",
        }
    }

    pub fn operands(&self) -> Vec<ValueId> {
        match self {
            OpKind::MatMul { lhs, rhs, .. } => vec![*lhs, *rhs],
            OpKind::SparseMatMul { adj, rhs, .. } => vec![*adj, *rhs],
            OpKind::SampledMatMul { pattern, lhs, rhs } => vec![*pattern, *lhs, *rhs],
            OpKind::ScaleRows { scale, rhs } => vec![*scale, *rhs],
            OpKind::Add { lhs, rhs, .. } => vec![*lhs, *rhs],
            OpKind::Transpose { input, .. } => vec![*input],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixOp {
    pub kind: OpKind,
    pub out: ValueId,
    pub epilogue: Vec<EpilogueOp>,
    pub output_shuffle: Option<Vec<usize>>,
    pub provenance: Provenance,
    /// Source layer id.
    pub layer: String,
    /// DM op that streams into its consumer instead of running standalone.
    pub streamed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Storage {
    Dense,
    /// Values laid out on the triples of the constant `pattern`.
    Scores { pattern: ValueId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Constant {
    Dense(Tensor),
    Sparse(SparseMatrix),
    Vector(Vec<f32>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Def {
    Input,
    Const,
    Op(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub storage: Storage,
    pub def: Def,
}

/// Lowered program in SSA form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixProgram {
    pub values: Vec<ValueInfo>,
    pub constants: BTreeMap<ValueId, Constant>,
    /// Model inputs as `(tensor id, value, data)`.
    pub inputs: Vec<(String, ValueId, Tensor)>,
    pub ops: Vec<MatrixOp>,
    /// Graph outputs as `(layer id, value, logical shape)`.
    pub outputs: Vec<(String, ValueId, Shape)>,
}

impl MatrixProgram {
    pub fn value(&self, id: ValueId) -> &ValueInfo {
        &self.values[id]
    }

    pub fn add_value(&mut self, name: String, rows: usize, cols: usize, storage: Storage, def: Def) -> ValueId {
        self.values.push(ValueInfo {
            name,
            rows,
            cols,
            storage,
            def,
        });
        self.values.len() - 1
    }

    pub fn add_constant(&mut self, name: String, c: Constant) -> ValueId {
        let (rows, cols) = match &c {
            Constant::Dense(t) => t.matrix_dims().expect("dense constant is a matrix"),
            Constant::Sparse(s) => (s.n_rows(), s.n_cols()),
            Constant::Vector(v) => (v.len(), 1),
        };
        let id = self.add_value(name, rows, cols, Storage::Dense, Def::Const);
        self.constants.insert(id, c);
        id
    }

    /// Appends an op and its fresh output value.
    pub fn push_op(
        &mut self,
        kind: OpKind,
        out_name: String,
        rows: usize,
        cols: usize,
        storage: Storage,
        provenance: Provenance,
        layer: &str,
    ) -> ValueId {
        let out = self.add_value(out_name, rows, cols, storage, Def::Op(self.ops.len()));
        self.ops.push(MatrixOp {
            kind,
            out,
            epilogue: Vec::new(),
            output_shuffle: None,
            provenance,
            layer: layer.to_string(),
            streamed: false,
        });
        out
    }

    /// Number of ops tagged as data manipulation.
    pub fn dm_op_count(&self) -> usize {
        self.ops.iter().filter(|o| o.provenance == Provenance::Dm).count()
    }

    /// Every operand defined before use, one definition per value.
    pub fn check_ssa(&self) -> Result<(), LowerError> {
        let mut defined = vec![false; self.values.len()];
        for (id, v) in self.values.iter().enumerate() {
            match v.def {
                Def::Input => {
                    if !self.inputs.iter().any(|(_, i, _)| *i == id) {
                        return Err(LowerError::Program(format!("input %{id} has no data")));
                    }
                    defined[id] = true;
                }
                Def::Const => {
                    if !self.constants.contains_key(&id) {
                        return Err(LowerError::Program(format!("constant %{id} has no data")));
                    }
                    defined[id] = true;
                }
                Def::Op(_) => {}
            }
        }
        for (i, op) in self.ops.iter().enumerate() {
            for operand in op.kind.operands() {
                if !defined.get(operand).copied().unwrap_or(false) {
                    return Err(LowerError::Program(format!("op {i} uses %{operand} before definition")));
                }
            }
            if defined[op.out] || self.values[op.out].def != Def::Op(i) {
                return Err(LowerError::Program(format!("%{} defined more than once", op.out)));
            }
            defined[op.out] = true;
        }
        Ok(())
    }

    /// Textual dump, one op per line.
    pub fn dump(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MatrixProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, id, _) in &self.inputs {
            let v = &self.values[*id];
            writeln!(f, "input %{id} = {name} [{}x{}]", v.rows, v.cols)?;
        }
        for (id, c) in &self.constants {
            let v = &self.values[*id];
            let what = match c {
                Constant::Dense(_) => "dense".to_string(),
                Constant::Sparse(s) => format!("coo nnz={}", s.nnz()),
                Constant::Vector(_) => "vector".to_string(),
            };
            writeln!(f, "const %{id} = {} [{}x{}] {what}", v.name, v.rows, v.cols)?;
        }
        for (i, op) in self.ops.iter().enumerate() {
            let v = &self.values[op.out];
            let operands: Vec<String> = op.kind.operands().iter().map(|o| format!("%{o}")).collect();
            write!(
                f,
                "op{i} %{} = {}({}) [{}x{}] prov={} layer={}",
                op.out,
                op.kind.name(),
                operands.join(", "),
                v.rows,
                v.cols,
                op.provenance.label(),
                op.layer
            )?;
            match &op.kind {
                OpKind::MatMul { dims, .. } => write!(f, " dims={}x{}x{}", dims.0, dims.1, dims.2)?,
                OpKind::SparseMatMul {
                    reduction,
                    transposed,
                    ..
                } => write!(f, " reduce={reduction:?}{}", if *transposed { " transposed" } else { "" })?,
                OpKind::Add { shifts, .. } => {
                    for (side, s) in ["l", "r"].iter().zip(shifts) {
                        if let Some(s) = s {
                            write!(f, " shift_{side}=({},{})", s.dr, s.dc)?;
                        }
                    }
                }
                OpKind::Transpose { dm, .. } => write!(f, " mode={:?}", dm.mode)?,
                _ => {}
            }
            if !op.epilogue.is_empty() {
                let e: Vec<&str> = op.epilogue.iter().map(|e| e.short()).collect();
                write!(f, " epilogue=[{}]", e.join(","))?;
            }
            if op.output_shuffle.is_some() {
                write!(f, " shuffle")?;
            }
            if op.streamed {
                write!(f, " streamed")?;
            }
            writeln!(f)?;
        }
        for (layer, id, shape) in &self.outputs {
            writeln!(f, "output {layer} = %{id} {shape}")?;
        }
        Ok(())
    }
}
