//! Model intermediate representation: tensors, COO sparse matrices, typed
//! layers and the computation graph, plus the on-disk formats that feed it.

mod binfmt;
mod format;
mod graph;
mod layer;
mod sparse;
mod tensor;

pub use binfmt::{
    parse_edge_list, read_tensor_file, read_tensor_bytes, tensor_to_bytes, write_edge_list,
    write_tensor_file, TENSOR_MAGIC,
};
pub use format::{parse_model, parse_model_str, serialize_model, TensorSource};
pub use graph::{
    apply_dm, conv_out_hw, is_permutation, output_shape, referenced_data, tensor_shape,
    ComputationGraph, Edge, Violation,
};
pub use layer::{
    ActivationKind, ConvParams, DmMode, DmSpec, FusedOp, Layer, LayerOp, LayoutHint, PoolKind,
    Reduction, Shape,
};
pub use sparse::{coo_from_dense, SparseMatrix, Triple};
pub use tensor::{Tensor, MAX_RANK};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IrError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("layer {layer}: unknown layer kind `{kind}`")]
    UnknownKind { layer: String, kind: String },
    #[error("layer {layer}: bad parameters: {message}")]
    BadParam { layer: String, message: String },
    #[error("shape mismatch between {producer} and {consumer}: {detail}")]
    ShapeMismatch {
        producer: String,
        consumer: String,
        detail: String,
    },
    #[error("layer {layer} references unknown `{name}`")]
    Dangling { layer: String, name: String },
    #[error("invalid graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("invalid tensor dims {0:?}")]
    BadDims(Vec<usize>),
    #[error("tensor dims {dims:?} do not match {len} values")]
    TensorLength { dims: Vec<usize>, len: usize },
    #[error("expected a 2-D tensor, got dims {0:?}")]
    NotMatrix(Vec<usize>),
    #[error("triple (src={src}, dst={dst}) outside {n_rows}x{n_cols}")]
    TripleOutOfRange {
        src: u32,
        dst: u32,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("duplicate triple at (src={src}, dst={dst})")]
    DuplicateTriple { src: u32, dst: u32 },
    #[error("tensor file: {0}")]
    TensorFormat(String),
    #[error("edge list line {line}: {message}")]
    EdgeList { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl IrError {
    /// Condenses validation output into the most specific error.
    pub fn from_violations(v: Vec<Violation>) -> Self {
        for item in &v {
            match item {
                Violation::Shape {
                    producer,
                    consumer,
                    detail,
                } => {
                    return IrError::ShapeMismatch {
                        producer: producer.clone(),
                        consumer: consumer.clone(),
                        detail: detail.clone(),
                    }
                }
                Violation::Dangling { layer, name } => {
                    return IrError::Dangling {
                        layer: layer.clone(),
                        name: name.clone(),
                    }
                }
                _ => {}
            }
        }
        IrError::Invalid(v)
    }

    pub fn is_io(&self) -> bool {
        matches!(self, IrError::Io { .. })
    }
}
