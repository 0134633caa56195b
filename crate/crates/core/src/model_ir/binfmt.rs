use std::path::Path;

use half::f16;

use super::{IrError, SparseMatrix, Tensor, Triple, MAX_RANK};

pub const TENSOR_MAGIC: &[u8; 4] = b"GCVT";
const TENSOR_VERSION: u8 = 1;
const HEADER_LEN: usize = 12;

/// `GCVT`, version, rank, 6 pad bytes, rank x u64 dims, binary16 payload.
pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.rank() + 2 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(t.rank() as u8);
    out.extend_from_slice(&[0u8; 6]);
    for d in t.dims() {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&f16::from_f32(*v).to_le_bytes());
    }
    out
}

pub fn read_tensor_bytes(bytes: &[u8]) -> Result<Tensor, IrError> {
    let bad = |m: &str| IrError::TensorFormat(m.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("missing GCVT magic"));
    }
    if bytes[4] != TENSOR_VERSION {
        return Err(IrError::TensorFormat(format!("unsupported version {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(IrError::TensorFormat(format!("bad rank {rank}")));
    }
    if bytes[6..12].iter().any(|b| *b != 0) {
        return Err(bad("non-zero header padding"));
    }
    let dims_end = HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(bad("truncated dims"));
    }
    let dims: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| bad("dims overflow"))?;
    let payload = &bytes[dims_end..];
    if payload.len() != 2 * n {
        return Err(IrError::TensorFormat(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            2 * n
        )));
    }
    let values = payload
        .chunks_exact(2)
        .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
        .collect();
    Tensor::new(dims, values)
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor, IrError> {
    let bytes = std::fs::read(path).map_err(|source| IrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_tensor_bytes(&bytes)
}

pub fn write_tensor_file(path: &Path, t: &Tensor) -> Result<(), IrError> {
    std::fs::write(path, tensor_to_bytes(t)).map_err(|source| IrError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses `src dst val` lines (`#` starts a comment) into an `n x n` matrix.
pub fn parse_edge_list(text: &str, n: usize) -> Result<SparseMatrix, IrError> {
    let mut triples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| IrError::EdgeList {
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, got {}", fields.len())));
        }
        let src: u32 = fields[0].parse().map_err(|e| err(format!("src: {e}")))?;
        let dst: u32 = fields[1].parse().map_err(|e| err(format!("dst: {e}")))?;
        let val: f32 = fields[2].parse().map_err(|e| err(format!("val: {e}")))?;
        triples.push(Triple::new(src, dst, val));
    }
    SparseMatrix::new(n, n, triples)
}

pub fn write_edge_list(m: &SparseMatrix) -> String {
    let mut out = format!("# {} vertices, {} edges\n", m.n_rows(), m.nnz());
    for t in m.triples() {
        out.push_str(&format!("{} {} {}\n", t.src, t.dst, t.val));
    }
    out
}
