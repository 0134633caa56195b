//! The five computation primitives with a fixed fp16 numeric policy, and
//! their closed-form cycle costs.

mod cost;
mod fp16;
pub mod kernels;

pub use cost::CostModel;
pub use fp16::{fp16_ordinal_distance, fp16_round, fp16_round_f64, fp16_ulp, Fp16Policy};

use thiserror::Error;

use crate::model_ir::{is_permutation, Reduction, SparseMatrix, Tensor, Triple};
use kernels::{Accumulator, MatRef};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrimitiveError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("shuffle is not a permutation of 0..{0}")]
    BadPermutation(usize),
    #[error("triple (src={src}, dst={dst}) outside {rows}x{cols}")]
    TripleOutOfRange {
        src: u32,
        dst: u32,
        rows: usize,
        cols: usize,
    },
    #[error("extent must be at least 1")]
    ZeroExtent,
    #[error("array width p_ca={0} must be even and >= 2")]
    BadArrayWidth(u32),
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize), PrimitiveError> {
    t.matrix_dims()
        .map_err(|_| PrimitiveError::DimMismatch(format!("{what} is not a matrix: {:?}", t.dims())))
}

/// Writes output row `i` to position `shuffle[i]`.
pub fn apply_row_shuffle(
    values: Vec<f32>,
    rows: usize,
    cols: usize,
    shuffle: Option<&[usize]>,
) -> Result<Vec<f32>, PrimitiveError> {
    let Some(perm) = shuffle else {
        return Ok(values);
    };
    if !is_permutation(perm, rows) {
        return Err(PrimitiveError::BadPermutation(rows));
    }
    let mut out = vec![0.0; values.len()];
    for (i, &p) in perm.iter().enumerate() {
        out[p * cols..(p + 1) * cols].copy_from_slice(&values[i * cols..(i + 1) * cols]);
    }
    Ok(out)
}

fn matrix(rows: usize, cols: usize, values: Vec<f32>) -> Tensor {
    Tensor::new(vec![rows, cols], values).expect("kernel output has matching length")
}

/// Dense matrix product, fp16 output.
pub fn ddmm(x: &Tensor, y: &Tensor, shuffle: Option<&[usize]>) -> Result<Tensor, PrimitiveError> {
    let (s1, s2) = dims2(x, "X")?;
    let (s2y, s3) = dims2(y, "Y")?;
    if s2 != s2y {
        return Err(PrimitiveError::DimMismatch(format!("{s1}x{s2} * {s2y}x{s3}")));
    }
    let mut acc = Accumulator::new(s1, s3, Reduction::Sum);
    kernels::ddmm_acc(&mut acc, MatRef::new(x.values(), s1, s2), MatRef::new(y.values(), s2, s3));
    let out = apply_row_shuffle(acc.finish(), s1, s3, shuffle)?;
    Ok(matrix(s1, s3, out))
}

fn local_triples(x: &SparseMatrix) -> Vec<(usize, usize, f32)> {
    x.triples()
        .iter()
        .map(|t| (t.src as usize, t.dst as usize, t.val))
        .collect()
}

/// Scatter-gather sparse-dense product: `Z[dst] (+)= val * Y[src]`.
pub fn spdmm(
    x: &SparseMatrix,
    y: &Tensor,
    reduction: Reduction,
    shuffle: Option<&[usize]>,
) -> Result<Tensor, PrimitiveError> {
    let (s2, s3) = dims2(y, "Y")?;
    if x.n_cols() != s2 {
        return Err(PrimitiveError::DimMismatch(format!(
            "{}x{} * {s2}x{s3}",
            x.n_rows(),
            x.n_cols()
        )));
    }
    let s1 = x.n_rows();
    let mut acc = Accumulator::new(s1, s3, reduction);
    kernels::spdmm_acc(&mut acc, &local_triples(x), MatRef::new(y.values(), s2, s3));
    let out = apply_row_shuffle(acc.finish(), s1, s3, shuffle)?;
    Ok(matrix(s1, s3, out))
}

/// Dense times sparse, `Z = D * Xᵀ` where `X` holds `(src, dst, val)` with
/// `Z[:, dst] (+)= val * D[:, src]`. This is SpDMM applied to transposed
/// operands and is how selection matrices act on feature-map columns.
pub fn spdmm_columns(
    d: &Tensor,
    x: &SparseMatrix,
    reduction: Reduction,
) -> Result<Tensor, PrimitiveError> {
    let (r, c) = dims2(d, "D")?;
    if x.n_cols() != c {
        return Err(PrimitiveError::DimMismatch(format!(
            "{r}x{c} * ({}x{})ᵀ",
            x.n_rows(),
            x.n_cols()
        )));
    }
    let n = x.n_rows();
    let mut acc = Accumulator::new(r, n, reduction);
    kernels::spdmm_columns_acc(&mut acc, &local_triples(x), MatRef::new(d.values(), r, c));
    Ok(matrix(r, n, acc.finish()))
}

/// Sampled product: for each pattern entry `(src=j, dst=i)` the value
/// `<X[i], Y[:, j]>`. Pattern values are ignored.
pub fn sddmm(pattern: &SparseMatrix, x: &Tensor, y: &Tensor) -> Result<SparseMatrix, PrimitiveError> {
    let (s1, s2) = dims2(x, "X")?;
    let (s2y, s3) = dims2(y, "Y")?;
    if s2 != s2y || pattern.n_rows() != s1 || pattern.n_cols() != s3 {
        return Err(PrimitiveError::DimMismatch(format!(
            "pattern {}x{}, X {s1}x{s2}, Y {s2y}x{s3}",
            pattern.n_rows(),
            pattern.n_cols()
        )));
    }
    let mut yt = vec![0.0f32; s2 * s3];
    for k in 0..s2 {
        for j in 0..s3 {
            yt[j * s2 + k] = y.values()[k * s3 + j];
        }
    }
    let samples: Vec<(usize, usize)> = pattern
        .triples()
        .iter()
        .map(|t| (t.dst as usize, t.src as usize))
        .collect();
    let mut acc = vec![0.0f32; samples.len()];
    kernels::sddmm_acc(&mut acc, &samples, MatRef::new(x.values(), s1, s2), MatRef::new(&yt, s3, s2));
    let triples = pattern
        .triples()
        .iter()
        .zip(acc)
        .map(|(t, v)| Triple::new(t.src, t.dst, v))
        .collect();
    Ok(SparseMatrix::new(s1, s3, triples).expect("pattern already valid"))
}

/// Row scaling `Z[i][j] = a[i] * Y[i][j]`.
pub fn psvm(a: &[f32], y: &Tensor) -> Result<Tensor, PrimitiveError> {
    let (s1, s3) = dims2(y, "Y")?;
    if a.len() != s1 {
        return Err(PrimitiveError::DimMismatch(format!("{} scalars for {s1} rows", a.len())));
    }
    let out = y
        .values()
        .chunks(s3.max(1))
        .zip(a)
        .flat_map(|(row, s)| row.iter().map(move |v| fp16_round(s * v)))
        .collect();
    Ok(matrix(s1, s3, out))
}

/// Elementwise sum.
pub fn pvva(x: &Tensor, y: &Tensor) -> Result<Tensor, PrimitiveError> {
    if x.dims() != y.dims() {
        return Err(PrimitiveError::DimMismatch(format!("{:?} + {:?}", x.dims(), y.dims())));
    }
    let (s1, s3) = dims2(x, "X")?;
    let out = x
        .values()
        .iter()
        .zip(y.values())
        .map(|(a, b)| fp16_round(a + b))
        .collect();
    Ok(matrix(s1, s3, out))
}
