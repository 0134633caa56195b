use serde::{Deserialize, Serialize};

use super::IrError;
use crate::primitives::fp16_round;

/// Maximum tensor rank (N, C, H, W).
pub const MAX_RANK: usize = 4;

/// Dense row-major tensor whose values are all representable in binary16.
///
/// Values are held as `f32` for arithmetic convenience; every constructor
/// rounds through [`fp16_round`] so the storage contract is always fp16.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self, IrError> {
        check_dims(&dims)?;
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(IrError::TensorLength {
                dims,
                len: values.len(),
            });
        }
        let values = values.into_iter().map(fp16_round).collect();
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self, IrError> {
        check_dims(&dims)?;
        let n = dims.iter().product();
        Ok(Self {
            dims,
            values: vec![0.0; n],
        })
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged input, which
    /// only happens in hand-written test data.
    pub fn from_rows(rows: &[&[f32]]) -> Self {
        let n_cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), n_cols], values).expect("valid matrix")
    }

    pub fn identity(n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self {
            dims: vec![n, n],
            values,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize), IrError> {
        match self.dims.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(IrError::NotMatrix(self.dims.clone())),
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.dims[1] + c]
    }

    /// Same data under different dims (product must match).
    pub fn reshape(&self, dims: Vec<usize>) -> Result<Self, IrError> {
        check_dims(&dims)?;
        let n: usize = dims.iter().product();
        if n != self.values.len() {
            return Err(IrError::TensorLength {
                dims,
                len: self.values.len(),
            });
        }
        Ok(Self {
            dims,
            values: self.values.clone(),
        })
    }

    /// Fraction of non-zero entries.
    pub fn density(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let nnz = self.values.iter().filter(|v| **v != 0.0).count();
        nnz as f64 / self.values.len() as f64
    }
}

fn check_dims(dims: &[usize]) -> Result<(), IrError> {
    if dims.is_empty() || dims.len() > MAX_RANK || dims.contains(&0) {
        return Err(IrError::BadDims(dims.to_vec()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_are_rounded_to_half() {
        let t = Tensor::new(vec![2], vec![2049.0, 0.1]).unwrap();
        assert_eq!(t.values()[0], 2048.0);
        assert_eq!(t.values()[1], half::f16::from_f32(0.1).to_f32());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![1.0]).is_err());
    }
}
