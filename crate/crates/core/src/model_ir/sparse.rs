use serde::{Deserialize, Serialize};

use super::{IrError, Tensor};
use crate::primitives::fp16_round;

/// One non-zero of a sparse operand.
///
/// A triple contributes `val * Y[src]` into row `dst` of the result, so it
/// encodes the matrix entry `X[dst][src] = val`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub src: u32,
    pub dst: u32,
    pub val: f32,
}

impl Triple {
    pub fn new(src: u32, dst: u32, val: f32) -> Self {
        Self {
            src,
            dst,
            val: fp16_round(val),
        }
    }
}

/// COO sparse matrix, triples sorted by `(dst, src)` with no duplicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    triples: Vec<Triple>,
}

impl SparseMatrix {
    /// Validates ranges, sorts by `(dst, src)` and rejects duplicate positions.
    pub fn new(n_rows: usize, n_cols: usize, mut triples: Vec<Triple>) -> Result<Self, IrError> {
        for t in &triples {
            if t.src as usize >= n_cols || t.dst as usize >= n_rows {
                return Err(IrError::TripleOutOfRange {
                    src: t.src,
                    dst: t.dst,
                    n_rows,
                    n_cols,
                });
            }
        }
        for t in &mut triples {
            t.val = fp16_round(t.val);
        }
        triples.sort_by_key(|t| (t.dst, t.src));
        if let Some(w) = triples
            .windows(2)
            .find(|w| (w[0].dst, w[0].src) == (w[1].dst, w[1].src))
        {
            return Err(IrError::DuplicateTriple {
                src: w[0].src,
                dst: w[0].dst,
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            triples,
        })
    }

    pub fn identity(n: usize) -> Self {
        let triples = (0..n as u32).map(|i| Triple::new(i, i, 1.0)).collect();
        Self {
            n_rows: n,
            n_cols: n,
            triples,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn nnz(&self) -> usize {
        self.triples.len()
    }

    pub fn density(&self) -> f64 {
        let cells = self.n_rows * self.n_cols;
        if cells == 0 {
            0.0
        } else {
            self.triples.len() as f64 / cells as f64
        }
    }

    /// Dense `n_rows x n_cols` view, entry `[dst][src] = val`.
    pub fn to_dense(&self) -> Tensor {
        let mut values = vec![0.0; self.n_rows * self.n_cols];
        for t in &self.triples {
            values[t.dst as usize * self.n_cols + t.src as usize] = t.val;
        }
        Tensor::new(vec![self.n_rows.max(1), self.n_cols.max(1)], values)
            .expect("dense view of valid sparse matrix")
    }

    /// The transpose: every triple's src and dst swap.
    pub fn transpose(&self) -> Self {
        let triples = self
            .triples
            .iter()
            .map(|t| Triple {
                src: t.dst,
                dst: t.src,
                val: t.val,
            })
            .collect();
        Self::new(self.n_cols, self.n_rows, triples).expect("transpose of valid matrix")
    }

    /// Triples whose `dst` lies in `rows` and `src` in `cols`, order preserved.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<Triple> {
        let lo = self.triples.partition_point(|t| (t.dst as usize) < rows.start);
        let hi = self.triples.partition_point(|t| (t.dst as usize) < rows.end);
        self.triples[lo..hi]
            .iter()
            .filter(|t| cols.contains(&(t.src as usize)))
            .copied()
            .collect()
    }

    /// Index range of the triples whose `dst` lies in `rows`.
    pub fn row_range(&self, rows: std::ops::Range<usize>) -> std::ops::Range<usize> {
        let lo = self.triples.partition_point(|t| (t.dst as usize) < rows.start);
        let hi = self.triples.partition_point(|t| (t.dst as usize) < rows.end);
        lo..hi
    }

    pub fn with_values(&self, values: &[f32]) -> Self {
        assert_eq!(values.len(), self.triples.len());
        let triples = self
            .triples
            .iter()
            .zip(values)
            .map(|(t, v)| Triple::new(t.src, t.dst, *v))
            .collect();
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            triples,
        }
    }
}

/// Extracts the entries of a 2-D tensor with `|value| > eps`.
pub fn coo_from_dense(t: &Tensor, eps: f32) -> Result<SparseMatrix, IrError> {
    let (rows, cols) = t.matrix_dims()?;
    let mut triples = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = t.get2(r, c);
            if v.abs() > eps {
                triples.push(Triple::new(c as u32, r as u32, v));
            }
        }
    }
    SparseMatrix::new(rows, cols, triples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_has_half_density() {
        let s = coo_from_dense(&Tensor::identity(2), 0.0).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.density(), 0.5);
    }

    #[test]
    fn all_zero_is_empty() {
        let s = coo_from_dense(&Tensor::zeros(vec![3, 3]).unwrap(), 0.0).unwrap();
        assert_eq!(s.nnz(), 0);
    }

    #[test]
    fn random_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut values = vec![0.0f32; 64];
        let mut placed = 0;
        while placed < 13 {
            let i = rng.gen_range(0..64);
            if values[i] == 0.0 {
                values[i] = rng.gen_range(0.5f32..2.0);
                placed += 1;
            }
        }
        let t = Tensor::new(vec![8, 8], values).unwrap();
        let s = coo_from_dense(&t, 0.25).unwrap();
        assert_eq!(s.nnz(), 13);
        assert_eq!(s.to_dense(), t);
    }

    #[test]
    fn rejects_non_matrix() {
        let t = Tensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(matches!(coo_from_dense(&t, 0.0), Err(IrError::NotMatrix(_))));
    }

    #[test]
    fn orientation_follows_scatter_semantics() {
        // X[0][1] = 2 is stored as src=1, dst=0
        let t = Tensor::from_rows(&[&[0.0, 2.0], &[0.0, 0.0]]);
        let s = coo_from_dense(&t, 0.0).unwrap();
        assert_eq!(s.triples(), &[Triple::new(1, 0, 2.0)]);
    }

    #[test]
    fn duplicates_and_range_rejected() {
        let dup = vec![Triple::new(0, 0, 1.0), Triple::new(0, 0, 2.0)];
        assert!(matches!(
            SparseMatrix::new(1, 1, dup),
            Err(IrError::DuplicateTriple { .. })
        ));
        assert!(SparseMatrix::new(1, 1, vec![Triple::new(1, 0, 1.0)]).is_err());
    }
}
