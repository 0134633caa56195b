//! Accumulating kernels shared by the whole-matrix primitives and the
//! tile-level simulator. Every reduction runs in ascending index order in
//! `f32`; rounding to binary16 happens only in [`finish`].

use crate::model_ir::Reduction;

use super::fp16_round;

/// Row-major view into a larger matrix.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            stride: cols,
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.stride + c]
    }

    pub fn row(&self, r: usize) -> &'a [f32] {
        &self.data[r * self.stride..r * self.stride + self.cols]
    }
}

/// Partial result held in the result buffer between accumulate steps.
#[derive(Clone, Debug)]
pub struct Accumulator {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    /// Max reduction only: element received at least one contribution.
    pub touched: Vec<bool>,
    pub reduction: Reduction,
}

impl Accumulator {
    pub fn new(rows: usize, cols: usize, reduction: Reduction) -> Self {
        let init = match reduction {
            Reduction::Sum => 0.0,
            Reduction::Max => f32::NEG_INFINITY,
        };
        Self {
            rows,
            cols,
            values: vec![init; rows * cols],
            touched: vec![false; rows * cols],
            reduction,
        }
    }

    #[inline]
    fn combine(&mut self, idx: usize, v: f32) {
        match self.reduction {
            Reduction::Sum => self.values[idx] += v,
            Reduction::Max => {
                if !self.touched[idx] || v > self.values[idx] {
                    self.values[idx] = v;
                }
                self.touched[idx] = true;
            }
        }
    }

    /// Rounds to binary16; untouched Max outputs become 0.
    pub fn finish(&self) -> Vec<f32> {
        self.values
            .iter()
            .zip(&self.touched)
            .map(|(v, t)| match self.reduction {
                Reduction::Sum => fp16_round(*v),
                Reduction::Max if *t => fp16_round(*v),
                Reduction::Max => 0.0,
            })
            .collect()
    }
}

/// `acc += x * y` with `x: rows x k`, `y: k x cols`.
pub fn ddmm_acc(acc: &mut Accumulator, x: MatRef<'_>, y: MatRef<'_>) {
    debug_assert_eq!(x.cols, y.rows);
    debug_assert_eq!(acc.reduction, Reduction::Sum);
    for i in 0..x.rows {
        let xr = x.row(i);
        let out = &mut acc.values[i * acc.cols..(i + 1) * acc.cols];
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = *o;
            for (k, xv) in xr.iter().enumerate() {
                s += xv * y.at(k, j);
            }
            *o = s;
        }
    }
}

/// Scatter-gather: `acc[dst] (+)= val * y[src]` over tile-local triples.
pub fn spdmm_acc(acc: &mut Accumulator, triples: &[(usize, usize, f32)], y: MatRef<'_>) {
    for &(src, dst, val) in triples {
        let yr = y.row(src);
        for (j, yv) in yr.iter().enumerate() {
            acc.combine(dst * acc.cols + j, val * yv);
        }
    }
}

/// Column form: `acc[:, dst] (+)= val * d[:, src]`.
pub fn spdmm_columns_acc(acc: &mut Accumulator, triples: &[(usize, usize, f32)], d: MatRef<'_>) {
    for i in 0..d.rows {
        let dr = d.row(i);
        for &(src, dst, val) in triples {
            acc.combine(i * acc.cols + dst, val * dr[src]);
        }
    }
}

/// `acc[n] += <x[i], yt[j]>` for each tile-local sample `(i, j)`; `yt`
/// stores the columns of `Y` as rows.
pub fn sddmm_acc(acc: &mut [f32], samples: &[(usize, usize)], x: MatRef<'_>, yt: MatRef<'_>) {
    debug_assert_eq!(x.cols, yt.cols);
    for (n, &(i, j)) in samples.iter().enumerate() {
        let mut s = acc[n];
        for (a, b) in x.row(i).iter().zip(yt.row(j)) {
            s += a * b;
        }
        acc[n] = s;
    }
}

/// Numerically stable softmax over each group of consecutive entries with
/// the same key, computed in `f32` then rounded.
pub fn grouped_softmax(values: &mut [f32], keys: &[u32]) {
    let mut start = 0;
    while start < values.len() {
        let mut end = start + 1;
        while end < values.len() && keys[end] == keys[start] {
            end += 1;
        }
        let group = &mut values[start..end];
        let m = group.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in group.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in group.iter_mut() {
            *v = fp16_round(*v / sum);
        }
        start = end;
    }
}
