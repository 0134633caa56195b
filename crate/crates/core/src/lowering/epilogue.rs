//! Element-level helpers shared by the program interpreter and the
//! instruction-level simulator so both round identically.

use crate::model_ir::{DmMode, DmSpec};
use crate::primitives::{fp16_round, kernels::grouped_softmax};

use super::{Axis, EpilogueOp, Shift};

/// Applies `ops` in order to a `rows x cols` tile whose top-left element
/// sits at `(row0, col0)` of the full matrix. `score_keys` carries the
/// destination vertex of each value when the tile holds edge scores.
pub fn apply_epilogue(
    values: &mut [f32],
    cols: usize,
    row0: usize,
    col0: usize,
    ops: &[EpilogueOp],
    score_keys: Option<&[u32]>,
) {
    for op in ops {
        match op {
            EpilogueOp::Relu => {
                for v in values.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            EpilogueOp::NormAffine { scale, shift, axis } => {
                for (n, v) in values.iter_mut().enumerate() {
                    let ch = match axis {
                        Axis::Row => row0 + n / cols.max(1),
                        Axis::Col => col0 + n % cols.max(1),
                    };
                    *v = fp16_round(*v * scale[ch] + shift[ch]);
                }
            }
            EpilogueOp::RowSoftmax => {
                if let Some(keys) = score_keys {
                    grouped_softmax(values, keys);
                }
            }
        }
    }
}

/// Value of a shifted operand at destination pixel `p`.
#[inline]
pub fn shifted_value(src_row: &[f32], s: &Shift, p: usize) -> f32 {
    let y = (p / s.dst_w) as isize + s.dr;
    let x = (p % s.dst_w) as isize + s.dc;
    if y < 0 || x < 0 || y >= s.src_h as isize || x >= s.src_w as isize {
        0.0
    } else {
        src_row[y as usize * s.src_w + x as usize]
    }
}

/// One output row of a shift-add: `out[p] = a'[p] + b'[p]`.
pub fn shifted_add(a: &[f32], sa: Option<&Shift>, b: &[f32], sb: Option<&Shift>, out: &mut [f32]) {
    for (p, o) in out.iter_mut().enumerate() {
        let va = match sa {
            Some(s) => shifted_value(a, s, p),
            None => a[p],
        };
        let vb = match sb {
            Some(s) => shifted_value(b, s, p),
            None => b[p],
        };
        *o = fp16_round(va + vb);
    }
}

/// Data-manipulation transform of a row-major `rows x cols` matrix.
/// Returns the output values; the output shape follows from the mode.
pub fn apply_dm_transform(
    input: &[f32],
    rows: usize,
    cols: usize,
    dm: &DmSpec,
    in_hw: Option<(usize, usize)>,
) -> Vec<f32> {
    match dm.mode {
        DmMode::ChannelToNode => input.to_vec(),
        DmMode::NodeToChannel => match &dm.channel_of_node {
            None => input.to_vec(),
            Some(perm) => {
                let mut out = vec![0.0; input.len()];
                for (v, &c) in perm.iter().enumerate() {
                    out[c * cols..(c + 1) * cols].copy_from_slice(&input[v * cols..(v + 1) * cols]);
                }
                out
            }
        },
        DmMode::PatchToNode => {
            let (ph, pw) = dm.patch.expect("PatchToNode carries a patch");
            let (h, w) = in_hw.expect("PatchToNode knows the input extent");
            let c = rows;
            debug_assert_eq!(cols, h * w);
            let nx = w / pw;
            let feat = c * ph * pw;
            let mut out = vec![0.0; input.len()];
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let node = (y / ph) * nx + x / pw;
                        let f = ci * ph * pw + (y % ph) * pw + x % pw;
                        out[node * feat + f] = input[ci * cols + y * w + x];
                    }
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_to_node_layout() {
        // 1 channel, 2x4 map, 2x2 patches -> 2 nodes x 4 features
        let input: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let dm = DmSpec {
            mode: DmMode::PatchToNode,
            patch: Some((2, 2)),
            hw: None,
            channel_of_node: None,
        };
        let out = apply_dm_transform(&input, 1, 8, &dm, Some((2, 4)));
        assert_eq!(out, vec![0.0, 1.0, 4.0, 5.0, 2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn shift_zero_fills_outside() {
        let s = Shift {
            src_h: 2,
            src_w: 2,
            dst_h: 2,
            dst_w: 2,
            dr: 0,
            dc: 1,
        };
        let src = [1.0, 2.0, 3.0, 4.0];
        let got: Vec<f32> = (0..4).map(|p| shifted_value(&src, &s, p)).collect();
        assert_eq!(got, vec![2.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn norm_axes() {
        let ops = [EpilogueOp::NormAffine {
            scale: vec![1.0, 2.0, 3.0],
            shift: vec![0.0, 0.5, 0.0],
            axis: Axis::Col,
        }];
        let mut v = vec![1.0, 1.0, 1.0, 1.0];
        apply_epilogue(&mut v, 2, 0, 1, &ops, None);
        assert_eq!(v, vec![2.5, 3.0, 2.5, 3.0]);
    }
}
