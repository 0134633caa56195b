use serde::Serialize;

use crate::arch::ArchConfig;

use super::PlanError;

/// Nominal tile extents of an op; edge tiles may be smaller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TileShape {
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
}

const MAX_EXTENT: usize = u16::MAX as usize;

/// Smallest multiple of `p` for each achievable tile count along `s`,
/// followed by the extents below `p` when `fine`.
fn candidates(s: usize, p: usize, fine: bool) -> Vec<usize> {
    let blocks = s.div_ceil(p);
    let cap = MAX_EXTENT / p * p;
    let mut out: Vec<usize> = (1..=blocks)
        .map(|count| blocks.div_ceil(count) * p)
        .filter(|t| *t <= cap)
        .collect();
    out.dedup();
    if fine {
        out.extend((1..p.min(s)).rev());
    }
    out
}

/// Per-op constraints on the search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRules {
    /// Dimensions that are never split.
    pub full: [bool; 3],
    /// Whether the VB, WB and RB capacities apply.
    pub checks: [bool; 3],
    /// Dimensions that may use extents below `p_ca`.
    pub fine: [bool; 3],
}

/// Exhaustive search for the tile shape with the fewest tasks whose
/// operand tiles fit VB (`t1*t2`), WB (`t2*t3`) and RB (`t1*t3`). Dims
/// flagged `full` are not split; `checks` disables a buffer test. Ties
/// prefer a larger `t2`, then `t3`, then `t1`.
pub fn search_tiles(op: usize, (s1, s2, s3): (usize, usize, usize), arch: &ArchConfig, rules: TileRules) -> Result<TileShape, PlanError> {
    let TileRules { full, checks, fine } = rules;
    let p = arch.p_ca;
    let dims = [s1, s2, s3];
    let mut cands: [Vec<usize>; 3] = Default::default();
    for d in 0..3 {
        cands[d] = if full[d] {
            if dims[d] > MAX_EXTENT {
                return Err(PlanError::ExtentTooLarge { op, extent: dims[d] });
            }
            vec![dims[d]]
        } else {
            candidates(dims[d], p, fine[d])
        };
    }
    let [vb, wb, rb] = arch.capacities();
    let mut best: Option<((usize, usize, usize, usize), TileShape)> = None;
    for &t1 in &cands[0] {
        for &t2 in &cands[1] {
            for &t3 in &cands[2] {
                let (e1, e2, e3) = (t1.min(s1), t2.min(s2), t3.min(s3));
                let fits = (!checks[0] || e1 * e2 <= vb) && (!checks[1] || e2 * e3 <= wb) && (!checks[2] || e1 * e3 <= rb);
                if !fits {
                    continue;
                }
                let (c1, c2, c3) = (s1.div_ceil(t1), s2.div_ceil(t2), s3.div_ceil(t3));
                let key = (c1 * c2 * c3, c2, c3, c1);
                if best.as_ref().is_none_or(|(k, _)| key < *k) {
                    best = Some((key, TileShape { t1: e1, t2: e2, t3: e3 }));
                }
            }
        }
    }
    best.map(|(_, s)| s).ok_or_else(|| PlanError::ArchTooSmall {
        op,
        detail: format!("({s1},{s2},{s3}) against capacities ({vb},{wb},{rb})"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_sets() {
        assert_eq!(candidates(17, 16, false), vec![32, 16]);
        assert_eq!(candidates(64, 16, false), vec![64, 32, 16]);
        assert_eq!(candidates(1, 16, false), vec![16]);
        assert_eq!(candidates(3, 4, true), vec![4, 2, 1]);
    }
}
