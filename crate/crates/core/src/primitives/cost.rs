use super::PrimitiveError;

/// Closed-form cycle counts of the five primitives on a `p_ca x p_ca`
/// computation array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostModel {
    p_ca: u64,
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn extents(values: &[u64]) -> Result<(), PrimitiveError> {
    if values.contains(&0) {
        Err(PrimitiveError::ZeroExtent)
    } else {
        Ok(())
    }
}

impl CostModel {
    pub fn new(p_ca: u32) -> Result<Self, PrimitiveError> {
        if p_ca < 2 || !p_ca.is_multiple_of(2) {
            return Err(PrimitiveError::BadArrayWidth(p_ca));
        }
        Ok(Self { p_ca: p_ca as u64 })
    }

    pub fn p_ca(&self) -> u64 {
        self.p_ca
    }

    /// Systolic tiles times streaming length plus a `2*p_ca` fill/drain.
    pub fn ddmm(&self, s1: u64, s2: u64, s3: u64) -> Result<u64, PrimitiveError> {
        extents(&[s1, s2, s3])?;
        let p = self.p_ca;
        Ok(ceil_div(s1, p) * ceil_div(s3, p) * (s2 + 2 * p))
    }

    /// `ceil(nnz / (p_ca/2)) * ceil(s3 / p_ca)`.
    pub fn spdmm(&self, nnz: u64, s3: u64) -> Result<u64, PrimitiveError> {
        extents(&[s3])?;
        Ok(ceil_div(nnz, self.p_ca / 2) * ceil_div(s3, self.p_ca))
    }

    /// `ceil(nnz / (p_ca/2)) * ceil(s2 / p_ca)`.
    pub fn sddmm(&self, nnz: u64, s2: u64) -> Result<u64, PrimitiveError> {
        extents(&[s2])?;
        Ok(ceil_div(nnz, self.p_ca / 2) * ceil_div(s2, self.p_ca))
    }

    /// `p_ca/2` vector lanes of width `p_ca`.
    pub fn psvm_pvva(&self, s1: u64, s3: u64) -> Result<u64, PrimitiveError> {
        extents(&[s1, s3])?;
        Ok(ceil_div(s1, self.p_ca / 2) * ceil_div(s3, self.p_ca))
    }

    /// Data-manipulation module streaming one bank row (`p_ca` values) per
    /// cycle.
    pub fn dm_transform(&self, elements: u64) -> u64 {
        ceil_div(elements, self.p_ca)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(p: u32) -> CostModel {
        CostModel::new(p).unwrap()
    }

    #[test]
    fn ddmm_examples() {
        assert_eq!(m(16).ddmm(16, 16, 16).unwrap(), 48);
        assert_eq!(m(4).ddmm(8, 4, 8).unwrap(), 48);
        assert_eq!(m(16).ddmm(16, 0, 16), Err(PrimitiveError::ZeroExtent));
    }

    #[test]
    fn spdmm_examples() {
        assert_eq!(m(4).spdmm(16, 4).unwrap(), 8);
        assert_eq!(m(16).spdmm(0, 16).unwrap(), 0);
        assert_eq!(m(16).spdmm(100, 48).unwrap(), 39);
    }

    #[test]
    fn sddmm_examples() {
        assert_eq!(m(4).sddmm(8, 8).unwrap(), 8);
        assert_eq!(m(16).sddmm(0, 8).unwrap(), 0);
        assert_eq!(m(16).sddmm(75, 9600).unwrap(), 6000);
    }

    #[test]
    fn psvm_pvva_examples() {
        assert_eq!(m(4).psvm_pvva(2, 4).unwrap(), 1);
        assert_eq!(m(16).psvm_pvva(0, 4), Err(PrimitiveError::ZeroExtent));
        assert_eq!(m(16).psvm_pvva(64, 64).unwrap(), 32);
    }

    #[test]
    fn width_must_be_even() {
        assert!(CostModel::new(3).is_err());
        assert!(CostModel::new(0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone(p in prop::sample::select(vec![2u32, 4, 8, 16]),
                        a in 1u64..300, b in 1u64..300, c in 1u64..300, d in 0u64..5) {
                let cm = m(p);
                prop_assert!(cm.ddmm(a, b, c).unwrap() <= cm.ddmm(a + d, b, c).unwrap());
                prop_assert!(cm.ddmm(a, b, c).unwrap() <= cm.ddmm(a, b + d, c).unwrap());
                prop_assert!(cm.ddmm(a, b, c).unwrap() <= cm.ddmm(a, b, c + d).unwrap());
                prop_assert!(cm.spdmm(a, b).unwrap() <= cm.spdmm(a + d, b).unwrap());
                prop_assert!(cm.spdmm(a, b).unwrap() <= cm.spdmm(a, b + d).unwrap());
                prop_assert!(cm.sddmm(a, b).unwrap() <= cm.sddmm(a + d, b + d).unwrap());
                prop_assert!(cm.psvm_pvva(a, b).unwrap() <= cm.psvm_pvva(a + d, b + d).unwrap());
            }
        }
    }
}
