use half::f16;

/// Numeric contract of the datapath: operands and results are stored as
/// binary16, reductions accumulate in `f32`, and each primitive rounds its
/// output once (round-to-nearest-even).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Fp16Policy;

impl Fp16Policy {
    pub const ACCUMULATE_BITS: u32 = 32;

    pub fn round(self, x: f32) -> f32 {
        fp16_round(x)
    }
}

/// Nearest binary16 value (ties to even); overflow saturates to ±inf and
/// signed zero is preserved.
pub fn fp16_round(x: f32) -> f32 {
    f16::from_f32(x).to_f32()
}

/// Single rounding from `f64` straight to binary16.
pub fn fp16_round_f64(x: f64) -> f32 {
    f16::from_f64(x).to_f32()
}

/// Spacing of binary16 values at magnitude `x` (the subnormal step below
/// the normal range).
pub fn fp16_ulp(x: f64) -> f64 {
    let a = x.abs();
    let min_normal = 2f64.powi(-14);
    if !a.is_finite() {
        return f64::INFINITY;
    }
    if a < min_normal {
        return 2f64.powi(-24);
    }
    let e = a.log2().floor() as i32;
    // guard against log2 landing just below an exact power of two
    let e = if 2f64.powi(e + 1) <= a { e + 1 } else { e };
    2f64.powi(e.min(15) - 10)
}

/// Ordinal distance between two binary16 values (number of representable
/// values between them), used for ULP histograms.
pub fn fp16_ordinal_distance(a: f32, b: f32) -> u32 {
    fn key(v: f32) -> i32 {
        let bits = f16::from_f32(v).to_bits() as i32;
        if bits & 0x8000 != 0 {
            -(bits & 0x7fff)
        } else {
            bits
        }
    }
    (key(a) - key(b)).unsigned_abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent bit-level conversion f64 -> binary16 bits, ties to even,
    /// written from the format definition.
    fn reference_bits(x: f64) -> u16 {
        let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
        let a = x.abs();
        if a == 0.0 {
            return sign;
        }
        if a.is_infinite() {
            return sign | 0x7c00;
        }
        // enumerate every finite positive binary16 value and pick the nearest
        let mut best = 0u16;
        let mut best_err = f64::INFINITY;
        for bits in 0u16..0x7c00 {
            let e = (bits >> 10) as i32;
            let m = (bits & 0x3ff) as f64;
            let v = if e == 0 {
                m * 2f64.powi(-24)
            } else {
                (1.0 + m / 1024.0) * 2f64.powi(e - 15)
            };
            let err = (v - a).abs();
            if err < best_err || (err == best_err && bits % 2 == 0) {
                best = bits;
                best_err = err;
            }
        }
        // beyond max finite: halfway point to 2^16 rounds to infinity
        if a >= 65520.0 {
            return sign | 0x7c00;
        }
        sign | best
    }

    fn bits_of(v: f32) -> u16 {
        f16::from_f32(v).to_bits()
    }

    #[test]
    fn spot_values_match_reference() {
        assert_eq!(fp16_round(1.0), 1.0);
        assert_eq!(fp16_round(2049.0), 2048.0);
        assert_eq!(reference_bits(2049.0), bits_of(2048.0));
        assert_eq!(fp16_round(65520.0), f32::INFINITY);
        assert_eq!(reference_bits(65520.0), 0x7c00);
        assert_eq!(fp16_round(65519.0), 65504.0);
        assert!(fp16_round(-0.0).is_sign_negative());
        assert_eq!(fp16_round(-70000.0), f32::NEG_INFINITY);
    }

    #[test]
    fn matches_reference_on_sample() {
        let mut x = 1.0e-8f64;
        while x < 7.0e4 {
            for v in [x, -x, x * 1.000_123] {
                let ours = bits_of(fp16_round(v as f32));
                let want = reference_bits(v as f32 as f64);
                assert_eq!(ours, want, "x = {v}");
            }
            x *= 1.37;
        }
    }

    #[test]
    fn ulp_steps() {
        assert_eq!(fp16_ulp(1.0), 2f64.powi(-10));
        assert_eq!(fp16_ulp(1.5), 2f64.powi(-10));
        assert_eq!(fp16_ulp(2.0), 2f64.powi(-9));
        assert_eq!(fp16_ulp(1e-6), 2f64.powi(-24));
        assert_eq!(fp16_ordinal_distance(1.0, 1.0 + 2f32.powi(-10)), 1);
        assert_eq!(fp16_ordinal_distance(-0.0, 0.0), 0);
        assert_eq!(fp16_ordinal_distance(-2f32.powi(-24), 2f32.powi(-24)), 2);
    }
}
