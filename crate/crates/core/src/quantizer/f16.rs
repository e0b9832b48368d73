//! IEEE 754 binary16 storage type used for requantization multipliers.

use std::fmt;

/// A binary16 value stored as its raw bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct F16(u16);

impl F16 {
    pub const ZERO: F16 = F16(0);
    pub const ONE: F16 = F16(0x3c00);

    pub const fn from_bits(bits: u16) -> Self {
        F16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Nearest-even conversion from f32. Subnormals are produced where the
    /// magnitude requires them; values beyond the binary16 range become
    /// infinities.
    pub fn from_f32(x: f32) -> Self {
        let bits = x.to_bits();
        let sign = ((bits >> 16) & 0x8000) as u16;
        let exp = ((bits >> 23) & 0xff) as i32;
        let man = bits & 0x7f_ffff;

        if exp == 0xff {
            let nan = if man != 0 { 0x0200 | (man >> 13) as u16 } else { 0 };
            return F16(sign | 0x7c00 | nan);
        }

        let e = exp - 127 + 15;
        if e >= 0x1f {
            return F16(sign | 0x7c00);
        }
        if e <= 0 {
            // below half the smallest subnormal: rounds to signed zero
            if e < -10 {
                return F16(sign);
            }
            let man = man | 0x80_0000;
            let shift = (14 - e) as u32;
            let mut half = man >> shift;
            let rem = man & ((1 << shift) - 1);
            let halfway = 1 << (shift - 1);
            if rem > halfway || (rem == halfway && half & 1 == 1) {
                half += 1;
            }
            return F16(sign | half as u16);
        }

        let mut half = ((e as u32) << 10) | (man >> 13);
        let rem = man & 0x1fff;
        if rem > 0x1000 || (rem == 0x1000 && half & 1 == 1) {
            // a carry out of the significand bumps the exponent, possibly to infinity
            half += 1;
        }
        F16(sign | half as u16)
    }

    pub fn to_f32(self) -> f32 {
        let sign = ((self.0 & 0x8000) as u32) << 16;
        let exp = ((self.0 >> 10) & 0x1f) as u32;
        let man = (self.0 & 0x3ff) as u32;
        let bits = match (exp, man) {
            (0, 0) => sign,
            (0, _) => {
                // subnormal: renormalize into f32's wider exponent range
                let mut e = 127 - 15 + 1;
                let mut m = man;
                while m & 0x400 == 0 {
                    m <<= 1;
                    e -= 1;
                }
                sign | ((e as u32) << 23) | ((m & 0x3ff) << 13)
            }
            (0x1f, 0) => sign | 0x7f80_0000,
            (0x1f, _) => sign | 0x7fc0_0000 | (man << 13),
            _ => sign | ((exp + 127 - 15) << 23) | (man << 13),
        };
        f32::from_bits(bits)
    }

    pub fn is_finite(self) -> bool {
        (self.0 >> 10) & 0x1f != 0x1f
    }

    pub fn is_sign_negative(self) -> bool {
        self.0 & 0x8000 != 0
    }

    pub fn is_zero(self) -> bool {
        self.0 & 0x7fff == 0
    }
}

/// Round an f32 to the nearest binary16 value.
pub fn f16_round(x: f32) -> F16 {
    F16::from_f32(x)
}

impl fmt::Debug for F16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F16({})", self.to_f32())
    }
}

impl fmt::Display for F16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

impl From<F16> for f32 {
    fn from(v: F16) -> f32 {
        v.to_f32()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_conversions() {
        assert_eq!(f16_round(0.1).to_f32(), 0.099_975_586);
        assert_eq!(f16_round(0.1).to_f32() as f64, 0.0999755859375);
        assert_eq!(f16_round(0.5).to_f32(), 0.5);
        assert_eq!(f16_round(1.000_000_1).to_f32(), 1.0);
        assert_eq!(f16_round(65504.0).to_bits(), 0x7bff);
        assert_eq!(f16_round(65520.0).to_bits(), 0x7c00);
        assert_eq!(f16_round(-2.0).to_bits(), 0xc000);
    }

    #[test]
    fn subnormals_are_preserved() {
        let tiny = 2f32.powi(-24);
        assert_eq!(f16_round(tiny).to_bits(), 0x0001);
        assert_eq!(f16_round(tiny).to_f32(), tiny);
        // exactly half the smallest subnormal ties to even (zero)
        assert_eq!(f16_round(2f32.powi(-25)).to_bits(), 0);
        assert_eq!(f16_round(3.0 * 2f32.powi(-25)).to_bits(), 0x0002);
        assert_eq!(f16_round(2f32.powi(-14)).to_bits(), 0x0400);
    }

    #[test]
    fn ties_round_to_even() {
        // 1 + 2^-11 is halfway between 1.0 and the next f16; even is 1.0
        assert_eq!(f16_round(1.0 + 2f32.powi(-11)).to_bits(), 0x3c00);
        // 1 + 3*2^-11 is halfway between odd and even; rounds up to even
        assert_eq!(f16_round(1.0 + 3.0 * 2f32.powi(-11)).to_bits(), 0x3c02);
    }

    #[test]
    fn every_f16_round_trips() {
        for bits in 0..=u16::MAX {
            let h = F16::from_bits(bits);
            if !h.is_finite() {
                continue;
            }
            assert_eq!(F16::from_f32(h.to_f32()), h, "bits {bits:#06x}");
        }
    }
}
