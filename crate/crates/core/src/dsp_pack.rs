//! Two int8 weights in one wide multiplier operand.
//!
//! `p = w1 * 2^18 + w2`; one multiply `p * a` yields both `w1 * a` and
//! `w2 * a` after correcting the borrow the signed low product leaves in the
//! high field. `|w2 * a| <= 16384 < 2^17`, so the low 18 bits always hold
//! the low product in two's complement.

use crate::error::{Error, Result};

pub const SHIFT: u32 = 18;

/// Packed operand; fits the 27-bit pre-adder input (`|p| < 2^26`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PackedPair {
    pub p: i32,
}

pub fn pack(w1: i8, w2: i8) -> PackedPair {
    PackedPair {
        p: ((w1 as i32) << SHIFT) + w2 as i32,
    }
}

pub fn unpack(pp: PackedPair) -> (i8, i8) {
    let (hi, lo) = split(pp.p as i64);
    (hi as i8, lo as i8)
}

/// Both products of the packed weights with one activation.
pub fn packed_mac(pp: PackedPair, a: i8) -> (i32, i32) {
    let (p1, p2) = split(pp.p as i64 * a as i64);
    (p1 as i32, p2 as i32)
}

fn split(raw: i64) -> (i64, i64) {
    let low = raw.rem_euclid(1 << SHIFT);
    let s = raw.div_euclid(1 << SHIFT);
    if low >= 1 << (SHIFT - 1) {
        (s + 1, low - (1 << SHIFT))
    } else {
        (s, low)
    }
}

/// Multipliers the PE array needs: one per PE, or one per pair of PEs
/// when weights are packed.
pub fn estimate_array_dsps(dim: usize, packed: bool) -> Result<usize> {
    if packed {
        if dim % 2 != 0 {
            return Err(Error::Config(format!(
                "packing pairs adjacent columns, so dim must be even (got {dim})"
            )));
        }
        Ok(dim * dim / 2)
    } else {
        Ok(dim * dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_examples() {
        assert_eq!(pack(3, -5).p, 3 * 262_144 - 5);
        assert_eq!(pack(3, -5).p, 786_427);
        assert_eq!(pack(0, 0).p, 0);
        assert_eq!(pack(-128, -128).p, -33_554_560);
        assert!(pack(-128, -128).p.unsigned_abs() < 1 << 26);
    }

    #[test]
    fn mac_examples() {
        let raw = pack(3, -5).p as i64 * 7;
        assert_eq!(raw, 5_504_989);
        assert_eq!(raw.div_euclid(1 << 18), 20);
        assert_eq!(raw.rem_euclid(1 << 18), 262_109);
        assert_eq!(packed_mac(pack(3, -5), 7), (21, -35));
        assert_eq!(packed_mac(pack(77, -9), 0), (0, 0));
        assert_eq!(packed_mac(pack(-128, 127), -128), (16_384, -16_256));
    }

    #[test]
    fn round_trip_all_pairs() {
        for w1 in i8::MIN..=i8::MAX {
            for w2 in i8::MIN..=i8::MAX {
                assert_eq!(unpack(pack(w1, w2)), (w1, w2));
            }
        }
    }

    #[test]
    fn dsp_estimates() {
        assert_eq!(estimate_array_dsps(16, false).unwrap(), 256);
        assert_eq!(estimate_array_dsps(32, true).unwrap(), 512);
        assert_eq!(estimate_array_dsps(2, true).unwrap(), 2);
        assert!(estimate_array_dsps(3, true).is_err());
    }
}
