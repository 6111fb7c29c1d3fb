//! Exact modular arithmetic over `u64` moduli, 2×2 matrices over residue
//! rings, and the two-limb encoding of 126-bit protocol values.
//!
//! Every product is formed in `u128` before reduction, so results are exact
//! for any modulus up to 64 bits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nominal 128-bit protocol quantity (nonces, S, ID, update secrets).
pub type Wide = u128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArithError {
    #[error("modulus {0} is below 2")]
    ModulusTooSmall(u64),
    #[error("component {value} is not below modulus {modulus}")]
    NotReduced { value: u64, modulus: u64 },
    #[error("value {value} does not fit in two {limb_bits}-bit limbs")]
    EncodeRange { value: Wide, limb_bits: u32 },
    #[error("limb {value} does not fit in {limb_bits} bits")]
    DecodeRange { value: u64, limb_bits: u32 },
    #[error("limb width {0} outside 1..=64")]
    LimbWidth(u32),
}

#[inline]
pub(crate) fn mulmod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

#[inline]
pub(crate) fn addmod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 + b as u128) % q as u128) as u64
}

/// `a - b mod q` for `a, b < q`.
#[inline]
pub(crate) fn submod(a: u64, b: u64, q: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        q - (b - a)
    }
}

fn check_modulus(q: u64) -> Result<(), ArithError> {
    if q < 2 {
        Err(ArithError::ModulusTooSmall(q))
    } else {
        Ok(())
    }
}

/// `(a * b) mod q`, exact.
pub fn mod_mul(a: u64, b: u64, q: u64) -> Result<u64, ArithError> {
    check_modulus(q)?;
    Ok(mulmod(a % q, b % q, q))
}

/// Inverse of `a` modulo `q` by extended Euclid, or `None` when
/// `gcd(a, q) != 1` (including `a == 0` and `q < 2`).
pub fn mod_inv(a: u64, q: u64) -> Option<u64> {
    if q < 2 {
        return None;
    }
    let (mut old_r, mut r) = ((a % q) as i128, q as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let quot = old_r / r;
        (old_r, r) = (r, old_r - quot * r);
        (old_s, s) = (s, old_s - quot * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(q as i128) as u64)
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Two-component column vector. Holds one plaintext or ciphertext block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub c1: u64,
    pub c2: u64,
}

impl Vec2 {
    pub const fn new(c1: u64, c2: u64) -> Self {
        Self { c1, c2 }
    }

    pub fn reduce(self, q: u64) -> Self {
        Self::new(self.c1 % q, self.c2 % q)
    }
}

/// 2×2 matrix `[[m11, m12], [m21, m22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Mat2 {
    pub m11: u64,
    pub m12: u64,
    pub m21: u64,
    pub m22: u64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1, 0, 0, 1);

    pub const fn new(m11: u64, m12: u64, m21: u64, m22: u64) -> Self {
        Self { m11, m12, m21, m22 }
    }

    pub fn transpose(self) -> Self {
        Self::new(self.m11, self.m21, self.m12, self.m22)
    }

    pub fn second_column(self) -> Vec2 {
        Vec2::new(self.m12, self.m22)
    }

    pub fn reduce(self, q: u64) -> Self {
        Self::new(self.m11 % q, self.m12 % q, self.m21 % q, self.m22 % q)
    }

    pub fn det_mod(self, q: u64) -> u64 {
        let m = self.reduce(q);
        submod(mulmod(m.m11, m.m22, q), mulmod(m.m12, m.m21, q), q)
    }

    pub fn entries(self) -> [u64; 4] {
        [self.m11, self.m12, self.m21, self.m22]
    }

    /// Unchecked `M·t mod q`; `t` may be unreduced.
    #[inline]
    pub(crate) fn apply(self, t: Vec2, q: u64) -> Vec2 {
        let m = self.reduce(q);
        let t = t.reduce(q);
        Vec2::new(
            addmod(mulmod(m.m11, t.c1, q), mulmod(m.m12, t.c2, q), q),
            addmod(mulmod(m.m21, t.c1, q), mulmod(m.m22, t.c2, q), q),
        )
    }
}

/// `M·t mod q`. Fails if a component of `t` is not already below `q`.
pub fn mat_vec_mod(m: Mat2, t: Vec2, q: u64) -> Result<Vec2, ArithError> {
    check_modulus(q)?;
    for value in [t.c1, t.c2] {
        if value >= q {
            return Err(ArithError::NotReduced { value, modulus: q });
        }
    }
    Ok(m.apply(t, q))
}

/// Raw `M·t mod q` for any `t`. Components at or above `q` are folded to
/// their residues first, so decryption can only return the residue.
pub fn mat_vec_mod_raw(m: Mat2, t: Vec2, q: u64) -> Result<Vec2, ArithError> {
    check_modulus(q)?;
    Ok(m.apply(t, q))
}

pub fn mat_mul_mod(x: Mat2, y: Mat2, q: u64) -> Result<Mat2, ArithError> {
    check_modulus(q)?;
    let (x, y) = (x.reduce(q), y.reduce(q));
    let dot = |a: u64, b: u64, c: u64, d: u64| addmod(mulmod(a, b, q), mulmod(c, d, q), q);
    Ok(Mat2::new(
        dot(x.m11, y.m11, x.m12, y.m21),
        dot(x.m11, y.m12, x.m12, y.m22),
        dot(x.m21, y.m11, x.m22, y.m21),
        dot(x.m21, y.m12, x.m22, y.m22),
    ))
}

pub fn transpose(m: Mat2) -> Mat2 {
    m.transpose()
}

/// Inverse of `M` modulo `q`, or `None` when `det(M)` is not a unit mod `q`.
pub fn mat_inv_mod(m: Mat2, q: u64) -> Option<Mat2> {
    if q < 2 {
        return None;
    }
    let det_inv = mod_inv(m.det_mod(q), q)?;
    let m = m.reduce(q);
    let neg = |v: u64| if v == 0 { 0 } else { q - v };
    Some(Mat2::new(
        mulmod(m.m22, det_inv, q),
        mulmod(neg(m.m12), det_inv, q),
        mulmod(neg(m.m21), det_inv, q),
        mulmod(m.m11, det_inv, q),
    ))
}

/// Big-endian split of a wide value into two limbs `(hi, lo)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LimbCodec {
    limb_bits: u32,
}

impl LimbCodec {
    pub fn new(limb_bits: u32) -> Result<Self, ArithError> {
        if limb_bits == 0 || limb_bits > 64 {
            return Err(ArithError::LimbWidth(limb_bits));
        }
        Ok(Self { limb_bits })
    }

    pub fn limb_bits(&self) -> u32 {
        self.limb_bits
    }

    /// Exclusive upper bound for encodable values, `2^(2·limb_bits)`.
    /// Saturates at `u128::MAX` for 64-bit limbs.
    pub fn value_bound(&self) -> Wide {
        1u128.checked_shl(2 * self.limb_bits).unwrap_or(u128::MAX)
    }

    pub fn limb_bound(&self) -> u64 {
        1u64.checked_shl(self.limb_bits).unwrap_or(u64::MAX)
    }

    fn limb_mask(&self) -> Wide {
        (1u128 << self.limb_bits) - 1
    }

    pub fn encode(&self, x: Wide) -> Result<Vec2, ArithError> {
        if self.limb_bits < 64 && x >= self.value_bound() {
            return Err(ArithError::EncodeRange { value: x, limb_bits: self.limb_bits });
        }
        Ok(Vec2::new((x >> self.limb_bits) as u64, (x & self.limb_mask()) as u64))
    }

    pub fn decode(&self, v: Vec2) -> Result<Wide, ArithError> {
        for value in [v.c1, v.c2] {
            if self.limb_bits < 64 && value >= self.limb_bound() {
                return Err(ArithError::DecodeRange { value, limb_bits: self.limb_bits });
            }
        }
        Ok(((v.c1 as u128) << self.limb_bits) | v.c2 as u128)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Schoolbook product reduced by repeated subtraction.
    fn slow_mul_mod(a: u64, b: u64, q: u64) -> u64 {
        let mut acc: u64 = 0;
        for _ in 0..b {
            acc += a;
            while acc >= q {
                acc -= q;
            }
        }
        acc
    }

    #[test]
    fn mod_mul_trivial_cases() {
        assert_eq!(mod_mul(0, 12345, 65521).unwrap(), 0);
        assert_eq!(mod_mul(1, 12345, 65521).unwrap(), 12345);
        assert_eq!(mod_mul(3, 4, 1), Err(ArithError::ModulusTooSmall(1)));
    }

    #[test]
    fn mod_mul_matches_repeated_subtraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = rng.gen_range(2..1u64 << 16);
            let a = rng.gen_range(0..q);
            let b = rng.gen_range(0..q);
            assert_eq!(mod_mul(a, b, q).unwrap(), slow_mul_mod(a, b, q), "{a}*{b} mod {q}");
        }
    }

    #[test]
    fn mod_mul_full_width_modulus() {
        let q = u64::MAX - 58; // largest 64-bit prime
        let a = q - 1;
        // (-1)(-1) = 1
        assert_eq!(mod_mul(a, a, q).unwrap(), 1);
    }

    #[test]
    fn mod_inv_trivial_cases() {
        assert_eq!(mod_inv(1, 97), Some(1));
        assert_eq!(mod_inv(0, 97), None);
        assert_eq!(mod_inv(6, 9), None);
        assert_eq!(mod_inv(3, 1), None);
    }

    #[test]
    fn mod_inv_matches_exhaustive_search() {
        for q in 2..=257u64 {
            for a in 0..q {
                let brute = (1..q).find(|&x| (a * x) % q == 1);
                assert_eq!(mod_inv(a, q), brute, "a={a} q={q}");
            }
        }
    }

    #[test]
    fn mat_vec_basis_vector_gives_second_column() {
        let m = Mat2::new(11, 22, 33, 44);
        assert_eq!(mat_vec_mod(m, Vec2::new(0, 1), 101).unwrap(), Vec2::new(22, 44));
        assert_eq!(mat_vec_mod(Mat2::IDENTITY, Vec2::new(5, 9), 101).unwrap(), Vec2::new(5, 9));
    }

    #[test]
    fn mat_vec_rejects_unreduced_component() {
        assert_eq!(
            mat_vec_mod(Mat2::IDENTITY, Vec2::new(101, 0), 101),
            Err(ArithError::NotReduced { value: 101, modulus: 101 })
        );
    }

    #[test]
    fn mat_vec_matches_integer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let q = rng.gen_range(2..1u64 << 16);
            let m = Mat2::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
            let t = Vec2::new(rng.gen_range(0..q), rng.gen_range(0..q));
            let row = |a: u64, b: u64| -> u64 {
                ((a as u128 * t.c1 as u128 + b as u128 * t.c2 as u128) % q as u128) as u64
            };
            let got = mat_vec_mod(m, t, q).unwrap();
            assert_eq!(got, Vec2::new(row(m.m11, m.m12), row(m.m21, m.m22)));
        }
    }

    #[test]
    fn mat_inv_trivial_and_singular() {
        assert_eq!(mat_inv_mod(Mat2::IDENTITY, 65521), Some(Mat2::IDENTITY));
        assert_eq!(mat_inv_mod(Mat2::new(2, 4, 1, 2), 65521), None);
        // det = 6 - 0 = 6, not a unit mod 9
        assert_eq!(mat_inv_mod(Mat2::new(2, 0, 0, 3), 9), None);
    }

    #[test]
    fn mat_inv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tested = 0;
        while tested < 50 {
            let q = rng.gen_range(3..1u64 << 16);
            let m = Mat2::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
            let Some(inv) = mat_inv_mod(m, q) else { continue };
            tested += 1;
            assert_eq!(mat_mul_mod(inv, m, q).unwrap(), Mat2::IDENTITY.reduce(q));
            for _ in 0..100 {
                let t = Vec2::new(rng.gen_range(0..q), rng.gen_range(0..q));
                let c = mat_vec_mod(m, t, q).unwrap();
                assert_eq!(mat_vec_mod(inv, c, q).unwrap(), t);
            }
        }
    }

    #[test]
    fn transpose_and_product_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let q = rng.gen_range(2..1u64 << 16);
            let a = Mat2::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
            let b = Mat2::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
            let v = Vec2::new(rng.gen_range(0..q), rng.gen_range(0..q));
            assert_eq!(transpose(transpose(a)), a);
            assert_eq!(mat_mul_mod(a, Mat2::IDENTITY, q).unwrap(), a.reduce(q));
            let ab = mat_mul_mod(a, b, q).unwrap();
            let lhs = mat_vec_mod(ab, v, q).unwrap();
            let rhs = mat_vec_mod(a, mat_vec_mod(b, v, q).unwrap(), q).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn encode_boundaries() {
        let codec = LimbCodec::new(63).unwrap();
        assert_eq!(codec.encode(0).unwrap(), Vec2::new(0, 0));
        assert_eq!(codec.encode(1u128 << 63).unwrap(), Vec2::new(1, 0));
        assert_eq!(codec.encode((1u128 << 63) - 1).unwrap(), Vec2::new(0, (1u64 << 63) - 1));
        assert!(matches!(codec.encode(1u128 << 126), Err(ArithError::EncodeRange { .. })));
        assert!(matches!(codec.decode(Vec2::new(1u64 << 63, 0)), Err(ArithError::DecodeRange { .. })));
        assert!(LimbCodec::new(0).is_err());
    }

    #[test]
    fn encode_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bits in [15u32, 31, 63] {
            let codec = LimbCodec::new(bits).unwrap();
            for _ in 0..10_000 {
                let x = rng.gen::<u128>() % codec.value_bound();
                assert_eq!(codec.decode(codec.encode(x).unwrap()).unwrap(), x);
            }
        }
    }

    #[test]
    fn oversized_coordinate_decrypts_to_residue() {
        // A coordinate >= q survives encryption only as its residue class.
        let q = 65521u64;
        let m = Mat2::new(3, 5, 7, 11);
        let inv = mat_inv_mod(m, q).unwrap();
        let t = Vec2::new(q + 17, 42);
        let c = m.apply(t, q);
        let back = inv.apply(c, q);
        assert_ne!(back, t);
        assert_eq!(back, Vec2::new(17, 42));
    }
}
