//! Key material, the AM/SUEO/DBLTKM effective-state machine, block
//! encryption and the per-session state update.

use rand::seq::SliceRandom;
use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

use crate::modmath::{self, mat_inv_mod, mat_mul_mod, mod_inv, ArithError, LimbCodec, Mat2, Vec2, Wide};
use crate::params::{FamilyMode, ParamError, SystemParams, Z_DBLTKM, Z_SUEO};
use crate::primes::is_prime;

const GEN_RETRIES: usize = 500;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error("generation failed after {attempts} attempts: {constraint}")]
    Generation { attempts: usize, constraint: &'static str },
    #[error("index {index} out of range for {what} (size {size})")]
    Index { what: &'static str, index: u64, size: u64 },
    #[error("effective matrix not invertible modulo {0}")]
    Singular(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulusInfo {
    #[serde(with = "crate::formats::dec_u64")]
    pub q: u64,
    /// Ground-truth prime factors, ascending. Test sidecar only.
    #[serde(with = "crate::formats::dec_vec_u64")]
    pub factors: Vec<u64>,
}

/// The hidden composite `p` and its table of session moduli.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmSystem {
    #[serde(with = "crate::formats::dec_biguint")]
    pub p: BigUint,
    pub table: Vec<ModulusInfo>,
}

impl AmSystem {
    pub fn moduli(&self) -> impl Iterator<Item = u64> + '_ {
        self.table.iter().map(|m| m.q)
    }

    pub fn modulus(&self, am_idx: usize) -> u64 {
        self.table[am_idx].q
    }

    /// Index of `q` in the table, if present.
    pub fn index_of(&self, q: u64) -> Option<usize> {
        self.table.iter().position(|m| m.q == q)
    }

    /// Primes that divide at least two table moduli.
    pub fn shared_primes(&self) -> BTreeSet<u64> {
        let mut seen = BTreeSet::new();
        let mut shared = BTreeSet::new();
        for info in &self.table {
            let distinct: BTreeSet<u64> = info.factors.iter().copied().collect();
            for f in distinct {
                if !seen.insert(f) {
                    shared.insert(f);
                }
            }
        }
        shared
    }

    pub fn all_primes(&self) -> BTreeSet<u64> {
        self.table.iter().flat_map(|m| m.factors.iter().copied()).collect()
    }
}

fn random_prime_in<R: Rng + ?Sized>(lo: u64, hi: u64, rng: &mut R) -> Option<u64> {
    let lo = lo.max(3);
    if lo > hi {
        return None;
    }
    for _ in 0..64 {
        let c = rng.gen_range(lo..=hi) | 1;
        if c <= hi && is_prime(c) {
            return Some(c);
        }
    }
    // sparse or tiny range: scan from a random start
    let start = rng.gen_range(lo..=hi);
    (start..=hi).chain(lo..start).find(|&c| c % 2 == 1 && is_prime(c))
}

fn random_prime_of_bits<R: Rng + ?Sized>(bits: u32, rng: &mut R) -> u64 {
    random_prime_in(1u64 << (bits - 1), (1u64 << bits) - 1, rng).expect("every bit size >= 2 holds an odd prime")
}

/// One smooth modulus in `(lo, hi)`: pool primes reused with probability
/// one half, fresh primes otherwise, closed by a prime that lands in range.
fn build_modulus<R: Rng + ?Sized>(
    pool: &mut Vec<u64>,
    params: &SystemParams,
    rng: &mut R,
) -> Option<Vec<u64>> {
    let f = params.factor_bound_bits;
    let min_bits = f.div_ceil(2).max(3);
    let (lo, hi) = (params.modulus_low() as u128, params.modulus_high());
    let max_factor = (1u128 << f) - 1;
    let mut prod: u128 = 1;
    let mut factors: Vec<u64> = Vec::new();
    for _ in 0..64 {
        let need_lo = (lo / prod) + 1;
        let need_hi = (hi - 1) / prod;
        if need_hi <= max_factor {
            let p = (0..8)
                .filter_map(|_| random_prime_in(need_lo as u64, need_hi as u64, rng))
                .find(|p| !factors.contains(p))?;
            factors.push(p);
            if !pool.contains(&p) {
                pool.push(p);
            }
            factors.sort_unstable();
            return Some(factors);
        }
        let reusable: Vec<u64> = pool
            .iter()
            .copied()
            .filter(|p| !factors.contains(p) && prod * (*p as u128) < hi)
            .collect();
        let p = if !reusable.is_empty() && rng.gen_bool(0.5) {
            *reusable.choose(rng)?
        } else {
            let p = random_prime_of_bits(rng.gen_range(min_bits..=f), rng);
            if factors.contains(&p) {
                continue;
            }
            if !pool.contains(&p) {
                pool.push(p);
            }
            p
        };
        prod *= p as u128;
        factors.push(p);
    }
    None
}

/// Builds a table of `am_table_size` distinct smooth moduli, each a product
/// of primes of at most `factor_bound_bits` bits, all dividing one `p`.
pub fn gen_am_system<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> Result<AmSystem, ProtocolError> {
    params.validate()?;
    let mut last_failure = "too few in-range products";
    for _ in 0..GEN_RETRIES {
        let mut pool: Vec<u64> = Vec::new();
        let mut table: Vec<ModulusInfo> = Vec::new();
        for _ in 0..params.am_table_size * 8 {
            if table.len() == params.am_table_size {
                break;
            }
            let Some(factors) = build_modulus(&mut pool, params, rng) else { continue };
            let q = factors.iter().product::<u64>();
            if table.iter().all(|m| m.q != q) {
                table.push(ModulusInfo { q, factors });
            }
        }
        if table.len() < params.am_table_size {
            last_failure = "too few in-range products";
            continue;
        }
        let system = AmSystem { p: lcm_of_table(&table), table };
        if system.shared_primes().is_empty() {
            last_failure = "no prime shared by two moduli";
            continue;
        }
        return Ok(system);
    }
    Err(ProtocolError::Generation { attempts: GEN_RETRIES, constraint: last_failure })
}

fn lcm_of_table(table: &[ModulusInfo]) -> BigUint {
    let primes: BTreeSet<u64> = table.iter().flat_map(|m| m.factors.iter().copied()).collect();
    primes.into_iter().map(BigUint::from).product()
}

/// Effective-state selector indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateIndices {
    pub dbltkm: u64,
    pub sueo: u64,
    pub am: u64,
}

/// Long-term shared secrets plus the current selector indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretState {
    #[serde(with = "crate::formats::dec_mat")]
    pub a: Mat2,
    #[serde(with = "crate::formats::dec_mat")]
    pub b: Mat2,
    #[serde(with = "crate::formats::dec_u128")]
    pub s: Wide,
    #[serde(with = "crate::formats::dec_u128")]
    pub id: Wide,
    pub indices: StateIndices,
}

fn matrix_is_usable(m: Mat2, am: &AmSystem) -> bool {
    am.moduli().all(|q| {
        let diff = modmath::submod(m.m21 % q, m.m12 % q, q);
        mod_inv(m.det_mod(q), q).is_some() && mod_inv(diff, q).is_some()
    })
}

fn random_matrix<R: Rng + ?Sized>(entry_bits: u32, rng: &mut R) -> Mat2 {
    let bound = 1u64 << entry_bits;
    Mat2::new(
        rng.gen_range(0..bound),
        rng.gen_range(0..bound),
        rng.gen_range(0..bound),
        rng.gen_range(0..bound),
    )
}

pub fn gen_secret_state<R: Rng + ?Sized>(
    params: &SystemParams,
    am: &AmSystem,
    rng: &mut R,
) -> Result<SecretState, ProtocolError> {
    params.validate()?;
    let draw = |rng: &mut R| -> Result<Mat2, ProtocolError> {
        for _ in 0..GEN_RETRIES {
            let m = random_matrix(params.entry_bits, rng);
            if matrix_is_usable(m, am) {
                return Ok(m);
            }
        }
        Err(ProtocolError::Generation { attempts: GEN_RETRIES, constraint: "base matrix not invertible" })
    };
    let a = draw(rng)?;
    let b = draw(rng)?;
    let bound = params.value_bound();
    Ok(SecretState {
        a,
        b,
        s: rng.gen_range(0..bound),
        id: rng.gen_range(0..bound),
        indices: StateIndices {
            dbltkm: rng.gen_range(0..Z_DBLTKM),
            sueo: rng.gen_range(0..Z_SUEO),
            am: rng.gen_range(0..params.z_am()),
        },
    })
}

/// One of the four single-matrix variants `{A, B, Aᵀ, Bᵀ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
    At,
    Bt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::At, Variant::Bt];

    pub fn from_index(idx: u64) -> Option<Self> {
        Self::ALL.get(idx as usize).copied()
    }

    pub fn index(self) -> u64 {
        self as u64
    }

    pub fn matrix(self, a: Mat2, b: Mat2) -> Mat2 {
        match self {
            Variant::A => a,
            Variant::B => b,
            Variant::At => a.transpose(),
            Variant::Bt => b.transpose(),
        }
    }

    pub fn transposed(self) -> Self {
        match self {
            Variant::A => Variant::At,
            Variant::B => Variant::Bt,
            Variant::At => Variant::A,
            Variant::Bt => Variant::B,
        }
    }

    /// `(first, second)` base pair handed to SUEO once this variant is picked.
    fn ordered_pair(self, a: Mat2, b: Mat2) -> (Mat2, Mat2) {
        match self {
            Variant::A => (a, b),
            Variant::B => (b, a),
            Variant::At => (a.transpose(), b.transpose()),
            Variant::Bt => (b.transpose(), a.transpose()),
        }
    }
}

/// A SUEO ordering, evaluated modulo the session modulus at use time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixExpr {
    Single(Mat2),
    Product(Mat2, Mat2),
}

impl MatrixExpr {
    pub fn eval(self, q: u64) -> Result<Mat2, ArithError> {
        match self {
            MatrixExpr::Single(m) => Ok(m),
            MatrixExpr::Product(x, y) => mat_mul_mod(x, y, q),
        }
    }
}

/// SUEO choice: `A, B, AB, BA` for `idx = 0, 1, 2, 3`.
pub fn sueo_select(idx: u64, a: Mat2, b: Mat2) -> Result<MatrixExpr, ProtocolError> {
    match idx {
        0 => Ok(MatrixExpr::Single(a)),
        1 => Ok(MatrixExpr::Single(b)),
        2 => Ok(MatrixExpr::Product(a, b)),
        3 => Ok(MatrixExpr::Product(b, a)),
        _ => Err(ProtocolError::Index { what: "SUEO", index: idx, size: Z_SUEO }),
    }
}

/// DBLTKM family member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbltkmPattern {
    Single(Variant),
    /// Block-diagonal pair: even block positions use the first variant,
    /// odd positions the second.
    Pair(Variant, Variant),
}

impl DbltkmPattern {
    pub fn variant_at(self, block: usize) -> Variant {
        match self {
            DbltkmPattern::Single(v) => v,
            DbltkmPattern::Pair(even, odd) => {
                if block.is_multiple_of(2) {
                    even
                } else {
                    odd
                }
            }
        }
    }
}

pub fn dbltkm_select(idx: u64) -> Result<DbltkmPattern, ProtocolError> {
    match idx {
        0..=3 => Ok(DbltkmPattern::Single(Variant::ALL[idx as usize])),
        4..=19 => {
            let k = (idx - 4) as usize;
            Ok(DbltkmPattern::Pair(Variant::ALL[k / 4], Variant::ALL[k % 4]))
        }
        _ => Err(ProtocolError::Index { what: "DBLTKM", index: idx, size: Z_DBLTKM }),
    }
}

/// The concrete `(matrix, modulus)` pair encrypting a session's blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveState {
    /// Encryption matrix for even and odd block positions.
    pub matrices: [Mat2; 2],
    pub decrypt_matrices: [Mat2; 2],
    pub modulus: u64,
}

impl EffectiveState {
    pub fn from_matrix(matrix: Mat2, modulus: u64) -> Result<Self, ProtocolError> {
        Self::from_pair([matrix, matrix], modulus)
    }

    pub fn from_pair(matrices: [Mat2; 2], modulus: u64) -> Result<Self, ProtocolError> {
        let inv = |m: Mat2| mat_inv_mod(m, modulus).ok_or(ProtocolError::Singular(modulus));
        Ok(Self { matrices, decrypt_matrices: [inv(matrices[0])?, inv(matrices[1])?], modulus })
    }

    pub fn matrix_at(&self, block: usize) -> Mat2 {
        self.matrices[block % 2]
    }

    /// Same transformation on every block.
    pub fn same_action(&self, other: &EffectiveState) -> bool {
        let q = self.modulus;
        q == other.modulus
            && (0..2).all(|i| self.matrices[i].reduce(q) == other.matrices[i].reduce(q))
    }

    pub fn encrypt_block(&self, block: usize, t: Vec2) -> Result<Vec2, ArithError> {
        modmath::mat_vec_mod(self.matrix_at(block), t, self.modulus)
    }

    pub fn decrypt_block(&self, block: usize, c: Vec2) -> Result<Vec2, ArithError> {
        modmath::mat_vec_mod(self.decrypt_matrices[block % 2], c, self.modulus)
    }
}

pub fn derive_effective_state(
    state: &SecretState,
    am: &AmSystem,
    params: &SystemParams,
) -> Result<EffectiveState, ProtocolError> {
    let idx = state.indices;
    if idx.am >= am.table.len() as u64 {
        return Err(ProtocolError::Index { what: "AM", index: idx.am, size: am.table.len() as u64 });
    }
    let q = am.modulus(idx.am as usize);
    match params.family_mode {
        FamilyMode::PaperModel => {
            let v = Variant::from_index(idx.sueo)
                .ok_or(ProtocolError::Index { what: "SUEO", index: idx.sueo, size: Z_SUEO })?;
            EffectiveState::from_matrix(v.matrix(state.a, state.b), q)
        }
        FamilyMode::Full20 => {
            let pattern = dbltkm_select(idx.dbltkm)?;
            let mut pair = [Mat2::IDENTITY; 2];
            for (block, slot) in pair.iter_mut().enumerate() {
                let (first, second) = pattern.variant_at(block).ordered_pair(state.a, state.b);
                *slot = sueo_select(idx.sueo, first, second)?.eval(q)?;
            }
            EffectiveState::from_pair(pair, q)
        }
    }
}

/// Limb-encodes each value to one block and encrypts blocks independently.
pub fn encrypt_message(values: &[Wide], eff: &EffectiveState, codec: LimbCodec) -> Result<Vec<Vec2>, ArithError> {
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| eff.encrypt_block(i, codec.encode(x)?))
        .collect()
}

pub fn decrypt_message(blocks: &[Vec2], eff: &EffectiveState, codec: LimbCodec) -> Result<Vec<Wide>, ArithError> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, &c)| codec.decode(eff.decrypt_block(i, c)?))
        .collect()
}

/// Server-generated update values `S^d, S^p, S^c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateSecrets {
    pub sd: Wide,
    pub sp: Wide,
    pub sc: Wide,
}

impl UpdateSecrets {
    pub fn random<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> Self {
        let bound = params.value_bound();
        Self { sd: rng.gen_range(0..bound), sp: rng.gen_range(0..bound), sc: rng.gen_range(0..bound) }
    }

    /// The only part of the update secrets the state machine uses.
    pub fn reduced(&self, params: &SystemParams) -> StateIndices {
        StateIndices {
            dbltkm: (self.sd % Z_DBLTKM as u128) as u64,
            sueo: (self.sp % Z_SUEO as u128) as u64,
            am: (self.sc % params.z_am() as u128) as u64,
        }
    }
}

pub fn update_state(state: &SecretState, upd: &UpdateSecrets, params: &SystemParams) -> SecretState {
    SecretState { indices: upd.reduced(params), ..state.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk(seed: u64) -> (SystemParams, AmSystem, SecretState) {
        let params = SystemParams::desk_scale().with_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let am = gen_am_system(&params, &mut rng).unwrap();
        let st = gen_secret_state(&params, &am, &mut rng).unwrap();
        (params, am, st)
    }

    #[test]
    fn am_system_invariants() {
        for (mb, f) in [(32, 16), (64, 20), (64, 32), (16, 6)] {
            let params = SystemParams::with_modulus_bits(mb, f);
            let mut rng = ChaCha8Rng::seed_from_u64(mb as u64 * 100 + f as u64);
            let am = gen_am_system(&params, &mut rng).unwrap();
            assert_eq!(am.table.len(), 8);
            let distinct: BTreeSet<u64> = am.moduli().collect();
            assert_eq!(distinct.len(), 8);
            for info in &am.table {
                assert_eq!(info.factors.iter().product::<u64>(), info.q);
                assert_eq!(&am.p % info.q, BigUint::from(0u32));
                assert!(info.q > params.modulus_low() && (info.q as u128) < params.modulus_high());
                assert_eq!(info.q % 2, 1);
                for &f_ in &info.factors {
                    assert!(is_prime(f_));
                    assert!(64 - f_.leading_zeros() <= f);
                }
            }
            assert!(!am.shared_primes().is_empty());
        }
    }

    #[test]
    fn am_system_is_deterministic() {
        let params = SystemParams::with_modulus_bits(32, 16);
        let a = gen_am_system(&params, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gen_am_system(&params, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn secret_state_invariants() {
        let (params, am, st) = desk(1);
        for q in am.moduli() {
            assert_eq!(modmath::gcd(st.a.det_mod(q), q), 1);
            assert_eq!(modmath::gcd(st.b.det_mod(q), q), 1);
        }
        assert!(st.s < params.value_bound() && st.id < params.value_bound());
        assert!(st.a.entries().iter().all(|&e| e < 1 << params.entry_bits));
        let defaults = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let am64 = gen_am_system(&defaults, &mut rng).unwrap();
        let st64 = gen_secret_state(&defaults, &am64, &mut rng).unwrap();
        assert!(st64.s < 1u128 << 126);
    }

    #[test]
    fn different_seeds_give_different_matrices() {
        let mats: BTreeSet<[u64; 4]> = (0..100).map(|s| desk(s).2.a.entries()).collect();
        assert_eq!(mats.len(), 100);
    }

    #[test]
    fn sueo_choices() {
        let a = Mat2::new(1, 2, 3, 4);
        let b = Mat2::new(5, 6, 7, 8);
        assert_eq!(sueo_select(0, a, b).unwrap(), MatrixExpr::Single(a));
        assert_eq!(sueo_select(1, a, b).unwrap(), MatrixExpr::Single(b));
        assert!(sueo_select(4, a, b).is_err());
        let ab = sueo_select(2, a, a).unwrap().eval(101).unwrap();
        let ba = sueo_select(3, a, a).unwrap().eval(101).unwrap();
        assert_eq!(ab, ba);
        assert_eq!((0..Z_SUEO).filter(|&i| sueo_select(i, a, b).is_ok()).count(), 4);
    }

    #[test]
    fn dbltkm_family() {
        assert_eq!(dbltkm_select(2).unwrap(), DbltkmPattern::Single(Variant::At));
        assert_eq!(dbltkm_select(4).unwrap(), DbltkmPattern::Pair(Variant::A, Variant::A));
        assert_eq!(dbltkm_select(19).unwrap(), DbltkmPattern::Pair(Variant::Bt, Variant::Bt));
        assert!(dbltkm_select(20).is_err());
        assert_eq!((0..100).filter(|&i| dbltkm_select(i).is_ok()).count(), 20);

        let (mut params, am, mut st) = desk(4);
        params.family_mode = FamilyMode::Full20;
        st.indices = StateIndices { dbltkm: 0, sueo: 1, am: 0 };
        let single = derive_effective_state(&st, &am, &params).unwrap();
        st.indices.dbltkm = 4;
        let pair = derive_effective_state(&st, &am, &params).unwrap();
        assert!(single.same_action(&pair));
    }

    #[test]
    fn four_variant_mapping() {
        let (params, am, mut st) = desk(5);
        st.indices = StateIndices { dbltkm: 7, sueo: 2, am: 3 };
        let eff = derive_effective_state(&st, &am, &params).unwrap();
        assert_eq!(eff.matrices, [st.a.transpose(); 2]);
        assert_eq!(eff.modulus, am.modulus(3));
    }

    #[test]
    fn decrypt_matrices_invert() {
        for mode in [FamilyMode::PaperModel, FamilyMode::Full20] {
            let (mut params, am, mut st) = desk(6);
            params.family_mode = mode;
            for d in 0..Z_DBLTKM {
                for s in 0..Z_SUEO {
                    for a in 0..params.z_am() {
                        st.indices = StateIndices { dbltkm: d, sueo: s, am: a };
                        let eff = derive_effective_state(&st, &am, &params).unwrap();
                        for i in 0..2 {
                            let prod = mat_mul_mod(eff.decrypt_matrices[i], eff.matrices[i], eff.modulus).unwrap();
                            assert_eq!(prod, Mat2::IDENTITY);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn message_block_counts_and_no_chaining() {
        let (params, am, st) = desk(8);
        let codec = LimbCodec::new(params.limb_bits).unwrap();
        let eff = derive_effective_state(&st, &am, &params).unwrap();
        let c1 = encrypt_message(&[12345, st.s], &eff, codec).unwrap();
        assert_eq!(c1.len(), 2);
        let c3 = encrypt_message(&[1, 2, 3, 4], &eff, codec).unwrap();
        assert_eq!(c3.len(), 4);
        let same = encrypt_message(&[st.s, st.s], &eff, codec).unwrap();
        assert_eq!(same[0], same[1]);
        assert_eq!(decrypt_message(&c1, &eff, codec).unwrap(), vec![12345, st.s]);
        assert!(encrypt_message(&[params.value_bound()], &eff, codec).is_err());
    }

    #[test]
    fn update_uses_only_reductions() {
        let (params, _am, st) = desk(10);
        let u = UpdateSecrets { sd: 33, sp: 6, sc: 13 };
        let shifted = UpdateSecrets { sd: 53, sp: 10, sc: 21 };
        let next = update_state(&st, &u, &params);
        assert_eq!(next, update_state(&st, &shifted, &params));
        assert_eq!(next.indices, StateIndices { dbltkm: 13, sueo: 2, am: 5 });
        assert_eq!((next.a, next.b, next.s, next.id), (st.a, st.b, st.s, st.id));
        let zero = update_state(&st, &UpdateSecrets { sd: 0, sp: 0, sc: 0 }, &params);
        assert_eq!(zero.indices, StateIndices { dbltkm: 0, sueo: 0, am: 0 });
    }
}
