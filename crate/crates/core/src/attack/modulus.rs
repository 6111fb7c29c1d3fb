//! Phase 3a: combine accepted reduced moduli into full-width candidates and
//! verify each candidate against the full ciphertext equations.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use super::leaks::PartialMatrix;
use super::qx::QxCandidate;
use super::AttackConfig;
use crate::formats::{dec_u128, dec_u64, dec_vec_u64};
use crate::modmath::{addmod, mod_inv, mulmod, submod, LimbCodec, Mat2, Vec2, Wide};
use crate::simulator::Transcript;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulusCandidate {
    #[serde(with = "dec_u64")]
    pub q: u64,
    #[serde(with = "dec_vec_u64")]
    pub factors: Vec<u64>,
    /// Sum of the factors' votes.
    pub weight: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub candidates: Vec<ModulusCandidate>,
    /// In-range products dropped by the candidate cap.
    pub overflow: usize,
    /// The enumeration hit its node budget; `overflow` is then a lower bound.
    #[serde(default)]
    pub truncated: bool,
    pub diagnostic: Option<String>,
}

/// Candidates from each equation group first (products of primes that
/// jointly solve one pair), then the global enumeration up to the cap.
pub fn reconstruct_from_groups(accepted: &[QxCandidate], groups: &[Vec<u64>], cfg: &AttackConfig) -> Reconstruction {
    let mut seen = std::collections::HashSet::new();
    let mut grouped: Vec<ModulusCandidate> = Vec::new();
    let mut truncated = false;
    for g in groups {
        let members: Vec<QxCandidate> = accepted.iter().filter(|c| g.contains(&c.qx)).cloned().collect();
        let r = reconstruct_q_candidates(&members, cfg);
        truncated |= r.truncated;
        for c in r.candidates {
            if seen.insert(c.q) {
                grouped.push(c);
            }
        }
    }
    grouped.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.q.cmp(&b.q)));
    let global = reconstruct_q_candidates(accepted, cfg);
    let in_range = (global.candidates.len() + global.overflow).max(grouped.len());
    let mut all = grouped;
    all.extend(global.candidates.into_iter().filter(|c| seen.insert(c.q)));
    all.truncate(cfg.max_candidates);
    let diagnostic = if all.is_empty() { global.diagnostic } else { None };
    Reconstruction {
        overflow: in_range.saturating_sub(all.len()),
        candidates: all,
        truncated: truncated || global.truncated,
        diagnostic,
    }
}

/// Search nodes one enumeration may visit before it stops early.
pub const RECONSTRUCTION_NODE_BUDGET: u64 = 1 << 27;

/// Worst candidate on top: lowest weight, then highest `q`.
struct Ranked(ModulusCandidate);

impl Ranked {
    fn key(&self) -> (std::cmp::Reverse<usize>, u64) {
        (std::cmp::Reverse(self.0.weight), self.0.q)
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

struct Walk<'a> {
    primes: &'a [(u64, usize)],
    max_mult: u32,
    bounds: (u128, u128),
    cap: usize,
    stack: Vec<u64>,
    best: BinaryHeap<Ranked>,
    in_range: usize,
    nodes: u64,
    truncated: bool,
}

impl Walk<'_> {
    fn walk(&mut self, idx: usize, prod: u128, weight: usize) {
        self.nodes += 1;
        if self.nodes > RECONSTRUCTION_NODE_BUDGET {
            self.truncated = true;
            return;
        }
        if idx == self.primes.len() {
            if prod > self.bounds.0 && prod < self.bounds.1 {
                self.in_range += 1;
                self.best.push(Ranked(ModulusCandidate { q: prod as u64, factors: self.stack.clone(), weight }));
                if self.best.len() > self.cap {
                    self.best.pop();
                }
            }
            return;
        }
        let (p, votes) = self.primes[idx];
        let mut cur = prod;
        let mut pushed = 0;
        for mult in 0..=self.max_mult {
            if mult > 0 {
                cur *= p as u128;
                if cur >= self.bounds.1 {
                    break;
                }
                self.stack.push(p);
                pushed += 1;
            }
            self.walk(idx + 1, cur, weight + votes * mult as usize);
            if self.truncated {
                break;
            }
        }
        self.stack.truncate(self.stack.len() - pushed);
    }
}

/// Enumerates products of accepted primes (each used at most
/// `cfg.max_multiplicity` times) that land in `(2^(b-1), 2^b)`, keeping the
/// `cfg.max_candidates` heaviest. Stops after [`RECONSTRUCTION_NODE_BUDGET`]
/// search nodes and sets `truncated`.
pub fn reconstruct_q_candidates(accepted: &[QxCandidate], cfg: &AttackConfig) -> Reconstruction {
    let mut primes: Vec<(u64, usize)> = accepted.iter().map(|c| (c.qx, c.votes)).collect();
    primes.sort_unstable();
    primes.dedup_by_key(|p| p.0);
    let mut w = Walk {
        primes: &primes,
        max_mult: cfg.max_multiplicity.max(1),
        bounds: (1u128 << (cfg.modulus_bits - 1), 1u128 << cfg.modulus_bits),
        cap: cfg.max_candidates,
        stack: Vec::new(),
        best: BinaryHeap::new(),
        in_range: 0,
        nodes: 0,
        truncated: false,
    };
    w.walk(0, 1, 0);

    let mut found: Vec<ModulusCandidate> = w.best.into_iter().map(|r| r.0).collect();
    found.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.q.cmp(&b.q)));
    let overflow = w.in_range - found.len();
    let diagnostic = if accepted.is_empty() {
        Some("no accepted reduced moduli".to_string())
    } else if found.is_empty() {
        Some("no product of accepted primes is in range; factor bound too small or too few sessions".to_string())
    } else {
        None
    };
    Reconstruction { candidates: found, overflow, truncated: w.truncated, diagnostic }
}

/// A modulus confirmed by the full equations, with what confirmed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedModulus {
    #[serde(with = "dec_u64")]
    pub q: u64,
    #[serde(with = "dec_u128")]
    pub s: Wide,
    /// `(partial label, m11)` recovered while solving pairs under `q`.
    pub completed: Vec<(usize, u64)>,
    /// Leak pairs agreeing on `(s1, s2, m11)`.
    pub consistent_pairs: usize,
    /// Distinct S-block ciphertexts satisfying both rows under `q`.
    pub confirmations: usize,
}

/// Full solution of one (variant, transposed) pair modulo `q`.
pub(crate) fn solve_pair(p: &PartialMatrix, c: Vec2, c_t: Vec2, q: u64) -> Option<(u64, u64, u64)> {
    if c.c1 >= q || c.c2 >= q || c_t.c1 >= q || c_t.c2 >= q {
        return None;
    }
    let (m12, m21, m22) = (p.m12 % q, p.m21 % q, p.m22 % q);
    let inv_diff = mod_inv(submod(m21, m12, q), q)?;
    // m21 s1 + m22 s2 = c2 and m12 s1 + m22 s2 = c2'
    let s1 = mulmod(submod(c.c2, c_t.c2, q), inv_diff, q);
    let s2 = mulmod(submod(c.c2, mulmod(m21, s1, q), q), mod_inv(m22, q)?, q);
    // m11 s1 + m12 s2 = c1
    let m11 = mulmod(submod(c.c1, mulmod(m12, s2, q), q), mod_inv(s1, q)?, q);
    // m11 s1 + m21 s2 = c1'
    (addmod(mulmod(m11, s1, q), mulmod(m21, s2, q), q) == c_t.c1).then_some((s1, s2, m11))
}

/// Whether `block` is `M·s mod q` for `M` or `Mᵀ`.
fn matches_either(m: Mat2, s: Vec2, block: Vec2, q: u64) -> bool {
    block.c1 < q && block.c2 < q && (m.apply(s, q) == block || m.transpose().apply(s, q) == block)
}

/// Distinct S-block ciphertexts explained by `matrices` and `s` under `q`.
/// Sessions sharing an effective state repeat the same block, so repeats
/// are not counted twice.
fn count_confirmations(matrices: &[Mat2], s: Vec2, q: u64, blocks: &[Vec2]) -> usize {
    blocks.iter().filter(|&&b| matrices.iter().any(|&m| matches_either(m, s, b, q))).count()
}

/// Secrets already recovered under some other verified modulus.
#[derive(Debug, Clone)]
pub struct KnownKeys {
    pub s: Wide,
    pub matrices: Vec<Mat2>,
}

/// Deduplicated S-blocks and pair equations of one transcript log, built
/// once and shared by every candidate check.
#[derive(Debug, Clone)]
pub struct VerifyContext<'a> {
    partials: &'a [PartialMatrix],
    blocks: Vec<Vec2>,
    /// `(partial index, variant block, transposed block, multiplicity)`.
    pairs: Vec<(usize, Vec2, Vec2, usize)>,
}

impl<'a> VerifyContext<'a> {
    pub fn new(transcripts: &[Transcript], partials: &'a [PartialMatrix]) -> Self {
        let blocks: BTreeSet<Vec2> = transcripts.iter().map(|t| t.c1[1]).collect();
        let mut pairs: BTreeMap<(usize, Vec2, Vec2), usize> = BTreeMap::new();
        for (k, p) in partials.iter().enumerate() {
            for (i, j) in p.session_pairs() {
                *pairs.entry((k, transcripts[i].c1[1], transcripts[j].c1[1])).or_default() += 1;
            }
        }
        Self {
            partials,
            blocks: blocks.into_iter().collect(),
            pairs: pairs.into_iter().map(|((k, c, ct), n)| (k, c, ct, n)).collect(),
        }
    }

    pub fn distinct_blocks(&self) -> usize {
        self.blocks.len()
    }
}

/// Verifies `q` either from leak pairs (solving S and `m11` afresh) or,
/// when `known` is given, directly against the recovered S and matrices.
pub fn verify_q(
    q: u64,
    transcripts: &[Transcript],
    partials: &[PartialMatrix],
    known: Option<&KnownKeys>,
    cfg: &AttackConfig,
) -> Option<VerifiedModulus> {
    verify_q_with(&VerifyContext::new(transcripts, partials), q, known, cfg)
}

pub fn verify_q_with(ctx: &VerifyContext<'_>, q: u64, known: Option<&KnownKeys>, cfg: &AttackConfig) -> Option<VerifiedModulus> {
    let codec = LimbCodec::new(cfg.limb_bits).ok()?;
    if let Some(keys) = known {
        let s = codec.encode(keys.s).ok()?;
        if s.c1 >= q || s.c2 >= q {
            return None;
        }
        let confirmations = count_confirmations(&keys.matrices, s, q, &ctx.blocks);
        return (confirmations >= cfg.verify_sessions).then(|| VerifiedModulus {
            q,
            s: keys.s,
            completed: Vec::new(),
            consistent_pairs: 0,
            confirmations,
        });
    }

    // (s1, s2) -> (label, m11) -> count
    let mut solutions: BTreeMap<(u64, u64), BTreeMap<(usize, u64), usize>> = BTreeMap::new();
    for &(k, c, c_t, n) in &ctx.pairs {
        let p = &ctx.partials[k];
        if let Some((s1, s2, m11)) = solve_pair(p, c, c_t, q) {
            *solutions.entry((s1, s2)).or_default().entry((p.label, m11)).or_default() += n;
        }
    }

    let mut best: Option<VerifiedModulus> = None;
    for ((s1, s2), per_label) in solutions {
        let Ok(s) = codec.decode(Vec2::new(s1, s2)) else { continue };
        // Most common m11 per label.
        let mut completed: BTreeMap<usize, (u64, usize)> = BTreeMap::new();
        for (&(label, m11), &n) in &per_label {
            let e = completed.entry(label).or_insert((m11, 0));
            if n > e.1 {
                *e = (m11, n);
            }
        }
        let consistent_pairs = completed.values().map(|&(_, n)| n).sum();
        let matrices: Vec<Mat2> = completed
            .iter()
            .filter_map(|(&label, &(m11, _))| {
                let p = ctx.partials.iter().find(|p| p.label == label)?;
                Some(Mat2::new(m11, p.m12, p.m21, p.m22))
            })
            .collect();
        let confirmations = count_confirmations(&matrices, Vec2::new(s1, s2), q, &ctx.blocks);
        if confirmations < cfg.verify_sessions {
            continue;
        }
        let candidate = VerifiedModulus {
            q,
            s,
            completed: completed.into_iter().map(|(l, (m11, _))| (l, m11)).collect(),
            consistent_pairs,
            confirmations,
        };
        if best.as_ref().is_none_or(|b| candidate.confirmations > b.confirmations) {
            best = Some(candidate);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qx(qx: u64, votes: usize) -> QxCandidate {
        QxCandidate { qx, votes, residues: (0, 0) }
    }

    fn cfg16() -> AttackConfig {
        AttackConfig { modulus_bits: 16, limb_bits: 15, entry_bits: 14, ..AttackConfig::default() }
    }

    #[test]
    fn true_factor_multiset_is_reconstructed() {
        // 211 * 227 = 47897 in (2^15, 2^16)
        let rec = reconstruct_q_candidates(&[qx(211, 5), qx(227, 9), qx(3, 4)], &cfg16());
        let qs: Vec<u64> = rec.candidates.iter().map(|c| c.q).collect();
        assert!(qs.contains(&47897));
        for c in &rec.candidates {
            assert!(c.q > 1 << 15);
            assert_eq!(c.factors.iter().product::<u64>(), c.q);
        }
        // deterministic, weight-ordered
        assert_eq!(rec, reconstruct_q_candidates(&[qx(3, 4), qx(227, 9), qx(211, 5)], &cfg16()));
        assert!(rec.candidates.windows(2).all(|w| w[0].weight >= w[1].weight));
    }

    #[test]
    fn multiplicity_cap_and_overflow() {
        let mut cfg = cfg16();
        cfg.max_multiplicity = 1;
        // 3^10 = 59049 needs multiplicity 10
        let rec = reconstruct_q_candidates(&[qx(3, 4)], &cfg);
        assert!(rec.candidates.is_empty());
        assert!(rec.diagnostic.is_some());
        cfg.max_multiplicity = 10;
        assert_eq!(reconstruct_q_candidates(&[qx(3, 4)], &cfg).candidates[0].q, 59049);

        cfg.max_multiplicity = 3;
        cfg.max_candidates = 2;
        let primes: Vec<QxCandidate> = [3, 5, 7, 11, 13, 17, 19, 23].iter().map(|&p| qx(p, 4)).collect();
        let rec = reconstruct_q_candidates(&primes, &cfg);
        assert_eq!(rec.candidates.len(), 2);
        assert!(rec.overflow > 0);
    }

    #[test]
    fn pair_solution_recovers_secret_and_missing_entry() {
        let q = 1_000_003u64;
        let a = Mat2::new(123_456, 654_321, 111_111, 222_222);
        let s = Vec2::new(77_777, 99_999);
        let p = PartialMatrix {
            label: 0,
            m11: None,
            m12: a.m12,
            m21: a.m21,
            m22: a.m22,
            variant_positions: vec![],
            transposed_positions: vec![],
        };
        let got = solve_pair(&p, a.apply(s, q), a.transpose().apply(s, q), q).unwrap();
        assert_eq!(got, (s.c1, s.c2, a.m11));
        // wrong modulus: the cross-check fails
        assert_eq!(solve_pair(&p, a.apply(s, q), a.transpose().apply(s, q), q - 2), None);
    }
}
