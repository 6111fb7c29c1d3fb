//! Phase 2: reduced-modulus scan. For each small prime `qx`, solve the
//! reduced equations for `S mod qx` across (variant, transposed) session
//! pairs and count how many pairs agree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use super::leaks::PartialMatrix;
use super::AttackConfig;
use crate::modmath::{addmod, mod_inv, mulmod, submod, Vec2};
use crate::primes::{odd_primes_in_range, odd_primes_up_to};
use crate::simulator::Transcript;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QxCandidate {
    pub qx: u64,
    /// Size of the largest group of pairs agreeing on `(s1, s2) mod qx`.
    pub votes: usize,
    pub residues: (u64, u64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QxScan {
    pub candidates: Vec<QxCandidate>,
    pub primes_scanned: u64,
    pub pairs: usize,
    /// Reduced-system solves attempted (`primes × pairs`).
    pub checks: u64,
    /// Wall time; left out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
    pub diagnostic: Option<String>,
}

/// S-block ciphertexts of one (variant, transposed) pair plus the three
/// known entries of its base matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct PairEquations {
    m12: u64,
    m22: u64,
    c: Vec2,
    c_t: Vec2,
}

fn collect_pairs(transcripts: &[Transcript], partials: &[PartialMatrix]) -> Vec<(usize, PairEquations)> {
    let mut out = Vec::new();
    for (k, p) in partials.iter().enumerate() {
        for (i, j) in p.session_pairs() {
            out.push((
                k,
                PairEquations { m12: p.m12, m22: p.m22, c: transcripts[i].c1[1], c_t: transcripts[j].c1[1] },
            ));
        }
    }
    out
}

/// Solves one pair modulo `qx`; `None` when a coefficient is not a unit or
/// the overdetermined check fails.
fn solve_reduced(eq: &PairEquations, qx: u64, inv_diff: u64, inv_m21: u64) -> Option<(u64, u64)> {
    let (m12, m22) = (eq.m12 % qx, eq.m22 % qx);
    let c = eq.c.reduce(qx);
    let c_t = eq.c_t.reduce(qx);
    // (m21 - m12) s2 = c1' - c1
    let s2 = mulmod(submod(c_t.c1, c.c1, qx), inv_diff, qx);
    // m21 s1 + m22 s2 = c2
    let s1 = mulmod(submod(c.c2, mulmod(m22, s2, qx), qx), inv_m21, qx);
    // m12 s1 + m22 s2 = c2'
    (addmod(mulmod(m12, s1, qx), mulmod(m22, s2, qx), qx) == c_t.c2).then_some((s1, s2))
}

fn scan_prime(qx: u64, pairs: &[(usize, PairEquations)], partials: &[PartialMatrix], scratch: &mut Vec<(u64, u64)>) -> Option<QxCandidate> {
    scratch.clear();
    let units: Vec<Option<(u64, u64)>> = partials
        .iter()
        .map(|p| {
            let diff = submod(p.m21 % qx, p.m12 % qx, qx);
            Some((mod_inv(diff, qx)?, mod_inv(p.m21 % qx, qx)?))
        })
        .collect();
    for (k, eq) in pairs {
        let Some((inv_diff, inv_m21)) = units[*k] else { continue };
        if let Some(sol) = solve_reduced(eq, qx, inv_diff, inv_m21) {
            scratch.push(sol);
        }
    }
    if scratch.is_empty() {
        return None;
    }
    scratch.sort_unstable();
    let mut best = (0usize, scratch[0]);
    let mut run = 0usize;
    for i in 0..scratch.len() {
        run = if i > 0 && scratch[i] == scratch[i - 1] { run + 1 } else { 1 };
        if run > best.0 {
            best = (run, scratch[i]);
        }
    }
    Some(QxCandidate { qx, votes: best.0, residues: best.1 })
}

/// Scans every odd prime up to `2^factor_bound_bits`, partitioned into
/// contiguous ranges scanned in parallel. Result order is by `qx`.
pub fn qx_scan(transcripts: &[Transcript], partials: &[PartialMatrix], cfg: &AttackConfig) -> QxScan {
    let start = Instant::now();
    let pairs = collect_pairs(transcripts, partials);
    if pairs.is_empty() {
        return QxScan {
            diagnostic: Some("no (variant, transposed) session pairs; collect more sessions".into()),
            ..Default::default()
        };
    }
    let limit = 1u64 << cfg.factor_bound_bits;
    let base = odd_primes_up_to(((limit as f64).sqrt() as u64) + 1);
    let chunk = cfg.scan_chunk.max(1024);
    let ranges: Vec<(u64, u64)> = (0..limit.div_ceil(chunk))
        .map(|i| (i * chunk, ((i + 1) * chunk).min(limit + 1)))
        .collect();

    let per_range: Vec<(u64, Vec<QxCandidate>)> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let primes = odd_primes_in_range(lo, hi, &base);
            let mut scratch = Vec::with_capacity(pairs.len());
            let accepted = primes
                .iter()
                .filter_map(|&qx| scan_prime(qx, &pairs, partials, &mut scratch))
                .filter(|c| c.votes >= cfg.accept_threshold)
                .collect();
            (primes.len() as u64, accepted)
        })
        .collect();

    let primes_scanned: u64 = per_range.iter().map(|(n, _)| n).sum();
    let candidates: Vec<QxCandidate> = per_range.into_iter().flat_map(|(_, c)| c).collect();
    let diagnostic = candidates.is_empty().then(|| "no reduced modulus reached the vote threshold".to_string());
    QxScan {
        candidates,
        primes_scanned,
        pairs: pairs.len(),
        checks: primes_scanned * pairs.len() as u64,
        seconds: start.elapsed().as_secs_f64(),
        diagnostic,
    }
}

/// For each distinct pair equation, the accepted primes whose majority
/// residue solves it. Every factor of a modulus shared by both sessions of a
/// pair lands in that pair's group. Groups are deduplicated and sorted.
pub fn equation_groups(transcripts: &[Transcript], partials: &[PartialMatrix], accepted: &[QxCandidate]) -> Vec<Vec<u64>> {
    let mut distinct: Vec<PairEquations> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (_, eq) in collect_pairs(transcripts, partials) {
        if seen.insert((eq.m12, eq.m22, eq.c, eq.c_t)) {
            distinct.push(eq);
        }
    }
    let mut groups: std::collections::BTreeSet<Vec<u64>> = std::collections::BTreeSet::new();
    for eq in &distinct {
        let p_m21 = partials.iter().find(|p| p.m12 == eq.m12 && p.m22 == eq.m22).map(|p| p.m21);
        let Some(m21) = p_m21 else { continue };
        let group: Vec<u64> = accepted
            .iter()
            .filter(|c| {
                let qx = c.qx;
                let (Some(inv_diff), Some(inv_m21)) =
                    (mod_inv(submod(m21 % qx, eq.m12 % qx, qx), qx), mod_inv(m21 % qx, qx))
                else {
                    return false;
                };
                solve_reduced(eq, qx, inv_diff, inv_m21) == Some(c.residues)
            })
            .map(|c| c.qx)
            .collect();
        if !group.is_empty() {
            groups.insert(group);
        }
    }
    groups.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modmath::Mat2;

    // A tiny hand-built instance: A, S and one modulus q = 101 * 103.
    fn instance() -> (Vec<Transcript>, PartialMatrix, Mat2, Vec2, u64) {
        let a = Mat2::new(17, 5, 29, 41);
        let s = Vec2::new(1234, 4321);
        let q = 101 * 103;
        let enc = |m: Mat2| m.apply(s, q);
        let z = Vec2::default();
        let mk = |id: u64, c: Vec2| Transcript {
            session_id: id,
            c1: vec![z, c],
            c2: vec![z, c],
            c3: vec![z; 4],
            c4: vec![z; 4],
            c5: vec![z; 2],
            c6: vec![z; 2],
        };
        let ts: Vec<Transcript> = (0..6)
            .map(|i| mk(i, if i % 2 == 0 { enc(a) } else { enc(a.transpose()) }))
            .collect();
        let partial = PartialMatrix {
            label: 0,
            m11: None,
            m12: a.m12,
            m21: a.m21,
            m22: a.m22,
            variant_positions: vec![0, 2, 4],
            transposed_positions: vec![1, 3, 5],
        };
        (ts, partial, a, s, q)
    }

    #[test]
    fn true_factors_collect_all_votes() {
        let (ts, partial, _, s, _) = instance();
        let pairs = collect_pairs(&ts, std::slice::from_ref(&partial));
        let mut scratch = Vec::new();
        for qx in [101u64, 103] {
            let c = scan_prime(qx, &pairs, std::slice::from_ref(&partial), &mut scratch).unwrap();
            assert_eq!(c.votes, 9);
            assert_eq!(c.residues, (s.c1 % qx, s.c2 % qx));
        }
    }

    #[test]
    fn scan_reports_true_factors() {
        let (ts, partial, ..) = instance();
        let cfg = AttackConfig { factor_bound_bits: 8, ..AttackConfig::default() };
        let scan = qx_scan(&ts, &[partial], &cfg);
        let qs: Vec<u64> = scan.candidates.iter().map(|c| c.qx).collect();
        assert!(qs.contains(&101) && qs.contains(&103));
        assert_eq!(scan.pairs, 9);
        assert_eq!(scan.primes_scanned, odd_primes_up_to(256).len() as u64);
    }

    #[test]
    fn no_pairs_gives_diagnostic() {
        let scan = qx_scan(&[], &[], &AttackConfig::default());
        assert!(scan.candidates.is_empty());
        assert!(scan.diagnostic.is_some());
    }
}
