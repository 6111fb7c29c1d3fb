//! Phase 3b: the fourth entry of each base matrix from ordinary ciphertext
//! equations once S and a modulus are known.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::leaks::PartialMatrix;
use super::modulus::VerifiedModulus;
use crate::formats::dec_opt_mat;
use crate::modmath::{addmod, mod_inv, mulmod, submod, LimbCodec, Mat2, Vec2, Wide};
use crate::simulator::Transcript;

/// The unknown entry `d` of a row `c·x + d·y ≡ ct (mod q)`:
/// `d = (ct - c·x)·y⁻¹`, or `None` when `y` is not a unit.
pub fn missing_entry(ct: u64, known_coef: u64, x: u64, y: u64, q: u64) -> Option<u64> {
    let inv = mod_inv(y % q, q)?;
    Some(mulmod(submod(ct % q, mulmod(known_coef % q, x % q, q), q), inv, q))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedMatrix {
    pub label: usize,
    #[serde(with = "dec_opt_mat")]
    pub matrix: Option<Mat2>,
    /// Sessions whose row equation yielded the agreed entry.
    pub support: usize,
    /// Sessions yielding a different entry.
    pub conflicts: usize,
    /// The pair-solved entry from modulus verification, when present.
    pub from_verification: Option<u64>,
}

/// m11 estimates from sessions whose S-block matches row 2 of `M` or `Mᵀ`.
fn row_estimates(p: &PartialMatrix, s: Vec2, q: u64, transcripts: &[Transcript]) -> Vec<u64> {
    let (m12, m21, m22) = (p.m12 % q, p.m21 % q, p.m22 % q);
    let row2 = |a: u64| addmod(mulmod(a, s.c1, q), mulmod(m22, s.c2, q), q);
    let (row2_m, row2_mt) = (row2(m21), row2(m12));
    let mut out = Vec::new();
    for t in transcripts {
        let c = t.c1[1];
        if c.c1 >= q || c.c2 >= q {
            continue;
        }
        // M:  m11 X + m12 Y = C1,  m21 X + m22 Y = C2
        if c.c2 == row2_m {
            out.extend(missing_entry(c.c1, m12, s.c2, s.c1, q));
        }
        // Mᵀ: m11 X + m21 Y = C1,  m12 X + m22 Y = C2
        if c.c2 == row2_mt && row2_mt != row2_m {
            out.extend(missing_entry(c.c1, m21, s.c2, s.c1, q));
        }
    }
    out
}

/// Completes every partial matrix using the recovered `S` under each
/// verified modulus; cross-checks against the pair-solved entries.
pub fn complete_matrices(
    partials: &[PartialMatrix],
    s: Wide,
    verified: &[VerifiedModulus],
    transcripts: &[Transcript],
    codec: LimbCodec,
) -> Vec<CompletedMatrix> {
    let Ok(s_vec) = codec.encode(s) else {
        return partials
            .iter()
            .map(|p| CompletedMatrix { label: p.label, matrix: None, support: 0, conflicts: 0, from_verification: None })
            .collect();
    };
    partials
        .iter()
        .map(|p| {
            let from_verification = verified
                .iter()
                .flat_map(|v| v.completed.iter())
                .find(|(label, _)| *label == p.label)
                .map(|&(_, m11)| m11);
            let mut tally: BTreeMap<u64, usize> = BTreeMap::new();
            for v in verified {
                for m11 in row_estimates(p, s_vec, v.q, transcripts) {
                    *tally.entry(m11).or_default() += 1;
                }
            }
            let total: usize = tally.values().sum();
            let best = tally.iter().max_by_key(|(m11, n)| (**n, std::cmp::Reverse(**m11))).map(|(&m, &n)| (m, n));
            let m11 = match (best, from_verification) {
                (Some((m, _)), Some(v)) if m != v => None,
                (Some((m, _)), _) => Some(m),
                (None, v) => v,
            };
            let support = best.map_or(0, |(_, n)| n);
            CompletedMatrix {
                label: p.label,
                matrix: m11.map(|m11| Mat2::new(m11, p.m12, p.m21, p.m22)),
                support,
                conflicts: total - support,
                from_verification,
            }
        })
        .collect()
}
