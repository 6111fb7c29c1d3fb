//! Phase 1: column leaks from the nonce-increment pairs and their grouping
//! into partially known base matrices.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use super::{AttackConfig, AttackError};
use crate::modmath::Vec2;
use crate::simulator::Transcript;

/// Second column of a session's effective matrix, as read off
/// `C5 - C1` and `C6 - C2` (first blocks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLeak {
    pub session_id: u64,
    /// Position of the session in the transcript log.
    pub position: usize,
    /// Raw signed difference; equals the column exactly when `!wrapped`.
    pub column: (i128, i128),
    pub wrapped: bool,
}

impl ColumnLeak {
    pub fn unwrapped_column(&self) -> Option<Vec2> {
        (!self.wrapped).then(|| Vec2::new(self.column.0 as u64, self.column.1 as u64))
    }
}

fn block_diff(later: Vec2, earlier: Vec2) -> (i128, i128) {
    (later.c1 as i128 - earlier.c1 as i128, later.c2 as i128 - earlier.c2 as i128)
}

/// Leak from one transcript if both nonce pairs agree on the difference.
pub fn detect_useful_session(position: usize, t: &Transcript) -> Option<ColumnLeak> {
    let d_t = block_diff(*t.c5.first()?, *t.c1.first()?);
    let d_r = block_diff(*t.c6.first()?, *t.c2.first()?);
    if d_t != d_r {
        return None;
    }
    Some(ColumnLeak {
        session_id: t.session_id,
        position,
        column: d_t,
        wrapped: d_t.0 < 0 || d_t.1 < 0,
    })
}

pub fn detect_leaks(transcripts: &[Transcript]) -> Vec<ColumnLeak> {
    transcripts
        .iter()
        .enumerate()
        .filter_map(|(i, t)| detect_useful_session(i, t))
        .collect()
}

/// Modulus guesses from sessions where exactly one nonce path wrapped in a
/// coordinate: `d_t - d_r` is then `±q` there. Beyond the canonical attack;
/// only used when `AttackConfig::use_wrap_hints` is set.
pub fn wrap_hints(transcripts: &[Transcript], cfg: &AttackConfig) -> Vec<u64> {
    let lo = 1i128 << (cfg.modulus_bits - 1);
    let hi = 1i128 << cfg.modulus_bits;
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for t in transcripts {
        let (Some(&c1), Some(&c2), Some(&c5), Some(&c6)) = (t.c1.first(), t.c2.first(), t.c5.first(), t.c6.first())
        else {
            continue;
        };
        let d_t = block_diff(c5, c1);
        let d_r = block_diff(c6, c2);
        for delta in [(d_t.0 - d_r.0).abs(), (d_t.1 - d_r.1).abs()] {
            if delta > lo && delta < hi && delta % 2 == 1 {
                *counts.entry(delta as u64).or_default() += 1;
            }
        }
    }
    counts.into_iter().filter(|&(_, n)| n >= 2).map(|(q, _)| q).collect()
}

/// Distinct leaked column with every session that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakClass {
    pub column: Vec2,
    pub positions: Vec<usize>,
}

/// Three entries of one base matrix, known up to transposition.
///
/// The matrix is labeled so that the `variant` class leaked `(m12, m22)` and
/// the `transposed` class leaked `(m21, m22)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialMatrix {
    pub label: usize,
    pub m11: Option<u64>,
    pub m12: u64,
    pub m21: u64,
    pub m22: u64,
    pub variant_positions: Vec<usize>,
    pub transposed_positions: Vec<usize>,
}

impl PartialMatrix {
    /// Ordered (variant, transposed) session pairs.
    pub fn session_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.variant_positions
            .iter()
            .flat_map(move |&i| self.transposed_positions.iter().map(move |&j| (i, j)))
    }

    pub fn pair_count(&self) -> usize {
        self.variant_positions.len() * self.transposed_positions.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub partials: Vec<PartialMatrix>,
    /// Columns with no transposition partner.
    pub unpaired: Vec<LeakClass>,
    pub wrapped: usize,
}

/// Merges identical columns and pairs columns that share `m22`.
pub fn cluster_leaks(leaks: &[ColumnLeak]) -> Result<Clustering, AttackError> {
    let mut classes: BTreeMap<Vec2, Vec<usize>> = BTreeMap::new();
    let mut wrapped = 0;
    for leak in leaks {
        match leak.unwrapped_column() {
            Some(col) => classes.entry(col).or_default().push(leak.position),
            None => wrapped += 1,
        }
    }

    let mut by_m22: HashMap<u64, Vec<LeakClass>> = HashMap::new();
    for (column, positions) in classes {
        by_m22.entry(column.c2).or_default().push(LeakClass { column, positions });
    }
    let mut groups: Vec<(u64, Vec<LeakClass>)> = by_m22.into_iter().collect();
    groups.sort_by_key(|(m22, _)| *m22);

    let mut out = Clustering { wrapped, ..Default::default() };
    for (m22, mut group) in groups {
        match group.len() {
            1 => out.unpaired.push(group.pop().unwrap()),
            2 => {
                let transposed = group.pop().unwrap();
                let variant = group.pop().unwrap();
                out.partials.push(PartialMatrix {
                    label: out.partials.len(),
                    m11: None,
                    m12: variant.column.c1,
                    m21: transposed.column.c1,
                    m22,
                    variant_positions: variant.positions,
                    transposed_positions: transposed.positions,
                });
            }
            _ => {
                return Err(AttackError::AmbiguousCluster {
                    m22,
                    columns: group.iter().map(|c| c.column.c1).collect(),
                })
            }
        }
    }
    Ok(out)
}
