//! Phase 4: decrypt every session under a verified modulus, learn how the
//! reduced update indices map onto observed states, and predict / forge the
//! next post-update message.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use super::complete::CompletedMatrix;
use crate::formats::{dec_blocks, dec_mat, dec_opt_mat, dec_opt_u128, dec_u64};
use crate::modmath::{LimbCodec, Mat2, Vec2, Wide};
use crate::params::{Z_DBLTKM, Z_SUEO};
use crate::protocol::{decrypt_message, encrypt_message, EffectiveState, StateIndices, UpdateSecrets};
use crate::simulator::Transcript;

/// A completed partial matrix, possibly transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttackerVariant {
    pub label: usize,
    pub transposed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedState {
    pub variant: AttackerVariant,
    #[serde(with = "dec_u64")]
    pub modulus: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecovery {
    pub session_id: u64,
    pub position: usize,
    pub pre: Option<ObservedState>,
    pub post: Option<ObservedState>,
    #[serde(with = "dec_opt_u128")]
    pub n_t: Option<Wide>,
    #[serde(with = "dec_opt_u128")]
    pub n_r: Option<Wide>,
    pub update: Option<UpdateSecretsRecord>,
    /// `(sd mod 20, sp mod 4, sc mod table size)`.
    pub reduced: Option<StateIndices>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateSecretsRecord {
    #[serde(with = "crate::formats::dec_u128")]
    pub sd: Wide,
    #[serde(with = "crate::formats::dec_u128")]
    pub sp: Wide,
    #[serde(with = "crate::formats::dec_u128")]
    pub sc: Wide,
}

impl From<UpdateSecretsRecord> for UpdateSecrets {
    fn from(r: UpdateSecretsRecord) -> Self {
        UpdateSecrets { sd: r.sd, sp: r.sp, sc: r.sc }
    }
}

/// Which completed matrix is `A` / `B` and in which orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeling {
    pub a: AttackerVariant,
    pub b: Option<AttackerVariant>,
}

impl Labeling {
    /// Attacker matrix selected by a SUEO index in the single-variant model.
    pub fn variant_for(&self, sueo: u64) -> Option<AttackerVariant> {
        let flip = |v: AttackerVariant| AttackerVariant { transposed: !v.transposed, ..v };
        match sueo {
            0 => Some(self.a),
            1 => self.b,
            2 => Some(flip(self.a)),
            3 => self.b.map(flip),
            _ => None,
        }
    }

    pub fn sueo_for(&self, v: AttackerVariant) -> Option<u64> {
        (0..Z_SUEO).find(|&i| self.variant_for(i) == Some(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub session_id: u64,
    pub position: usize,
    /// Predicted post-update selector indices.
    pub next: StateIndices,
    #[serde(with = "dec_u64")]
    pub modulus: u64,
    #[serde(with = "dec_mat")]
    pub matrix: Mat2,
    #[serde(with = "dec_blocks")]
    pub forged_c5: Vec<Vec2>,
    /// Forged C5 equals the C5 actually observed for that session.
    pub matches_observed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullRecovery {
    #[serde(with = "dec_opt_mat")]
    pub a: Option<Mat2>,
    #[serde(with = "dec_opt_mat")]
    pub b: Option<Mat2>,
    pub labeling: Option<Labeling>,
    pub labeling_survivors: usize,
    #[serde(with = "crate::formats::dec_vec_u64")]
    pub moduli: Vec<u64>,
    /// AM index to modulus, as learned from observed transitions.
    pub am_table: Vec<Option<String>>,
    #[serde(with = "dec_opt_u128")]
    pub s: Option<Wide>,
    #[serde(with = "dec_opt_u128")]
    pub id: Option<Wide>,
    pub sessions: Vec<SessionRecovery>,
    pub prediction: Option<Prediction>,
}

impl FullRecovery {
    pub fn decrypted_sessions(&self) -> usize {
        self.sessions.iter().filter(|s| s.reduced.is_some()).count()
    }
}

struct Keyring {
    variants: Vec<(AttackerVariant, Mat2)>,
    moduli: Vec<u64>,
    codec: LimbCodec,
}

impl Keyring {
    fn matrix(&self, v: AttackerVariant) -> Option<Mat2> {
        self.variants.iter().find(|(w, _)| *w == v).map(|(_, m)| *m)
    }

    /// The unique `(variant, modulus)` that maps every plaintext to its
    /// ciphertext; `None` if no or several distinct states match.
    fn identify(&self, pairs: &[(Wide, Vec2)]) -> Option<ObservedState> {
        let encoded: Option<Vec<(Vec2, Vec2)>> =
            pairs.iter().map(|&(x, c)| self.codec.encode(x).ok().map(|t| (t, c))).collect();
        let encoded = encoded?;
        let mut found: Option<(ObservedState, Mat2)> = None;
        for &q in &self.moduli {
            if encoded.iter().any(|(t, c)| t.c1 >= q || t.c2 >= q || c.c1 >= q || c.c2 >= q) {
                continue;
            }
            for &(variant, m) in &self.variants {
                if encoded.iter().all(|&(t, c)| m.apply(t, q) == c) {
                    match found {
                        Some((prev, pm)) if prev.modulus != q || pm.reduce(q) != m.reduce(q) => return None,
                        Some(_) => {}
                        None => found = Some((ObservedState { variant, modulus: q }, m)),
                    }
                }
            }
        }
        found.map(|(s, _)| s)
    }

    fn state(&self, obs: ObservedState) -> Option<EffectiveState> {
        EffectiveState::from_matrix(self.matrix(obs.variant)?, obs.modulus).ok()
    }

    fn decrypt(&self, obs: ObservedState, blocks: &[Vec2]) -> Option<Vec<Wide>> {
        decrypt_message(blocks, &self.state(obs)?, self.codec).ok()
    }
}

fn majority<T: Ord + Copy>(items: impl IntoIterator<Item = T>) -> Option<T> {
    let mut tally: BTreeMap<T, usize> = BTreeMap::new();
    for x in items {
        *tally.entry(x).or_default() += 1;
    }
    tally.into_iter().max_by_key(|&(_, n)| n).map(|(x, _)| x)
}

fn decrypt_sessions(keys: &Keyring, s: Wide, transcripts: &[Transcript], am_size: u64) -> (Vec<SessionRecovery>, Option<Wide>) {
    let mut out: Vec<SessionRecovery> = transcripts
        .iter()
        .enumerate()
        .map(|(position, t)| {
            let mut rec = SessionRecovery { session_id: t.session_id, position, ..Default::default() };
            let Some(pre) = keys.identify(&[(s, t.c1[1])]) else { return rec };
            rec.pre = Some(pre);
            let (Some(c1), Some(c2), Some(c3), Some(c4)) =
                (keys.decrypt(pre, &t.c1), keys.decrypt(pre, &t.c2), keys.decrypt(pre, &t.c3), keys.decrypt(pre, &t.c4))
            else {
                return rec;
            };
            rec.n_t = Some(c1[0]);
            rec.n_r = Some(c2[0]);
            if c3[0] == c2[0] && c4[0] == c1[0] && c3[1..] == c4[1..] {
                let upd = UpdateSecretsRecord { sd: c3[1], sp: c3[2], sc: c3[3] };
                rec.update = Some(upd);
                rec.reduced = Some(StateIndices {
                    dbltkm: (upd.sd % Z_DBLTKM as u128) as u64,
                    sueo: (upd.sp % Z_SUEO as u128) as u64,
                    am: (upd.sc % am_size as u128) as u64,
                });
            }
            rec.post = keys.identify(&[(c1[0] + 1, t.c5[0]), (c2[0] + 1, t.c6[0])]);
            rec
        })
        .collect();

    let id = majority(out.iter().filter_map(|r| {
        let t = &transcripts[r.position];
        keys.decrypt(r.post?, &t.c5).map(|v| v[1])
    }));

    // Sessions whose pre-state is out of reach still reveal their nonces
    // through C5/C6 once ID is known.
    if let Some(id) = id {
        for r in out.iter_mut().filter(|r| r.post.is_none()) {
            let t = &transcripts[r.position];
            let Some(post) = keys.identify(&[(id, t.c5[1]), (id, t.c6[1])]) else { continue };
            r.post = Some(post);
            if let (Some(c5), Some(c6)) = (keys.decrypt(post, &t.c5), keys.decrypt(post, &t.c6)) {
                r.n_t = r.n_t.or(c5[0].checked_sub(1));
                r.n_r = r.n_r.or(c6[0].checked_sub(1));
            }
        }
    }
    (out, id)
}

type Transition = (StateIndices, ObservedState);

fn transitions<'a>(sessions: &'a [SessionRecovery], skip: Option<usize>) -> impl Iterator<Item = Transition> + 'a {
    sessions
        .iter()
        .filter(move |r| Some(r.position) != skip)
        .filter_map(|r| Some((r.reduced?, r.post?)))
}

/// Every labeling consistent with the observed (index, state) transitions.
fn surviving_labelings(labels: &[usize], trans: &[Transition]) -> Vec<Labeling> {
    let mut hyps = Vec::new();
    for &la in labels {
        for ta in [false, true] {
            let a = AttackerVariant { label: la, transposed: ta };
            let others: Vec<Option<usize>> = {
                let mut v: Vec<Option<usize>> = labels.iter().filter(|&&l| l != la).map(|&l| Some(l)).collect();
                if v.is_empty() {
                    v.push(None);
                }
                v
            };
            for lb in others {
                for tb in [false, true] {
                    if lb.is_none() && tb {
                        continue;
                    }
                    hyps.push(Labeling { a, b: lb.map(|label| AttackerVariant { label, transposed: tb }) });
                }
            }
        }
    }
    hyps.into_iter()
        .filter(|h| trans.iter().all(|(idx, obs)| h.variant_for(idx.sueo) == Some(obs.variant)))
        .collect()
}

fn learn_am_table(trans: &[Transition], am_size: u64) -> Vec<Option<u64>> {
    let mut seen: HashMap<u64, Option<u64>> = HashMap::new();
    for (idx, obs) in trans {
        seen.entry(idx.am)
            .and_modify(|q| {
                if *q != Some(obs.modulus) {
                    *q = None;
                }
            })
            .or_insert(Some(obs.modulus));
    }
    (0..am_size).map(|i| seen.get(&i).copied().flatten()).collect()
}

fn predict(
    keys: &Keyring,
    sessions: &[SessionRecovery],
    labels: &[usize],
    id: Wide,
    transcripts: &[Transcript],
    am_size: u64,
) -> Option<Prediction> {
    for r in sessions.iter().rev() {
        let (Some(reduced), Some(n_t)) = (r.reduced, r.n_t) else { continue };
        let trans: Vec<Transition> = transitions(sessions, Some(r.position)).collect();
        let survivors = surviving_labelings(labels, &trans);
        let [labeling] = survivors.as_slice() else { continue };
        let Some(q) = learn_am_table(&trans, am_size)[reduced.am as usize] else { continue };
        let Some(variant) = labeling.variant_for(reduced.sueo) else { continue };
        let matrix = keys.matrix(variant)?;
        let Ok(eff) = EffectiveState::from_matrix(matrix, q) else { continue };
        let Ok(forged_c5) = encrypt_message(&[n_t + 1, id], &eff, keys.codec) else { continue };
        let matches_observed = forged_c5 == transcripts[r.position].c5;
        return Some(Prediction {
            session_id: r.session_id,
            position: r.position,
            next: reduced,
            modulus: q,
            matrix,
            forged_c5,
            matches_observed,
        });
    }
    None
}

/// Decrypts all reachable sessions and assembles the recovery.
pub fn full_break(
    completed: &[CompletedMatrix],
    s: Wide,
    moduli: &[u64],
    transcripts: &[Transcript],
    codec: LimbCodec,
    am_size: u64,
) -> FullRecovery {
    let mut variants = Vec::new();
    let mut labels = Vec::new();
    for c in completed {
        if let Some(m) = c.matrix {
            labels.push(c.label);
            variants.push((AttackerVariant { label: c.label, transposed: false }, m));
            variants.push((AttackerVariant { label: c.label, transposed: true }, m.transpose()));
        }
    }
    let keys = Keyring { variants, moduli: moduli.to_vec(), codec };
    let (sessions, id) = decrypt_sessions(&keys, s, transcripts, am_size);

    let trans: Vec<Transition> = transitions(&sessions, None).collect();
    let survivors = if labels.is_empty() { Vec::new() } else { surviving_labelings(&labels, &trans) };
    let labeling = match survivors.as_slice() {
        [only] => Some(*only),
        _ => None,
    };
    let oriented = |v: Option<AttackerVariant>| v.and_then(|v| keys.matrix(v));
    let am_table = learn_am_table(&trans, am_size).into_iter().map(|q| q.map(|q| q.to_string())).collect();
    let prediction = id.and_then(|id| predict(&keys, &sessions, &labels, id, transcripts, am_size));

    FullRecovery {
        a: labeling.and_then(|l| oriented(Some(l.a))),
        b: labeling.and_then(|l| oriented(l.b)),
        labeling,
        labeling_survivors: survivors.len(),
        moduli: moduli.to_vec(),
        am_table,
        s: Some(s),
        id,
        sessions,
        prediction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(label: usize, transposed: bool) -> ObservedState {
        ObservedState { variant: AttackerVariant { label, transposed }, modulus: 99 }
    }

    fn idx(sueo: u64, am: u64) -> StateIndices {
        StateIndices { dbltkm: 0, sueo, am }
    }

    #[test]
    fn single_labeling_survives_full_transitions() {
        // truth: A = label 1 transposed, B = label 0 as-is
        let trans = vec![
            (idx(0, 0), obs(1, true)),
            (idx(1, 0), obs(0, false)),
            (idx(2, 0), obs(1, false)),
            (idx(3, 0), obs(0, true)),
        ];
        let s = surviving_labelings(&[0, 1], &trans);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].a, AttackerVariant { label: 1, transposed: true });
        assert_eq!(s[0].b, Some(AttackerVariant { label: 0, transposed: false }));
        assert_eq!(s[0].sueo_for(AttackerVariant { label: 0, transposed: true }), Some(3));
    }

    #[test]
    fn unconstrained_labelings_are_ambiguous() {
        assert_eq!(surviving_labelings(&[0, 1], &[]).len(), 8);
        assert_eq!(surviving_labelings(&[0], &[]).len(), 2);
    }

    #[test]
    fn am_table_learning_flags_conflicts() {
        let mut a = obs(0, false);
        let trans = vec![(idx(0, 1), a), (idx(0, 1), a)];
        assert_eq!(learn_am_table(&trans, 3), vec![None, Some(99), None]);
        a.modulus = 101;
        let trans = vec![(idx(0, 1), obs(0, false)), (idx(0, 1), a)];
        assert_eq!(learn_am_table(&trans, 3)[1], None);
    }
}
