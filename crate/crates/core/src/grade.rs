//! Grades an attack report against the system file and ground-truth sidecar.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::attack::AttackReport;
use crate::formats::dec_vec_u64;
use crate::simulator::{server_accepts_c5, GroundTruth};
use crate::system::SystemFile;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub a_correct: bool,
    pub b_correct: bool,
    pub s_correct: bool,
    pub id_correct: bool,
    pub verified_moduli: usize,
    /// Verified moduli that are not in the table.
    #[serde(with = "dec_vec_u64")]
    pub spurious_moduli: Vec<u64>,
    pub sessions_decrypted: usize,
    pub reduced_correct: usize,
    pub reduced_wrong: usize,
    pub nonces_wrong: usize,
    pub prediction_correct: bool,
    pub forgery_accepted: bool,
    pub full: bool,
}

pub fn grade(report: &AttackReport, sys: &SystemFile, truth: &[GroundTruth]) -> Grade {
    let mut g = Grade { verified_moduli: report.verified.len(), ..Grade::default() };
    g.spurious_moduli = report.verified.iter().map(|v| v.q).filter(|&q| sys.am.index_of(q).is_none()).collect();
    let Some(rec) = &report.recovery else { return g };
    let secrets = &sys.secrets;
    g.a_correct = rec.a == Some(secrets.a);
    g.b_correct = rec.b == Some(secrets.b);
    g.s_correct = rec.s == Some(secrets.s);
    g.id_correct = rec.id == Some(secrets.id);

    let by_id: HashMap<u64, &GroundTruth> = truth.iter().map(|gt| (gt.session_id, gt)).collect();
    for s in &rec.sessions {
        let Some(gt) = by_id.get(&s.session_id) else { continue };
        if s.n_t.is_some_and(|n| n != gt.n_t) || s.n_r.is_some_and(|n| n != gt.n_r) {
            g.nonces_wrong += 1;
        }
        if let Some(reduced) = s.reduced {
            g.sessions_decrypted += 1;
            if reduced == gt.post.indices() {
                g.reduced_correct += 1;
            } else {
                g.reduced_wrong += 1;
            }
        }
    }

    if let Some(p) = &rec.prediction {
        if let Some(gt) = by_id.get(&p.session_id) {
            g.prediction_correct = p.next == gt.post.indices() && p.modulus == gt.post.modulus;
            g.forgery_accepted = server_accepts_c5(&p.forged_c5, gt, secrets, &sys.am, &sys.params);
        }
    }

    g.full = g.a_correct
        && g.b_correct
        && g.s_correct
        && g.id_correct
        && g.verified_moduli >= 1
        && g.spurious_moduli.is_empty()
        && g.sessions_decrypted >= 1
        && g.reduced_wrong == 0
        && g.nonces_wrong == 0
        && g.prediction_correct
        && g.forgery_accepted;
    g
}
