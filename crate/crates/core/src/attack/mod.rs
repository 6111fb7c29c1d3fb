//! Passive multi-session attack on recorded transcripts.
//!
//! Inputs are the eavesdropped [`Transcript`]s and the public sizes in
//! [`AttackConfig`]; nothing here reads the ground-truth sidecar.
//!
//! 1. [`leaks`]: nonce-increment differences leak the second column of
//!    sessions whose pre- and post-update states coincide. A column and its
//!    transposed partner share `m22` and give three entries of a base matrix.
//! 2. [`qx`]: every small prime is tested by solving the reduced equations
//!    for `S mod qx` over (variant, transposed) pairs; true factors of the
//!    moduli collect agreeing solutions.
//! 3. [`modulus`]: products of accepted primes become modulus candidates,
//!    each verified against the full S-block equations; [`complete`] then
//!    fills the fourth matrix entry.
//! 4. [`breaker`]: decrypt, learn the index-to-state mapping, predict the
//!    next state and forge C5.

pub mod breaker;
pub mod complete;
pub mod leaks;
pub mod modulus;
pub mod qx;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modmath::LimbCodec;
use crate::params::SystemParams;
use crate::simulator::Transcript;

pub use breaker::{full_break, FullRecovery, Prediction, SessionRecovery};
pub use complete::{complete_matrices, missing_entry, CompletedMatrix};
pub use leaks::{cluster_leaks, detect_leaks, detect_useful_session, wrap_hints, Clustering, ColumnLeak, PartialMatrix};
pub use modulus::{reconstruct_from_groups, reconstruct_q_candidates, RECONSTRUCTION_NODE_BUDGET, verify_q, verify_q_with, KnownKeys, ModulusCandidate, Reconstruction, VerifiedModulus, VerifyContext};
pub use qx::{equation_groups, qx_scan, QxCandidate, QxScan};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("{} distinct leaked columns share m22 = {m22}: {columns:?}", columns.len())]
    AmbiguousCluster { m22: u64, columns: Vec<u64> },
    #[error("invalid attack configuration: {0}")]
    Config(String),
}

/// Public parameters and thresholds for the attack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub modulus_bits: u32,
    pub limb_bits: u32,
    pub entry_bits: u32,
    pub factor_bound_bits: u32,
    pub am_table_size: usize,
    /// Agreeing pairs needed to accept a reduced modulus.
    pub accept_threshold: usize,
    /// Distinct S-block ciphertexts that must satisfy the full equations
    /// to accept a modulus.
    pub verify_sessions: usize,
    pub max_multiplicity: u32,
    pub max_candidates: usize,
    /// Width of each contiguous prime range in the parallel scan.
    pub scan_chunk: u64,
    /// Off by default: derive modulus guesses from single-path wraps.
    pub use_wrap_hints: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::from_params(&SystemParams::default())
    }
}

impl AttackConfig {
    pub fn from_params(p: &SystemParams) -> Self {
        Self {
            modulus_bits: p.modulus_bits,
            limb_bits: p.limb_bits,
            entry_bits: p.entry_bits,
            factor_bound_bits: p.factor_bound_bits,
            am_table_size: p.am_table_size,
            accept_threshold: 4,
            verify_sessions: 4,
            max_multiplicity: 2,
            max_candidates: 1 << 16,
            scan_chunk: 1 << 16,
            use_wrap_hints: false,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::Config(m.to_string()));
        if !(8..=64).contains(&self.modulus_bits) {
            return bad("modulus_bits must be in 8..=64");
        }
        if self.limb_bits == 0 || self.limb_bits >= self.modulus_bits {
            return bad("limb_bits must be below modulus_bits");
        }
        if self.factor_bound_bits < 3 || self.factor_bound_bits > 32 {
            return bad("factor_bound_bits must be in 3..=32");
        }
        if self.am_table_size < 2 {
            return bad("am_table_size must be at least 2");
        }
        if self.accept_threshold == 0 || self.verify_sessions == 0 {
            return bad("thresholds must be positive");
        }
        Ok(())
    }
}

/// Phase that stopped the attack short of full recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitingPhase {
    ColumnLeaks,
    Clustering,
    QxScan,
    ModulusReconstruction,
    ModulusVerification,
    MatrixCompletion,
    Labeling,
    Prediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Full,
    Partial(LimitingPhase),
    Failed(LimitingPhase),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Full => 0,
            Outcome::Partial(_) => 2,
            Outcome::Failed(_) => 3,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Full => "full",
            Outcome::Partial(_) => "partial",
            Outcome::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakSummary {
    pub sessions: usize,
    pub leaks: usize,
    pub wrapped: usize,
    pub first_leak_session: Option<u64>,
    pub clusters: usize,
    pub unpaired: usize,
}

/// Everything the attack found, phase by phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub config: AttackConfig,
    pub leak_summary: LeakSummary,
    pub partials: Vec<PartialMatrix>,
    pub scan: QxScan,
    pub reconstruction_count: usize,
    pub reconstruction_overflow: usize,
    #[serde(with = "crate::formats::dec_vec_u64")]
    pub wrap_hints: Vec<u64>,
    pub verified: Vec<VerifiedModulus>,
    pub completed: Vec<CompletedMatrix>,
    pub recovery: Option<FullRecovery>,
    pub outcome: Outcome,
    pub notes: Vec<String>,
}

impl AttackReport {
    fn stop(mut self, outcome: Outcome, note: impl Into<String>) -> Self {
        self.outcome = outcome;
        self.notes.push(note.into());
        self
    }
}

/// Runs all phases over a transcript log.
pub fn run_attack(transcripts: &[Transcript], cfg: &AttackConfig) -> Result<AttackReport, AttackError> {
    cfg.validate()?;
    let codec = LimbCodec::new(cfg.limb_bits).map_err(|e| AttackError::Config(e.to_string()))?;
    let leaks = detect_leaks(transcripts);
    let clustering = cluster_leaks(&leaks)?;
    let mut report = AttackReport {
        config: cfg.clone(),
        leak_summary: LeakSummary {
            sessions: transcripts.len(),
            leaks: leaks.len(),
            wrapped: clustering.wrapped,
            first_leak_session: leaks.iter().find(|l| !l.wrapped).map(|l| l.session_id),
            clusters: clustering.partials.len(),
            unpaired: clustering.unpaired.len(),
        },
        partials: clustering.partials.clone(),
        scan: QxScan::default(),
        reconstruction_count: 0,
        reconstruction_overflow: 0,
        wrap_hints: Vec::new(),
        verified: Vec::new(),
        completed: Vec::new(),
        recovery: None,
        outcome: Outcome::Failed(LimitingPhase::ColumnLeaks),
        notes: Vec::new(),
    };
    if leaks.iter().all(|l| l.wrapped) {
        return Ok(report.stop(Outcome::Failed(LimitingPhase::ColumnLeaks), "no unwrapped column leaks"));
    }
    if clustering.partials.is_empty() {
        return Ok(report.stop(Outcome::Failed(LimitingPhase::Clustering), "no column has a transposed partner"));
    }
    let partials = &clustering.partials;

    report.scan = qx_scan(transcripts, partials, cfg);
    let mut candidates: Vec<u64> = Vec::new();
    let groups = equation_groups(transcripts, partials, &report.scan.candidates);
    let recon = reconstruct_from_groups(&report.scan.candidates, &groups, cfg);
    report.reconstruction_count = recon.candidates.len();
    report.reconstruction_overflow = recon.overflow;
    if recon.truncated {
        report.notes.push(format!("candidate enumeration stopped after {RECONSTRUCTION_NODE_BUDGET} search nodes"));
    }
    candidates.extend(recon.candidates.iter().map(|c| c.q));
    if cfg.use_wrap_hints {
        report.wrap_hints = wrap_hints(transcripts, cfg);
        for &q in &report.wrap_hints {
            if !candidates.contains(&q) {
                candidates.push(q);
            }
        }
    }
    if candidates.is_empty() {
        let phase = if report.scan.candidates.is_empty() { LimitingPhase::QxScan } else { LimitingPhase::ModulusReconstruction };
        let note = recon.diagnostic.or(report.scan.diagnostic.clone()).unwrap_or_default();
        return Ok(report.stop(Outcome::Partial(phase), note));
    }

    let ctx = VerifyContext::new(transcripts, partials);
    let mut verified: Vec<VerifiedModulus> =
        candidates.iter().filter_map(|&q| verify_q_with(&ctx, q, None, cfg)).collect();
    let Some(s) = majority_s(&verified) else {
        return Ok(report.stop(
            Outcome::Partial(LimitingPhase::ModulusVerification),
            "no modulus candidate satisfied the full equations",
        ));
    };
    verified.retain(|v| v.s == s);

    let mut completed = complete_matrices(partials, s, &verified, transcripts, codec);
    let full: Vec<_> = completed.iter().filter_map(|c| c.matrix).collect();
    if !full.is_empty() {
        let known = KnownKeys { s, matrices: full };
        let extra: Vec<VerifiedModulus> = candidates
            .iter()
            .filter(|q| !verified.iter().any(|v| v.q == **q))
            .filter_map(|&q| verify_q_with(&ctx, q, Some(&known), cfg))
            .collect();
        if !extra.is_empty() {
            verified.extend(extra);
            completed = complete_matrices(partials, s, &verified, transcripts, codec);
        }
    }
    verified.sort_by_key(|v| v.q);
    report.verified = verified;
    report.completed = completed;

    let moduli: Vec<u64> = report.verified.iter().map(|v| v.q).collect();
    let recovery = full_break(&report.completed, s, &moduli, transcripts, codec, cfg.am_table_size as u64);
    let n_complete = report.completed.iter().filter(|c| c.matrix.is_some()).count();
    let outcome = if n_complete < 2 {
        Outcome::Partial(LimitingPhase::MatrixCompletion)
    } else if recovery.labeling.is_none() || recovery.b.is_none() {
        Outcome::Partial(LimitingPhase::Labeling)
    } else if recovery.id.is_none() || !recovery.prediction.as_ref().is_some_and(|p| p.matches_observed) {
        Outcome::Partial(LimitingPhase::Prediction)
    } else {
        Outcome::Full
    };
    report.recovery = Some(recovery);
    report.outcome = outcome;
    Ok(report)
}

fn majority_s(verified: &[VerifiedModulus]) -> Option<crate::modmath::Wide> {
    let mut best: Option<(crate::modmath::Wide, usize)> = None;
    for v in verified {
        let weight: usize = verified.iter().filter(|w| w.s == v.s).map(|w| w.confirmations).sum();
        if best.is_none_or(|(_, b)| weight > b) {
            best = Some((v.s, weight));
        }
    }
    best.map(|(s, _)| s)
}
