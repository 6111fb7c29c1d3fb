//! Attack report file and its one-line CSV summary.

use serde::{Deserialize, Serialize};
use std::io;
use std::path::Path;

use crate::attack::AttackReport;
use crate::config::RunConfig;
use crate::grade::Grade;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    /// Resolved run config as `key = value` lines.
    pub config: Vec<String>,
    pub attack: AttackReport,
    pub grade: Option<Grade>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub outcome: String,
    pub limiting_phase: String,
    pub sessions: usize,
    pub leaks: usize,
    pub wrapped_leaks: usize,
    pub partials: usize,
    pub accepted_qx: usize,
    pub candidates: usize,
    pub verified_moduli: usize,
    pub sessions_decrypted: usize,
    pub prediction_matches_observed: bool,
    pub graded_full: Option<bool>,
}

impl ReportFile {
    pub fn new(cfg: &RunConfig, attack: AttackReport) -> Self {
        Self {
            config_hash: cfg.hash(),
            config: cfg.to_text().lines().map(str::to_string).collect(),
            attack,
            grade: None,
        }
    }

    pub fn summary(&self) -> SummaryRow {
        let a = &self.attack;
        let limiting = match a.outcome {
            crate::attack::Outcome::Full => String::new(),
            crate::attack::Outcome::Partial(p) | crate::attack::Outcome::Failed(p) => {
                serde_json::to_value(p).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
            }
        };
        let rec = a.recovery.as_ref();
        SummaryRow {
            config_hash: self.config_hash.clone(),
            outcome: a.outcome.label().to_string(),
            limiting_phase: limiting,
            sessions: a.leak_summary.sessions,
            leaks: a.leak_summary.leaks - a.leak_summary.wrapped,
            wrapped_leaks: a.leak_summary.wrapped,
            partials: a.leak_summary.clusters,
            accepted_qx: a.scan.candidates.len(),
            candidates: a.reconstruction_count,
            verified_moduli: a.verified.len(),
            sessions_decrypted: rec.map_or(0, |r| r.decrypted_sessions()),
            prediction_matches_observed: rec.and_then(|r| r.prediction.as_ref()).is_some_and(|p| p.matches_observed),
            graded_full: self.grade.as_ref().map(|g| g.full),
        }
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(path, json + "\n")
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn write_summary_csv(&self, path: &Path) -> csv::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.serialize(self.summary())?;
        w.flush()?;
        Ok(())
    }
}

/// `report.json` -> `report.csv`.
pub fn summary_path(report: &Path) -> std::path::PathBuf {
    report.with_extension("csv")
}
