//! Run configuration: `key = value` files, overridden by command-line flags.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::attack::AttackConfig;
use crate::params::{FamilyMode, SystemParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{path}:{line}: expected key = value")]
    Syntax { path: String, line: usize },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

pub const KEYS: &[&str] = &[
    "modulus_bits",
    "limb_bits",
    "entry_bits",
    "factor_bound_bits",
    "am_table_size",
    "family_mode",
    "seed",
    "n_sessions",
    "accept_threshold",
    "verify_sessions",
    "max_multiplicity",
    "max_candidates",
    "scan_chunk",
    "use_wrap_hints",
    "seeds",
    "workers",
    "include_factors",
    "ground_truth",
    "system",
    "transcripts",
    "sidecar",
    "report",
    "csv",
];

const PATH_KEYS: &[&str] = &["system", "transcripts", "sidecar", "report", "csv"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub modulus_bits: u32,
    pub limb_bits: Option<u32>,
    pub entry_bits: Option<u32>,
    pub factor_bound_bits: u32,
    pub am_table_size: usize,
    pub family_mode: FamilyMode,
    pub seed: u64,
    pub n_sessions: u64,
    pub accept_threshold: usize,
    pub verify_sessions: usize,
    pub max_multiplicity: u32,
    pub max_candidates: usize,
    pub scan_chunk: u64,
    pub use_wrap_hints: bool,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub include_factors: bool,
    pub ground_truth: bool,
    pub system: PathBuf,
    pub transcripts: PathBuf,
    pub sidecar: PathBuf,
    pub report: PathBuf,
    pub csv: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let desk = SystemParams::desk_scale();
        let atk = AttackConfig::from_params(&desk);
        Self {
            modulus_bits: desk.modulus_bits,
            limb_bits: None,
            entry_bits: None,
            factor_bound_bits: desk.factor_bound_bits,
            am_table_size: desk.am_table_size,
            family_mode: desk.family_mode,
            seed: 0,
            n_sessions: 4096,
            accept_threshold: atk.accept_threshold,
            verify_sessions: atk.verify_sessions,
            max_multiplicity: atk.max_multiplicity,
            max_candidates: atk.max_candidates,
            scan_chunk: atk.scan_chunk,
            use_wrap_hints: atk.use_wrap_hints,
            seeds: (0..10).collect(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            include_factors: false,
            ground_truth: true,
            system: "system.json".into(),
            transcripts: "transcripts.jsonl".into(),
            sidecar: "sidecar.jsonl".into(),
            report: "report.json".into(),
            csv: "experiment.csv".into(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

/// `1,2,5` or `0..20` (half-open), or a mix: `0..4,10`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>, ConfigError> {
    let bad = |reason: &str| ConfigError::BadValue { key: "seeds".into(), value: value.into(), reason: reason.into() };
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (parse("seeds", a)?, parse("seeds", b)?);
            if b <= a {
                return Err(bad("empty range"));
            }
            out.extend(a..b);
        } else {
            out.push(parse("seeds", part)?);
        }
    }
    if out.is_empty() {
        return Err(bad("seed list is empty"));
    }
    Ok(out)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue { key: key.into(), value: value.into(), reason: "expected true or false".into() }),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "modulus_bits" => self.modulus_bits = parse(key, value)?,
            "limb_bits" => self.limb_bits = Some(parse(key, value)?),
            "entry_bits" => self.entry_bits = Some(parse(key, value)?),
            "factor_bound_bits" => self.factor_bound_bits = parse(key, value)?,
            "am_table_size" => self.am_table_size = parse(key, value)?,
            "family_mode" => self.family_mode = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "n_sessions" => self.n_sessions = parse(key, value)?,
            "accept_threshold" => self.accept_threshold = parse(key, value)?,
            "verify_sessions" => self.verify_sessions = parse(key, value)?,
            "max_multiplicity" => self.max_multiplicity = parse(key, value)?,
            "max_candidates" => self.max_candidates = parse(key, value)?,
            "scan_chunk" => self.scan_chunk = parse(key, value)?,
            "use_wrap_hints" => self.use_wrap_hints = parse_bool(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "workers" => self.workers = parse::<usize>(key, value)?.max(1),
            "include_factors" => self.include_factors = parse_bool(key, value)?,
            "ground_truth" => self.ground_truth = parse_bool(key, value)?,
            "system" => self.system = value.trim().into(),
            "transcripts" => self.transcripts = value.trim().into(),
            "sidecar" => self.sidecar = value.trim().into(),
            "report" => self.report = value.trim().into(),
            "csv" => self.csv = value.trim().into(),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a `key = value` document. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { path: origin.into(), line: i + 1 })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Defaults, then the file, then `overrides` in order.
    pub fn resolve<'a>(
        file: Option<&Path>,
        overrides: impl IntoIterator<Item = (&'a str, String)>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        for (k, v) in overrides {
            cfg.set(k, &v)?;
        }
        cfg.params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn params(&self) -> SystemParams {
        let mut p = SystemParams::with_modulus_bits(self.modulus_bits, self.factor_bound_bits).with_seed(self.seed);
        if let Some(l) = self.limb_bits {
            p.limb_bits = l;
        }
        if let Some(e) = self.entry_bits {
            p.entry_bits = e;
        }
        p.am_table_size = self.am_table_size;
        p.family_mode = self.family_mode;
        p
    }

    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            accept_threshold: self.accept_threshold,
            verify_sessions: self.verify_sessions,
            max_multiplicity: self.max_multiplicity,
            max_candidates: self.max_candidates,
            scan_chunk: self.scan_chunk,
            use_wrap_hints: self.use_wrap_hints,
            ..AttackConfig::from_params(&self.params())
        }
    }

    fn values(&self) -> BTreeMap<&'static str, String> {
        let p = self.params();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        BTreeMap::from([
            ("modulus_bits", p.modulus_bits.to_string()),
            ("limb_bits", p.limb_bits.to_string()),
            ("entry_bits", p.entry_bits.to_string()),
            ("factor_bound_bits", p.factor_bound_bits.to_string()),
            ("am_table_size", p.am_table_size.to_string()),
            ("family_mode", p.family_mode.to_string()),
            ("seed", p.seed.to_string()),
            ("n_sessions", self.n_sessions.to_string()),
            ("accept_threshold", self.accept_threshold.to_string()),
            ("verify_sessions", self.verify_sessions.to_string()),
            ("max_multiplicity", self.max_multiplicity.to_string()),
            ("max_candidates", self.max_candidates.to_string()),
            ("scan_chunk", self.scan_chunk.to_string()),
            ("use_wrap_hints", self.use_wrap_hints.to_string()),
            ("seeds", seeds.join(",")),
            ("workers", self.workers.to_string()),
            ("include_factors", self.include_factors.to_string()),
            ("ground_truth", self.ground_truth.to_string()),
            ("system", self.system.display().to_string()),
            ("transcripts", self.transcripts.display().to_string()),
            ("sidecar", self.sidecar.display().to_string()),
            ("report", self.report.display().to_string()),
            ("csv", self.csv.display().to_string()),
        ])
    }

    /// Full config as a `key = value` document; feeds back into `apply_text`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.values() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 over the result-affecting keys (paths and worker count excluded).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.values() {
            if PATH_KEYS.contains(&k) || k == "workers" {
                continue;
            }
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# desk\nmodulus_bits = 24\nfactor_bound_bits = 12\nseed=5\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), [("seed", "9".to_string())]).unwrap();
        assert_eq!(cfg.modulus_bits, 24);
        assert_eq!(cfg.factor_bound_bits, 12);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.n_sessions, RunConfig::default().n_sessions);
        assert_eq!(cfg.params().limb_bits, 23);
    }

    #[test]
    fn text_round_trip_and_hash() {
        let mut cfg = RunConfig::default();
        cfg.set("seeds", "0..3,7").unwrap();
        cfg.set("family_mode", "full-20").unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2, 7]);
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "mem").unwrap();
        assert_eq!(back.hash(), cfg.hash());
        back.set("report", "elsewhere.json").unwrap();
        assert_eq!(back.hash(), cfg.hash());
        back.set("seed", "1").unwrap();
        assert_ne!(back.hash(), cfg.hash());
    }

    #[test]
    fn errors_name_the_problem() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("bogus", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(cfg.set("seed", "x"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(cfg.apply_text("seed 3", "mem"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(RunConfig::resolve(None, [("modulus_bits", "4".to_string())]).is_err());
    }
}
