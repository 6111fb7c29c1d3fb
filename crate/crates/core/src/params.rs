use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Number of DBLTKM family states for two base matrices: `2N + (2N)^2`.
pub const Z_DBLTKM: u64 = 20;
/// Number of SUEO orderings for two base matrices: A, B, AB, BA.
pub const Z_SUEO: u64 = 4;
/// Base matrices in the lightweight configuration.
pub const N_MATRICES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid parameter {field}: {reason}")]
pub struct ParamError {
    pub field: &'static str,
    pub reason: String,
}

impl ParamError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self { field, reason: reason.into() }
    }
}

/// How the effective matrix is derived from the state indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyMode {
    /// Effective matrix uniform over {A, B, Aᵀ, Bᵀ}, selected by the SUEO index.
    #[default]
    PaperModel,
    /// All 20 DBLTKM states composed with the 4 SUEO orderings.
    Full20,
}

impl fmt::Display for FamilyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyMode::PaperModel => "paper-model",
            FamilyMode::Full20 => "full-20",
        })
    }
}

impl FromStr for FamilyMode {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper-model" | "paper" => Ok(FamilyMode::PaperModel),
            "full-20" | "full20" => Ok(FamilyMode::Full20),
            other => Err(ParamError::new("family_mode", format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemParams {
    pub modulus_bits: u32,
    pub limb_bits: u32,
    /// Width of base-matrix entries. Kept below `modulus_bits - 1` so every
    /// entry is smaller than every session modulus.
    pub entry_bits: u32,
    pub factor_bound_bits: u32,
    pub am_table_size: usize,
    pub family_mode: FamilyMode,
    #[serde(with = "crate::formats::dec_u64")]
    pub seed: u64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::with_modulus_bits(64, 20)
    }
}

impl SystemParams {
    /// Params with the derived widths set from `modulus_bits`.
    pub fn with_modulus_bits(modulus_bits: u32, factor_bound_bits: u32) -> Self {
        Self {
            modulus_bits,
            limb_bits: modulus_bits.saturating_sub(1),
            entry_bits: modulus_bits.saturating_sub(2),
            factor_bound_bits,
            am_table_size: 8,
            family_mode: FamilyMode::PaperModel,
            seed: 0,
        }
    }

    /// 32-bit moduli with 16-bit factors; runs in seconds.
    pub fn desk_scale() -> Self {
        Self::with_modulus_bits(32, 16)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(8..=64).contains(&self.modulus_bits) {
            return Err(ParamError::new("modulus_bits", "must be in 8..=64"));
        }
        if self.limb_bits == 0 || self.limb_bits >= self.modulus_bits {
            return Err(ParamError::new("limb_bits", "must satisfy 0 < limb_bits < modulus_bits"));
        }
        if self.entry_bits == 0 || self.entry_bits >= self.modulus_bits {
            return Err(ParamError::new("entry_bits", "must satisfy 0 < entry_bits < modulus_bits"));
        }
        if self.factor_bound_bits < 3 || self.factor_bound_bits >= self.modulus_bits {
            return Err(ParamError::new(
                "factor_bound_bits",
                "must satisfy 3 <= factor_bound_bits < modulus_bits",
            ));
        }
        if self.factor_bound_bits > 32 {
            return Err(ParamError::new("factor_bound_bits", "must be at most 32"));
        }
        if self.am_table_size < 2 {
            return Err(ParamError::new("am_table_size", "must be at least 2"));
        }
        if self.am_table_size > 64 {
            return Err(ParamError::new("am_table_size", "must be at most 64"));
        }
        Ok(())
    }

    /// Exclusive bound on nonces, S, ID and update secrets.
    pub fn value_bound(&self) -> u128 {
        1u128 << (2 * self.limb_bits)
    }

    pub fn modulus_low(&self) -> u64 {
        1u64 << (self.modulus_bits - 1)
    }

    /// Exclusive upper bound on moduli, `2^modulus_bits` (saturated at 64 bits).
    pub fn modulus_high(&self) -> u128 {
        1u128 << self.modulus_bits
    }

    pub fn z_am(&self) -> u64 {
        self.am_table_size as u64
    }
}
