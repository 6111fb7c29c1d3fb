//! System export file: params, AM table, matrices and secrets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io;
use std::path::Path;

use crate::params::SystemParams;
use crate::protocol::{gen_am_system, gen_secret_state, AmSystem, ProtocolError, SecretState};

const SESSION_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemFile {
    pub params: SystemParams,
    pub am: AmSystem,
    pub secrets: SecretState,
    /// Whether `am.table[*].factors` carries the ground-truth factorization.
    pub includes_factors: bool,
}

impl SystemFile {
    pub fn generate(params: &SystemParams) -> Result<Self, ProtocolError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let am = gen_am_system(params, &mut rng)?;
        let secrets = gen_secret_state(params, &am, &mut rng)?;
        Ok(Self { params: params.clone(), am, secrets, includes_factors: true })
    }

    /// RNG for the session campaign; independent of the generation stream.
    pub fn session_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(SESSION_STREAM);
        rng
    }

    pub fn without_factors(&self) -> Self {
        let mut out = self.clone();
        for m in &mut out.am.table {
            m.factors.clear();
        }
        out.includes_factors = false;
        out
    }

    pub fn to_json(&self, include_factors: bool) -> String {
        let view = if include_factors { self.clone() } else { self.without_factors() };
        serde_json::to_string_pretty(&view).expect("system file serializes")
    }

    pub fn write(&self, path: &Path, include_factors: bool) -> io::Result<()> {
        fs::write(path, self.to_json(include_factors) + "\n")
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}
