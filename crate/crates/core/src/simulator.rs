//! Honest tag/reader/server sessions, the eavesdropped transcript stream and
//! its ground-truth sidecar.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

use crate::formats::{dec_blocks, dec_u128, dec_u64};
use crate::modmath::{LimbCodec, Vec2, Wide};
use crate::params::SystemParams;
use crate::system::SystemFile;
use crate::protocol::{
    decrypt_message, derive_effective_state, encrypt_message, update_state, AmSystem, EffectiveState,
    ProtocolError, SecretState, StateIndices, UpdateSecrets,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("storage failed after {completed} sessions: {source}")]
    Storage { completed: u64, source: io::Error },
    #[error("session count must be at least 1")]
    EmptyCampaign,
}

/// One session's eavesdropped ciphertexts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: u64,
    #[serde(with = "dec_blocks")]
    pub c1: Vec<Vec2>,
    #[serde(with = "dec_blocks")]
    pub c2: Vec<Vec2>,
    #[serde(with = "dec_blocks")]
    pub c3: Vec<Vec2>,
    #[serde(with = "dec_blocks")]
    pub c4: Vec<Vec2>,
    #[serde(with = "dec_blocks")]
    pub c5: Vec<Vec2>,
    #[serde(with = "dec_blocks")]
    pub c6: Vec<Vec2>,
}

impl Transcript {
    pub fn is_well_formed(&self) -> bool {
        [&self.c1, &self.c2, &self.c5, &self.c6].iter().all(|c| c.len() == 2)
            && self.c3.len() == 4
            && self.c4.len() == 4
    }
}

/// Effective-state descriptor: selector indices plus the resolved modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateDescriptor {
    pub dbltkm: u64,
    pub sueo: u64,
    pub am: u64,
    #[serde(with = "dec_u64")]
    pub modulus: u64,
}

impl StateDescriptor {
    fn new(indices: StateIndices, am: &AmSystem) -> Self {
        Self {
            dbltkm: indices.dbltkm,
            sueo: indices.sueo,
            am: indices.am,
            modulus: am.modulus(indices.am as usize),
        }
    }

    pub fn indices(&self) -> StateIndices {
        StateIndices { dbltkm: self.dbltkm, sueo: self.sueo, am: self.am }
    }
}

/// Hidden per-session values. Test sidecar; never an attack input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub session_id: u64,
    #[serde(with = "dec_u128")]
    pub n_t: Wide,
    #[serde(with = "dec_u128")]
    pub n_r: Wide,
    #[serde(with = "dec_u128")]
    pub sd: Wide,
    #[serde(with = "dec_u128")]
    pub sp: Wide,
    #[serde(with = "dec_u128")]
    pub sc: Wide,
    pub pre: StateDescriptor,
    pub post: StateDescriptor,
}

impl GroundTruth {
    pub fn update(&self) -> UpdateSecrets {
        UpdateSecrets { sd: self.sd, sp: self.sp, sc: self.sc }
    }
}

/// Nonce with room for the `+1` the protocol later encrypts.
fn sample_nonce<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> Wide {
    let bound = params.value_bound();
    loop {
        let n = rng.gen_range(0..bound);
        if n + 1 < bound {
            return n;
        }
    }
}

fn state_with(state: &SecretState, indices: StateIndices) -> SecretState {
    SecretState { indices, ..state.clone() }
}

/// Re-encrypts the six messages from hidden values.
pub fn encrypt_session(
    state: &SecretState,
    pre: &EffectiveState,
    post: &EffectiveState,
    gt: &GroundTruth,
    codec: LimbCodec,
) -> Result<Transcript, ProtocolError> {
    let (s, id) = (state.s, state.id);
    let upd = [gt.sd, gt.sp, gt.sc];
    Ok(Transcript {
        session_id: gt.session_id,
        c1: encrypt_message(&[gt.n_t, s], pre, codec)?,
        c2: encrypt_message(&[gt.n_r, s], pre, codec)?,
        c3: encrypt_message(&[gt.n_r, upd[0], upd[1], upd[2]], pre, codec)?,
        c4: encrypt_message(&[gt.n_t, upd[0], upd[1], upd[2]], pre, codec)?,
        c5: encrypt_message(&[gt.n_t + 1, id], post, codec)?,
        c6: encrypt_message(&[gt.n_r + 1, id], post, codec)?,
    })
}

/// One honest session under `state`; returns the transcript, the hidden
/// values and the post-update state that chains into the next session.
pub fn run_session<R: Rng + ?Sized>(
    session_id: u64,
    state: &SecretState,
    am: &AmSystem,
    params: &SystemParams,
    rng: &mut R,
) -> Result<(Transcript, GroundTruth, SecretState), ProtocolError> {
    let codec = LimbCodec::new(params.limb_bits)?;
    let pre = derive_effective_state(state, am, params)?;
    let n_t = sample_nonce(params, rng);
    let n_r = sample_nonce(params, rng);
    let upd = UpdateSecrets::random(params, rng);
    let next = update_state(state, &upd, params);
    let post = derive_effective_state(&next, am, params)?;
    let gt = GroundTruth {
        session_id,
        n_t,
        n_r,
        sd: upd.sd,
        sp: upd.sp,
        sc: upd.sc,
        pre: StateDescriptor::new(state.indices, am),
        post: StateDescriptor::new(next.indices, am),
    };
    let transcript = encrypt_session(state, &pre, &post, &gt, codec)?;
    Ok((transcript, gt, next))
}

/// Rebuilds the transcript implied by a sidecar record.
pub fn replay_session(
    gt: &GroundTruth,
    state: &SecretState,
    am: &AmSystem,
    params: &SystemParams,
) -> Result<Transcript, ProtocolError> {
    let codec = LimbCodec::new(params.limb_bits)?;
    let pre = derive_effective_state(&state_with(state, gt.pre.indices()), am, params)?;
    let post = derive_effective_state(&state_with(state, gt.post.indices()), am, params)?;
    encrypt_session(state, &pre, &post, gt, codec)
}

/// Server-side check of a C5 message: decrypts under the true post-update
/// state and compares against `N_t + 1 ‖ ID`.
pub fn server_accepts_c5(
    c5: &[Vec2],
    gt: &GroundTruth,
    state: &SecretState,
    am: &AmSystem,
    params: &SystemParams,
) -> bool {
    let Ok(codec) = LimbCodec::new(params.limb_bits) else { return false };
    let Ok(post) = derive_effective_state(&state_with(state, gt.post.indices()), am, params) else {
        return false;
    };
    matches!(decrypt_message(c5, &post, codec), Ok(v) if v == [gt.n_t + 1, state.id])
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub sessions: u64,
    /// Sessions whose pre- and post-update states act identically.
    pub coincident: u64,
}

impl CampaignStats {
    pub fn coincidence_rate(&self) -> f64 {
        if self.sessions == 0 {
            0.0
        } else {
            self.coincident as f64 / self.sessions as f64
        }
    }
}

/// A protocol instance plus its RNG; sessions chain through `state`.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub params: SystemParams,
    pub am: AmSystem,
    pub state: SecretState,
    rng: ChaCha8Rng,
    next_session: u64,
}

impl Simulator {
    pub fn new(params: SystemParams, am: AmSystem, state: SecretState, rng: ChaCha8Rng) -> Self {
        Self { params, am, state, rng, next_session: 0 }
    }

    /// Sessions start from the exported initial state.
    pub fn from_system(sys: &SystemFile) -> Self {
        Self::new(sys.params.clone(), sys.am.clone(), sys.secrets.clone(), sys.session_rng())
    }

    pub fn from_params(params: &SystemParams) -> Result<Self, ProtocolError> {
        Ok(Self::from_system(&SystemFile::generate(params)?))
    }

    pub fn step(&mut self) -> Result<(Transcript, GroundTruth), ProtocolError> {
        let (t, gt, next) = run_session(self.next_session, &self.state, &self.am, &self.params, &mut self.rng)?;
        self.state = next;
        self.next_session += 1;
        Ok((t, gt))
    }

    /// Runs `n` chained sessions, handing each record to `sink`.
    pub fn run_campaign<F>(&mut self, n: u64, mut sink: F) -> Result<CampaignStats, SimError>
    where
        F: FnMut(&Transcript, &GroundTruth) -> io::Result<()>,
    {
        if n == 0 {
            return Err(SimError::EmptyCampaign);
        }
        let mut stats = CampaignStats::default();
        for _ in 0..n {
            let (t, gt) = self.step()?;
            if same_effective_state(&gt, &self.params) {
                stats.coincident += 1;
            }
            sink(&t, &gt).map_err(|source| SimError::Storage { completed: stats.sessions, source })?;
            stats.sessions += 1;
        }
        Ok(stats)
    }

    /// Collects a campaign in memory.
    pub fn collect(&mut self, n: u64) -> Result<(Vec<Transcript>, Vec<GroundTruth>), SimError> {
        let mut ts = Vec::with_capacity(n as usize);
        let mut gts = Vec::with_capacity(n as usize);
        self.run_campaign(n, |t, gt| {
            ts.push(t.clone());
            gts.push(gt.clone());
            Ok(())
        })?;
        Ok((ts, gts))
    }
}

/// Whether pre and post descriptors select the same effective state.
/// In paper-model only the SUEO and AM indices matter.
pub fn same_effective_state(gt: &GroundTruth, params: &SystemParams) -> bool {
    match params.family_mode {
        crate::params::FamilyMode::PaperModel => gt.pre.sueo == gt.post.sueo && gt.pre.am == gt.post.am,
        crate::params::FamilyMode::Full20 => gt.pre.indices() == gt.post.indices(),
    }
}

/// Append-only line-delimited JSON writer.
pub struct JsonlWriter<W: Write> {
    out: W,
}

impl JsonlWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_transcripts(path: &Path) -> io::Result<Vec<Transcript>> {
    let ts: Vec<Transcript> = read_jsonl(path)?;
    if let Some(bad) = ts.iter().find(|t| !t.is_well_formed()) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("session {} has wrong block counts", bad.session_id),
        ));
    }
    Ok(ts)
}
