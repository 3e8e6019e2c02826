//! The BRAR allocation rule with burn-in and per-stage policy tables.
//!
//! After the burn-in the next participant is allocated to control with
//! probability equal to the PPCS of the current state, optionally clipped.

use std::borrow::Cow;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::posterior::{ppcs, BetaPrior, StatisticKind, POLICY_TOL};
use crate::state_space::{StageLayout, TrialState};

/// Bounds applied to allocation probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clip {
    pub lo: f64,
    pub hi: f64,
}

impl Clip {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi {
            Ok(Self { lo, hi })
        } else {
            Err(Error::InvalidDesign(format!("clip bounds must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]")))
        }
    }

    #[inline]
    pub fn apply(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }
}

/// A fully sequential BRAR design with burn-in and its test settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub trial_size: usize,
    pub burn_in: usize,
    pub prior: BetaPrior,
    pub clip: Option<Clip>,
    pub statistic: StatisticKind,
    pub alpha_upper: f64,
    pub alpha_lower: f64,
    pub policy_tol: f64,
}

impl DesignSpec {
    /// Uniform prior, no clipping, PPCS statistic, 2.5% in each tail.
    pub fn new(trial_size: usize, burn_in: usize) -> Result<Self> {
        let d = Self {
            trial_size,
            burn_in,
            prior: BetaPrior::UNIFORM,
            clip: None,
            statistic: StatisticKind::Ppcs,
            alpha_upper: 0.025,
            alpha_lower: 0.025,
            policy_tol: POLICY_TOL,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_prior(mut self, prior: BetaPrior) -> Self {
        self.prior = prior;
        self
    }

    pub fn with_clip(mut self, clip: Option<Clip>) -> Self {
        self.clip = clip;
        self
    }

    pub fn with_statistic(mut self, statistic: StatisticKind) -> Self {
        self.statistic = statistic;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDesign(m));
        if self.trial_size % 2 != 0 {
            return bad(format!("trial size must be even, got {}", self.trial_size));
        }
        if 2 * self.burn_in > self.trial_size {
            return bad(format!("burn-in {} exceeds half the trial size {}", self.burn_in, self.trial_size));
        }
        let tail_ok = |a: f64| (0.0..=1.0).contains(&a);
        if !tail_ok(self.alpha_upper) || !tail_ok(self.alpha_lower) {
            return bad(format!("tail levels must lie in [0, 1], got {} and {}", self.alpha_upper, self.alpha_lower));
        }
        if !(self.policy_tol > 0.0) {
            return bad(format!("policy tolerance must be positive, got {}", self.policy_tol));
        }
        BetaPrior::new(self.prior.alpha_c, self.prior.beta_c, self.prior.alpha_d, self.prior.beta_d)?;
        if let Some(c) = self.clip {
            Clip::new(c.lo, c.hi)?;
        }
        Ok(())
    }

    /// First stage at which the adaptive rule is used.
    pub fn adaptive_start(&self) -> usize {
        2 * self.burn_in
    }

    /// Burn-in proportion `2b / ī`.
    pub fn burn_in_proportion(&self) -> f64 {
        if self.trial_size == 0 {
            1.0
        } else {
            (2 * self.burn_in) as f64 / self.trial_size as f64
        }
    }

    pub fn policy_key(&self) -> PolicyKey {
        PolicyKey { trial_size: self.trial_size, prior: self.prior, clip: self.clip, tol: self.policy_tol }
    }
}

/// Probability of allocating the next participant to control.
pub fn allocation_prob(state: &TrialState, design: &DesignSpec) -> Result<f64> {
    if state.stage() < design.adaptive_start() {
        return Err(Error::BurnInQuery { stage: state.stage(), burn_in_end: design.adaptive_start() });
    }
    raw_allocation_prob(state, &design.prior, design.clip, design.policy_tol)
}

fn raw_allocation_prob(state: &TrialState, prior: &BetaPrior, clip: Option<Clip>, tol: f64) -> Result<f64> {
    let p = ppcs(state, prior, tol)?;
    Ok(clip.map_or(p, |c| c.apply(p)))
}

/// Everything an allocation probability depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyKey {
    pub trial_size: usize,
    pub prior: BetaPrior,
    pub clip: Option<Clip>,
    pub tol: f64,
}

impl PolicyKey {
    /// Allocation probabilities of every state at `stage`, in canonical order.
    pub fn compute_stage(&self, stage: usize) -> Result<Vec<f64>> {
        let layout = StageLayout::new(stage);
        let states: Vec<TrialState> = layout.states().collect();
        states
            .par_iter()
            .map(|x| raw_allocation_prob(x, &self.prior, self.clip, self.tol))
            .collect()
    }

    /// Stable file name for a cache of this key.
    pub fn cache_name(&self, start_stage: usize) -> String {
        let mut h = Sha256::new();
        h.update(self.header_bytes(start_stage));
        let digest = h.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("policy-n{}-s{}-{hex}.bin", self.trial_size, start_stage)
    }

    fn header_bytes(&self, start_stage: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(96);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.trial_size as u32).to_le_bytes());
        out.extend_from_slice(&(start_stage as u32).to_le_bytes());
        for p in self.prior.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let (flag, lo, hi) = match self.clip {
            Some(c) => (1u8, c.lo, c.hi),
            None => (0u8, 0.0, 1.0),
        };
        out.push(flag);
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
        out.extend_from_slice(&self.tol.to_le_bytes());
        out
    }
}

/// Source of per-stage allocation probabilities for the coefficient recursion.
pub trait PolicyProvider: Sync {
    fn trial_size(&self) -> usize;
    /// Probabilities for every state of `stage` in canonical order.
    fn stage_probs(&self, stage: usize) -> Result<Cow<'_, [f64]>>;
}

/// Computes each stage when asked and keeps nothing.
#[derive(Debug, Clone)]
pub struct StreamingPolicy {
    pub key: PolicyKey,
}

impl PolicyProvider for StreamingPolicy {
    fn trial_size(&self) -> usize {
        self.key.trial_size
    }

    fn stage_probs(&self, stage: usize) -> Result<Cow<'_, [f64]>> {
        if stage >= self.key.trial_size {
            return Err(Error::StageOutOfRange { stage, max: self.key.trial_size.saturating_sub(1) });
        }
        Ok(Cow::Owned(self.key.compute_stage(stage)?))
    }
}

/// Allocation probabilities for stages `start_stage..ī`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    key: PolicyKey,
    start_stage: usize,
    stages: Vec<Vec<f64>>,
}

const CACHE_MAGIC: &[u8; 8] = b"BRARPOL\0";
const CACHE_VERSION: u32 = 1;

impl PolicyTable {
    /// Builds the table needed by `design`.
    pub fn build(design: &DesignSpec) -> Result<Self> {
        design.validate()?;
        Self::build_for(design.policy_key(), design.adaptive_start())
    }

    /// Builds stages `start_stage..key.trial_size`. A table started at stage 0
    /// serves every burn-in.
    pub fn build_for(key: PolicyKey, start_stage: usize) -> Result<Self> {
        let start_stage = start_stage.min(key.trial_size);
        let stages = (start_stage..key.trial_size).map(|i| key.compute_stage(i)).collect::<Result<_>>()?;
        Ok(Self { key, start_stage, stages })
    }

    pub fn key(&self) -> &PolicyKey {
        &self.key
    }

    pub fn start_stage(&self) -> usize {
        self.start_stage
    }

    /// Number of stored probabilities.
    pub fn len(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stage(&self, stage: usize) -> Option<&[f64]> {
        stage.checked_sub(self.start_stage).and_then(|k| self.stages.get(k)).map(Vec::as_slice)
    }

    pub fn prob(&self, state: &TrialState) -> Option<f64> {
        let probs = self.stage(state.stage())?;
        let layout = StageLayout::new(state.stage());
        layout.index(state).ok().map(|k| probs[k])
    }

    /// Serializes the table with a trailing SHA-256 checksum.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut body = self.key.header_bytes(self.start_stage);
        for stage in &self.stages {
            for p in stage {
                body.extend_from_slice(&p.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&body);
        w.write_all(&body)?;
        w.write_all(&digest)?;
        Ok(())
    }

    /// Reads a table written by [`PolicyTable::write_to`] and checks that it
    /// was built for `key` starting at or before `start_stage`.
    pub fn read_from<R: Read>(mut r: R, key: &PolicyKey, start_stage: usize) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 32 {
            return Err(Error::CorruptCache("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::CorruptCache("checksum mismatch".into()));
        }
        let stored_start = if body.len() >= 20 {
            u32::from_le_bytes(body[16..20].try_into().expect("4 bytes")) as usize
        } else {
            return Err(Error::CorruptCache("truncated header".into()));
        };
        let header = key.header_bytes(stored_start);
        if body.len() < header.len() || body[..header.len()] != header[..] {
            return Err(Error::CorruptCache("header does not match the requested policy".into()));
        }
        if stored_start > start_stage.min(key.trial_size) {
            return Err(Error::CorruptCache(format!("cache starts at stage {stored_start}, need {start_stage}")));
        }
        let mut payload = &body[header.len()..];
        let mut stages = Vec::new();
        for i in stored_start..key.trial_size {
            let n = StageLayout::new(i).total();
            if payload.len() < 8 * n {
                return Err(Error::CorruptCache(format!("stage {i} truncated")));
            }
            let (chunk, rest) = payload.split_at(8 * n);
            stages.push(chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
            payload = rest;
        }
        if !payload.is_empty() {
            return Err(Error::CorruptCache("trailing bytes".into()));
        }
        Ok(Self { key: *key, start_stage: stored_start, stages })
    }

    /// Loads the table from `dir` when a valid cache exists, otherwise builds
    /// it from stage 0 and stores it. Corrupt caches are rebuilt.
    pub fn load_or_build(dir: &Path, key: PolicyKey) -> Result<Self> {
        let path = dir.join(key.cache_name(0));
        if let Ok(f) = std::fs::File::open(&path) {
            if let Ok(t) = Self::read_from(std::io::BufReader::new(f), &key, 0) {
                return Ok(t);
            }
        }
        let table = Self::build_for(key, 0)?;
        std::fs::create_dir_all(dir)?;
        let tmp = path.with_extension("tmp");
        {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            table.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, &path)?;
        Ok(table)
    }
}

impl PolicyProvider for PolicyTable {
    fn trial_size(&self) -> usize {
        self.key.trial_size
    }

    fn stage_probs(&self, stage: usize) -> Result<Cow<'_, [f64]>> {
        self.stage(stage).map(Cow::Borrowed).ok_or(Error::StageOutOfRange {
            stage,
            max: self.key.trial_size.saturating_sub(1),
        })
    }
}
