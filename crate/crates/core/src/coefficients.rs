//! Path-count coefficients `g_i` and exact final-state distributions.
//!
//! `g_i(x)` sums, over every allocation path reaching `x`, the product of the
//! allocation probabilities along the path. The law of the final state is
//! `g(x) θ_C^{s_C} (1-θ_C)^{f_C} θ_D^{s_D} (1-θ_D)^{f_D}`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::PolicyProvider;
use crate::special::{binomial, power_table};
use crate::state_space::{StageLayout, TrialState};

/// Coefficients of every state of one stage in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFrontier {
    layout: StageLayout,
    values: Vec<f64>,
}

impl CoefficientFrontier {
    pub fn from_values(stage: usize, values: Vec<f64>) -> Result<Self> {
        let layout = StageLayout::new(stage);
        if values.len() != layout.total() {
            return Err(Error::InvalidDesign(format!(
                "stage {stage} needs {} coefficients, got {}",
                layout.total(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn stage(&self) -> usize {
        self.layout.stage()
    }

    pub fn layout(&self) -> &StageLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, state: &TrialState) -> Result<f64> {
        Ok(self.values[self.layout.index(state)?])
    }

    /// States paired with their coefficients.
    pub fn iter(&self) -> impl Iterator<Item = (TrialState, f64)> + '_ {
        self.layout.states().zip(self.values.iter().copied())
    }

    /// Binary dump: magic, stage, count, then little-endian `f64` values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"BRARGCF\0")?;
        w.write_all(&(self.stage() as u32).to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Frontier at stage `2b` after any burn-in that allocates `b` per arm:
/// `C(b, s_C) C(b, s_D)` on the `n_C = b` slice and zero elsewhere.
pub fn burn_in_frontier(burn_in: usize) -> CoefficientFrontier {
    let stage = 2 * burn_in;
    let layout = StageLayout::new(stage);
    let mut values = vec![0.0; layout.total()];
    let b = burn_in as u64;
    let row: Vec<f64> = (0..=b).map(|s| binomial(b, s)).collect();
    let range = layout.slice(burn_in);
    for (k, v) in values[range].iter_mut().enumerate() {
        let (s_c, s_d) = (k / (burn_in + 1), k % (burn_in + 1));
        *v = row[s_c] * row[s_d];
    }
    CoefficientFrontier { layout, values }
}

/// One step of the recursion. `probs` are the control-allocation
/// probabilities of the states of `frontier`'s stage.
pub fn propagate(frontier: &CoefficientFrontier, probs: &[f64]) -> Result<CoefficientFrontier> {
    let from = &frontier.layout;
    if probs.len() != from.total() {
        return Err(Error::InvalidDesign(format!(
            "stage {} needs {} allocation probabilities, got {}",
            from.stage(),
            from.total(),
            probs.len()
        )));
    }
    let stage = from.stage() + 1;
    let to = StageLayout::new(stage);
    let g = &frontier.values;
    let to_c: Vec<f64> = g.par_iter().zip(probs).map(|(g, p)| g * p).collect();
    let to_d: Vec<f64> = g.par_iter().zip(probs).map(|(g, p)| g * (1.0 - p)).collect();

    let mut values = vec![0.0; to.total()];
    let mut slices: Vec<&mut [f64]> = Vec::with_capacity(stage + 1);
    let mut rest = values.as_mut_slice();
    for n_c in 0..=stage {
        let (head, tail) = rest.split_at_mut(to.slice(n_c).len());
        slices.push(head);
        rest = tail;
    }
    slices.into_par_iter().enumerate().for_each(|(n_c, out)| {
        let n_d = stage - n_c;
        let width = n_d + 1;
        for s_c in 0..=n_c {
            for s_d in 0..=n_d {
                let mut acc = 0.0;
                if n_c >= 1 {
                    let base = from.index_unchecked(n_c as u32 - 1, 0, 0);
                    let w = n_d + 1;
                    if s_c >= 1 {
                        acc += to_c[base + (s_c - 1) * w + s_d];
                    }
                    if s_c < n_c {
                        acc += to_c[base + s_c * w + s_d];
                    }
                }
                if n_d >= 1 {
                    let base = from.index_unchecked(n_c as u32, 0, 0);
                    let w = n_d;
                    if s_d >= 1 {
                        acc += to_d[base + s_c * w + s_d - 1];
                    }
                    if s_d < n_d {
                        acc += to_d[base + s_c * w + s_d];
                    }
                }
                out[s_c * width + s_d] = acc;
            }
        }
    });
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Overflow { state: to.state_of(k)? });
    }
    Ok(CoefficientFrontier { layout: to, values })
}

/// Runs the recursion from the burn-in frontier to stage `trial_size`.
pub fn final_frontier<P: PolicyProvider + ?Sized>(trial_size: usize, burn_in: usize, policy: &P) -> Result<CoefficientFrontier> {
    frontier_history(trial_size, burn_in, policy, |_| Ok(()))
}

/// Like [`final_frontier`] but hands every intermediate frontier to `visit`.
pub fn frontier_history<P, F>(trial_size: usize, burn_in: usize, policy: &P, mut visit: F) -> Result<CoefficientFrontier>
where
    P: PolicyProvider + ?Sized,
    F: FnMut(&CoefficientFrontier) -> Result<()>,
{
    if 2 * burn_in > trial_size {
        return Err(Error::InvalidDesign(format!("burn-in {burn_in} exceeds half the trial size {trial_size}")));
    }
    if policy.trial_size() < trial_size {
        return Err(Error::InvalidDesign(format!(
            "policy covers {} participants, design needs {trial_size}",
            policy.trial_size()
        )));
    }
    let mut g = burn_in_frontier(burn_in);
    visit(&g)?;
    for i in 2 * burn_in..trial_size {
        let probs = policy.stage_probs(i)?;
        g = propagate(&g, &probs)?;
        visit(&g)?;
    }
    Ok(g)
}

/// Burn-in built stage by stage under strict alternation C, D, C, D, ...
pub fn alternating_burn_in_frontier(burn_in: usize) -> Result<CoefficientFrontier> {
    let mut g = CoefficientFrontier::from_values(0, vec![1.0])?;
    for i in 0..2 * burn_in {
        let p = if i % 2 == 0 { 1.0 } else { 0.0 };
        let probs = vec![p; g.layout.total()];
        g = propagate(&g, &probs)?;
    }
    Ok(g)
}

/// `θ_C^{s_C}(1−θ_C)^{f_C}θ_D^{s_D}(1−θ_D)^{f_D}` for every state of `layout`.
pub fn outcome_weights(layout: &StageLayout, theta_c: f64, theta_d: f64) -> Vec<f64> {
    let n = layout.stage();
    let (sc, fc) = (power_table(theta_c, n), power_table(1.0 - theta_c, n));
    let (sd, fd) = (power_table(theta_d, n), power_table(1.0 - theta_d, n));
    let mut out = Vec::with_capacity(layout.total());
    for n_c in 0..=n {
        let n_d = n - n_c;
        for s_c in 0..=n_c {
            let c = sc[s_c] * fc[n_c - s_c];
            for s_d in 0..=n_d {
                out.push(c * sd[s_d] * fd[n_d - s_d]);
            }
        }
    }
    out
}

/// Probability of every final state at `θ = (θ_C, θ_D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalDistribution {
    pub theta: (f64, f64),
    pub probs: Vec<f64>,
}

pub fn final_distribution(g: &CoefficientFrontier, theta_c: f64, theta_d: f64) -> FinalDistribution {
    let w = outcome_weights(&g.layout, theta_c, theta_d);
    let probs = g.values.iter().zip(&w).map(|(g, w)| g * w).collect();
    FinalDistribution { theta: (theta_c, theta_d), probs }
}

impl FinalDistribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}
