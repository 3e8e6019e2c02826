//! Test statistics on final states: the posterior probability of control
//! superiority (PPCS) under independent Beta priors and an adjusted Wald
//! statistic.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadOptions};
use crate::special::{beta_ln_pdf, beta_reg_upper, ln_beta};
use crate::state_space::{StageLayout, TrialState};

/// Quadrature tolerance used for allocation probabilities.
pub const POLICY_TOL: f64 = 1e-3;
/// Quadrature tolerance used for final-state test statistics.
pub const STATISTIC_TOL: f64 = 1e-6;

/// Independent Beta priors on the control and developmental success rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub alpha_c: f64,
    pub beta_c: f64,
    pub alpha_d: f64,
    pub beta_d: f64,
}

impl BetaPrior {
    pub const UNIFORM: BetaPrior = BetaPrior { alpha_c: 1.0, beta_c: 1.0, alpha_d: 1.0, beta_d: 1.0 };

    pub fn new(alpha_c: f64, beta_c: f64, alpha_d: f64, beta_d: f64) -> Result<Self> {
        let p = Self { alpha_c, beta_c, alpha_d, beta_d };
        if p.params().iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(p)
        } else {
            Err(Error::InvalidDesign(format!("Beta prior parameters must be positive, got {p:?}")))
        }
    }

    /// The same Beta(alpha, beta) prior on both arms.
    pub fn symmetric(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha, beta, alpha, beta)
    }

    pub fn params(&self) -> [f64; 4] {
        [self.alpha_c, self.beta_c, self.alpha_d, self.beta_d]
    }

    pub fn is_symmetric(&self) -> bool {
        self.alpha_c == self.alpha_d && self.beta_c == self.beta_d
    }

    /// Posterior shapes `(a_C, b_C, a_D, b_D)` after observing `state`.
    pub fn posterior(&self, state: &TrialState) -> [f64; 4] {
        [
            self.alpha_c + state.s_c as f64,
            self.beta_c + state.f_c() as f64,
            self.alpha_d + state.s_d as f64,
            self.beta_d + state.f_d() as f64,
        ]
    }
}

impl Default for BetaPrior {
    fn default() -> Self {
        Self::UNIFORM
    }
}

/// Which statistic a test is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatisticKind {
    Ppcs,
    Wald,
}

impl StatisticKind {
    pub fn name(&self) -> &'static str {
        match self {
            StatisticKind::Ppcs => "ppcs",
            StatisticKind::Wald => "wald",
        }
    }
}

/// `∫_{lo}^{hi} Beta(t; a, b) * h(t) dt`, substituting `t = v^{1/a}` (or the
/// mirrored form) when an endpoint exponent makes the density unbounded.
fn density_weighted<H: Fn(f64) -> f64>(a: f64, b: f64, h: H, atol: f64) -> Result<f64> {
    if a >= 1.0 && b >= 1.0 {
        let f = |t: f64| beta_ln_pdf(t, a, b).exp() * h(t);
        return Ok(integrate(f, 0.0, 1.0, QuadOptions::absolute(atol))?.value);
    }
    let lb = ln_beta(a, b);
    let half_tol = 0.5 * atol;
    let left = if a < 1.0 {
        // t^{a-1} dt = dv / a with t = v^{1/a}
        let f = |v: f64| {
            let t = v.powf(1.0 / a);
            ((b - 1.0) * (-t).ln_1p() - lb).exp() / a * h(t)
        };
        integrate(f, 0.0, 0.5f64.powf(a), QuadOptions::absolute(half_tol))?.value
    } else {
        let f = |t: f64| beta_ln_pdf(t, a, b).exp() * h(t);
        integrate(f, 0.0, 0.5, QuadOptions::absolute(half_tol))?.value
    };
    let right = if b < 1.0 {
        let f = |w: f64| {
            let u = w.powf(1.0 / b);
            let t = 1.0 - u;
            ((a - 1.0) * t.ln() - lb).exp() / b * h(t)
        };
        integrate(f, 0.0, 0.5f64.powf(b), QuadOptions::absolute(half_tol))?.value
    } else {
        let f = |t: f64| beta_ln_pdf(t, a, b).exp() * h(t);
        integrate(f, 0.5, 1.0, QuadOptions::absolute(half_tol))?.value
    };
    Ok(left + right)
}

/// `P(θ_C >= θ_D)` for `θ_C ~ Beta(a_c, b_c)`, `θ_D ~ Beta(a_d, b_d)` independent.
pub fn prob_superior(a_c: f64, b_c: f64, a_d: f64, b_d: f64, abs_tol: f64) -> Result<f64> {
    if a_c == a_d && b_c == b_d {
        return Ok(0.5);
    }
    // P(X >= Y) = P(1 - Y >= 1 - X): evaluate one fixed member of the pair so
    // mirrored states share a bit-identical value.
    let (a_c, b_c, a_d, b_d) = {
        let direct = [a_c, b_c, a_d, b_d];
        let mirrored = [b_d, a_d, b_c, a_c];
        let pick = if mirrored.iter().zip(&direct).map(|(m, d)| m.total_cmp(d)).find(|o| o.is_ne())
            == Some(std::cmp::Ordering::Less)
        {
            mirrored
        } else {
            direct
        };
        (pick[0], pick[1], pick[2], pick[3])
    };
    let value = density_weighted(a_d, b_d, |t| beta_reg_upper(a_c, b_c, t), abs_tol)?;
    Ok(value.clamp(0.0, 1.0))
}

/// Posterior probability that control is superior after observing `state`.
pub fn ppcs(state: &TrialState, prior: &BetaPrior, abs_tol: f64) -> Result<f64> {
    let [a_c, b_c, a_d, b_d] = prior.posterior(state);
    prob_superior(a_c, b_c, a_d, b_d, abs_tol)
}

fn as_positive_integer(v: f64) -> Option<u64> {
    (v >= 1.0 && v.fract() == 0.0 && v < 1e9).then_some(v as u64)
}

/// `P(θ_C > θ_D)` from the finite sum available when all shapes are integers:
/// `Σ_{k<a_C} B(a_D+k, b_D+b_C) / ((b_C+k) B(1+k, b_C) B(a_D, b_D))`.
pub fn prob_superior_exact_integer(a_c: f64, b_c: f64, a_d: f64, b_d: f64) -> Result<f64> {
    let ok = [a_c, b_c, a_d, b_d].iter().all(|v| as_positive_integer(*v).is_some());
    if !ok {
        return Err(Error::NonIntegerPrior);
    }
    let n = a_c as u64;
    let base = ln_beta(a_d, b_d);
    let total: f64 = (0..n)
        .map(|k| {
            let k = k as f64;
            (ln_beta(a_d + k, b_d + b_c) - (b_c + k).ln() - ln_beta(1.0 + k, b_c) - base).exp()
        })
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

/// Finite-sum PPCS for integer prior parameters.
pub fn ppcs_exact_integer(state: &TrialState, prior: &BetaPrior) -> Result<f64> {
    let [a_c, b_c, a_d, b_d] = prior.posterior(state);
    prob_superior_exact_integer(a_c, b_c, a_d, b_d)
}

/// Wald statistic with one success and one failure added to each arm:
/// `(p̃_D − p̃_C) / sqrt(p̃_C(1−p̃_C)/(n_C+2) + p̃_D(1−p̃_D)/(n_D+2))`.
pub fn wald_statistic(state: &TrialState) -> f64 {
    let n_c = state.n_c as f64 + 2.0;
    let n_d = state.n_d as f64 + 2.0;
    let p_c = (state.s_c as f64 + 1.0) / n_c;
    let p_d = (state.s_d as f64 + 1.0) / n_d;
    (p_d - p_c) / (p_c * (1.0 - p_c) / n_c + p_d * (1.0 - p_d) / n_d).sqrt()
}

/// Statistic of one state.
pub fn statistic(state: &TrialState, kind: StatisticKind, prior: &BetaPrior, abs_tol: f64) -> Result<f64> {
    match kind {
        StatisticKind::Ppcs => ppcs(state, prior, abs_tol),
        StatisticKind::Wald => Ok(wald_statistic(state)),
    }
}

/// Statistic values for every state of `stage`, in canonical order.
pub fn stage_statistics(stage: usize, kind: StatisticKind, prior: &BetaPrior, abs_tol: f64) -> Result<Vec<f64>> {
    let layout = StageLayout::new(stage);
    let states: Vec<TrialState> = layout.states().collect();
    states.par_iter().map(|x| statistic(x, kind, prior, abs_tol)).collect()
}
