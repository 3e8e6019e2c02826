//! Exact operating characteristics: pointwise, averaged over a
//! treatment-effect slice `θ_D − θ_C = δ`, and extrema over a grid.
//!
//! Every OC is `E_θ[f(X, θ)] = Σ_x f(x, θ) g(x) p_θ(x)`. On a slice with
//! `δ ≠ 0` the functional `f` depends on `θ` only through a constant, so
//! averaging reduces to per-state slice weights.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::coefficients::{outcome_weights, CoefficientFrontier};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadOptions};
use crate::special::ln_beta;
use crate::state_space::{StageLayout, TrialState};

/// Default imbalance margin for PIWD.
pub const DEFAULT_PHI: f64 = 0.1;

/// Relative tolerance of the slice-weight integrals.
pub const SLICE_RTOL: f64 = 1.4901161193847656e-8;

/// Which operating characteristic to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OcKind<'a> {
    /// Probability of rejection; one flag per final state.
    RejectionRate(&'a [bool]),
    Epasa,
    Piwd { phi: f64 },
    Bias(EmptyArm),
}

/// Effect estimate used for final states where one arm has no participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyArm {
    /// One pseudo-success and one pseudo-failure added to both arms.
    #[default]
    Adjusted,
    /// The estimate counts as zero.
    Zero,
}

impl OcKind<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            OcKind::RejectionRate(_) => "rejection",
            OcKind::Epasa => "epasa",
            OcKind::Piwd { .. } => "piwd",
            OcKind::Bias(_) => "bias",
        }
    }
}

/// Treatment-effect estimate `θ̂_D − θ̂_C`, with one pseudo-success and one
/// pseudo-failure per arm when some arm is empty.
pub fn effect_estimate(x: &TrialState) -> f64 {
    let iota = if x.n_c.min(x.n_d) == 0 { 1.0 } else { 0.0 };
    let est = |s: u32, n: u32| (s as f64 + iota) / (n as f64 + 2.0 * iota);
    est(x.s_d, x.n_d) - est(x.s_c, x.n_c)
}

/// Imbalance of at least `phi` towards control: `n_C/ī > n_D/ī + φ`.
fn imbalanced(lead: u32, lag: u32, n: f64, phi: f64) -> bool {
    lead as f64 / n > lag as f64 / n + phi
}

/// Per-state values of `f` given which arm is superior (`Greater` means
/// `θ_D > θ_C`). The `−(θ_D − θ_C)` term of the bias is added by the callers.
fn functional(layout: &StageLayout, kind: OcKind, direction: Ordering) -> Result<Vec<f64>> {
    let n = layout.stage() as f64;
    let values = match kind {
        OcKind::RejectionRate(mask) => {
            if mask.len() != layout.total() {
                return Err(Error::InvalidDesign(format!("rejection mask has {} entries, stage has {}", mask.len(), layout.total())));
            }
            mask.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect()
        }
        OcKind::Epasa => layout
            .states()
            .map(|x| match direction {
                Ordering::Greater => x.n_d as f64 / n,
                Ordering::Less => x.n_c as f64 / n,
                Ordering::Equal => (x.n_c + x.n_d) as f64 / n - 0.5,
            })
            .collect(),
        OcKind::Piwd { phi } => {
            if !(0.0..=1.0).contains(&phi) {
                return Err(Error::InvalidDesign(format!("phi {phi} outside [0, 1]")));
            }
            layout
                .states()
                .map(|x| {
                    let hit = match direction {
                        Ordering::Greater => imbalanced(x.n_c, x.n_d, n, phi),
                        Ordering::Less => imbalanced(x.n_d, x.n_c, n, phi),
                        Ordering::Equal => return Err(Error::UndefinedAtNull),
                    };
                    Ok(if hit { 1.0 } else { 0.0 })
                })
                .collect::<Result<_>>()?
        }
        OcKind::Bias(rule) => layout
            .states()
            .map(|x| match rule {
                EmptyArm::Zero if x.n_c.min(x.n_d) == 0 => 0.0,
                _ => effect_estimate(&x),
            })
            .collect(),
    };
    Ok(values)
}

fn direction(delta: f64) -> Ordering {
    delta.partial_cmp(&0.0).unwrap_or(Ordering::Equal)
}

fn offset(kind: OcKind, delta: f64) -> f64 {
    if let OcKind::Bias(_) = kind {
        -delta
    } else {
        0.0
    }
}

fn check_theta(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidDesign(format!("success rate {t} outside [0, 1]")))
    }
}

/// `E_θ[f]` at a single parameter point.
pub fn oc_point(g: &CoefficientFrontier, kind: OcKind, theta_c: f64, theta_d: f64) -> Result<f64> {
    check_theta(theta_c)?;
    check_theta(theta_d)?;
    let delta = theta_d - theta_c;
    let f = functional(g.layout(), kind, direction(delta))?;
    let w = outcome_weights(g.layout(), theta_c, theta_d);
    Ok(dot3(&f, g.values(), &w) + offset(kind, delta))
}

fn dot3(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(b).zip(c).map(|((a, b), c)| a * b * c).sum()
}

/// Per-state weights `p_Θδ(x)`: the outcome product averaged uniformly over
/// the slice. Depends only on the stage and `δ`, so it can be shared across
/// designs.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceWeights {
    pub delta: f64,
    pub weights: Vec<f64>,
}

impl SliceWeights {
    pub fn new(stage: usize, delta: f64) -> Result<Self> {
        if !(delta > -1.0 && delta < 1.0) {
            return Err(Error::InvalidDesign(format!("treatment effect {delta} outside (-1, 1)")));
        }
        let layout = StageLayout::new(stage);
        let states: Vec<TrialState> = layout.states().collect();
        let weights = if delta == 0.0 {
            states.iter().map(|x| null_slice_weight(stage, x.total_successes())).collect()
        } else {
            states.par_iter().map(|x| slice_weight(x, delta)).collect::<Result<_>>()?
        };
        Ok(Self { delta, weights })
    }
}

/// `B(s + 1, ī − s + 1)`.
pub fn null_slice_weight(stage: usize, successes: usize) -> f64 {
    ln_beta(successes as f64 + 1.0, (stage - successes) as f64 + 1.0).exp()
}

/// `(1/(1−|δ|)) ∫ θ_C^{s_C}(1−θ_C)^{f_C} θ_D^{s_D}(1−θ_D)^{f_D} dθ_C` along `θ_D = θ_C + δ`.
pub fn slice_weight(x: &TrialState, delta: f64) -> Result<f64> {
    let (lo, hi) = (f64::max(0.0, -delta), f64::min(1.0, 1.0 - delta));
    let f = |t: f64| {
        let d = (t + delta).clamp(0.0, 1.0);
        t.powi(x.s_c as i32) * (1.0 - t).powi(x.f_c() as i32) * d.powi(x.s_d as i32) * (1.0 - d).powi(x.f_d() as i32)
    };
    const PIECES: usize = 8;
    let h = (hi - lo) / PIECES as f64;
    let mut total = 0.0;
    for k in 0..PIECES {
        let a = lo + k as f64 * h;
        let b = if k + 1 == PIECES { hi } else { a + h };
        total += integrate(f, a, b, QuadOptions::relative(SLICE_RTOL))?.value;
    }
    Ok(total / (hi - lo))
}

/// Average of an OC over the slice whose weights are given.
pub fn average_oc(g: &CoefficientFrontier, kind: OcKind, slice: &SliceWeights) -> Result<f64> {
    if slice.weights.len() != g.layout().total() {
        return Err(Error::InvalidDesign("slice weights do not match the frontier stage".into()));
    }
    let f = functional(g.layout(), kind, direction(slice.delta))?;
    Ok(dot3(&f, g.values(), &slice.weights) + offset(kind, slice.delta))
}

/// Grid `θ_D − θ_C = δ` with both rates on the 0.01 lattice in `[0, 1]`.
pub fn slice_grid(delta: f64) -> Vec<(f64, f64)> {
    let d = (delta * 100.0).round() as i64;
    (0..=100i64)
        .filter(|c| (0..=100).contains(&(c + d)))
        .map(|c| (c as f64 / 100.0, (c + d) as f64 / 100.0))
        .collect()
}

/// Null grid `θ_C = θ_D ∈ {0, 0.01, …, 1}`.
pub fn null_grid() -> Vec<(f64, f64)> {
    slice_grid(0.0)
}

/// Extrema of an OC over a set of parameter points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridExtrema {
    pub min: f64,
    pub argmin: (f64, f64),
    pub max: f64,
    pub argmax: (f64, f64),
}

pub fn grid_extrema(g: &CoefficientFrontier, kind: OcKind, grid: &[(f64, f64)]) -> Result<GridExtrema> {
    if grid.is_empty() {
        return Err(Error::InvalidDesign("empty parameter grid".into()));
    }
    let values: Vec<f64> = grid.par_iter().map(|&(c, d)| oc_point(g, kind, c, d)).collect::<Result<_>>()?;
    let mut out = GridExtrema { min: values[0], argmin: grid[0], max: values[0], argmax: grid[0] };
    for (v, &p) in values.iter().zip(grid).skip(1) {
        if *v < out.min {
            out.min = *v;
            out.argmin = p;
        }
        if *v > out.max {
            out.max = *v;
            out.argmax = p;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{burn_in_frontier, final_frontier};
    use crate::policy::{DesignSpec, PolicyTable};
    use crate::quadrature::gauss_legendre;

    fn frontier(n: usize, b: usize) -> CoefficientFrontier {
        let table = PolicyTable::build(&DesignSpec::new(n, b).unwrap()).unwrap();
        final_frontier(n, b, &table).unwrap()
    }

    #[test]
    fn trivial_values() {
        let g = frontier(12, 2);
        let ones = vec![true; g.layout().total()];
        for &(c, d) in &[(0.0, 0.0), (0.3, 0.6), (1.0, 0.2)] {
            assert!((oc_point(&g, OcKind::RejectionRate(&ones), c, d).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((oc_point(&g, OcKind::Epasa, 0.4, 0.4).unwrap() - 0.5).abs() < 1e-12);
        assert!(oc_point(&g, OcKind::Bias(EmptyArm::Adjusted), 0.4, 0.4).unwrap().abs() < 1e-12);
        assert!(matches!(oc_point(&g, OcKind::Piwd { phi: 0.1 }, 0.4, 0.4), Err(Error::UndefinedAtNull)));
    }

    #[test]
    fn estimator_adjustment() {
        assert_eq!(effect_estimate(&TrialState::new(0, 0, 4, 4)), 5.0 / 6.0 - 0.5);
        assert_eq!(effect_estimate(&TrialState::new(2, 1, 4, 3)), 0.25);
    }

    #[test]
    fn empty_arm_rule() {
        let g = frontier(8, 0);
        let a = oc_point(&g, OcKind::Bias(EmptyArm::Adjusted), 0.2, 0.6).unwrap();
        let z = oc_point(&g, OcKind::Bias(EmptyArm::Zero), 0.2, 0.6).unwrap();
        let w = outcome_weights(g.layout(), 0.2, 0.6);
        let empty: f64 = g
            .iter()
            .zip(&w)
            .filter(|((x, _), _)| x.n_c == 0 || x.n_d == 0)
            .map(|((x, v), w)| effect_estimate(&x) * v * w)
            .sum();
        assert!(empty != 0.0);
        assert!((a - z - empty).abs() < 1e-14);
        let g = frontier(8, 1);
        assert_eq!(
            oc_point(&g, OcKind::Bias(EmptyArm::Adjusted), 0.2, 0.6).unwrap(),
            oc_point(&g, OcKind::Bias(EmptyArm::Zero), 0.2, 0.6).unwrap()
        );
    }

    #[test]
    fn full_burn_in_epasa_is_half() {
        let g = burn_in_frontier(5);
        assert!((oc_point(&g, OcKind::Epasa, 0.2, 0.7).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn slice_weights_normalise() {
        for &delta in &[0.0, 0.1, -0.3, 0.75] {
            let g = frontier(14, 3);
            let w = SliceWeights::new(14, delta).unwrap();
            let ones = vec![true; g.layout().total()];
            assert!((average_oc(&g, OcKind::RejectionRate(&ones), &w).unwrap() - 1.0).abs() < 1e-9, "δ={delta}");
        }
    }

    // The OC along a slice is a polynomial of degree ī in θ_C, so Gauss-Legendre
    // with ī/2 + 1 nodes integrates it exactly.
    fn node_average(g: &CoefficientFrontier, kind: OcKind, delta: f64) -> f64 {
        let n = g.stage() / 2 + 2;
        let (x, w) = gauss_legendre(n);
        let (lo, hi) = (f64::max(0.0, -delta), f64::min(1.0, 1.0 - delta));
        let mut acc = 0.0;
        for (x, w) in x.iter().zip(&w) {
            let t = lo + (hi - lo) * (x + 1.0) / 2.0;
            acc += w / 2.0 * oc_point(g, kind, t, (t + delta).clamp(0.0, 1.0)).unwrap();
        }
        acc
    }

    #[test]
    fn averages_match_node_quadrature() {
        let g = frontier(16, 2);
        let mask: Vec<bool> = g.layout().states().map(|x| x.s_d > x.s_c + 2).collect();
        for &delta in &[0.0, 0.1, 0.25, -0.2] {
            let w = SliceWeights::new(16, delta).unwrap();
            let mut kinds = vec![OcKind::RejectionRate(&mask), OcKind::Epasa, OcKind::Bias(EmptyArm::Adjusted)];
            if delta != 0.0 {
                kinds.push(OcKind::Piwd { phi: 0.1 });
            }
            for kind in kinds {
                let a = average_oc(&g, kind, &w).unwrap();
                let b = node_average(&g, kind, delta);
                assert!((a - b).abs() < 1e-10, "{} δ={delta}: {a} vs {b}", kind.name());
            }
        }
    }

    #[test]
    fn grids() {
        assert_eq!(null_grid().len(), 101);
        let s = slice_grid(0.1);
        assert_eq!(s.len(), 91);
        assert_eq!(s[0], (0.0, 0.1));
        assert_eq!(*s.last().unwrap(), (0.9, 1.0));
        assert_eq!(slice_grid(-0.2)[0], (0.2, 0.0));
    }

    #[test]
    fn single_point_grid() {
        let g = frontier(10, 1);
        let e = grid_extrema(&g, OcKind::Epasa, &[(0.2, 0.5)]).unwrap();
        let p = oc_point(&g, OcKind::Epasa, 0.2, 0.5).unwrap();
        assert_eq!((e.min, e.max), (p, p));
        assert!(grid_extrema(&g, OcKind::Epasa, &[]).is_err());
    }

    #[test]
    fn piwd_vanishes_with_long_burn_in() {
        let n = 20;
        for b in 0..=10 {
            let g = frontier(n, b);
            let v = oc_point(&g, OcKind::Piwd { phi: 0.1 }, 0.3, 0.6).unwrap();
            if b as f64 > n as f64 * 0.9 / 2.0 {
                assert_eq!(v, 0.0);
            }
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
