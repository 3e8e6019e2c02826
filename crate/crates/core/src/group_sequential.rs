//! Blocked BRAR with interim analyses and an optional stopping threshold (OST).
//!
//! After a burn-in of `b` per arm, participants arrive in blocks. At each
//! analysis the PPCS of the current state is computed: the trial stops for
//! futility when `PPCS ≥ OST`, for efficacy when `1 − PPCS ≥ OST`, and
//! otherwise the next block receives `m_C` control slots. The final analysis
//! at `ī` applies the same rule.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::Clip;
use crate::posterior::{ppcs, BetaPrior, STATISTIC_TOL};
use crate::special::{binomial, power_table};
use crate::state_space::{StageLayout, TrialState};

/// How the control count of a block follows from the allocation probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockRule {
    /// `m_C = round(block · p)`, halves away from zero.
    #[default]
    Deterministic,
    /// `m_C ~ Binomial(block, p)`.
    Binomial,
}

/// Which allocations PNIWD looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PniwdScope {
    /// All `ī` participants, those after a stop counted on the recommended arm.
    #[default]
    Full,
    /// Only participants enrolled up to the stop.
    Realized,
}

/// Which null outcomes count as a type I error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorRule {
    /// Efficacy stops only.
    #[default]
    Efficacy,
    /// Any stop, for efficacy or futility.
    AnyStop,
}

impl ErrorRule {
    fn counts(self, cause: StopCause) -> bool {
        match self {
            ErrorRule::Efficacy => cause == StopCause::Efficacy,
            ErrorRule::AnyStop => cause != StopCause::FinalNoStop,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsDesignSpec {
    pub trial_size: usize,
    pub block: usize,
    pub burn_in: usize,
    pub clip: Option<Clip>,
    pub prior: BetaPrior,
    pub rule: BlockRule,
    pub error: ErrorRule,
    pub stat_tol: f64,
}

/// Burn-in menu of the ARREST re-design.
pub const ARREST_BURN_INS: [usize; 5] = [15, 30, 45, 60, 75];

impl GsDesignSpec {
    /// ī = 150 in blocks of 30, allocation clipped to `[0.25, 0.75]`.
    pub fn arrest(burn_in: usize) -> Result<Self> {
        let d = Self {
            trial_size: 150,
            block: 30,
            burn_in,
            clip: Some(Clip::new(0.25, 0.75)?),
            prior: BetaPrior::UNIFORM,
            rule: BlockRule::Deterministic,
            error: ErrorRule::Efficacy,
            stat_tol: STATISTIC_TOL,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDesign(m));
        if self.block == 0 || self.block % 2 == 1 {
            return bad(format!("block size {} must be even and positive", self.block));
        }
        if 2 * self.burn_in > self.trial_size {
            return bad(format!("burn-in {} exceeds half the trial size {}", self.burn_in, self.trial_size));
        }
        if (2 * self.burn_in) % self.block != 0 || (self.trial_size - 2 * self.burn_in) % self.block != 0 {
            return bad(format!(
                "burn-in 2b = {} and remainder {} must be multiples of the block size {}",
                2 * self.burn_in,
                self.trial_size - 2 * self.burn_in,
                self.block
            ));
        }
        if self.burn_in == 0 {
            return bad("the first analysis needs a burn-in of at least one block".into());
        }
        Ok(())
    }

    /// Participant counts at which analyses take place.
    pub fn analyses(&self) -> Vec<usize> {
        (2 * self.burn_in..=self.trial_size).step_by(self.block).collect()
    }

    fn control_slots(&self, p: f64) -> Vec<(usize, f64)> {
        let p = self.clip.map_or(p, |c| c.apply(p));
        match self.rule {
            BlockRule::Deterministic => vec![((self.block as f64 * p).round() as usize, 1.0)],
            BlockRule::Binomial => {
                let (ps, pf) = (power_table(p, self.block), power_table(1.0 - p, self.block));
                (0..=self.block)
                    .map(|m| (m, binomial(self.block as u64, m as u64) * ps[m] * pf[self.block - m]))
                    .filter(|&(_, w)| w > 0.0)
                    .collect()
            }
        }
    }
}

/// Why a trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopCause {
    Efficacy,
    Futility,
    FinalNoStop,
}

/// An absorbing outcome with its probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsOutcome {
    pub stop_stage: usize,
    pub cause: StopCause,
    pub state: TrialState,
    pub weight: f64,
}

struct Analysis {
    stage: usize,
    layout: StageLayout,
    /// Reachable state indices with their PPCS.
    states: Vec<(usize, f64)>,
}

/// The reachable states and their PPCS at every analysis of a design;
/// independent of `θ` and of the OST.
pub struct GsSkeleton {
    pub design: GsDesignSpec,
    analyses: Vec<Analysis>,
}

/// PPCS values shared across skeletons with the same prior and tolerance.
#[derive(Default)]
pub struct PpcsCache {
    values: Mutex<HashMap<TrialState, f64>>,
}

impl PpcsCache {
    /// PPCS of one state, computed on first use.
    pub fn get(&self, x: &TrialState, prior: &BetaPrior, tol: f64) -> Result<f64> {
        if let Some(&v) = self.values.lock().unwrap().get(x) {
            return Ok(v);
        }
        let v = ppcs(x, prior, tol)?;
        self.values.lock().unwrap().insert(*x, v);
        Ok(v)
    }

    fn fill(&self, states: &[TrialState], prior: &BetaPrior, tol: f64) -> Result<Vec<f64>> {
        let missing: Vec<TrialState> = {
            let map = self.values.lock().unwrap();
            states.iter().filter(|x| !map.contains_key(x)).copied().collect()
        };
        let computed: Vec<f64> = missing.par_iter().map(|x| ppcs(x, prior, tol)).collect::<Result<_>>()?;
        let mut map = self.values.lock().unwrap();
        map.extend(missing.into_iter().zip(computed));
        Ok(states.iter().map(|x| map[x]).collect())
    }
}

impl GsSkeleton {
    pub fn build(design: GsDesignSpec) -> Result<Self> {
        Self::build_with(design, &PpcsCache::default())
    }

    /// Builds the skeleton reusing (and extending) `cache`.
    pub fn build_with(design: GsDesignSpec, cache: &PpcsCache) -> Result<Self> {
        design.validate()?;
        let b = design.burn_in;
        let mut reachable: Vec<TrialState> =
            (0..=b as u32).flat_map(|sc| (0..=b as u32).map(move |sd| TrialState::new(b as u32, sc, b as u32, sd))).collect();
        let mut analyses = Vec::new();
        let stages = design.analyses();
        for (k, &stage) in stages.iter().enumerate() {
            let layout = StageLayout::new(stage);
            reachable.sort_by_key(|x| layout.index_unchecked(x.n_c, x.s_c, x.s_d));
            reachable.dedup();
            let values = cache.fill(&reachable, &design.prior, design.stat_tol)?;
            let states: Vec<(usize, f64)> =
                reachable.iter().zip(&values).map(|(x, &v)| (layout.index_unchecked(x.n_c, x.s_c, x.s_d), v)).collect();
            if let Some(&next_stage) = stages.get(k + 1) {
                let next = StageLayout::new(next_stage);
                let mut hit = vec![false; next.total()];
                for (x, &v) in reachable.iter().zip(&values) {
                    for (m, _) in design.control_slots(v) {
                        let md = design.block - m;
                        for sc in 0..=m as u32 {
                            for sd in 0..=md as u32 {
                                hit[next.index_unchecked(x.n_c + m as u32, x.s_c + sc, x.s_d + sd)] = true;
                            }
                        }
                    }
                }
                reachable = (0..next.total())
                    .filter(|&j| hit[j])
                    .map(|j| next.state_of(j))
                    .collect::<Result<_>>()?;
            }
            analyses.push(Analysis { stage, layout, states });
        }
        Ok(Self { design, analyses })
    }

    /// Every achievable `max(PPCS, 1 − PPCS)` at an analysis, sorted and
    /// deduplicated: the candidate thresholds.
    pub fn threshold_candidates(&self) -> Vec<f64> {
        let mut v: Vec<f64> =
            self.analyses.iter().flat_map(|a| a.states.iter().map(|&(_, p)| p.max(1.0 - p))).filter(|&p| p > 0.5).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Exact law of the absorbing outcomes at `θ` with threshold `ost`.
    pub fn distribution(&self, theta_c: f64, theta_d: f64, ost: f64) -> Result<Vec<GsOutcome>> {
        for t in [theta_c, theta_d] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidDesign(format!("success rate {t} outside [0, 1]")));
            }
        }
        let d = &self.design;
        let n = d.trial_size;
        let binom = |k: usize, t: f64| -> Vec<f64> {
            let (ps, pf) = (power_table(t, k), power_table(1.0 - t, k));
            (0..=k).map(|s| binomial(k as u64, s as u64) * ps[s] * pf[k - s]).collect()
        };
        let law_c: Vec<Vec<f64>> = (0..=n).map(|k| binom(k, theta_c)).collect();
        let law_d: Vec<Vec<f64>> = (0..=n).map(|k| binom(k, theta_d)).collect();

        let first = &self.analyses[0];
        let b = d.burn_in as u32;
        let mut mass = vec![0.0; first.layout.total()];
        for sc in 0..=b {
            for sd in 0..=b {
                mass[first.layout.index_unchecked(b, sc, sd)] = law_c[b as usize][sc as usize] * law_d[b as usize][sd as usize];
            }
        }
        let mut out = Vec::new();
        for (k, a) in self.analyses.iter().enumerate() {
            let next = self.analyses.get(k + 1);
            let mut next_mass = next.map(|nx| vec![0.0; nx.layout.total()]);
            for &(idx, p) in &a.states {
                let q = mass[idx];
                if q == 0.0 {
                    continue;
                }
                let x = a.layout.state_of(idx)?;
                let cause = if p >= ost {
                    Some(StopCause::Futility)
                } else if 1.0 - p >= ost {
                    Some(StopCause::Efficacy)
                } else if a.stage == n {
                    Some(StopCause::FinalNoStop)
                } else {
                    None
                };
                if let Some(cause) = cause {
                    out.push(GsOutcome { stop_stage: a.stage, cause, state: x, weight: q });
                    continue;
                }
                let (nx, nm) = (next.unwrap(), next_mass.as_mut().unwrap());
                for (m, pm) in d.control_slots(p) {
                    let md = d.block - m;
                    for sc in 0..=m {
                        let qc = q * pm * law_c[m][sc];
                        for sd in 0..=md {
                            let j = nx.layout.index_unchecked(x.n_c + m as u32, x.s_c + sc as u32, x.s_d + sd as u32);
                            nm[j] += qc * law_d[md][sd];
                        }
                    }
                }
            }
            if let Some(nm) = next_mass {
                mass = nm;
            }
        }
        Ok(out)
    }

    /// Stopping-aware operating characteristics at `θ`.
    pub fn ocs(&self, theta_c: f64, theta_d: f64, ost: f64, phi: f64, scope: PniwdScope) -> Result<GsOcs> {
        let outcomes = self.distribution(theta_c, theta_d, ost)?;
        Ok(summarize(&outcomes, self.design.trial_size, theta_c, theta_d, phi, scope))
    }

    /// Probability at `θ` of the outcomes counted by the design's error rule.
    pub fn rejection_rate(&self, theta_c: f64, theta_d: f64, ost: f64) -> Result<f64> {
        let rule = self.design.error;
        Ok(self.distribution(theta_c, theta_d, ost)?.iter().filter(|o| rule.counts(o.cause)).map(|o| o.weight).sum())
    }

    /// Largest null rejection rate over a set of null points.
    pub fn max_null_rejection(&self, nulls: &[f64], ost: f64) -> Result<f64> {
        let rates: Vec<f64> = nulls.par_iter().map(|&t| self.rejection_rate(t, t, ost)).collect::<Result<_>>()?;
        Ok(rates.into_iter().fold(0.0, f64::max))
    }

    /// Smallest achievable threshold whose null rejection rate at `θ'` is at
    /// most `alpha`; `+∞` (never stop) when none qualifies.
    pub fn calibrate_ost(&self, theta_null: f64, alpha: f64) -> Result<f64> {
        self.smallest_threshold(|ost| self.rejection_rate(theta_null, theta_null, ost), alpha)
    }

    /// Smallest achievable threshold whose worst null rejection rate over
    /// `nulls` is at most `alpha`.
    pub fn ux_ost(&self, nulls: &[f64], alpha: f64) -> Result<f64> {
        if nulls.is_empty() {
            return Err(Error::InvalidDesign("empty null grid".into()));
        }
        self.smallest_threshold(|ost| self.max_null_rejection(nulls, ost), alpha)
    }

    // Binary search over the candidates; assumes the rejection rate is
    // nonincreasing in the threshold.
    fn smallest_threshold(&self, rate: impl Fn(f64) -> Result<f64>, alpha: f64) -> Result<f64> {
        let c = self.threshold_candidates();
        let (mut lo, mut hi) = (0usize, c.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if rate(c[mid])? <= alpha {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(c.get(lo).copied().unwrap_or(f64::INFINITY))
    }
}

/// Summary OCs of a stopping design at one `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsOcs {
    pub rejection: f64,
    pub futility: f64,
    pub epasa: f64,
    pub pniwd: f64,
    pub expected_size: f64,
    pub total: f64,
}

/// Allocation counts after imputing post-stop participants.
fn full_allocation(o: &GsOutcome, n: usize) -> (f64, f64) {
    let rest = (n - o.stop_stage) as f64;
    let (c, d) = (o.state.n_c as f64, o.state.n_d as f64);
    match o.cause {
        StopCause::Efficacy => (c, d + rest),
        StopCause::Futility => (c + rest, d),
        StopCause::FinalNoStop => (c, d),
    }
}

pub fn summarize(outcomes: &[GsOutcome], n: usize, theta_c: f64, theta_d: f64, phi: f64, scope: PniwdScope) -> GsOcs {
    let mut s = GsOcs { rejection: 0.0, futility: 0.0, epasa: 0.0, pniwd: 0.0, expected_size: 0.0, total: 0.0 };
    for o in outcomes {
        let w = o.weight;
        s.total += w;
        s.expected_size += w * o.stop_stage as f64;
        match o.cause {
            StopCause::Efficacy => s.rejection += w,
            StopCause::Futility => s.futility += w,
            StopCause::FinalNoStop => {}
        }
        let (fc, fd) = full_allocation(o, n);
        let sup = if theta_d >= theta_c { fd } else { fc };
        s.epasa += w * sup / n as f64;
        let (c, d, den) = match scope {
            PniwdScope::Full => (fc, fd, n as f64),
            PniwdScope::Realized => (o.state.n_c as f64, o.state.n_d as f64, o.stop_stage as f64),
        };
        let wrong = if theta_d > theta_c {
            c / den > d / den + phi
        } else if theta_c > theta_d {
            d / den > c / den + phi
        } else {
            false
        };
        if !wrong {
            s.pniwd += w;
        }
    }
    s
}

/// Null success rates `0.02, 0.03, …, 0.22`.
pub fn arrest_null_grid() -> Vec<f64> {
    (2..=22).map(|k| k as f64 / 100.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{burn_in_frontier, final_distribution};

    fn small(burn_in: usize, block: usize, n: usize) -> GsDesignSpec {
        GsDesignSpec {
            trial_size: n,
            block,
            burn_in,
            clip: None,
            prior: BetaPrior::UNIFORM,
            rule: BlockRule::Deterministic,
            error: ErrorRule::Efficacy,
            stat_tol: STATISTIC_TOL,
        }
    }

    #[test]
    fn validation() {
        assert!(GsDesignSpec::arrest(15).is_ok());
        assert!(GsDesignSpec::arrest(20).is_err());
        assert!(small(0, 2, 10).validate().is_err());
        assert_eq!(GsDesignSpec::arrest(15).unwrap().analyses(), vec![30, 60, 90, 120, 150]);
        assert_eq!(GsDesignSpec::arrest(75).unwrap().analyses(), vec![150]);
    }

    #[test]
    fn conservation_and_no_stopping() {
        let skel = GsSkeleton::build(small(2, 4, 16)).unwrap();
        for &(c, d) in &[(0.1, 0.5), (0.5, 0.5), (0.9, 0.2), (0.0, 1.0)] {
            let out = skel.distribution(c, d, 0.9).unwrap();
            let total: f64 = out.iter().map(|o| o.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let none = skel.distribution(c, d, 1.5).unwrap();
            assert!(none.iter().all(|o| o.cause == StopCause::FinalNoStop && o.stop_stage == 16));
        }
    }

    #[test]
    fn full_burn_in_is_product_binomial() {
        let mut d = small(5, 2, 10);
        d.clip = Some(Clip::new(0.0, 1.0).unwrap());
        let skel = GsSkeleton::build(d).unwrap();
        let out = skel.distribution(0.3, 0.6, 2.0).unwrap();
        let g = burn_in_frontier(5);
        let fixed = final_distribution(&g, 0.3, 0.6);
        for o in &out {
            let k = g.layout().index(&o.state).unwrap();
            assert!((o.weight - fixed.probs[k]).abs() < 1e-12);
        }
        let ocs = summarize(&out, 10, 0.3, 0.6, 0.1, PniwdScope::Full);
        assert!((ocs.epasa - 0.5).abs() < 1e-12);
    }

    #[test]
    fn raising_threshold_never_adds_early_stops() {
        let skel = GsSkeleton::build(small(2, 4, 20)).unwrap();
        let early = |ost: f64| -> f64 {
            skel.distribution(0.3, 0.5, ost).unwrap().iter().filter(|o| o.cause != StopCause::FinalNoStop && o.stop_stage < 20).map(|o| o.weight).sum()
        };
        let mut prev = f64::INFINITY;
        for ost in [0.6, 0.7, 0.8, 0.9, 0.95, 0.99] {
            let e = early(ost);
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn threshold_search() {
        let skel = GsSkeleton::build(small(2, 4, 16)).unwrap();
        let c = skel.threshold_candidates();
        assert_eq!(skel.calibrate_ost(0.3, 1.0).unwrap(), c[0]);
        let strict = skel.calibrate_ost(0.3, 0.05).unwrap();
        assert!(skel.rejection_rate(0.3, 0.3, strict).unwrap() <= 0.05);
        let loose = skel.calibrate_ost(0.3, 0.2).unwrap();
        assert!(loose <= strict);
        let ux = skel.ux_ost(&[0.1, 0.3, 0.5], 0.05).unwrap();
        assert!(ux >= strict);
        assert!(skel.ux_ost(&[], 0.05).is_err());
    }

    #[test]
    fn any_stop_rule_is_stricter() {
        let mut d = small(2, 4, 16);
        let one = GsSkeleton::build(d.clone()).unwrap();
        d.error = ErrorRule::AnyStop;
        let two = GsSkeleton::build(d).unwrap();
        for t in [0.1, 0.3, 0.5] {
            let (a, b) = (one.rejection_rate(t, t, 0.9).unwrap(), two.rejection_rate(t, t, 0.9).unwrap());
            let ocs = one.ocs(t, t, 0.9, 0.1, PniwdScope::Full).unwrap();
            assert!((b - ocs.rejection - ocs.futility).abs() < 1e-14);
            assert!(a <= b);
        }
        assert!(two.calibrate_ost(0.3, 0.05).unwrap() >= one.calibrate_ost(0.3, 0.05).unwrap());
    }

    #[test]
    fn binomial_rule_conserves() {
        let mut d = small(2, 4, 12);
        d.rule = BlockRule::Binomial;
        let skel = GsSkeleton::build(d).unwrap();
        let total: f64 = skel.distribution(0.2, 0.7, 0.95).unwrap().iter().map(|o| o.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
