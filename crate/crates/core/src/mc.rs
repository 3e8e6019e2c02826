//! Monte Carlo simulation of single trials, used to cross-check the exact
//! engine.
//!
//! Replication `r` draws from its own Xoshiro256++ stream, seeded through
//! SplitMix64 from `(seed, r)`, so results do not depend on thread count or
//! scheduling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::group_sequential::{BlockRule, GsDesignSpec, GsOutcome, PpcsCache, StopCause};
use crate::oc::{EmptyArm, OcKind};
use crate::policy::PolicyTable;
use crate::state_space::{StageLayout, TrialState};

/// Order of the `2b` burn-in assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BurnInOrder {
    /// Control, developmental, control, …
    #[default]
    Alternating,
    /// A uniformly random sequence with exactly `b` control slots.
    RandomAllocationRule,
}

/// A fixed-horizon design to simulate at one parameter point.
#[derive(Clone, Copy)]
pub struct SimConfig<'a> {
    pub policy: &'a PolicyTable,
    pub burn_in: usize,
    pub theta_c: f64,
    pub theta_d: f64,
    pub replications: usize,
    pub seed: u64,
    pub order: BurnInOrder,
}

impl SimConfig<'_> {
    pub fn trial_size(&self) -> usize {
        self.policy.key().trial_size
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidDesign("at least one replication is needed".into()));
        }
        if 2 * self.burn_in > self.trial_size() {
            return Err(Error::InvalidDesign(format!("burn-in {} exceeds half the trial size", self.burn_in)));
        }
        if self.policy.start_stage() > 2 * self.burn_in {
            return Err(Error::InvalidDesign(format!(
                "policy starts at stage {}, design adapts from {}",
                self.policy.start_stage(),
                2 * self.burn_in
            )));
        }
        for t in [self.theta_c, self.theta_d] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidDesign(format!("success rate {t} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Generator for replication `r`.
pub fn replication_rng(seed: u64, r: u64) -> Xoshiro256PlusPlus {
    let mut sm = SplitMix64::seed_from_u64(seed);
    let base: u64 = sm.random();
    Xoshiro256PlusPlus::from_rng(&mut SplitMix64::seed_from_u64(base ^ r.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn burn_in_sequence<R: Rng>(b: usize, order: BurnInOrder, rng: &mut R) -> Vec<bool> {
    match order {
        BurnInOrder::Alternating => (0..2 * b).map(|k| k % 2 == 0).collect(),
        BurnInOrder::RandomAllocationRule => {
            let mut slots: Vec<bool> = (0..2 * b).map(|k| k < b).collect();
            let n = slots.len();
            for k in 0..n.saturating_sub(1) {
                let j = rng.random_range(k..n);
                slots.swap(k, j);
            }
            slots
        }
    }
}

fn enrol<R: Rng>(x: &mut TrialState, control: bool, theta_c: f64, theta_d: f64, rng: &mut R) {
    if control {
        x.n_c += 1;
        x.s_c += rng.random_bool(theta_c) as u32;
    } else {
        x.n_d += 1;
        x.s_d += rng.random_bool(theta_d) as u32;
    }
}

/// One trajectory of the fixed-horizon design.
pub fn simulate_trial<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<TrialState> {
    let n = cfg.trial_size();
    let mut x = TrialState::EMPTY;
    for control in burn_in_sequence(cfg.burn_in, cfg.order, rng) {
        enrol(&mut x, control, cfg.theta_c, cfg.theta_d, rng);
    }
    while x.stage() < n {
        let p = cfg.policy.prob(&x).ok_or(Error::StageOutOfRange { stage: x.stage(), max: n })?;
        let control = rng.random_bool(p.clamp(0.0, 1.0));
        enrol(&mut x, control, cfg.theta_c, cfg.theta_d, rng);
    }
    Ok(x)
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub replications: usize,
}

impl McEstimate {
    /// Distance from `exact` in standard errors; a zero SE counts exact
    /// agreement as 0 and anything else as infinite.
    pub fn z_score(&self, exact: f64) -> f64 {
        let d = (self.mean - exact).abs();
        if self.se > 0.0 {
            d / self.se
        } else if d <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn summarize_samples(values: &[f64]) -> McEstimate {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
    McEstimate { mean, se: (var / n as f64).sqrt(), replications: n }
}

/// Mean of `f` over simulated final states.
pub fn mc_estimate<F>(cfg: &SimConfig, f: F) -> Result<McEstimate>
where
    F: Fn(&TrialState) -> f64 + Sync,
{
    cfg.validate()?;
    let values: Vec<f64> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| simulate_trial(cfg, &mut replication_rng(cfg.seed, r)).map(|x| f(&x)))
        .collect::<Result<_>>()?;
    Ok(summarize_samples(&values))
}

/// Per-trial value of an operating characteristic, recomputed from the
/// definitions.
pub fn trial_value(kind: OcKind, x: &TrialState, theta_c: f64, theta_d: f64) -> Result<f64> {
    let n = x.stage() as f64;
    let (nc, nd) = (x.n_c as f64, x.n_d as f64);
    Ok(match kind {
        OcKind::RejectionRate(mask) => {
            let k = StageLayout::new(x.stage()).index(x)?;
            let r = *mask.get(k).ok_or_else(|| Error::InvalidDesign("rejection mask too short".into()))?;
            if r {
                1.0
            } else {
                0.0
            }
        }
        OcKind::Epasa => {
            if theta_d > theta_c {
                nd / n
            } else if theta_c > theta_d {
                nc / n
            } else {
                n / n - 0.5
            }
        }
        OcKind::Piwd { phi } => {
            let (lead, lag) = if theta_d > theta_c {
                (nc, nd)
            } else if theta_c > theta_d {
                (nd, nc)
            } else {
                return Err(Error::UndefinedAtNull);
            };
            if lead / n > lag / n + phi {
                1.0
            } else {
                0.0
            }
        }
        OcKind::Bias(rule) => {
            let empty = x.n_c == 0 || x.n_d == 0;
            let est = if empty && rule == EmptyArm::Zero {
                0.0
            } else if empty {
                (x.s_d as f64 + 1.0) / (nd + 2.0) - (x.s_c as f64 + 1.0) / (nc + 2.0)
            } else {
                x.s_d as f64 / nd - x.s_c as f64 / nc
            };
            est - (theta_d - theta_c)
        }
    })
}

/// Monte Carlo estimate of an operating characteristic at the configured `θ`.
pub fn mc_oc(cfg: &SimConfig, kind: OcKind) -> Result<McEstimate> {
    if let OcKind::Piwd { .. } = kind {
        if cfg.theta_c == cfg.theta_d {
            return Err(Error::UndefinedAtNull);
        }
    }
    mc_estimate(cfg, |x| trial_value(kind, x, cfg.theta_c, cfg.theta_d).unwrap_or(f64::NAN))
}

/// Counts of simulated final states.
pub fn frequency_table(cfg: &SimConfig) -> Result<BTreeMap<TrialState, u64>> {
    cfg.validate()?;
    let states: Vec<TrialState> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| simulate_trial(cfg, &mut replication_rng(cfg.seed, r)))
        .collect::<Result<_>>()?;
    let mut table = BTreeMap::new();
    for x in states {
        *table.entry(x).or_insert(0) += 1;
    }
    Ok(table)
}

/// Pearson chi-square test of homogeneity between two frequency tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn chi_square_homogeneity(a: &BTreeMap<TrialState, u64>, b: &BTreeMap<TrialState, u64>) -> Result<ChiSquare> {
    let (na, nb) = (a.values().sum::<u64>() as f64, b.values().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidDesign("empty frequency table".into()));
    }
    let mut cells: BTreeMap<TrialState, (f64, f64)> = BTreeMap::new();
    for (x, &c) in a {
        cells.entry(*x).or_default().0 += c as f64;
    }
    for (x, &c) in b {
        cells.entry(*x).or_default().1 += c as f64;
    }
    let total = na + nb;
    let mut statistic = 0.0;
    for &(ca, cb) in cells.values() {
        let row = ca + cb;
        let (ea, eb) = (row * na / total, row * nb / total);
        statistic += (ca - ea).powi(2) / ea + (cb - eb).powi(2) / eb;
    }
    let df = cells.len().saturating_sub(1);
    let p_value = if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64).map_err(|e| Error::InvalidDesign(e.to_string()))?.sf(statistic)
    };
    Ok(ChiSquare { statistic, df, p_value })
}

/// One trajectory of the blocked design with threshold `ost`.
pub fn simulate_gs<R: Rng>(
    design: &GsDesignSpec,
    ppcs: &PpcsCache,
    theta_c: f64,
    theta_d: f64,
    ost: f64,
    rng: &mut R,
) -> Result<GsOutcome> {
    let n = design.trial_size;
    let mut x = TrialState::EMPTY;
    for control in burn_in_sequence(design.burn_in, BurnInOrder::RandomAllocationRule, rng) {
        enrol(&mut x, control, theta_c, theta_d, rng);
    }
    loop {
        let p = ppcs.get(&x, &design.prior, design.stat_tol)?;
        let cause = if p >= ost {
            Some(StopCause::Futility)
        } else if 1.0 - p >= ost {
            Some(StopCause::Efficacy)
        } else if x.stage() >= n {
            Some(StopCause::FinalNoStop)
        } else {
            None
        };
        if let Some(cause) = cause {
            return Ok(GsOutcome { stop_stage: x.stage(), cause, state: x, weight: 1.0 });
        }
        let q = design.clip.map_or(p, |c| c.apply(p));
        let slots: Vec<bool> = match design.rule {
            BlockRule::Deterministic => {
                let m = (design.block as f64 * q).round() as usize;
                let mut v: Vec<bool> = (0..design.block).map(|k| k < m).collect();
                for k in 0..v.len().saturating_sub(1) {
                    let j = rng.random_range(k..v.len());
                    v.swap(k, j);
                }
                v
            }
            BlockRule::Binomial => (0..design.block).map(|_| rng.random_bool(q)).collect(),
        };
        for control in slots {
            enrol(&mut x, control, theta_c, theta_d, rng);
        }
    }
}

/// Simulated outcomes of the blocked design, one per replication.
pub fn simulate_gs_many(
    design: &GsDesignSpec,
    ppcs: &PpcsCache,
    theta_c: f64,
    theta_d: f64,
    ost: f64,
    replications: usize,
    seed: u64,
) -> Result<Vec<GsOutcome>> {
    design.validate()?;
    (0..replications as u64)
        .into_par_iter()
        .map(|r| simulate_gs(design, ppcs, theta_c, theta_d, ost, &mut replication_rng(seed, r)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DesignSpec;

    fn table(n: usize) -> PolicyTable {
        PolicyTable::build(&DesignSpec::new(n, 0).unwrap()).unwrap()
    }

    fn cfg(policy: &PolicyTable, b: usize, tc: f64, td: f64, reps: usize) -> SimConfig<'_> {
        SimConfig { policy, burn_in: b, theta_c: tc, theta_d: td, replications: reps, seed: 7, order: BurnInOrder::Alternating }
    }

    #[test]
    fn sure_successes_and_full_burn_in() {
        let p = table(12);
        let mut rng = replication_rng(1, 0);
        for _ in 0..50 {
            let x = simulate_trial(&cfg(&p, 2, 1.0, 1.0, 1), &mut rng).unwrap();
            assert_eq!((x.s_c, x.s_d), (x.n_c, x.n_d));
            let y = simulate_trial(&cfg(&p, 6, 0.3, 0.6, 1), &mut rng).unwrap();
            assert_eq!((y.n_c, y.n_d), (6, 6));
        }
    }

    #[test]
    fn seeded_streams_repeat() {
        let p = table(10);
        let c = cfg(&p, 1, 0.3, 0.7, 2000);
        let a = mc_oc(&c, OcKind::Epasa).unwrap();
        let b = mc_oc(&c, OcKind::Epasa).unwrap();
        assert_eq!(a, b);
        let mut r1 = replication_rng(42, 3);
        let mut r2 = replication_rng(42, 3);
        let mut r3 = replication_rng(42, 4);
        let (x, y, z): (u64, u64, u64) = (r1.random(), r2.random(), r3.random());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn full_burn_in_epasa_is_constant() {
        let p = table(20);
        let e = mc_oc(&cfg(&p, 10, 0.2, 0.6, 1000), OcKind::Epasa).unwrap();
        assert_eq!(e.mean, 0.5);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn random_allocation_rule_has_exact_counts() {
        let mut rng = replication_rng(5, 0);
        for _ in 0..100 {
            let s = burn_in_sequence(7, BurnInOrder::RandomAllocationRule, &mut rng);
            assert_eq!(s.len(), 14);
            assert_eq!(s.iter().filter(|&&c| c).count(), 7);
        }
    }

    #[test]
    fn pairwise_summary() {
        let v: Vec<f64> = (0..1000).map(|k| (k % 2) as f64).collect();
        let e = summarize_samples(&v);
        assert!((e.mean - 0.5).abs() < 1e-15);
        assert!((e.se - (0.25 * 1000.0 / 999.0 / 1000.0f64).sqrt()).abs() < 1e-15);
        assert_eq!(e.z_score(0.5), 0.0);
    }

    #[test]
    fn chi_square_of_identical_tables() {
        let mut a = BTreeMap::new();
        a.insert(TrialState::new(1, 0, 1, 0), 50);
        a.insert(TrialState::new(1, 1, 1, 0), 50);
        let c = chi_square_homogeneity(&a, &a).unwrap();
        assert_eq!(c.statistic, 0.0);
        assert_eq!(c.df, 1);
        assert!((c.p_value - 1.0).abs() < 1e-12);
    }
}
