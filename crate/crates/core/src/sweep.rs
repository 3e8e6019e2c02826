//! Burn-in sweeps, critical-value tables and optimal burn-in search.
//!
//! One [`SweepContext`] holds everything shared by the burn-in lengths of a
//! base design: a policy table started at the shortest burn-in, the final
//! statistics and slice weights.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::coefficients::{final_frontier, CoefficientFrontier};
use crate::error::{Error, Result};
use crate::exact_tests::{NullProblem, SearchOptions, TestDefinition, TestKind};
use crate::oc::{average_oc, grid_extrema, null_grid, oc_point, slice_grid, EmptyArm, OcKind, SliceWeights};
use crate::policy::{DesignSpec, PolicyTable};
use crate::posterior::{stage_statistics, StatisticKind, STATISTIC_TOL};

/// A test to build per burn-in length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestSpec {
    pub kind: TestKind,
    pub statistic: StatisticKind,
}

impl TestSpec {
    pub fn calibrated(statistic: StatisticKind) -> Self {
        Self { kind: TestKind::Calibrated { theta: 0.5 }, statistic }
    }

    pub fn ux(statistic: StatisticKind) -> Self {
        Self { kind: TestKind::Ux, statistic }
    }

    pub fn cxs(statistic: StatisticKind) -> Self {
        Self { kind: TestKind::Cxs, statistic }
    }

    pub fn asymptotic_wald() -> Self {
        let t = TestDefinition::asymptotic_wald();
        Self { kind: t.kind, statistic: t.statistic }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.kind.name(), self.statistic.name())
    }
}

/// Operating characteristic requested in a sweep; rejection rates are
/// evaluated for every test of the request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OcSpec {
    RejectionRate,
    Epasa,
    Piwd { phi: f64 },
    Bias(EmptyArm),
}

impl OcSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OcSpec::RejectionRate => "rejection",
            OcSpec::Epasa => "epasa",
            OcSpec::Piwd { .. } => "piwd",
            OcSpec::Bias(_) => "bias",
        }
    }
}

/// Shared state for evaluating one base design at several burn-in lengths.
pub struct SweepContext {
    pub base: DesignSpec,
    pub search: SearchOptions,
    policy: PolicyTable,
    stats: Mutex<HashMap<&'static str, Arc<Vec<f64>>>>,
    slices: Mutex<HashMap<u64, Arc<SliceWeights>>>,
}

impl SweepContext {
    /// Builds the policy for every burn-in of at least `min_burn_in`.
    pub fn new(base: DesignSpec, min_burn_in: usize) -> Result<Self> {
        let mut d = base.clone();
        d.burn_in = min_burn_in;
        let policy = PolicyTable::build(&d)?;
        Ok(Self::with_policy(base, policy))
    }

    pub fn with_policy(base: DesignSpec, policy: PolicyTable) -> Self {
        Self { base, search: SearchOptions::default(), policy, stats: Mutex::default(), slices: Mutex::default() }
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }

    pub fn trial_size(&self) -> usize {
        self.base.trial_size
    }

    fn design(&self, burn_in: usize) -> Result<DesignSpec> {
        let mut d = self.base.clone();
        d.burn_in = burn_in;
        d.validate()?;
        if 2 * burn_in < self.policy.start_stage() {
            return Err(Error::InvalidDesign(format!(
                "burn-in {burn_in} needs the policy from stage {}, table starts at {}",
                2 * burn_in,
                self.policy.start_stage()
            )));
        }
        Ok(d)
    }

    pub fn frontier(&self, burn_in: usize) -> Result<CoefficientFrontier> {
        self.design(burn_in)?;
        final_frontier(self.trial_size(), burn_in, &self.policy)
    }

    /// Final-stage statistic values (computed once per kind).
    pub fn statistics(&self, kind: StatisticKind) -> Result<Arc<Vec<f64>>> {
        if let Some(v) = self.stats.lock().unwrap().get(kind.name()) {
            return Ok(v.clone());
        }
        let v = Arc::new(stage_statistics(self.trial_size(), kind, &self.base.prior, STATISTIC_TOL)?);
        self.stats.lock().unwrap().insert(kind.name(), v.clone());
        Ok(v)
    }

    pub fn slice(&self, delta: f64) -> Result<Arc<SliceWeights>> {
        let key = delta.to_bits();
        if let Some(v) = self.slices.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let v = Arc::new(SliceWeights::new(self.trial_size(), delta)?);
        self.slices.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }

    /// Builds `spec` for the final frontier `g`.
    pub fn test(&self, g: &CoefficientFrontier, spec: TestSpec) -> Result<TestDefinition> {
        let stats = self.statistics(spec.statistic)?;
        let np = NullProblem::new(g, &stats, self.search);
        Ok(np.build(spec.kind, spec.statistic, self.base.alpha_upper, self.base.alpha_lower))
    }

    /// Rejection flags of `test` over the final states.
    pub fn rejection_mask(&self, g: &CoefficientFrontier, test: &TestDefinition) -> Result<Vec<bool>> {
        let stats = self.statistics(test.statistic)?;
        Ok(test.rejection_mask(g.layout(), &stats))
    }
}

/// What to evaluate in a burn-in sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRequest {
    pub burn_ins: Vec<usize>,
    pub tests: Vec<TestSpec>,
    pub kinds: Vec<OcSpec>,
    pub deltas: Vec<f64>,
}

/// One line of a sweep report. `test` is empty for test-free OCs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub trial_size: usize,
    pub burn_in: usize,
    pub burn_in_proportion: f64,
    pub test: String,
    pub statistic: String,
    pub kind: String,
    pub delta: f64,
    pub avg: f64,
    pub min: f64,
    pub argmin_theta_d: f64,
    pub max: f64,
    pub argmax_theta_d: f64,
}

fn grid_for(delta: f64) -> Vec<(f64, f64)> {
    if delta == 0.0 {
        null_grid()
    } else {
        slice_grid(delta)
    }
}

/// One row per `(b, test, kind, δ)`; PIWD rows are skipped at `δ = 0`.
pub fn burnin_sweep(ctx: &SweepContext, req: &SweepRequest) -> Result<Vec<SweepRow>> {
    if req.burn_ins.is_empty() {
        return Err(Error::InvalidDesign("empty burn-in list".into()));
    }
    for &d in &req.deltas {
        ctx.slice(d)?;
    }
    let per_b: Vec<Vec<SweepRow>> = req.burn_ins.par_iter().map(|&b| sweep_one(ctx, req, b)).collect::<Result<_>>()?;
    Ok(per_b.into_iter().flatten().collect())
}

fn sweep_one(ctx: &SweepContext, req: &SweepRequest, b: usize) -> Result<Vec<SweepRow>> {
    let g = ctx.frontier(b)?;
    let n = ctx.trial_size();
    let bp = (2 * b) as f64 / n as f64;
    let mut rows = Vec::new();
    let mut push = |test: &str, stat: &str, oc: OcKind, delta: f64| -> Result<()> {
        let w = ctx.slice(delta)?;
        let avg = average_oc(&g, oc, &w)?;
        let e = grid_extrema(&g, oc, &grid_for(delta))?;
        rows.push(SweepRow {
            trial_size: n,
            burn_in: b,
            burn_in_proportion: bp,
            test: test.to_string(),
            statistic: stat.to_string(),
            kind: oc.name().to_string(),
            delta,
            avg,
            min: e.min,
            argmin_theta_d: e.argmin.1,
            max: e.max,
            argmax_theta_d: e.argmax.1,
        });
        Ok(())
    };
    for kind in &req.kinds {
        match *kind {
            OcSpec::RejectionRate => {
                for spec in &req.tests {
                    let t = ctx.test(&g, *spec)?;
                    let mask = ctx.rejection_mask(&g, &t)?;
                    for &d in &req.deltas {
                        push(spec.kind.name(), spec.statistic.name(), OcKind::RejectionRate(&mask), d)?;
                    }
                }
            }
            OcSpec::Epasa => {
                for &d in &req.deltas {
                    push("", "", OcKind::Epasa, d)?;
                }
            }
            OcSpec::Piwd { phi } => {
                for &d in req.deltas.iter().filter(|d| **d != 0.0) {
                    push("", "", OcKind::Piwd { phi }, d)?;
                }
            }
            OcSpec::Bias(rule) => {
                for &d in &req.deltas {
                    push("", "", OcKind::Bias(rule), d)?;
                }
            }
        }
    }
    Ok(rows)
}

/// Critical values of one burn-in length.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalRow {
    pub burn_in: usize,
    pub calibrated: (f64, f64),
    pub ux: (f64, f64),
    /// `(s, lower, upper)` for each requested total.
    pub cxs: Vec<(usize, f64, f64)>,
}

/// Calibrated (at `θ' = 0.5`), UX and CX-S critical values per burn-in.
pub fn critical_value_table(ctx: &SweepContext, burn_ins: &[usize], statistic: StatisticKind, totals: &[usize]) -> Result<Vec<CriticalRow>> {
    if burn_ins.is_empty() {
        return Err(Error::InvalidDesign("empty burn-in list".into()));
    }
    if let Some(&s) = totals.iter().find(|&&s| s > ctx.trial_size()) {
        return Err(Error::InvalidDesign(format!("total {s} exceeds the trial size")));
    }
    burn_ins
        .par_iter()
        .map(|&b| {
            let g = ctx.frontier(b)?;
            let cal = ctx.test(&g, TestSpec::calibrated(statistic))?;
            let ux = ctx.test(&g, TestSpec::ux(statistic))?;
            let cxs = ctx.test(&g, TestSpec::cxs(statistic))?;
            Ok(CriticalRow {
                burn_in: b,
                calibrated: (cal.lower_at(0), cal.upper_at(0)),
                ux: (ux.lower_at(0), ux.upper_at(0)),
                cxs: totals.iter().map(|&s| (s, cxs.lower_at(s), cxs.upper_at(s))).collect(),
            })
        })
        .collect()
}

/// Power of `spec` (critical values rebuilt per burn-in) at every point of
/// `thetas`, for every `b ∈ 0..=ī/2`. Indexed `[b][point]`.
pub fn power_by_burn_in(ctx: &SweepContext, spec: TestSpec, thetas: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    let n = ctx.trial_size();
    (0..=n / 2)
        .into_par_iter()
        .map(|b| {
            let g = ctx.frontier(b)?;
            let t = ctx.test(&g, spec)?;
            let mask = ctx.rejection_mask(&g, &t)?;
            thetas.iter().map(|&(c, d)| oc_point(&g, OcKind::RejectionRate(&mask), c, d)).collect()
        })
        .collect()
}

/// Burn-in maximising power at each point; ties go to the smaller `b`.
pub fn argmax_burn_in(power: &[Vec<f64>], point: usize) -> usize {
    let mut best = 0;
    for (b, row) in power.iter().enumerate() {
        if row[point] > power[best][point] {
            best = b;
        }
    }
    best
}

/// Optimal burn-in length for power at `θ`.
pub fn optimal_burnin(ctx: &SweepContext, spec: TestSpec, theta_c: f64, theta_d: f64) -> Result<usize> {
    if theta_c == theta_d {
        return Err(Error::UndefinedAtNull);
    }
    let power = power_by_burn_in(ctx, spec, &[(theta_c, theta_d)])?;
    Ok(argmax_burn_in(&power, 0))
}

/// One cell of an optimal-burn-in map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PobpCell {
    pub theta_c: f64,
    pub theta_d: f64,
    pub burn_in: usize,
    pub burn_in_proportion: f64,
}

/// Optimal burn-in at every off-diagonal point of `grid`.
pub fn pobp_map(ctx: &SweepContext, spec: TestSpec, grid: &[(f64, f64)]) -> Result<Vec<PobpCell>> {
    let points: Vec<(f64, f64)> = grid.iter().copied().filter(|(c, d)| c != d).collect();
    let power = power_by_burn_in(ctx, spec, &points)?;
    let n = ctx.trial_size() as f64;
    Ok(points
        .iter()
        .enumerate()
        .map(|(k, &(c, d))| {
            let b = argmax_burn_in(&power, k);
            PobpCell { theta_c: c, theta_d: d, burn_in: b, burn_in_proportion: 2.0 * b as f64 / n }
        })
        .collect())
}
