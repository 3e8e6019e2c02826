//! Subcommand implementations. Each returns the paths it wrote.

use std::path::PathBuf;

use anyhow::Result;
use rand::Rng;

use brar_exact::group_sequential::{arrest_null_grid, GsDesignSpec, GsSkeleton, PpcsCache};
use brar_exact::mc::{chi_square_homogeneity, frequency_table, mc_oc, replication_rng, BurnInOrder, SimConfig};
use brar_exact::oc::{oc_point, EmptyArm, OcKind};
use brar_exact::policy::PolicyTable;
use brar_exact::sweep::{
    burnin_sweep, critical_value_table, pobp_map, OcSpec, SweepContext, SweepRequest, SweepRow, TestSpec,
};
use brar_exact::{BetaPrior, DesignSpec, StatisticKind};

use crate::config::{config_err, test_name, RunConfig};
use crate::report::{fmt_float, Report};

fn context(cfg: &RunConfig, prior: BetaPrior, min_burn_in: usize) -> Result<SweepContext> {
    let base = cfg.design(prior)?;
    let mut ctx = match cfg.resolved_cache_dir() {
        Some(dir) => SweepContext::with_policy(base.clone(), PolicyTable::load_or_build(&dir, base.policy_key())?),
        None => SweepContext::new(base, min_burn_in)?,
    };
    ctx.search = cfg.search();
    Ok(ctx)
}

fn f(v: f64) -> String {
    fmt_float(v)
}

const SWEEP_COLUMNS: [&str; 13] = [
    "design_hash",
    "n",
    "b",
    "bp",
    "test",
    "statistic",
    "kind",
    "delta",
    "value_avg",
    "value_min",
    "argmin_theta_d",
    "value_max",
    "argmax_theta_d",
];

fn sweep_fields(hash: &str, r: &SweepRow) -> Vec<String> {
    vec![
        hash.to_string(),
        r.trial_size.to_string(),
        r.burn_in.to_string(),
        f(r.burn_in_proportion),
        r.test.clone(),
        r.statistic.clone(),
        r.kind.clone(),
        f(r.delta),
        f(r.avg),
        f(r.min),
        f(r.argmin_theta_d),
        f(r.max),
        f(r.argmax_theta_d),
    ]
}

pub fn critvals(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let bs = cfg.burn_ins.clone().unwrap_or_else(|| (0..=cfg.n / 2).collect());
    let stat = cfg.statistic()?;
    let ctx = context(cfg, cfg.prior()?, *bs.iter().min().unwrap())?;
    let totals = cfg.totals_or_default();
    let rows = critical_value_table(&ctx, &bs, stat, &totals)?;
    let mut cols: Vec<String> = ["design_hash", "n", "b", "bp", "statistic", "calibrated_lower", "calibrated_upper", "ux_lower", "ux_upper"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for s in &totals {
        cols.push(format!("cxs_lower_s{s}"));
        cols.push(format!("cxs_upper_s{s}"));
    }
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let (hash, dh) = (cfg.hash(), cfg.design_hash());
    let mut rep = Report::create(&cfg.out_dir, "critvals.csv", "critvals", &hash, &cols)?;
    for r in rows {
        let mut v = vec![
            dh.clone(),
            cfg.n.to_string(),
            r.burn_in.to_string(),
            f(2.0 * r.burn_in as f64 / cfg.n as f64),
            stat.name().into(),
            f(r.calibrated.0),
            f(r.calibrated.1),
            f(r.ux.0),
            f(r.ux.1),
        ];
        for (_, lo, hi) in r.cxs {
            v.push(f(lo));
            v.push(f(hi));
        }
        rep.row(&v)?;
    }
    Ok(vec![rep.finish()?])
}

pub fn sweep(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let bs = cfg.burn_ins_or_proportions();
    let req = SweepRequest {
        burn_ins: bs.clone(),
        tests: cfg.test_specs(&["calibrated", "ux", "cxs"])?,
        kinds: cfg.oc_specs(&["rejection"])?,
        deltas: cfg.delta_list(&[0.0]),
    };
    let ctx = context(cfg, cfg.prior()?, *bs.iter().min().unwrap())?;
    let rows = burnin_sweep(&ctx, &req)?;
    let (hash, dh) = (cfg.hash(), cfg.design_hash());
    let mut rep = Report::create(&cfg.out_dir, "sweep.csv", "sweep", &hash, &SWEEP_COLUMNS)?;
    for r in &rows {
        rep.row(&sweep_fields(&dh, r))?;
    }
    Ok(vec![rep.finish()?])
}

/// Interior grid `step, 2·step, …` strictly inside `(0, 1)`.
fn unit_grid(step: f64) -> Vec<f64> {
    let k = (1.0 / step).round() as usize;
    (1..k).map(|j| (j as f64 * step * 1e6).round() / 1e6).filter(|&t| t < 1.0).collect()
}

pub fn pobp(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let axis = unit_grid(cfg.grid_step);
    let grid: Vec<(f64, f64)> = axis.iter().flat_map(|&c| axis.iter().map(move |&d| (c, d))).collect();
    let ctx = context(cfg, cfg.prior()?, 0)?;
    let hash = cfg.hash();
    let mut rep = Report::create(&cfg.out_dir, "pobp.csv", "pobp", &hash, &["theta_c", "theta_d", "test", "b_star", "bp_star"])?;
    for spec in cfg.test_specs(&["calibrated", "ux", "cxs"])? {
        for cell in pobp_map(&ctx, spec, &grid)? {
            rep.row(&[f(cell.theta_c), f(cell.theta_d), spec.label(), cell.burn_in.to_string(), f(cell.burn_in_proportion)])?;
        }
    }
    Ok(vec![rep.finish()?])
}

pub fn priors(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let bs = cfg.burn_ins_or_panel();
    let req = SweepRequest {
        burn_ins: bs.clone(),
        tests: cfg.test_specs(&["calibrated", "cxs", "ux", "asymptotic"])?,
        kinds: cfg.oc_specs(&["rejection", "epasa", "bias"])?,
        deltas: cfg.delta_list(&[0.0, 0.1, 0.2, 0.4]),
    };
    let hash = cfg.hash();
    let mut cols = vec!["prior_alpha", "prior_beta"];
    cols.extend(SWEEP_COLUMNS);
    let mut rep = Report::create(&cfg.out_dir, "priors.csv", "priors", &hash, &cols)?;
    for &[a, b] in &cfg.priors {
        let prior = BetaPrior::symmetric(a, b).map_err(|e| crate::config::ConfigError(format!("priors: {e}")))?;
        let mut sub = cfg.clone();
        sub.prior = [a, b, a, b];
        let ctx = context(&sub, prior, *bs.iter().min().unwrap())?;
        let dh = sub.design_hash();
        for r in burnin_sweep(&ctx, &req)? {
            let mut v = vec![f(a), f(b)];
            v.extend(sweep_fields(&dh, &r));
            rep.row(&v)?;
        }
    }
    Ok(vec![rep.finish()?])
}

pub fn arrest(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let a = &cfg.arrest;
    let (rule, scope, error) = (cfg.block_rule()?, cfg.pniwd_scope()?, cfg.error_rule()?);
    let nulls = arrest_null_grid();
    let cache = PpcsCache::default();
    let hash = cfg.hash();
    let mut detail = Report::create(
        &cfg.out_dir,
        "arrest.csv",
        "arrest",
        &hash,
        &["b", "ost_kind", "ost", "theta_c", "theta_d", "rejection", "futility", "epasa", "pniwd", "expected_size"],
    )?;
    let mut summary = Report::create(
        &cfg.out_dir,
        "arrest_summary.csv",
        "arrest",
        &hash,
        &["b", "ost_kind", "ost", "mtnr", "theta_c", "theta_d", "power", "epasa", "pniwd"],
    )?;
    for &b in &a.burn_ins {
        let mut design = GsDesignSpec::arrest(b).map_err(|e| crate::config::ConfigError(format!("arrest.burn_ins: {e}")))?;
        design.rule = rule;
        design.error = error;
        design.prior = cfg.prior()?;
        let skel = GsSkeleton::build_with(design, &cache)?;
        let thresholds = [
            ("fixed", a.ost),
            ("calibrated", skel.calibrate_ost(a.theta_null, cfg.alpha)?),
            ("ux", skel.ux_ost(&nulls, cfg.alpha)?),
        ];
        for (kind, ost) in thresholds {
            let mtnr = 1.0 - skel.max_null_rejection(&nulls, ost)?;
            let points = nulls.iter().map(|&t| [t, t]).chain(a.alternatives.iter().copied());
            for [c, d] in points {
                let o = skel.ocs(c, d, ost, cfg.phi, scope)?;
                detail.row(&[
                    b.to_string(),
                    kind.into(),
                    f(ost),
                    f(c),
                    f(d),
                    f(o.rejection),
                    f(o.futility),
                    f(o.epasa),
                    f(o.pniwd),
                    f(o.expected_size),
                ])?;
            }
            for &[c, d] in &a.alternatives {
                let o = skel.ocs(c, d, ost, cfg.phi, scope)?;
                summary.row(&[b.to_string(), kind.into(), f(ost), f(mtnr), f(c), f(d), f(o.rejection), f(o.epasa), f(o.pniwd)])?;
            }
        }
    }
    Ok(vec![detail.finish()?, summary.finish()?])
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn mc_check(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let m = &cfg.mc;
    if m.max_n < 2 {
        return config_err("mc.max_n: must be at least 2");
    }
    let hash = cfg.hash();
    let mut rep = Report::create(
        &cfg.out_dir,
        "mc_check.csv",
        "mc-check",
        &hash,
        &["check", "n", "b", "test", "kind", "theta_c", "theta_d", "exact", "mc_mean", "mc_se", "z", "pass"],
    )?;
    let mut rng = replication_rng(m.seed, u64::MAX);
    let (mut passed, mut total) = (0usize, 0usize);
    for k in 0..m.checks {
        let n = 2 * rng.random_range(1..=m.max_n / 2);
        let b = rng.random_range(0..=n / 2);
        let (c, d) = (round2(rng.random_range(0.05..0.95)), round2(rng.random_range(0.05..0.95)));
        let design = DesignSpec::new(n, b)?;
        let policy = PolicyTable::build(&design)?;
        let ctx = SweepContext::with_policy(design.clone(), policy.clone());
        let g = ctx.frontier(b)?;
        let pick = rng.random_range(0..4);
        let spec = [TestSpec::calibrated(StatisticKind::Ppcs), TestSpec::ux(StatisticKind::Ppcs), TestSpec::cxs(StatisticKind::Ppcs)]
            [rng.random_range(0..3)];
        let test = ctx.test(&g, spec)?;
        let mask = ctx.rejection_mask(&g, &test)?;
        let (kind, label) = match pick {
            0 => (OcSpec::RejectionRate, test_name(&spec)),
            1 => (OcSpec::Epasa, String::new()),
            2 if c != d => (OcSpec::Piwd { phi: cfg.phi }, String::new()),
            _ => (OcSpec::Bias(EmptyArm::Adjusted), String::new()),
        };
        let oc = match kind {
            OcSpec::RejectionRate => OcKind::RejectionRate(&mask),
            OcSpec::Epasa => OcKind::Epasa,
            OcSpec::Piwd { phi } => OcKind::Piwd { phi },
            OcSpec::Bias(e) => OcKind::Bias(e),
        };
        let exact = oc_point(&g, oc, c, d)?;
        let sim = SimConfig {
            policy: &policy,
            burn_in: b,
            theta_c: c,
            theta_d: d,
            replications: m.replications,
            seed: m.seed.wrapping_add(k as u64),
            order: BurnInOrder::RandomAllocationRule,
        };
        let est = mc_oc(&sim, oc)?;
        let z = est.z_score(exact);
        let pass = z <= m.z_bound;
        passed += pass as usize;
        total += 1;
        rep.row(&[
            format!("oc{k}"),
            n.to_string(),
            b.to_string(),
            label,
            kind.name().into(),
            f(c),
            f(d),
            f(exact),
            f(est.mean),
            f(est.se),
            f(z),
            pass.to_string(),
        ])?;
    }

    let n = 20.min(m.max_n.max(2) / 2 * 2);
    let b = n / 4;
    let design = DesignSpec::new(n, b)?;
    let policy = PolicyTable::build(&design)?;
    let sim = |order| SimConfig {
        policy: &policy,
        burn_in: b,
        theta_c: 0.4,
        theta_d: 0.6,
        replications: m.replications,
        seed: m.seed,
        order,
    };
    let alt = frequency_table(&sim(BurnInOrder::Alternating))?;
    let mut rar_cfg = sim(BurnInOrder::RandomAllocationRule);
    rar_cfg.seed = m.seed ^ 0x5555;
    let rar = frequency_table(&rar_cfg)?;
    let chi = chi_square_homogeneity(&alt, &rar)?;
    let pass = chi.p_value > 0.001;
    passed += pass as usize;
    total += 1;
    let mut chi_rep = Report::create(
        &cfg.out_dir,
        "mc_burn_in_order.csv",
        "mc-check",
        &hash,
        &["n", "b", "theta_c", "theta_d", "statistic", "df", "p_value", "pass"],
    )?;
    chi_rep.row(&[n.to_string(), b.to_string(), f(0.4), f(0.6), f(chi.statistic), chi.df.to_string(), f(chi.p_value), pass.to_string()])?;
    eprintln!("mc-check: {passed}/{total} checks passed");
    Ok(vec![rep.finish()?, chi_rep.finish()?])
}
