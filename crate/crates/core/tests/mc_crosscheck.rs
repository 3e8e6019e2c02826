//! Exact values against seeded Monte Carlo estimates.

use rand::Rng;

use brar_exact::group_sequential::{summarize, GsDesignSpec, GsSkeleton, PniwdScope, PpcsCache, StopCause};
use brar_exact::mc::{
    chi_square_homogeneity, frequency_table, mc_oc, replication_rng, simulate_gs_many, summarize_samples, BurnInOrder,
    SimConfig,
};
use brar_exact::oc::{oc_point, EmptyArm, OcKind};
use brar_exact::policy::{Clip, PolicyTable};
use brar_exact::sweep::{SweepContext, TestSpec};
use brar_exact::{DesignSpec, StatisticKind};

const REPS: usize = 100_000;
const Z: f64 = 3.5;

#[test]
fn random_triples_within_bracket() {
    let mut rng = replication_rng(0xB0A7, 0);
    let mut failures = Vec::new();
    for k in 0..20u64 {
        let n = 2 * rng.random_range(1..=20usize);
        let b = rng.random_range(0..=n / 2);
        let c = (rng.random_range(0.05..0.95f64) * 100.0).round() / 100.0;
        let d = (rng.random_range(0.05..0.95f64) * 100.0).round() / 100.0;
        let design = DesignSpec::new(n, b).unwrap();
        let policy = PolicyTable::build(&design).unwrap();
        let ctx = SweepContext::with_policy(design, policy.clone());
        let g = ctx.frontier(b).unwrap();
        let spec = [TestSpec::calibrated(StatisticKind::Ppcs), TestSpec::ux(StatisticKind::Ppcs), TestSpec::cxs(StatisticKind::Ppcs)]
            [k as usize % 3];
        let test = ctx.test(&g, spec).unwrap();
        let mask = ctx.rejection_mask(&g, &test).unwrap();
        let kind = match k % 4 {
            0 => OcKind::RejectionRate(&mask),
            1 => OcKind::Epasa,
            2 if c != d => OcKind::Piwd { phi: 0.1 },
            _ => OcKind::Bias(EmptyArm::Adjusted),
        };
        let exact = oc_point(&g, kind, c, d).unwrap();
        let sim = SimConfig {
            policy: &policy,
            burn_in: b,
            theta_c: c,
            theta_d: d,
            replications: REPS,
            seed: 1000 + k,
            order: BurnInOrder::RandomAllocationRule,
        };
        let est = mc_oc(&sim, kind).unwrap();
        let z = est.z_score(exact);
        if z > Z {
            failures.push(format!("n={n} b={b} θ=({c},{d}) {}: exact {exact} mc {} ± {}", kind.name(), est.mean, est.se));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn burn_in_order_does_not_change_the_law() {
    let design = DesignSpec::new(20, 5).unwrap();
    let policy = PolicyTable::build(&design).unwrap();
    let cfg = |order, seed| SimConfig { policy: &policy, burn_in: 5, theta_c: 0.35, theta_d: 0.6, replications: REPS, seed, order };
    let alt = frequency_table(&cfg(BurnInOrder::Alternating, 11)).unwrap();
    let rar = frequency_table(&cfg(BurnInOrder::RandomAllocationRule, 12)).unwrap();
    let chi = chi_square_homogeneity(&alt, &rar).unwrap();
    assert!(chi.p_value > 0.001, "{chi:?}");
}

#[test]
fn seeded_estimates_repeat_exactly() {
    let design = DesignSpec::new(16, 2).unwrap();
    let policy = PolicyTable::build(&design).unwrap();
    let cfg = SimConfig {
        policy: &policy,
        burn_in: 2,
        theta_c: 0.3,
        theta_d: 0.5,
        replications: 5000,
        seed: 99,
        order: BurnInOrder::RandomAllocationRule,
    };
    assert_eq!(mc_oc(&cfg, OcKind::Epasa).unwrap(), mc_oc(&cfg, OcKind::Epasa).unwrap());
}

#[test]
fn blocked_design_matches_simulation() {
    let design = GsDesignSpec {
        trial_size: 60,
        block: 10,
        burn_in: 10,
        clip: Some(Clip::new(0.2, 0.8).unwrap()),
        ..GsDesignSpec::arrest(15).unwrap()
    };
    let cache = PpcsCache::default();
    let skel = GsSkeleton::build_with(design.clone(), &cache).unwrap();
    for (c, d, ost) in [(0.3, 0.3, 0.97), (0.2, 0.5, 0.97), (0.4, 0.6, 2.0)] {
        let exact = skel.ocs(c, d, ost, 0.1, PniwdScope::Full).unwrap();
        let sims = simulate_gs_many(&design, &cache, c, d, ost, REPS, 7).unwrap();
        let col = |f: &dyn Fn(&brar_exact::group_sequential::GsOutcome) -> f64| {
            summarize_samples(&sims.iter().map(f).collect::<Vec<_>>())
        };
        let per = |o: &brar_exact::group_sequential::GsOutcome| summarize(&[*o], 60, c, d, 0.1, PniwdScope::Full);
        let power = col(&|o| (o.cause == StopCause::Efficacy) as u8 as f64);
        let epasa = col(&|o| per(o).epasa);
        let pniwd = col(&|o| per(o).pniwd);
        let size = col(&|o| o.stop_stage as f64);
        for (name, est, v) in [
            ("power", power, exact.rejection),
            ("epasa", epasa, exact.epasa),
            ("pniwd", pniwd, exact.pniwd),
            ("size", size, exact.expected_size),
        ] {
            assert!(est.z_score(v) <= Z, "θ=({c},{d}) ost={ost} {name}: exact {v} mc {} ± {}", est.mean, est.se);
        }
    }
}
