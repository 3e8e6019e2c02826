//! Size control of the exact tests and their classical special cases.

use brar_exact::coefficients::final_distribution;
use brar_exact::oc::{null_grid, oc_point, OcKind};
use brar_exact::sweep::{SweepContext, TestSpec};
use brar_exact::{DesignSpec, StatisticKind, TrialState};

mod common;

use common::{barnard_region, fisher_rejects, ALPHA};

#[test]
fn exact_tests_control_size_on_the_null_grid() {
    let ctx = SweepContext::new(DesignSpec::new(20, 0).unwrap(), 0).unwrap();
    for b in 0..=10 {
        let g = ctx.frontier(b).unwrap();
        for spec in [TestSpec::cxs(StatisticKind::Ppcs), TestSpec::ux(StatisticKind::Ppcs)] {
            let t = ctx.test(&g, spec).unwrap();
            let mask = ctx.rejection_mask(&g, &t).unwrap();
            for (c, d) in null_grid() {
                let r = oc_point(&g, OcKind::RejectionRate(&mask), c, d).unwrap();
                assert!(r <= ALPHA + 1e-9, "b={b} {} θ={c}: {r}", spec.label());
            }
        }
    }
}

#[test]
fn probability_is_conserved() {
    let ctx = SweepContext::new(DesignSpec::new(20, 0).unwrap(), 0).unwrap();
    let axis = [0.0, 0.1, 0.45, 0.8, 1.0];
    for b in 0..=10 {
        let g = ctx.frontier(b).unwrap();
        for &c in &axis {
            for &d in &axis {
                let total = final_distribution(&g, c, d).total();
                assert!((total - 1.0).abs() < 1e-9, "b={b} θ=({c},{d}): {total}");
            }
        }
    }
}

#[test]
fn conditional_test_is_fisher_at_full_burn_in() {
    for n in [8usize, 20, 60] {
        let ctx = SweepContext::new(DesignSpec::new(n, n / 2).unwrap(), n / 2).unwrap();
        let g = ctx.frontier(n / 2).unwrap();
        let t = ctx.test(&g, TestSpec::cxs(StatisticKind::Ppcs)).unwrap();
        let mask = ctx.rejection_mask(&g, &t).unwrap();
        let m = (n / 2) as u32;
        for s_c in 0..=m {
            for s_d in 0..=m {
                let k = g.layout().index(&TrialState::new(m, s_c, m, s_d)).unwrap();
                assert_eq!(mask[k], fisher_rejects(m, s_c, s_d), "n={n} s_C={s_c} s_D={s_d}");
            }
        }
    }
}

#[test]
fn unconditional_test_is_barnard_at_full_burn_in() {
    for n in [8usize, 20] {
        let ctx = SweepContext::new(DesignSpec::new(n, n / 2).unwrap(), n / 2).unwrap();
        let g = ctx.frontier(n / 2).unwrap();
        let t = ctx.test(&g, TestSpec::ux(StatisticKind::Ppcs)).unwrap();
        let mask = ctx.rejection_mask(&g, &t).unwrap();
        let stats = ctx.statistics(StatisticKind::Ppcs).unwrap();
        let m = (n / 2) as u32;
        let idx = |a: u32, b: u32| g.layout().index(&TrialState::new(m, a, m, b)).unwrap();
        let region = barnard_region(m, |a, b| stats[idx(a, b)]);
        for s_c in 0..=m {
            for s_d in 0..=m {
                let expected = region.contains(&(s_c, s_d));
                assert_eq!(mask[idx(s_c, s_d)], expected, "n={n} s_C={s_c} s_D={s_d}");
            }
        }
    }
}
