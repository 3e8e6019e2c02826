//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use brar_exact::exact_tests::round_significant;
use brar_exact::policy::allocation_prob;
use brar_exact::{DesignSpec, TrialState};

pub const ALPHA: f64 = 0.05;

pub fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Rejection flags of the two-sided Fisher test (2.5% per tail) for `m`
/// participants per arm, computed from the hypergeometric law.
pub fn fisher_rejects(m: u32, s_c: u32, s_d: u32) -> bool {
    let s = s_c + s_d;
    let lo = s.saturating_sub(m);
    let hi = s.min(m);
    let total = choose(2 * m as u64, s as u64);
    let p = |k: u32| choose(m as u64, k as u64) * choose(m as u64, (s - k) as u64) / total;
    let upper: f64 = (s_c..=hi).map(p).sum();
    let lower: f64 = (lo..=s_c).map(p).sum();
    upper <= ALPHA / 2.0 + 1e-12 || lower <= ALPHA / 2.0 + 1e-12
}

pub fn binom_pmf(m: u32, k: u32, t: f64) -> f64 {
    choose(m as u64, k as u64) * t.powi(k as i32) * (1.0 - t).powi((m - k) as i32)
}

/// Worst null probability of a set of `(s_C, s_D)` cells: dense scan, then
/// golden-section refinement around the best grid point.
pub fn worst_null(m: u32, cells: &[(u32, u32)]) -> f64 {
    let rate = |t: f64| cells.iter().map(|&(a, b)| binom_pmf(m, a, t) * binom_pmf(m, b, t)).sum::<f64>();
    let steps = 4000;
    let (mut best, mut arg) = (0.0, 0.0);
    for j in 0..=steps {
        let t = j as f64 / steps as f64;
        let r = rate(t);
        if r > best {
            best = r;
            arg = t;
        }
    }
    let (mut lo, mut hi) = ((arg - 1.0 / steps as f64).max(0.0), (arg + 1.0 / steps as f64).min(1.0));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let (x1, x2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
        if rate(x1) < rate(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    best.max(rate(0.5 * (lo + hi)))
}

/// Barnard's construction with the PPCS ordering: grow each tail by whole
/// tie groups while the worst null probability stays within 2.5%.
pub fn barnard_region(m: u32, value: impl Fn(u32, u32) -> f64) -> Vec<(u32, u32)> {
    let mut cells: Vec<(f64, u32, u32)> =
        (0..=m).flat_map(|a| (0..=m).map(move |b| (a, b))).map(|(a, b)| (round_significant(value(a, b), 12), a, b)).collect();
    let mut region = Vec::new();
    for upper in [true, false] {
        cells.sort_by(|x, y| if upper { y.0.total_cmp(&x.0) } else { x.0.total_cmp(&y.0) });
        let mut tail: Vec<(u32, u32)> = Vec::new();
        let mut i = 0;
        while i < cells.len() {
            let mut j = i;
            while j + 1 < cells.len() && cells[j + 1].0 == cells[i].0 {
                j += 1;
            }
            let mut trial = tail.clone();
            trial.extend(cells[i..=j].iter().map(|&(_, a, b)| (a, b)));
            if worst_null(m, &trial) > ALPHA / 2.0 {
                break;
            }
            tail = trial;
            i = j + 1;
        }
        region.extend(tail);
    }
    region
}

/// Every trajectory: alternating burn-in, then both allocations at each
/// adaptive step. Returns (final state, allocation-probability product,
/// outcome-probability product).
pub fn paths(design: &DesignSpec, theta_c: f64, theta_d: f64) -> Vec<(TrialState, f64, f64)> {
    let mut frontier = vec![(TrialState::EMPTY, 1.0, 1.0)];
    for step in 0..design.trial_size {
        let mut next = Vec::new();
        for (x, a, o) in frontier {
            let arms: Vec<(bool, f64)> = if step < 2 * design.burn_in {
                vec![(step % 2 == 0, 1.0)]
            } else {
                let p = allocation_prob(&x, design).unwrap();
                vec![(true, p), (false, 1.0 - p)]
            };
            for (control, pa) in arms {
                let t = if control { theta_c } else { theta_d };
                for success in [false, true] {
                    let mut y = x;
                    if control {
                        y.n_c += 1;
                        y.s_c += success as u32;
                    } else {
                        y.n_d += 1;
                        y.s_d += success as u32;
                    }
                    let po = if success { t } else { 1.0 - t };
                    next.push((y, a * pa, o * po));
                }
            }
        }
        frontier = next;
    }
    frontier
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-15
}

/// Expected value of `f` over enumerated paths.
pub fn expectation(all: &[(TrialState, f64, f64)], f: impl Fn(&TrialState) -> f64) -> f64 {
    all.iter().map(|(x, a, o)| a * o * f(x)).sum()
}
