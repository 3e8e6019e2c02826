//! Special functions: log-gamma, log-beta, the regularized incomplete beta
//! function and binomial coefficients.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEF[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log density of Beta(a, b) at `x`. Returns `-inf` where the density vanishes.
pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return if a < 1.0 {
            f64::INFINITY
        } else if a == 1.0 {
            -ln_beta(a, b)
        } else {
            f64::NEG_INFINITY
        };
    }
    if x >= 1.0 {
        return if b < 1.0 {
            f64::INFINITY
        } else if b == 1.0 {
            -ln_beta(a, b)
        } else {
            f64::NEG_INFINITY
        };
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)
}

const CF_MAX_ITER: usize = 10_000;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`, i.e. the Beta(a, b) CDF.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * betacf(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * betacf(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

/// Upper tail `1 - I_x(a, b)` without cancellation in the far tail.
pub fn beta_reg_upper(a: f64, b: f64, x: f64) -> f64 {
    beta_reg(b, a, 1.0 - x)
}

/// Exact binomial coefficient, `None` on `u128` overflow or `k > n`.
pub fn binomial_u128(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return None;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        // acc * (n - j) / (j + 1) stays integral at every step
        acc = acc.checked_mul((n - j) as u128)? / (j as u128 + 1);
    }
    Some(acc)
}

/// Binomial coefficient as `f64`; exact whenever the value fits 53 bits.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    match binomial_u128(n, k) {
        Some(v) => v as f64,
        None => (ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)).exp(),
    }
}

/// Row-indexed table of binomial coefficients `C(n, k)` for `n <= max_n`.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    rows: Vec<Vec<f64>>,
}

impl BinomialTable {
    pub fn new(max_n: usize) -> Self {
        let rows = (0..=max_n)
            .map(|n| (0..=n).map(|k| binomial(n as u64, k as u64)).collect())
            .collect();
        Self { rows }
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> f64 {
        if k > n {
            0.0
        } else {
            self.rows[n][k]
        }
    }

    pub fn max_n(&self) -> usize {
        self.rows.len() - 1
    }
}

/// Table of `x^k` for `k = 0..=max_k`, with `0^0 = 1`.
pub fn power_table(x: f64, max_k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_k + 1);
    let mut acc = 1.0;
    for _ in 0..=max_k {
        out.push(acc);
        acc *= x;
    }
    out
}
