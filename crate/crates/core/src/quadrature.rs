//! Adaptive Gauss–Kronrod (7/15) quadrature on a finite interval.
//!
//! The driver keeps a max-heap of segments keyed by their error estimate and
//! bisects the worst segment until the summed estimate satisfies
//! `E <= max(atol, rtol * |I|)` or the segment budget is exhausted.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::Error;

// Kronrod abscissae on [0, 1): odd indices are the embedded Gauss points.
const XK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances and budget for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub atol: f64,
    pub rtol: f64,
    pub max_segments: usize,
}

impl QuadOptions {
    pub fn absolute(atol: f64) -> Self {
        Self { atol, rtol: 0.0, max_segments: 2_000 }
    }

    pub fn relative(rtol: f64) -> Self {
        Self { atol: 0.0, rtol, max_segments: 2_000 }
    }
}

/// Integral value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub segments: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn eval_rule<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let half = 0.5 * (b - a);
    let mid = a + half;
    let f0 = f(mid);
    let mut ik = f0 * WK[7];
    let mut ig = f0 * WG[3];
    for j in 0..7 {
        let dx = half * XK[j];
        let pair = f(mid - dx) + f(mid + dx);
        ik += WK[j] * pair;
        if j % 2 == 1 {
            ig += WG[j / 2] * pair;
        }
    }
    let value = ik * half;
    let error = ((ik - ig) * half).abs();
    Segment { a, b, value, error }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult, Error> {
    let first = eval_rule(&f, a, b);
    let mut total = first.value;
    let mut err = first.error;
    let tol = |v: f64| opts.atol.max(opts.rtol * v.abs());
    if !total.is_finite() || !err.is_finite() {
        return Err(Error::Quadrature { value: total, error: err, segments: 1 });
    }
    if err <= tol(total) {
        return Ok(QuadResult { value: total, error: err, segments: 1 });
    }
    let mut heap = BinaryHeap::new();
    heap.push(first);
    while err > tol(total) {
        if heap.len() >= opts.max_segments {
            return Err(Error::Quadrature { value: total, error: err, segments: heap.len() });
        }
        let worst = heap.pop().expect("heap is never empty here");
        let mid = 0.5 * (worst.a + worst.b);
        let left = eval_rule(&f, worst.a, mid);
        let right = eval_rule(&f, mid, worst.b);
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Quadrature { value: total, error: err, segments: heap.len() });
        }
    }
    // resum to shed the drift of the running updates
    let segments = heap.len();
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    Ok(QuadResult { value, error, segments })
}

/// Fixed Gauss–Legendre rule on [-1, 1] computed by Newton iteration on the
/// Legendre recurrence. Exact for polynomials of degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
