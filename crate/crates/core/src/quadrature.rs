//! Numerical integration helpers: fixed and adaptive Gauss–Legendre rules on
//! intervals, and randomly shifted rank-1 (Kronecker) quasi-Monte Carlo for the
//! multi-dimensional integrals of the inference module.

use std::collections::BinaryHeap;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Nodes and weights of a Gauss–Legendre rule on [-1, 1].
pub struct GlRule {
    pairs: Vec<(f64, f64)>,
}

impl GlRule {
    pub fn new(degree: usize) -> Self {
        let degree = NonZeroUsize::new(degree).expect("degree must be positive");
        let quad = GaussLegendre::new(degree);
        let mut pairs = quad.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { pairs }
    }

    pub fn degree(&self) -> usize {
        self.pairs.len()
    }

    /// Nodes mapped to [a, b] with weights already scaled by (b - a) / 2.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.pairs.iter().map(move |&(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

pub fn gl16() -> &'static GlRule {
    static RULE: OnceLock<GlRule> = OnceLock::new();
    RULE.get_or_init(|| GlRule::new(16))
}

pub fn gl32() -> &'static GlRule {
    static RULE: OnceLock<GlRule> = OnceLock::new();
    RULE.get_or_init(|| GlRule::new(32))
}

pub fn gl64() -> &'static GlRule {
    static RULE: OnceLock<GlRule> = OnceLock::new();
    RULE.get_or_init(|| GlRule::new(64))
}

/// Composite rule: `panels` equal subintervals, each integrated with `rule`.
pub fn composite<F: FnMut(f64) -> f64>(rule: &GlRule, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == panels { b } else { lo + h };
            rule.integrate(lo, hi, &mut f)
        })
        .sum()
}

/// Panel breakpoints for a composite rule, one panel per `scale` length, at least `min_panels`.
pub fn panel_count(length: f64, scale: f64, min_panels: usize) -> usize {
    if !(scale > 0.0) || !length.is_finite() {
        return min_panels.max(1);
    }
    ((length / scale).ceil() as usize).clamp(min_panels.max(1), 4096)
}

/// Globally adaptive Gauss–Legendre integration on a finite interval.
///
/// Each panel is integrated with 16 nodes on the whole panel and on its two
/// halves; the panel with the largest discrepancy is bisected until the summed
/// discrepancy meets the tolerance or the panel budget is spent. Returns the
/// estimate and the summed error bound.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> (f64, f64) {
    const MAX_PANELS: usize = 4000;
    let rule = gl16();
    let mut eval = |lo: f64, hi: f64| {
        let mid = 0.5 * (lo + hi);
        let whole = rule.integrate(lo, hi, &mut f);
        let refined = rule.integrate(lo, mid, &mut f) + rule.integrate(mid, hi, &mut f);
        Panel {
            lo,
            hi,
            value: refined,
            err: (refined - whole).abs(),
        }
    };
    let mut heap = BinaryHeap::new();
    let first = eval(a, b);
    let mut total = first.value;
    let mut err_total = first.err;
    heap.push(first);
    while err_total > (rel_tol * total.abs()).max(abs_tol) && heap.len() < MAX_PANELS {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if !(mid > worst.lo && mid < worst.hi) {
            heap.push(worst);
            break;
        }
        let left = eval(worst.lo, mid);
        let right = eval(mid, worst.hi);
        total += left.value + right.value - worst.value;
        err_total += left.err + right.err - worst.err;
        heap.push(left);
        heap.push(right);
    }
    // re-sum to shed accumulated rounding from the running updates
    let total = heap.iter().map(|p| p.value).sum();
    let err_total = heap.iter().map(|p| p.err).sum();
    (total, err_total)
}

struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err).is_eq()
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Integral over [a, inf) through the map s = a + t / (1 - t).
pub fn adaptive_semi_infinite<F: FnMut(f64) -> f64>(mut f: F, a: f64, scale: f64, rel_tol: f64) -> (f64, f64) {
    adaptive(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = a + scale * t / (1.0 - t);
            let jac = scale / ((1.0 - t) * (1.0 - t));
            let v = f(s) * jac;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        rel_tol,
        1e-300,
    )
}

/// A quasi-Monte Carlo estimate with its standard error across independent random shifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcEstimate {
    pub value: f64,
    pub std_error: f64,
    pub points: usize,
}

impl QmcEstimate {
    pub fn rel_error(&self) -> f64 {
        if self.value == 0.0 {
            if self.std_error == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.std_error / self.value).abs()
        }
    }
}

/// Randomly shifted Kronecker lattice in `[0,1)^dim` built on the generalized golden ratio.
#[derive(Debug, Clone)]
pub struct Kronecker {
    alpha: Vec<f64>,
}

impl Kronecker {
    pub fn new(dim: usize) -> Self {
        // phi_d is the positive root of x^(d+1) = x + 1.
        let mut phi = 2.0f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha = (1..=dim).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
        Self { alpha }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Writes point `n` of the sequence shifted by `shift` into `out`, folded by
    /// the tent map `x -> 1 - |2x - 1|` (keeps uniformity, lets smooth
    /// non-periodic integrands converge at the periodic rate).
    pub fn point(&self, n: usize, shift: &[f64], out: &mut [f64]) {
        let nf = n as f64;
        for ((o, a), s) in out.iter_mut().zip(&self.alpha).zip(shift) {
            let x = (s + nf * a).fract();
            *o = 1.0 - (2.0 * x - 1.0).abs();
        }
    }
}

/// Randomized QMC mean of `f` over the unit cube: `shifts` independent shifts
/// of an `n`-point Kronecker set, seeded deterministically.
pub fn qmc_mean<F>(dim: usize, n: usize, shifts: usize, seed: u64, mut f: F) -> QmcEstimate
where
    F: FnMut(&[f64]) -> f64,
{
    let seq = Kronecker::new(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts = shifts.max(2);
    let mut means = Vec::with_capacity(shifts);
    let mut shift = vec![0.0; dim];
    let mut x = vec![0.0; dim];
    for _ in 0..shifts {
        for s in shift.iter_mut() {
            *s = rng.random::<f64>();
        }
        let mut acc = 0.0;
        for i in 0..n {
            seq.point(i, &shift, &mut x);
            acc += f(&x);
        }
        means.push(acc / n as f64);
    }
    let k = means.len() as f64;
    let mean = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
    QmcEstimate {
        value: mean,
        std_error: (var / k).sqrt(),
        points: n * shifts,
    }
}

/// Area-preserving map from the unit square to the disc of radius `radius`.
#[inline]
pub fn disc_point(radius: f64, u: f64, v: f64) -> [f64; 2] {
    let rho = radius * u.sqrt();
    let (s, c) = (2.0 * std::f64::consts::PI * v).sin_cos();
    [rho * c, rho * s]
}
