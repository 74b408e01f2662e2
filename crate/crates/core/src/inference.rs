//! Plug-in asymptotic covariance of the two-step estimator, sandwich standard
//! errors, Wald intervals and the pairwise composite likelihood information
//! criterion.
//!
//! All blocks are per unit area. The pairwise score is
//! `S(alpha) = sum over ordered close pairs of f(x - y)` with
//! `f(u) = d/dalpha log(1 - C(u)^2) - K'/K` on `|u| <= r`; the intensity score is
//! `N / lambda - |D|`. Moments of both follow from the joint intensities of
//! orders two to four.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::estimator::{self, FitResult};
use crate::geometry::RectWindow;
use crate::kernel::{Correlation, KernelFamily, KernelModel, Theta};
use crate::quadrature::{self, QmcEstimate};

/// How the window enters the asymptotic integrals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsymptoticForm {
    /// Set covariances of the observation window weight every integral, giving
    /// the moments of the scores on that window divided by its area.
    #[default]
    Window,
    /// The infinite-window limit: every set covariance is replaced by the area.
    Limiting,
}

/// Integration settings for the plug-in blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlugInOptions {
    pub form: AsymptoticForm,
    /// Initial points per random shift; doubled until `rel_tol` is met.
    pub points: usize,
    pub max_points: usize,
    pub shifts: usize,
    pub seed: u64,
    pub rel_tol: f64,
}

impl Default for PlugInOptions {
    fn default() -> Self {
        Self {
            form: AsymptoticForm::Window,
            points: 1 << 13,
            max_points: 1 << 17,
            shifts: 8,
            seed: 0x1a7e_5eed,
            rel_tol: 0.01,
        }
    }
}

/// Normalized set covariance of a finite set of offsets (the origin included):
/// the area fraction of `x` with `x` and every `x + p` inside the window.
struct Weights<'a> {
    form: AsymptoticForm,
    window: &'a RectWindow,
}

impl Weights<'_> {
    #[inline]
    fn offsets(&self, pts: &[[f64; 2]]) -> f64 {
        if self.form == AsymptoticForm::Limiting {
            return 1.0;
        }
        let mut w = 1.0;
        for d in 0..2 {
            let (mut lo, mut hi) = (0.0f64, 0.0f64);
            for p in pts {
                lo = lo.min(p[d]);
                hi = hi.max(p[d]);
            }
            let side = self.window.side(d);
            w *= ((side - (hi - lo)) / side).max(0.0);
        }
        w
    }

    /// `int_{|u| <= r} gamma(u) g(|u|) du / |D|`.
    fn radial<F: FnMut(f64) -> f64>(&self, r: f64, alpha: f64, mut g: F) -> f64 {
        match self.form {
            AsymptoticForm::Window => {
                estimator::radial_window_integral(self.window, r, alpha, g) / self.window.area()
            }
            AsymptoticForm::Limiting => {
                let panels = quadrature::panel_count(r, 0.5 * alpha, 4);
                quadrature::composite(quadrature::gl32(), 0.0, r, panels, |s| 2.0 * PI * s * g(s))
            }
        }
    }
}

/// Pairwise estimating function `f` at a given `alpha`.
struct PairScore {
    c: Correlation,
    r: f64,
    center: f64,
}

impl PairScore {
    fn new(c: Correlation, r: f64, w: &Weights) -> Result<Self> {
        let k = w.radial(r, c.alpha(), |s| c.one_minus_sq(s));
        let k1 = w.radial(r, c.alpha(), |s| -2.0 * c.value(s) * c.d_alpha(s));
        if !(k > 0.0) {
            return Err(DppError::NormalizerDegenerate(k));
        }
        Ok(Self { c, r, center: k1 / k })
    }

    #[inline]
    fn f(&self, s: f64) -> f64 {
        if s <= self.r {
            self.c.dlog_pair(s) - self.center
        } else {
            0.0
        }
    }
}

fn check_inputs(model: &KernelModel, theta: &Theta, window: &RectWindow, r: f64) -> Result<Correlation> {
    if model.dim() != 2 || window.dim() != 2 {
        return Err(DppError::UnsupportedDimension(model.dim().max(window.dim())));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(DppError::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    theta.validate(model)?;
    model.correlation(&theta.alpha)
}

/// `1 / lambda - int C^2`: the limiting variance of `(N / lambda - |D|) / sqrt|D|`.
pub fn sigma11(model: &KernelModel, theta: &Theta) -> Result<f64> {
    theta.validate(model)?;
    let c = model.correlation(&theta.alpha)?;
    Ok(1.0 / theta.lambda - c.integral_sq_plane())
}

/// Expected pairwise score per unit area at `alpha` when the data follow `theta0`.
pub fn expected_score(
    model: &KernelModel,
    theta0: &Theta,
    alpha: &[f64],
    window: &RectWindow,
    r: f64,
    form: AsymptoticForm,
) -> Result<f64> {
    let c0 = check_inputs(model, theta0, window, r)?;
    let c = model.correlation(alpha)?;
    let w = Weights { form, window };
    let score = PairScore::new(c, r, &w)?;
    let scale = c.alpha().min(c0.alpha());
    let lam = theta0.lambda;
    Ok(lam * lam * w.radial(r, scale, |s| c0.one_minus_sq(s) * score.f(s)))
}

/// Limit of minus the mean Hessian of the pairwise composite likelihood per unit area.
pub fn info22(
    model: &KernelModel,
    theta: &Theta,
    window: &RectWindow,
    r: f64,
    form: AsymptoticForm,
) -> Result<DMatrix<f64>> {
    let c = check_inputs(model, theta, window, r)?;
    let w = Weights { form, window };
    let k = w.radial(r, c.alpha(), |s| c.one_minus_sq(s));
    let k1 = w.radial(r, c.alpha(), |s| -2.0 * c.value(s) * c.d_alpha(s));
    let k2 = w.radial(r, c.alpha(), |s| {
        let g = c.dlog_pair(s);
        c.one_minus_sq(s) * g * g
    });
    let lam = theta.lambda;
    let v = lam * lam * (k2 - k1 * k1 / k);
    if !(v > 0.0 && v.is_finite()) {
        return Err(DppError::InfoNotPd);
    }
    Ok(DMatrix::from_element(1, 1, v))
}

/// Plug-in variance of the pairwise score per unit area with its components.
#[derive(Debug, Clone, PartialEq)]
pub struct Sigma22 {
    pub value: DMatrix<f64>,
    /// `2 lambda^2` times the pair term.
    pub pair_term: f64,
    /// `4 lambda^3` times the three-point term.
    pub triple_term: f64,
    /// `lambda^4` times the centered four-point term.
    pub quad_term: f64,
    /// Standard error of the simulated part of the four-point term.
    pub std_error: f64,
    pub points: usize,
    /// The relative error target was not met within `max_points`.
    pub imprecise: bool,
}

const TABLE_X_MAX: f64 = 2000.0;
const TABLE_NODES: usize = 512;
const TABLE_KNEE: f64 = 4.0;

/// A positive radial function tabulated as its logarithm on `t = ln(1 + x)`
/// with cubic interpolation, zero beyond the table.
#[derive(Debug)]
struct RadialTable {
    dt: f64,
    values: Vec<f64>,
}

impl RadialTable {
    fn build<F: Fn(f64) -> f64>(c: F, reach: f64) -> Self {
        let dt = (TABLE_X_MAX / TABLE_KNEE).ln_1p() / TABLE_NODES as f64;
        let mut values = Vec::with_capacity(TABLE_NODES + 1);
        let mut peak = 0.0;
        for i in 0..=TABLE_NODES {
            // past a negligible level the remaining nodes are zero
            let v = if values.is_empty() || peak * 1e-40 < values.last().copied().map_or(peak, f64::exp) {
                autocorrelation(&c, TABLE_KNEE * (i as f64 * dt).exp_m1(), reach)
            } else {
                0.0
            };
            if i == 0 {
                peak = v;
            }
            values.push(v.max(1e-300).ln());
        }
        Self { dt, values }
    }

    fn eval(&self, x: f64) -> f64 {
        let t = (x / TABLE_KNEE).ln_1p() / self.dt;
        let n = self.values.len() - 1;
        if !(t < n as f64) {
            return 0.0;
        }
        let i = t as usize;
        let s = t - i as f64;
        // even in x, and x is linear in t at the origin
        let p0 = if i == 0 { self.values[1] } else { self.values[i - 1] };
        let p1 = self.values[i];
        let p2 = self.values[i + 1];
        let p3 = self.values[(i + 2).min(n)];
        (p1 + 0.5 * s * (p2 - p0 + s * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + s * (3.0 * (p1 - p2) + p3 - p0))))
            .exp()
    }
}

/// `int c(|w|) c(|w + x|) dw` for a radial function `c` decaying on the scale `reach`.
fn autocorrelation<F: Fn(f64) -> f64>(c: &F, x: f64, reach: f64) -> f64 {
    let tol = 1e-9;
    if x == 0.0 {
        return quadrature::adaptive_semi_infinite(|s| 2.0 * PI * s * c(s) * c(s), 0.0, reach, tol).0;
    }
    let ring = |rho: f64| {
        if rho == 0.0 {
            return 2.0 * PI * c(x);
        }
        // angle measured from the direction where |w + x| is smallest
        let d0 = (rho - x) * (rho - x);
        let k = 4.0 * rho * x;
        let g = |t: f64| {
            let h = (0.5 * t).sin();
            c((d0 + k * h * h).sqrt())
        };
        let width = reach / (rho * x).sqrt();
        let mut total = 0.0;
        let mut a = 0.0;
        for b in [width, 4.0 * width, 16.0 * width, PI] {
            let b = b.min(PI);
            if b > a {
                total += quadrature::adaptive(g, a, b, tol, 1e-300).0;
                a = b;
            }
        }
        2.0 * total
    };
    let f = |rho: f64| rho * c(rho) * ring(rho);
    quadrature::adaptive(f, 0.0, x, tol, 1e-300).0 + quadrature::adaptive_semi_infinite(f, x, reach, tol).0
}

/// Autocorrelations `G(x) = int C(w) C(w + x) dw` and `H(x) = int C^2(w) C^2(w + x) dw`
/// of a family at unit scale; at scale `alpha` they are `alpha^2 G(x / alpha)`.
#[derive(Debug)]
struct ConvTables {
    g: RadialTable,
    h: RadialTable,
}

fn conv_tables(model: &KernelModel) -> Result<Arc<ConvTables>> {
    static CACHE: OnceLock<Mutex<HashMap<(KernelFamily, u64), Arc<ConvTables>>>> = OnceLock::new();
    let key = (model.family(), model.shape().unwrap_or(0.0).to_bits());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Ok(t.clone());
    }
    let unit = model.correlation(&[1.0])?;
    let reach = unit.range(1e-3);
    let tables = Arc::new(ConvTables {
        g: RadialTable::build(|s| unit.value(s), reach),
        h: RadialTable::build(
            |s| {
                let v = unit.value(s);
                v * v
            },
            reach,
        ),
    });
    cache.lock().unwrap_or_else(|e| e.into_inner()).insert(key, tables.clone());
    Ok(tables)
}

/// Scaled autocorrelations at a given `alpha`.
struct Conv {
    tables: Arc<ConvTables>,
    alpha: f64,
}

impl Conv {
    #[inline]
    fn g(&self, x: f64) -> f64 {
        self.alpha * self.alpha * self.tables.g.eval(x / self.alpha)
    }

    #[inline]
    fn h(&self, x: f64) -> f64 {
        self.alpha * self.alpha * self.tables.h.eval(x / self.alpha)
    }
}

/// Gauss nodes on `[a, b]` in `panels` equal panels.
fn gauss_nodes(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == panels { b } else { lo + h };
            quadrature::gl16().mapped(lo, hi).collect::<Vec<_>>()
        })
        .collect()
}

/// Panel ends on `[0, phi_max]` for integrands carried by the chord between
/// offsets of lengths `a` and `b`: chord increments of `2 alpha` near the
/// smallest chord, growing geometrically where correlations have decayed.
fn chord_panels(a: f64, b: f64, phi_max: f64, alpha: f64, ends: &mut Vec<f64>) {
    ends.clear();
    ends.push(0.0);
    let gap = (a - b).abs();
    let top = chord(a, b, phi_max);
    let mut d = gap;
    loop {
        d += (2.0 * alpha).max(0.5 * d);
        if d >= top || ends.len() > 64 {
            ends.push(phi_max);
            return;
        }
        let x = (d * d - gap * gap) / (4.0 * a * b);
        ends.push(2.0 * x.sqrt().min(1.0).asin());
    }
}

/// Gauss nodes over consecutive panels.
fn panel_nodes(ends: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
    ends.windows(2).flat_map(|p| quadrature::gl16().mapped(p[0], p[1]))
}

/// Largest angle between offsets of lengths `a` and `b` whose chord is below `reach`.
fn angle_within(a: f64, b: f64, reach: f64) -> Option<f64> {
    let gap = (a - b).abs();
    if gap >= reach {
        return None;
    }
    let x = (reach * reach - gap * gap) / (4.0 * a * b);
    Some(if !(x < 1.0) { PI } else { 2.0 * x.sqrt().asin() })
}

const ROTATIONS: usize = 8;
const PROFILE_STEPS: usize = 8;

/// Window weights averaged over a common rotation of the offsets: `(w3, w2)`
/// with `w3` the normalized set covariance of the triangle `{0, u, v}` and `w2`
/// the product of the pair weights of `u` and `v`.
struct RotationAverage {
    cs: [(f64, f64); ROTATIONS],
    inv: [f64; 2],
    limiting: bool,
}

/// Rotation-averaged weights at fixed lengths as a piecewise linear function
/// of the angle between the offsets on `[0, pi]`.
struct WindowProfile {
    knots: [(f64, f64); PROFILE_STEPS + 1],
}

impl WindowProfile {
    #[inline]
    fn at(&self, phi: f64) -> (f64, f64) {
        let t = (phi / PI * PROFILE_STEPS as f64).clamp(0.0, PROFILE_STEPS as f64);
        let i = (t as usize).min(PROFILE_STEPS - 1);
        let s = t - i as f64;
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        (a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1))
    }

    /// `int_0^pi (w3, w2) dphi` of the interpolant.
    fn integral(&self) -> (f64, f64) {
        let h = PI / PROFILE_STEPS as f64;
        let mut acc = (0.0, 0.0);
        for (i, k) in self.knots.iter().enumerate() {
            let e = if i == 0 || i == PROFILE_STEPS { 0.5 } else { 1.0 };
            acc.0 += e * h * k.0;
            acc.1 += e * h * k.1;
        }
        acc
    }
}

impl RotationAverage {
    fn new(w: &Weights) -> Self {
        let mut cs = [(0.0, 0.0); ROTATIONS];
        for (k, v) in cs.iter_mut().enumerate() {
            let a = PI * k as f64 / ROTATIONS as f64;
            *v = (a.cos(), a.sin());
        }
        Self {
            cs,
            inv: [1.0 / w.window.side(0), 1.0 / w.window.side(1)],
            limiting: w.form == AsymptoticForm::Limiting,
        }
    }

    fn triangle(&self, su: f64, sv: f64, phi: f64) -> (f64, f64) {
        let (sp, cp) = phi.sin_cos();
        let (mut w3, mut w2) = (0.0, 0.0);
        for &(c, s) in &self.cs {
            let u = [su * c, su * s];
            let v = [sv * (c * cp - s * sp), sv * (s * cp + c * sp)];
            let ex = u[0].max(v[0]).max(0.0) - u[0].min(v[0]).min(0.0);
            let ey = u[1].max(v[1]).max(0.0) - u[1].min(v[1]).min(0.0);
            w3 += (1.0 - ex * self.inv[0]).max(0.0) * (1.0 - ey * self.inv[1]).max(0.0);
            w2 += (1.0 - u[0].abs() * self.inv[0]).max(0.0)
                * (1.0 - u[1].abs() * self.inv[1]).max(0.0)
                * (1.0 - v[0].abs() * self.inv[0]).max(0.0)
                * (1.0 - v[1].abs() * self.inv[1]).max(0.0);
        }
        (w3 / ROTATIONS as f64, w2 / ROTATIONS as f64)
    }

    fn profile(&self, su: f64, sv: f64) -> WindowProfile {
        let mut knots = [(1.0, 1.0); PROFILE_STEPS + 1];
        if !self.limiting {
            for (i, k) in knots.iter_mut().enumerate() {
                *k = self.triangle(su, sv, PI * i as f64 / PROFILE_STEPS as f64);
            }
        }
        WindowProfile { knots }
    }
}

/// Per-node values of the radial rule on `[0, r]`.
struct RadialNode {
    s: f64,
    wt: f64,
    c: f64,
    h: f64,
    f: f64,
}

fn radial_nodes(c: &Correlation, score: &PairScore) -> Vec<RadialNode> {
    let panels = quadrature::panel_count(score.r, c.alpha(), 2).min(64);
    gauss_nodes(0.0, score.r, panels)
        .into_iter()
        .map(|(s, wt)| RadialNode {
            s,
            wt,
            c: c.value(s),
            h: c.one_minus_sq(s),
            f: score.f(s),
        })
        .collect()
}

#[inline]
fn chord(a: f64, b: f64, phi: f64) -> f64 {
    let h = (0.5 * phi).sin();
    ((a - b) * (a - b) + 4.0 * a * b * h * h).sqrt()
}

/// Three-point term `int int [w3 det3 - w2 h h] f f` and the part of the
/// four-point term that is a double integral over the pair offsets. The
/// integrands split into a part smooth in the angle between the offsets and a
/// part carried by the chord, which is dropped beyond `local`.
fn double_pair_integrals(
    c: &Correlation,
    nodes: &[RadialNode],
    conv: &Conv,
    rot: &RotationAverage,
    local: f64,
) -> (f64, f64) {
    let smooth = gauss_nodes(0.0, PI, 2);
    let mut ends = Vec::new();
    let (mut t3, mut t4) = (0.0, 0.0);
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i..] {
            let sym = if std::ptr::eq(a, b) { 1.0 } else { 2.0 };
            let base = sym * 4.0 * PI * a.wt * b.wt * a.s * b.s * a.f * b.f;
            if base == 0.0 {
                continue;
            }
            let prof = rot.profile(a.s, b.s);
            let cc = a.c * a.c * b.c * b.c;
            let mut p3 = if rot.limiting {
                -PI * cc
            } else {
                smooth
                    .iter()
                    .map(|&(phi, wp)| {
                        let (w3, w2) = prof.at(phi);
                        wp * ((w3 - w2) * a.h * b.h - w3 * cc)
                    })
                    .sum()
            };
            let mut p4 = 0.0;
            if let Some(phi_max) = angle_within(a.s, b.s, local) {
                chord_panels(a.s, b.s, phi_max, c.alpha(), &mut ends);
                for (phi, wp) in panel_nodes(&ends) {
                    let d = chord(a.s, b.s, phi);
                    let cd = c.value(d);
                    let (w3, w2) = prof.at(phi);
                    p3 += wp * w3 * cd * (2.0 * a.c * b.c - cd);
                    p4 += wp * w2 * (2.0 * conv.h(d) - 4.0 * a.c * b.c * conv.g(d));
                }
            }
            t3 += base * p3;
            t4 += base * p4;
        }
    }
    (t3, t4)
}

/// Point of the bivariate Cauchy law of scale `sigma` conditioned on the disc
/// of radius `reach` (possibly infinite), from two uniforms, with the
/// reciprocal of its density.
#[inline]
fn cauchy_disc(sigma: f64, reach: f64, x: f64, y: f64) -> ([f64; 2], f64) {
    let mass = 1.0 - 1.0 / (1.0 + (reach / sigma).powi(2)).sqrt();
    let q = 1.0 / (1.0 - mass * x);
    let rho = sigma * (q * q - 1.0).max(0.0).sqrt();
    let (st, ct) = (2.0 * PI * y).sin_cos();
    ([rho * ct, rho * st], 2.0 * PI * sigma * sigma * q * q * q * mass)
}

/// Four-cycle integral `int C(w) C(w - u) C(w - u + v) C(w + v) f(u) f(v) w(u) w(v)`
/// by randomized quasi-Monte Carlo. The offsets are drawn from bivariate Cauchy
/// laws on the correlation scale: `u` and `v` conditioned on the ball and `w`
/// around the centre `(u - v) / 2` of the parallelogram `0, u, u - v, -v`.
fn four_cycle(c: &Correlation, score: &PairScore, w: &Weights, n: usize, opts: &PlugInOptions) -> QmcEstimate {
    let r = score.r;
    let a = c.alpha();
    quadrature::qmc_mean(6, n, opts.shifts, opts.seed ^ 0x4, |x| {
        let (u, pu) = cauchy_disc(a, r, x[0], x[1]);
        let (v, pv) = cauchy_disc(a, r, x[2], x[3]);
        let (d, pd) = cauchy_disc(0.5 * a, f64::INFINITY, x[4], x[5]);
        let m = [0.5 * (u[0] - v[0]) + d[0], 0.5 * (u[1] - v[1]) + d[1]];
        let prod = c.value(m[0].hypot(m[1]))
            * c.value((m[0] - u[0]).hypot(m[1] - u[1]))
            * c.value((m[0] - u[0] + v[0]).hypot(m[1] - u[1] + v[1]))
            * c.value((m[0] + v[0]).hypot(m[1] + v[1]));
        if prod == 0.0 {
            return 0.0;
        }
        let fu = score.f(u[0].hypot(u[1]));
        let fv = score.f(v[0].hypot(v[1]));
        pu * pv * pd * prod * fu * fv * w.offsets(&[u]) * w.offsets(&[v])
    })
}

/// Plug-in variance of the pairwise score per unit area: the pair and three-point
/// terms by deterministic quadrature, the centered four-point term reduced over
/// the offset between the two pairs to autocorrelations of `C` and `C^2` plus a
/// four-cycle integral by randomized quasi-Monte Carlo.
pub fn sigma22(model: &KernelModel, theta: &Theta, window: &RectWindow, r: f64, opts: &PlugInOptions) -> Result<Sigma22> {
    let c = check_inputs(model, theta, window, r)?;
    let w = Weights { form: opts.form, window };
    let score = PairScore::new(c, r, &w)?;
    let conv = Conv {
        tables: conv_tables(model)?,
        alpha: c.alpha(),
    };
    let lam = theta.lambda;
    let pair = 2.0 * lam * lam * w.radial(r, c.alpha(), |s| {
        let f = score.f(s);
        c.one_minus_sq(s) * f * f
    });
    let nodes = radial_nodes(&c, &score);
    let rot = RotationAverage::new(&w);
    let (t3, t4_double) = double_pair_integrals(&c, &nodes, &conv, &rot, 2.0 * c.range(LOCAL_TOL));
    // terms of the four-point reduction that factor over the two pairs
    let f_int = w.radial(r, c.alpha(), |s| score.f(s));
    let cg_int = w.radial(r, c.alpha(), |s| c.value(s) * conv.g(s) * score.f(s));
    let c2 = c.integral_sq_plane();
    let factored = -4.0 * c2 * f_int * f_int + 8.0 * f_int * cg_int;
    let l3 = 4.0 * lam.powi(3);
    let l4 = lam.powi(4);
    let mut n = opts.points.max(64);
    loop {
        let q = four_cycle(&c, &score, &w, n, opts);
        let quad = l4 * (factored + t4_double - 2.0 * q.value);
        let total = pair + l3 * t3 + quad;
        let se = 2.0 * l4 * q.std_error;
        let done = se <= opts.rel_tol * total.abs();
        if done || 2 * n > opts.max_points {
            if !done {
                log::warn!(
                    "pair score variance reached relative error {:.2e} (target {:.0e})",
                    se / total.abs(),
                    opts.rel_tol
                );
            }
            if !(total > 0.0) {
                log::warn!("pair score variance evaluated to {total:.3e}");
            }
            let value = psd_repair(DMatrix::from_element(1, 1, total), "pair score variance");
            return Ok(Sigma22 {
                value,
                pair_term: pair,
                triple_term: l3 * t3,
                quad_term: quad,
                std_error: se,
                points: q.points,
                imprecise: !done,
            });
        }
        n *= 2;
    }
}

/// Correlation level below which chord-carried terms are dropped.
const LOCAL_TOL: f64 = 1e-7;

/// Plug-in covariance of the intensity score and the pairwise score per unit area.
#[derive(Debug, Clone, PartialEq)]
pub struct Sigma12 {
    pub value: DVector<f64>,
}

/// `Cov(N / lambda - |D|, S) / |D|`, which reduces to
/// `2 lambda^2 int f(u) int w3(u, v) [C(u) C(v) C(u - v) - C(v)^2] dv du`.
pub fn sigma12(model: &KernelModel, theta: &Theta, window: &RectWindow, r: f64, opts: &PlugInOptions) -> Result<Sigma12> {
    let c = check_inputs(model, theta, window, r)?;
    let w = Weights { form: opts.form, window };
    let score = PairScore::new(c, r, &w)?;
    let lam = theta.lambda;
    let inner = match opts.form {
        AsymptoticForm::Limiting => {
            let conv = Conv {
                tables: conv_tables(model)?,
                alpha: c.alpha(),
            };
            let c2 = c.integral_sq_plane();
            w.radial(r, c.alpha(), |s| score.f(s) * (c.value(s) * conv.g(s) - c2))
        }
        AsymptoticForm::Window => {
            let nodes = radial_nodes(&c, &score);
            let rot = RotationAverage::new(&w);
            let near = r + c.range(1e-3);
            let far = c.range(1e-9).max(near).min(window.side(0).hypot(window.side(1)));
            let mut outer = gauss_nodes(0.0, near, quadrature::panel_count(near, c.alpha(), 2).min(64));
            let mut lo = near;
            while lo < far {
                let hi = (1.5 * lo).min(far);
                outer.extend(gauss_nodes(lo, hi, 1));
                lo = hi;
            }
            let local = c.range(1e-9);
            let mut ends = Vec::new();
            let mut total = 0.0;
            for a in &nodes {
                if a.f == 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for &(sv, wv) in &outer {
                    let cv = c.value(sv);
                    let prof = rot.profile(a.s, sv);
                    let mut p = -cv * cv * prof.integral().0;
                    if (a.c * cv).abs() > 1e-15 {
                        if let Some(phi_max) = angle_within(a.s, sv, local) {
                            chord_panels(a.s, sv, phi_max, c.alpha(), &mut ends);
                            for (phi, wp) in panel_nodes(&ends) {
                                p += wp * prof.at(phi).0 * a.c * cv * c.value(chord(a.s, sv, phi));
                            }
                        }
                    }
                    acc += wv * sv * p;
                }
                total += 4.0 * PI * a.wt * a.s * a.f * acc;
            }
            total
        }
    };
    Ok(Sigma12 {
        value: DVector::from_element(1, 2.0 * lam * lam * inner),
    })
}

/// Symmetrizes and clips negative eigenvalues at zero.
pub fn psd_repair(m: DMatrix<f64>, what: &str) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    log::warn!("{what}: negative eigenvalue clipped at zero");
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Achieved precision of the simulated blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockErrors {
    pub sigma22: f64,
    pub imprecise: bool,
}

/// The blocks of the asymptotic covariance of `(lambda_hat, alpha_hat)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticBlocks {
    pub sigma11: f64,
    pub sigma12: DVector<f64>,
    pub sigma22: DMatrix<f64>,
    pub info22: DMatrix<f64>,
    /// `I^{-1} Sigma I^{-1}` with `I = diag(1 / lambda, info22)`, per unit area.
    pub sandwich: DMatrix<f64>,
    pub errors: BlockErrors,
}

pub fn asymptotic_blocks(
    model: &KernelModel,
    theta: &Theta,
    window: &RectWindow,
    r: f64,
    opts: &PlugInOptions,
) -> Result<AsymptoticBlocks> {
    let s11 = sigma11(model, theta)?;
    let s12 = sigma12(model, theta, window, r, opts)?;
    let s22 = sigma22(model, theta, window, r, opts)?;
    let i22 = info22(model, theta, window, r, opts.form)?;
    let q = i22.nrows();
    let mut sigma = DMatrix::zeros(q + 1, q + 1);
    sigma[(0, 0)] = s11;
    for i in 0..q {
        sigma[(0, i + 1)] = s12.value[i];
        sigma[(i + 1, 0)] = s12.value[i];
        for j in 0..q {
            sigma[(i + 1, j + 1)] = s22.value[(i, j)];
        }
    }
    let sigma = psd_repair(sigma, "asymptotic score covariance");
    let i22_inv = i22.clone().cholesky().ok_or(DppError::InfoNotPd)?.inverse();
    let mut i_inv = DMatrix::zeros(q + 1, q + 1);
    i_inv[(0, 0)] = theta.lambda;
    i_inv.view_mut((1, 1), (q, q)).copy_from(&i22_inv);
    let sandwich = &i_inv * &sigma * &i_inv;
    Ok(AsymptoticBlocks {
        sigma11: s11,
        sigma12: s12.value,
        sigma22: s22.value,
        info22: i22,
        sandwich: (&sandwich + sandwich.transpose()) * 0.5,
        errors: BlockErrors {
            sigma22: s22.std_error,
            imprecise: s22.imprecise,
        },
    })
}

/// Covariance of the estimate on a window with standard errors and 95% Wald intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldSummary {
    /// Row-major `(q + 1) x (q + 1)` covariance of `(lambda_hat, alpha_hat)`.
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub intervals: Vec<[f64; 2]>,
}

pub const WALD_Z: f64 = 1.959_963_984_540_054;

pub fn sandwich(blocks: &AsymptoticBlocks, estimate: &Theta, window: &RectWindow) -> Result<WaldSummary> {
    let cov = &blocks.sandwich / window.area();
    let est: Vec<f64> = std::iter::once(estimate.lambda).chain(estimate.alpha.iter().copied()).collect();
    if est.len() != cov.nrows() {
        return Err(DppError::InvalidArgument("estimate and blocks differ in dimension".into()));
    }
    let std_errors: Vec<f64> = (0..cov.nrows()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Ok(WaldSummary {
        covariance: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
        intervals: est.iter().zip(&std_errors).map(|(e, s)| [e - WALD_Z * s, e + WALD_Z * s]).collect(),
        std_errors,
    })
}

/// Information criterion of a pairwise composite likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ICReport {
    pub model: KernelModel,
    pub label: String,
    pub cl_at_optimum: f64,
    /// `2 tr(sigma22 info22^{-1})` at the estimate.
    pub penalty: f64,
    pub ic_value: f64,
    pub warning: Option<String>,
}

/// `-2 CL(alpha_hat) + 2 tr(sigma22 info22^{-1})` at the estimate.
pub fn ic2(model: &KernelModel, fit: &FitResult, window: &RectWindow, opts: &PlugInOptions) -> Result<ICReport> {
    if fit.order != 2 {
        return Err(DppError::InvalidArgument(format!(
            "the information criterion needs a pairwise fit, got order {}",
            fit.order
        )));
    }
    let theta = Theta::new(fit.lambda_hat, fit.alpha_hat.clone());
    let s22 = sigma22(model, &theta, window, fit.radius, opts)?;
    let i22 = info22(model, &theta, window, fit.radius, opts.form)?;
    let i22_inv = i22.cholesky().ok_or(DppError::InfoNotPd)?.inverse();
    let penalty = 2.0 * (&s22.value * i22_inv).trace();
    let warning = fit.diagnostics.boundary_hit.then(|| {
        log::warn!("{}: estimate on the parameter box boundary, criterion unreliable", model.label());
        "estimate on the parameter box boundary; criterion unreliable".to_string()
    });
    Ok(ICReport {
        model: *model,
        label: model.label(),
        cl_at_optimum: fit.cl_value,
        penalty,
        ic_value: -2.0 * fit.cl_value + penalty,
        warning,
    })
}

/// Ascending by criterion value, ties broken by the larger composite likelihood; stable.
pub fn compare_models(reports: &[ICReport]) -> Vec<ICReport> {
    let mut out = reports.to_vec();
    out.sort_by(|a, b| {
        a.ic_value
            .total_cmp(&b.ic_value)
            .then(b.cl_at_optimum.total_cmp(&a.cl_at_optimum))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn det3(c: &Correlation, a: f64, b: f64, ab: f64) -> f64 {
        let (x, y, z) = (c.value(a), c.value(b), c.value(ab));
        1.0 - x * x - y * y - z * z + 2.0 * x * y * z
    }

    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    fn sq(n: f64) -> RectWindow {
        RectWindow::square(n).unwrap()
    }

    fn models() -> Vec<KernelModel> {
        vec![
            KernelModel::gaussian(),
            KernelModel::laplace(),
            KernelModel::cauchy(0.5).unwrap(),
            KernelModel::cauchy(1.0).unwrap(),
        ]
    }

    fn theta0() -> Theta {
        Theta::new(10.0, vec![0.1])
    }

    #[test]
    fn sigma11_examples() {
        let g = sigma11(&KernelModel::gaussian(), &theta0()).unwrap();
        assert_relative_eq!(g, 0.1 - PI * 0.01 / 2.0, max_relative = 1e-9);
        assert_relative_eq!(g, 0.0842920, epsilon = 1e-7);
        let l = sigma11(&KernelModel::laplace(), &theta0()).unwrap();
        assert_relative_eq!(l, 0.0842920, epsilon = 1e-7);
        let p = sigma11(&KernelModel::gaussian(), &Theta::new(10.0, vec![1e-6])).unwrap();
        assert_relative_eq!(p, 0.1, max_relative = 1e-9);
    }

    #[test]
    fn expected_score_vanishes_at_truth() {
        for m in models() {
            for form in [AsymptoticForm::Window, AsymptoticForm::Limiting] {
                let e = expected_score(&m, &theta0(), &[0.1], &sq(5.0), 0.625, form).unwrap();
                let i = info22(&m, &theta0(), &sq(5.0), 0.625, form).unwrap()[(0, 0)];
                assert!(e.abs() < 1e-10 * i, "{} {e}", m.label());
            }
        }
    }

    #[test]
    fn info22_is_minus_derivative_of_expected_score() {
        for m in models() {
            for form in [AsymptoticForm::Window, AsymptoticForm::Limiting] {
                let i = info22(&m, &theta0(), &sq(5.0), 0.625, form).unwrap()[(0, 0)];
                assert!(i > 0.0);
                let h = 1e-5;
                let ep = expected_score(&m, &theta0(), &[0.1 + h], &sq(5.0), 0.625, form).unwrap();
                let em = expected_score(&m, &theta0(), &[0.1 - h], &sq(5.0), 0.625, form).unwrap();
                assert_relative_eq!(i, -(ep - em) / (2.0 * h), max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn info22_scales_with_lambda_squared() {
        let m = KernelModel::gaussian();
        let a = info22(&m, &Theta::new(5.0, vec![0.1]), &sq(5.0), 0.625, AsymptoticForm::Window).unwrap()[(0, 0)];
        let b = info22(&m, &Theta::new(10.0, vec![0.1]), &sq(5.0), 0.625, AsymptoticForm::Window).unwrap()[(0, 0)];
        assert_relative_eq!(b, 4.0 * a, max_relative = 1e-12);
    }

    #[test]
    fn window_form_approaches_limit() {
        let m = KernelModel::gaussian();
        let lim = info22(&m, &theta0(), &sq(5.0), 0.625, AsymptoticForm::Limiting).unwrap()[(0, 0)];
        let big = info22(&m, &theta0(), &sq(400.0), 0.625, AsymptoticForm::Window).unwrap()[(0, 0)];
        let small = info22(&m, &theta0(), &sq(5.0), 0.625, AsymptoticForm::Window).unwrap()[(0, 0)];
        assert_relative_eq!(big, lim, max_relative = 2e-3);
        assert!((small / lim - 1.0).abs() > (big / lim - 1.0).abs());
    }

    #[test]
    fn sigma22_components() {
        let opts = PlugInOptions::default();
        for m in models() {
            let s = sigma22(&m, &theta0(), &sq(5.0), 0.625, &opts).unwrap();
            assert!(s.value[(0, 0)] > 0.0, "{}: {s:?}", m.label());
            assert!(s.pair_term > 0.0);
            assert!(!s.imprecise, "{}: {s:?}", m.label());
            assert!(s.std_error < 0.01 * s.value[(0, 0)]);
        }
    }

    #[test]
    fn sigma22_reduces_to_pair_term_without_correlation() {
        let m = KernelModel::gaussian();
        let opts = PlugInOptions::default();
        let s = sigma22(&m, &Theta::new(10.0, vec![0.004]), &sq(5.0), 0.625, &opts).unwrap();
        let cross = s.triple_term.abs() + s.quad_term.abs();
        assert!(cross < 0.05 * s.pair_term, "{s:?}");
    }

    #[test]
    fn sigma12_vanishes_without_correlation() {
        let m = KernelModel::gaussian();
        let opts = PlugInOptions::default();
        let weak = sigma12(&m, &Theta::new(10.0, vec![0.004]), &sq(5.0), 0.625, &opts).unwrap();
        let strong = sigma12(&m, &theta0(), &sq(5.0), 0.625, &opts).unwrap();
        assert!(weak.value[0].abs() < 0.05 * strong.value[0].abs(), "{weak:?} {strong:?}");
    }

    #[test]
    fn gaussian_autocorrelation_tables() {
        let t = conv_tables(&KernelModel::gaussian()).unwrap();
        for x in [0.0, 0.05, 0.3, 1.0, 2.5, 4.0] {
            assert_relative_eq!(t.g.eval(x), PI / 2.0 * (-x * x / 2.0).exp(), max_relative = 1e-5, epsilon = 1e-12);
            assert_relative_eq!(t.h.eval(x), PI / 4.0 * (-x * x).exp(), max_relative = 1e-5, epsilon = 1e-12);
        }
    }

    #[test]
    fn autocorrelation_of_laplace_matches_plane_quadrature() {
        let t = conv_tables(&KernelModel::laplace()).unwrap();
        let c = |x: f64, y: f64| (-(x.hypot(y))).exp();
        for shift in [0.5, 2.0] {
            let rule = quadrature::gl64();
            let brute = quadrature::composite(rule, -30.0, 30.0, 60, |x| {
                quadrature::composite(rule, -30.0, 30.0, 60, |y| c(x, y) * c(x + shift, y))
            });
            assert_relative_eq!(t.g.eval(shift), brute, max_relative = 1e-5);
        }
    }

    #[test]
    fn sigma12_limiting_gaussian_closed_form() {
        let m = KernelModel::gaussian();
        let opts = PlugInOptions {
            form: AsymptoticForm::Limiting,
            ..Default::default()
        };
        let got = sigma12(&m, &theta0(), &sq(5.0), 0.625, &opts).unwrap().value[0];
        let c = m.correlation(&[0.1]).unwrap();
        let w = Weights {
            form: AsymptoticForm::Limiting,
            window: &sq(5.0),
        };
        let score = PairScore::new(c, 0.625, &w).unwrap();
        let a2 = 0.01;
        let inner = quadrature::composite(quadrature::gl32(), 0.0, 0.625, 64, |s| {
            let g = PI * a2 / 2.0 * (-s * s / (2.0 * a2)).exp();
            2.0 * PI * s * score.f(s) * (c.value(s) * g - PI * a2 / 2.0)
        });
        assert_relative_eq!(got, 200.0 * inner, max_relative = 1e-5);
        // the window form approaches the limit on large windows
        let big = sigma12(&m, &theta0(), &sq(200.0), 0.625, &PlugInOptions::default()).unwrap().value[0];
        assert_relative_eq!(big, got, max_relative = 0.01);
    }

    #[test]
    fn gaussian_four_cycle_factorizes() {
        let m = KernelModel::gaussian();
        let c = m.correlation(&[0.1]).unwrap();
        let win = sq(5.0);
        let w = Weights {
            form: AsymptoticForm::Limiting,
            window: &win,
        };
        let score = PairScore::new(c, 0.625, &w).unwrap();
        let opts = PlugInOptions::default();
        let q = four_cycle(&c, &score, &w, 1 << 14, &opts);
        let g = quadrature::composite(quadrature::gl32(), 0.0, 0.625, 64, |s| {
            2.0 * PI * s * (-s * s / 0.01).exp() * score.f(s)
        });
        let exact = PI * 0.01 / 4.0 * g * g;
        assert!((q.value - exact).abs() < 4.0 * q.std_error + 1e-4 * exact.abs(), "{q:?} vs {exact}");
    }

    /// Brute-force randomized QMC of the three- and four-point terms in the
    /// limiting form: `u`, `v` uniform on the ball and, for the four-point term,
    /// the second pair's offset drawn from a mixture of discs around the
    /// points of the first pair.
    fn brute_force_terms(m: &KernelModel, theta: &Theta, r: f64, n: usize) -> (QmcEstimate, QmcEstimate) {
        let c = m.correlation(&theta.alpha).unwrap();
        let win = sq(5.0);
        let w = Weights {
            form: AsymptoticForm::Limiting,
            window: &win,
        };
        let score = PairScore::new(c, r, &w).unwrap();
        let vol = (PI * r * r).powi(2);
        let t3 = quadrature::qmc_mean(4, n, 8, 5, |x| {
            let u = quadrature::disc_point(r, x[0], x[1]);
            let v = quadrature::disc_point(r, x[2], x[3]);
            let (su, sv) = (u[0].hypot(u[1]), v[0].hypot(v[1]));
            let centered = det3(&c, su, sv, dist(u, v)) - c.one_minus_sq(su) * c.one_minus_sq(sv);
            vol * centered * score.f(su) * score.f(sv)
        });
        let reach = c.range(1e-4);
        let disc = PI * reach * reach;
        let t4 = quadrature::qmc_mean(7, n, 8, 6, |x| {
            let u = quadrature::disc_point(r, x[0], x[1]);
            let v = quadrature::disc_point(r, x[2], x[3]);
            let centers = [[0.0, 0.0], u, [-v[0], -v[1]], [u[0] - v[0], u[1] - v[1]]];
            let k = ((4.0 * x[4]) as usize).min(3);
            let d = quadrature::disc_point(reach, x[5], x[6]);
            let w0 = [centers[k][0] + d[0], centers[k][1] + d[1]];
            let covered = centers.iter().filter(|p| dist(**p, w0) <= reach).count().max(1);
            let pts = [[0.0, 0.0], u, w0, [w0[0] + v[0], w0[1] + v[1]]];
            let mut mat = [0.0; 16];
            for i in 0..4 {
                mat[i * 4 + i] = 1.0;
                for j in (i + 1)..4 {
                    let cv = c.value(dist(pts[i], pts[j]));
                    mat[i * 4 + j] = cv;
                    mat[j * 4 + i] = cv;
                }
            }
            let det = crate::kernel::det_spd_in_place(&mut mat, 4);
            let (su, sv) = (u[0].hypot(u[1]), v[0].hypot(v[1]));
            let centered = det - c.one_minus_sq(su) * c.one_minus_sq(sv);
            vol * centered * score.f(su) * score.f(sv) * 4.0 * disc / covered as f64
        });
        (t3, t4)
    }

    #[test]
    fn sigma22_terms_match_brute_force() {
        let opts = PlugInOptions {
            form: AsymptoticForm::Limiting,
            ..Default::default()
        };
        for m in [KernelModel::gaussian(), KernelModel::laplace()] {
            let theta = theta0();
            let s = sigma22(&m, &theta, &sq(5.0), 0.625, &opts).unwrap();
            let (t3, t4) = brute_force_terms(&m, &theta, 0.625, 1 << 16);
            let l3 = 4000.0;
            let l4 = 1e4;
            let tol3 = 4.0 * l3 * t3.std_error + 1e-3 * s.pair_term;
            assert!((s.triple_term - l3 * t3.value).abs() < tol3, "{}: {s:?} vs {t3:?}", m.label());
            let tol4 = 4.0 * (l4 * t4.std_error).hypot(s.std_error) + 1e-3 * s.pair_term;
            assert!((s.quad_term - l4 * t4.value).abs() < tol4, "{}: {s:?} vs {t4:?}", m.label());
        }
    }

    #[test]
    fn sandwich_scalar_case() {
        let blocks = AsymptoticBlocks {
            sigma11: 0.08,
            sigma12: DVector::from_element(1, 0.0),
            sigma22: DMatrix::from_element(1, 1, 3.0),
            info22: DMatrix::from_element(1, 1, 2.0),
            sandwich: DMatrix::from_row_slice(2, 2, &[0.08 * 100.0, 0.0, 0.0, 3.0 / 4.0]),
            errors: BlockErrors::default(),
        };
        let w = sandwich(&blocks, &Theta::new(10.0, vec![0.1]), &sq(5.0)).unwrap();
        assert_relative_eq!(w.covariance[1][1], 3.0 / (4.0 * 25.0));
        assert_relative_eq!(w.std_errors[0], (0.08 * 100.0 / 25.0f64).sqrt());
        assert_relative_eq!(w.intervals[1][0], 0.1 - WALD_Z * (0.03f64).sqrt());
    }

    #[test]
    fn blocks_assemble_sandwich() {
        let m = KernelModel::gaussian();
        let b = asymptotic_blocks(&m, &theta0(), &sq(5.0), 0.625, &PlugInOptions::default()).unwrap();
        assert_relative_eq!(b.sandwich[(0, 0)], 100.0 * b.sigma11, max_relative = 1e-12);
        let i = b.info22[(0, 0)];
        assert_relative_eq!(b.sandwich[(1, 1)], b.sigma22[(0, 0)] / (i * i), max_relative = 1e-12);
        assert_relative_eq!(b.sandwich[(0, 1)], b.sandwich[(1, 0)]);
        // predicted s.d. of the intensity estimate at n = 5
        assert_relative_eq!((b.sandwich[(0, 0)] / 25.0).sqrt(), 0.581, epsilon = 1e-3);
    }

    #[test]
    fn psd_repair_clips() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = psd_repair(m, "test");
        let e = r.symmetric_eigen().eigenvalues;
        assert!(e.iter().all(|&l| l > -1e-12));
        let ok = DMatrix::from_row_slice(1, 1, &[2.0]);
        assert_eq!(psd_repair(ok.clone(), "test"), ok);
    }

    fn report(label: &str, ic: f64, cl: f64) -> ICReport {
        ICReport {
            model: KernelModel::gaussian(),
            label: label.into(),
            cl_at_optimum: cl,
            penalty: ic + 2.0 * cl,
            ic_value: ic,
            warning: None,
        }
    }

    #[test]
    fn ranking_rules() {
        let one = compare_models(&[report("a", 1.0, 0.0)]);
        assert_eq!(one[0].label, "a");
        let tie = compare_models(&[report("low", 5.0, -3.0), report("high", 5.0, -2.0)]);
        assert_eq!(tie[0].label, "high");
        let three = compare_models(&[report("c", 3.0, 0.0), report("a", 1.0, 0.0), report("b", 2.0, 0.0)]);
        let labels: Vec<_> = three.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["a", "b", "c"]);
    }

    #[test]
    fn ic2_identity_and_positive_penalty() {
        use crate::estimator::{fit_two_step, CLConfig, ParamBox};
        use crate::sampler::{build_spectral_approx, sample_dpp, RngStream};
        let m = KernelModel::gaussian();
        let approx = build_spectral_approx(&m, &theta0(), &sq(5.0), 1e-3).unwrap();
        let p = sample_dpp(&approx, &mut RngStream::new(3, 0)).unwrap();
        let cfg = CLConfig::new(2, 0.625, ParamBox::interval(0.01, 1.0).unwrap()).unwrap();
        let fit = fit_two_step(&m, &p, &cfg).unwrap();
        let rep = ic2(&m, &fit, &sq(5.0), &PlugInOptions::default()).unwrap();
        assert!(rep.penalty > 0.0);
        assert_eq!(rep.ic_value, -2.0 * rep.cl_at_optimum + rep.penalty);
    }
}
