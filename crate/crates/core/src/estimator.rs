//! Two-step composite likelihood estimation: the intensity is estimated by
//! count over area, then the correlation parameter maximizes the `p`-th order
//! composite likelihood built from ordered close tuples.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::geometry::RectWindow;
use crate::kernel::{self, Correlation, KernelModel, DET_FLOOR};
use crate::optimize;
use crate::patterns::{PointPattern, DEFAULT_ORDER_CAP};
use crate::quadrature::{self, Kronecker, QmcEstimate};

/// Grid points per axis in the first optimization stage.
pub const GRID_POINTS: usize = 64;
/// Width at which golden-section refinement stops.
pub const GOLDEN_TOL: f64 = 1e-8;
/// Score tolerance per ordered pair at an interior optimum.
pub const SCORE_TOL_PER_PAIR: f64 = 1e-8;

/// Compact box for the correlation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<BoxRepr> for ParamBox {
    type Error = DppError;

    fn try_from(r: BoxRepr) -> Result<Self> {
        ParamBox::new(r.lower, r.upper)
    }
}

impl From<ParamBox> for BoxRepr {
    fn from(b: ParamBox) -> Self {
        BoxRepr {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(DppError::Validation("parameter box bounds must be non-empty and of equal length".into()));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && *l > 0.0 && u >= l) {
                return Err(DppError::Validation(format!("invalid parameter interval [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    /// `[alpha0 / factor, alpha0 * factor]`.
    pub fn around(alpha0: f64, factor: f64) -> Result<Self> {
        Self::interval(alpha0 / factor, alpha0 * factor)
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, alpha: &[f64]) -> bool {
        alpha.len() == self.dim() && alpha.iter().zip(self.lower.iter().zip(&self.upper)).all(|(a, (l, u))| a >= l && a <= u)
    }
}

/// How the pairwise normalizer accounts for the window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizerForm {
    /// Pair offsets weighted by the set covariance of the window.
    #[default]
    Window,
    /// The window area times the integral over the ball, ignoring edge effects.
    Area,
}

/// Settings of the composite likelihood: order, interaction radius and parameter box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CLConfig {
    pub order: usize,
    pub radius: f64,
    pub alpha_box: ParamBox,
    #[serde(default = "default_cap")]
    pub order_cap: usize,
    #[serde(default)]
    pub normalizer: NormalizerForm,
}

fn default_cap() -> usize {
    DEFAULT_ORDER_CAP
}

impl CLConfig {
    pub fn new(order: usize, radius: f64, alpha_box: ParamBox) -> Result<Self> {
        let c = Self {
            order,
            radius,
            alpha_box,
            order_cap: DEFAULT_ORDER_CAP,
            normalizer: NormalizerForm::Window,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(DppError::Validation(format!("radius must be positive, got {}", self.radius)));
        }
        if self.order < 2 {
            return Err(DppError::Validation(format!("order must be >= 2, got {}", self.order)));
        }
        if self.order > self.order_cap {
            return Err(DppError::OrderTooLarge {
                order: self.order,
                cap: self.order_cap,
            });
        }
        if self.order > 2 && self.normalizer == NormalizerForm::Area {
            return Err(DppError::Validation("the area normalizer is only available for pairs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub boundary_hit: bool,
    /// Ordered tuples whose determinant was floored at the optimum.
    pub degenerate_tuples: usize,
    pub empty_pattern: bool,
    /// Relative standard error of a quasi-Monte Carlo normalizer, when one was used.
    pub normalizer_rel_error: Option<f64>,
    pub normalizer_imprecise: bool,
    pub evaluations: usize,
}

/// Two-step estimate with its composite likelihood diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: KernelModel,
    pub order: usize,
    pub radius: f64,
    pub lambda_hat: f64,
    pub alpha_hat: Vec<f64>,
    pub cl_value: f64,
    pub score_norm: f64,
    pub normalizer: f64,
    /// Number of ordered tuples in the composite likelihood.
    pub n_tuples: usize,
    pub diagnostics: FitDiagnostics,
}

/// Maximum likelihood estimate of the intensity: count over area.
pub fn fit_intensity(pattern: &PointPattern) -> f64 {
    if pattern.is_empty() {
        log::warn!("empty pattern: intensity estimate is 0");
    }
    pattern.count() as f64 / pattern.window().area()
}

/// `int_0^{2 pi} gamma_D(s cos t, s sin t) dt`.
pub fn angular_set_covariance(window: &RectWindow, s: f64) -> f64 {
    let (l1, l2) = (window.side(0), window.side(1));
    if s <= l1.min(l2) {
        return 2.0 * PI * l1 * l2 - 4.0 * s * (l1 + l2) + 2.0 * s * s;
    }
    // by symmetry, four times the first quadrant; the positive parts vanish
    // for t < acos(l1 / s) and t > asin(l2 / s)
    let t_lo = if s > l1 { (l1 / s).acos() } else { 0.0 };
    let t_hi = if s > l2 { (l2 / s).asin() } else { 0.5 * PI };
    if t_hi <= t_lo {
        return 0.0;
    }
    let f = |t: f64| (l1 - s * t.cos()).max(0.0) * (l2 - s * t.sin()).max(0.0);
    4.0 * quadrature::composite(quadrature::gl32(), t_lo, t_hi, 4, f)
}

fn check_planar(model: &KernelModel, window: &RectWindow) -> Result<()> {
    if model.dim() != 2 {
        return Err(DppError::UnsupportedDimension(model.dim()));
    }
    if window.dim() != 2 {
        return Err(DppError::UnsupportedDimension(window.dim()));
    }
    Ok(())
}

/// Radial quadrature of `f(s) * s * angular_set_covariance(s)` on `[0, r]`.
pub(crate) fn radial_window_integral<F: FnMut(f64) -> f64>(window: &RectWindow, r: f64, alpha: f64, mut f: F) -> f64 {
    let panels = quadrature::panel_count(r, 0.5 * alpha, 4);
    let split = r.min(window.side(0).min(window.side(1)));
    let inner = quadrature::composite(quadrature::gl32(), 0.0, split, panels, |s| {
        f(s) * s * angular_set_covariance(window, s)
    });
    if r > split {
        let outer_panels = quadrature::panel_count(r - split, 0.5 * alpha, 4);
        inner
            + quadrature::composite(quadrature::gl32(), split, r, outer_panels, |s| {
                f(s) * s * angular_set_covariance(window, s)
            })
    } else {
        inner
    }
}

/// `K(r; alpha) = int_{|u| <= r} gamma_D(u) (1 - C_alpha(u)^2) du`.
pub fn normalizer_k2(model: &KernelModel, alpha: &[f64], window: &RectWindow, r: f64) -> Result<f64> {
    Ok(normalizer_k2_with_grad(model, alpha, window, r)?.0)
}

/// The pair normalizer and its derivative in `alpha`.
pub fn normalizer_k2_with_grad(model: &KernelModel, alpha: &[f64], window: &RectWindow, r: f64) -> Result<(f64, f64)> {
    check_planar(model, window)?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(DppError::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let c = model.correlation(alpha)?;
    let (k, dk) = normalizer_pair(&c, window, r);
    if !(k > 0.0) {
        return Err(DppError::NormalizerDegenerate(k));
    }
    Ok((k, dk))
}

fn normalizer_pair(c: &Correlation, window: &RectWindow, r: f64) -> (f64, f64) {
    let k = radial_window_integral(window, r, c.alpha(), |s| c.one_minus_sq(s));
    let dk = radial_window_integral(window, r, c.alpha(), |s| -2.0 * c.value(s) * c.d_alpha(s));
    (k, dk)
}

/// Window-free normalizer per unit area, `2 pi int_0^r (1 - C^2) s ds`, with its
/// first and second derivatives in `alpha`.
pub fn limiting_normalizer(c: &Correlation, r: f64) -> [f64; 3] {
    let panels = quadrature::panel_count(r, 0.5 * c.alpha(), 4);
    let rule = quadrature::gl32();
    let mut out = [0.0; 3];
    let h = r / panels as f64;
    for i in 0..panels {
        let lo = h * i as f64;
        for (s, w) in rule.mapped(lo, if i + 1 == panels { r } else { lo + h }) {
            let cv = c.value(s);
            let d1 = c.d_alpha(s);
            let d2 = c.d2_alpha(s);
            let ws = 2.0 * PI * s * w;
            out[0] += ws * c.one_minus_sq(s);
            out[1] += ws * (-2.0 * cv * d1);
            out[2] += ws * (-2.0 * (d1 * d1 + cv * d2));
        }
    }
    out
}

/// Unordered close-pair distances of a pattern, the data of the pairwise likelihood.
#[derive(Debug, Clone)]
pub struct PairSet {
    distances: Vec<f64>,
    window: RectWindow,
    radius: f64,
    form: NormalizerForm,
}

impl PairSet {
    pub fn new(pattern: &PointPattern, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(DppError::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        Ok(Self {
            distances: pattern.close_pair_distances(radius),
            window: pattern.window().clone(),
            radius,
            form: NormalizerForm::Window,
        })
    }

    pub fn with_form(mut self, form: NormalizerForm) -> Self {
        self.form = form;
        self
    }

    pub fn form(&self) -> NormalizerForm {
        self.form
    }

    /// Normalizer and its `alpha` derivative.
    pub fn normalizer(&self, c: &Correlation) -> (f64, f64) {
        match self.form {
            NormalizerForm::Window => normalizer_pair(c, &self.window, self.radius),
            NormalizerForm::Area => {
                let [k, dk, _] = limiting_normalizer(c, self.radius);
                let area = self.window.area();
                (area * k, area * dk)
            }
        }
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Number of ordered pairs.
    pub fn n_ordered(&self) -> usize {
        2 * self.distances.len()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn window(&self) -> &RectWindow {
        &self.window
    }

    /// Pairwise composite likelihood and the number of floored ordered pairs.
    pub fn cl(&self, model: &KernelModel, alpha: &[f64]) -> Result<(f64, usize)> {
        check_planar(model, &self.window)?;
        if self.distances.is_empty() {
            return Err(DppError::NoPairs);
        }
        let c = model.correlation(alpha)?;
        let (k, _) = self.normalizer(&c);
        if !(k > 0.0) {
            return Err(DppError::NormalizerDegenerate(k));
        }
        let mut sum = 0.0;
        let mut degenerate = 0;
        for &d in &self.distances {
            let (v, flag) = c.log_pair(d);
            sum += v;
            degenerate += usize::from(flag);
        }
        Ok((2.0 * (sum - self.distances.len() as f64 * k.ln()), 2 * degenerate))
    }

    /// Gradient of [`PairSet::cl`] in `alpha`.
    pub fn score(&self, model: &KernelModel, alpha: &[f64]) -> Result<Vec<f64>> {
        check_planar(model, &self.window)?;
        if self.distances.is_empty() {
            return Err(DppError::NoPairs);
        }
        let c = model.correlation(alpha)?;
        let (k, dk) = self.normalizer(&c);
        if !(k > 0.0) {
            return Err(DppError::NormalizerDegenerate(k));
        }
        let g: f64 = self.distances.iter().map(|&d| c.dlog_pair(d)).sum();
        Ok(vec![2.0 * (g - self.distances.len() as f64 * dk / k)])
    }
}

/// Second-order composite likelihood over ordered close pairs.
pub fn cl2(model: &KernelModel, alpha: &[f64], pattern: &PointPattern, r: f64) -> Result<f64> {
    Ok(PairSet::new(pattern, r)?.cl(model, alpha)?.0)
}

/// Gradient of [`cl2`] in `alpha`.
pub fn score2(model: &KernelModel, alpha: &[f64], pattern: &PointPattern, r: f64) -> Result<Vec<f64>> {
    PairSet::new(pattern, r)?.score(model, alpha)
}

/// Maximizer of the pairwise composite likelihood with its optimizer diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFit {
    pub alpha_hat: Vec<f64>,
    pub cl_value: f64,
    pub score: Vec<f64>,
    pub normalizer: f64,
    pub n_tuples: usize,
    pub diagnostics: FitDiagnostics,
}

/// Maximizes the pairwise composite likelihood over `alpha_box`.
pub fn fit_alpha2(
    model: &KernelModel,
    pattern: &PointPattern,
    r: f64,
    alpha_box: &ParamBox,
) -> Result<(Vec<f64>, FitDiagnostics)> {
    let fit = fit_alpha2_pairs(model, &PairSet::new(pattern, r)?, alpha_box)?;
    Ok((fit.alpha_hat, fit.diagnostics))
}

pub fn fit_alpha2_pairs(model: &KernelModel, pairs: &PairSet, alpha_box: &ParamBox) -> Result<AlphaFit> {
    if alpha_box.dim() != model.n_alpha() {
        return Err(DppError::InvalidArgument(format!(
            "parameter box has dimension {}, model has {}",
            alpha_box.dim(),
            model.n_alpha()
        )));
    }
    if pairs.distances.is_empty() {
        return Err(DppError::NoPairs);
    }
    let n_pairs = pairs.n_ordered();
    let mut all_degenerate = true;
    let mut objective = |a: &[f64]| match pairs.cl(model, a) {
        Ok((v, deg)) => {
            if deg < n_pairs {
                all_degenerate = false;
            }
            v
        }
        Err(_) => f64::NEG_INFINITY,
    };
    let res = optimize::maximize_box(&mut objective, alpha_box.lower(), alpha_box.upper(), GRID_POINTS, GOLDEN_TOL);
    if all_degenerate || !res.value.is_finite() {
        return Err(DppError::DegenerateLikelihood);
    }
    let mut alpha = res.x.clone();
    let mut evaluations = res.evaluations;
    let cl_value = res.value;
    if !res.boundary && model.n_alpha() == 1 {
        let (lo, hi) = (alpha_box.lower()[0], alpha_box.upper()[0]);
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let a = (alpha[0] - step).max(lo);
        let b = (alpha[0] + step).min(hi);
        let mut score = |x: f64| pairs.score(model, &[x]).map(|s| s[0]).unwrap_or(f64::NAN);
        let (ga, gb) = (score(a), score(b));
        evaluations += 2;
        if ga.is_finite() && gb.is_finite() && ga > 0.0 && gb < 0.0 {
            let tol = 0.01 * SCORE_TOL_PER_PAIR * n_pairs as f64;
            let root = optimize::bracketed_root(&mut score, a, b, ga, gb, tol, 1e-15 * alpha[0]);
            let (v, _) = pairs.cl(model, &[root])?;
            // keep the root only if it is a maximizer to within rounding
            if v >= cl_value - 1e-10 * cl_value.abs().max(1.0) {
                alpha = vec![root];
            }
        }
    }
    let c = model.correlation(&alpha)?;
    let (normalizer, _) = pairs.normalizer(&c);
    let (cl_final, degenerate) = pairs.cl(model, &alpha)?;
    let score = pairs.score(model, &alpha)?;
    Ok(AlphaFit {
        alpha_hat: alpha,
        cl_value: cl_final,
        score,
        normalizer,
        n_tuples: n_pairs,
        diagnostics: FitDiagnostics {
            boundary_hit: res.boundary,
            degenerate_tuples: degenerate,
            evaluations,
            ..FitDiagnostics::default()
        },
    })
}

/// Quasi-Monte Carlo representation of the `p`-th order normalizer
/// `int_{D^p} det[C](x_1..x_p) 1{|x_1 - x_j| <= r} dx`: `x_1` uniform on the
/// window, the other points uniform on the disc of radius `r` around it, and
/// configurations leaving the window dropped. The point set is fixed, so
/// values at different `alpha` share their sampling error.
#[derive(Debug, Clone)]
pub struct QmcNormalizer {
    order: usize,
    scale: f64,
    per_shift: usize,
    /// Pairwise distances of retained configurations, grouped by shift.
    groups: Vec<Vec<f64>>,
}

impl QmcNormalizer {
    pub fn new(window: &RectWindow, r: f64, order: usize, per_shift: usize, shifts: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        if window.dim() != 2 {
            return Err(DppError::UnsupportedDimension(window.dim()));
        }
        if order < 2 {
            return Err(DppError::InvalidArgument(format!("order must be >= 2, got {order}")));
        }
        let dim = 2 * order;
        let seq = Kronecker::new(dim);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut shift = vec![0.0; dim];
        let mut u = vec![0.0; dim];
        let mut pts = vec![[0.0; 2]; order];
        let n_pairs = order * (order - 1) / 2;
        let mut groups = Vec::with_capacity(shifts);
        for _ in 0..shifts.max(2) {
            for s in shift.iter_mut() {
                *s = rng.random::<f64>();
            }
            let mut g = Vec::new();
            for i in 0..per_shift {
                seq.point(i, &shift, &mut u);
                pts[0] = [
                    window.lower()[0] + window.side(0) * u[0],
                    window.lower()[1] + window.side(1) * u[1],
                ];
                let mut inside = true;
                for j in 1..order {
                    let d = quadrature::disc_point(r, u[2 * j], u[2 * j + 1]);
                    pts[j] = [pts[0][0] + d[0], pts[0][1] + d[1]];
                    if !window.contains(&pts[j]) {
                        inside = false;
                        break;
                    }
                }
                if !inside {
                    continue;
                }
                g.reserve(n_pairs);
                for a in 0..order {
                    for b in (a + 1)..order {
                        g.push((pts[a][0] - pts[b][0]).hypot(pts[a][1] - pts[b][1]));
                    }
                }
            }
            groups.push(g);
        }
        Ok(Self {
            order,
            scale: window.area() * (PI * r * r).powi(order as i32 - 1),
            per_shift,
            groups,
        })
    }

    /// Doubles the per-shift size from 4096 until the relative standard error at
    /// `alpha` is below `rel_tol` or `max_per_shift` is reached.
    pub fn adaptive(
        model: &KernelModel,
        alpha: &[f64],
        window: &RectWindow,
        r: f64,
        order: usize,
        seed: u64,
        rel_tol: f64,
        max_per_shift: usize,
    ) -> Result<(Self, QmcEstimate)> {
        let mut n = 4096;
        loop {
            let q = Self::new(window, r, order, n, 8, seed)?;
            let est = q.evaluate(model, alpha)?;
            if est.rel_error() <= rel_tol || 2 * n > max_per_shift {
                return Ok((q, est));
            }
            n *= 2;
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn evaluate(&self, model: &KernelModel, alpha: &[f64]) -> Result<QmcEstimate> {
        let c = model.correlation(alpha)?;
        let p = self.order;
        let n_pairs = p * (p - 1) / 2;
        let mut m = vec![0.0; p * p];
        let means: Vec<f64> = self
            .groups
            .iter()
            .map(|g| {
                let mut acc = 0.0;
                for dists in g.chunks_exact(n_pairs) {
                    acc += if p == 2 {
                        c.one_minus_sq(dists[0])
                    } else {
                        let mut k = 0;
                        for a in 0..p {
                            m[a * p + a] = 1.0;
                            for b in (a + 1)..p {
                                let v = c.value(dists[k]);
                                m[a * p + b] = v;
                                m[b * p + a] = v;
                                k += 1;
                            }
                        }
                        kernel::det_spd_in_place(&mut m, p).max(0.0)
                    };
                }
                self.scale * acc / self.per_shift as f64
            })
            .collect();
        let k = means.len() as f64;
        let mean = means.iter().sum::<f64>() / k;
        let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        Ok(QmcEstimate {
            value: mean,
            std_error: (var / k).sqrt(),
            points: self.per_shift * self.groups.len(),
        })
    }
}

/// Normalizer estimate with its achieved precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizerEstimate {
    pub value: f64,
    pub rel_error: f64,
    /// The relative error target 1e-3 was not met within the budget.
    pub imprecise: bool,
}

pub const NORMALIZER_REL_TOL: f64 = 1e-3;

/// `p`-th order normalizer by randomized quasi-Monte Carlo with a fixed seed.
pub fn normalizer_kp(
    model: &KernelModel,
    alpha: &[f64],
    window: &RectWindow,
    r: f64,
    order: usize,
    seed: u64,
) -> Result<NormalizerEstimate> {
    check_planar(model, window)?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(DppError::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let (_, est) = QmcNormalizer::adaptive(model, alpha, window, r, order, seed, NORMALIZER_REL_TOL, 1 << 17)?;
    if !(est.value > 0.0) {
        return Err(DppError::NormalizerDegenerate(est.value));
    }
    let imprecise = est.rel_error() > NORMALIZER_REL_TOL;
    if imprecise {
        log::warn!(
            "order-{order} normalizer reached relative error {:.2e} (target {NORMALIZER_REL_TOL:.0e})",
            est.rel_error()
        );
    }
    Ok(NormalizerEstimate {
        value: est.value,
        rel_error: est.rel_error(),
        imprecise,
    })
}

/// Ordered close tuples of a pattern, stored through their pairwise distances.
#[derive(Debug, Clone)]
pub struct TupleSet {
    order: usize,
    distances: Vec<f64>,
    count: usize,
}

impl TupleSet {
    pub fn new(pattern: &PointPattern, r: f64, order: usize, cap: usize) -> Result<Self> {
        if order > cap {
            return Err(DppError::OrderTooLarge { order, cap });
        }
        if order < 2 {
            return Err(DppError::InvalidArgument(format!("order must be >= 2, got {order}")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(DppError::InvalidArgument(format!("radius must be positive, got {r}")));
        }
        let pts = pattern.points();
        let mut distances = Vec::new();
        let mut count = 0;
        pattern.for_each_close_tuple(r, order, |t| {
            count += 1;
            for a in 0..t.len() {
                for b in (a + 1)..t.len() {
                    let (x, y) = (pts[t[a]], pts[t[b]]);
                    distances.push((x[0] - y[0]).hypot(x[1] - y[1]));
                }
            }
        });
        Ok(Self {
            order,
            distances,
            count,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Sum over tuples of the floored log determinant, and the number floored.
    pub fn sum_log_det(&self, c: &Correlation) -> (f64, usize) {
        let p = self.order;
        let n_pairs = p * (p - 1) / 2;
        let mut m = vec![0.0; p * p];
        let mut sum = 0.0;
        let mut degenerate = 0;
        for dists in self.distances.chunks_exact(n_pairs) {
            let det = if p == 2 {
                c.one_minus_sq(dists[0])
            } else {
                let mut k = 0;
                for a in 0..p {
                    m[a * p + a] = 1.0;
                    for b in (a + 1)..p {
                        let v = c.value(dists[k]);
                        m[a * p + b] = v;
                        m[b * p + a] = v;
                        k += 1;
                    }
                }
                kernel::det_spd_in_place(&mut m, p)
            };
            if det < DET_FLOOR {
                sum += DET_FLOOR.ln();
                degenerate += 1;
            } else {
                sum += det.ln();
            }
        }
        (sum, degenerate)
    }
}

/// `p`-th order composite likelihood with a quasi-Monte Carlo normalizer.
pub fn clp(model: &KernelModel, alpha: &[f64], tuples: &TupleSet, normalizer: &QmcNormalizer) -> Result<f64> {
    if tuples.is_empty() {
        return Err(DppError::NoTuples { order: tuples.order });
    }
    let c = model.correlation(alpha)?;
    let k = normalizer.evaluate(model, alpha)?.value;
    if !(k > 0.0) {
        return Err(DppError::NormalizerDegenerate(k));
    }
    let (s, _) = tuples.sum_log_det(&c);
    Ok(s - tuples.len() as f64 * k.ln())
}

/// Seed of the quasi-Monte Carlo normalizer used by higher-order fits.
pub const NORMALIZER_SEED: u64 = 0x5eed_0f_c1;

/// Maximizes the `p`-th order composite likelihood; `p = 2` is the pairwise fit.
pub fn fit_alphap(
    model: &KernelModel,
    pattern: &PointPattern,
    r: f64,
    alpha_box: &ParamBox,
    order: usize,
) -> Result<AlphaFit> {
    fit_alphap_capped(model, pattern, r, alpha_box, order, DEFAULT_ORDER_CAP)
}

pub fn fit_alphap_capped(
    model: &KernelModel,
    pattern: &PointPattern,
    r: f64,
    alpha_box: &ParamBox,
    order: usize,
    cap: usize,
) -> Result<AlphaFit> {
    check_planar(model, pattern.window())?;
    if order == 2 {
        return fit_alpha2_pairs(model, &PairSet::new(pattern, r)?, alpha_box);
    }
    let tuples = TupleSet::new(pattern, r, order, cap)?;
    if tuples.is_empty() {
        return Err(DppError::NoTuples { order });
    }
    let mid: Vec<f64> = alpha_box.lower().iter().zip(alpha_box.upper()).map(|(l, u)| 0.5 * (l + u)).collect();
    let (normalizer, est) = QmcNormalizer::adaptive(
        model,
        &mid,
        pattern.window(),
        r,
        order,
        NORMALIZER_SEED,
        NORMALIZER_REL_TOL,
        1 << 15,
    )?;
    let res = optimize::maximize_box(
        |a| clp(model, a, &tuples, &normalizer).unwrap_or(f64::NEG_INFINITY),
        alpha_box.lower(),
        alpha_box.upper(),
        GRID_POINTS,
        GOLDEN_TOL,
    );
    if !res.value.is_finite() {
        return Err(DppError::DegenerateLikelihood);
    }
    let alpha = res.x.clone();
    let c = model.correlation(&alpha)?;
    let (_, degenerate) = tuples.sum_log_det(&c);
    if degenerate == tuples.len() {
        return Err(DppError::DegenerateLikelihood);
    }
    let at = normalizer.evaluate(model, &alpha)?;
    // central difference of the objective; the normalizer uses common random numbers
    let h = 1e-5 * alpha[0];
    let f = |a: f64| clp(model, &[a], &tuples, &normalizer).unwrap_or(f64::NAN);
    let score = vec![(f(alpha[0] + h) - f(alpha[0] - h)) / (2.0 * h)];
    Ok(AlphaFit {
        alpha_hat: alpha,
        cl_value: res.value,
        score,
        normalizer: at.value,
        n_tuples: tuples.len(),
        diagnostics: FitDiagnostics {
            boundary_hit: res.boundary,
            degenerate_tuples: degenerate,
            normalizer_rel_error: Some(est.rel_error()),
            normalizer_imprecise: est.rel_error() > NORMALIZER_REL_TOL,
            evaluations: res.evaluations,
            ..FitDiagnostics::default()
        },
    })
}

/// Two-step estimate: intensity by count over area, then the composite likelihood fit.
pub fn fit_two_step(model: &KernelModel, pattern: &PointPattern, config: &CLConfig) -> Result<FitResult> {
    config.validate()?;
    let lambda_hat = fit_intensity(pattern);
    let fit = if config.order == 2 {
        check_planar(model, pattern.window())?;
        let pairs = PairSet::new(pattern, config.radius)?.with_form(config.normalizer);
        fit_alpha2_pairs(model, &pairs, &config.alpha_box)?
    } else {
        fit_alphap_capped(model, pattern, config.radius, &config.alpha_box, config.order, config.order_cap)?
    };
    let mut diagnostics = fit.diagnostics;
    diagnostics.empty_pattern = pattern.is_empty();
    Ok(FitResult {
        model: *model,
        order: config.order,
        radius: config.radius,
        lambda_hat,
        alpha_hat: fit.alpha_hat,
        cl_value: fit.cl_value,
        score_norm: fit.score.iter().map(|s| s * s).sum::<f64>().sqrt(),
        normalizer: fit.normalizer,
        n_tuples: fit.n_tuples,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn sq(n: f64) -> RectWindow {
        RectWindow::square(n).unwrap()
    }

    #[test]
    fn area_normalizer_ignores_edges() {
        let c = KernelModel::gaussian().correlation(&[0.1]).unwrap();
        let mut gaps = Vec::new();
        for side in [5.0, 50.0] {
            let p = PointPattern::new(vec![[1.0, 1.0], [1.1, 1.0]], sq(side)).unwrap();
            let window = PairSet::new(&p, 0.625).unwrap();
            let area = window.clone().with_form(NormalizerForm::Area);
            let (kw, dw) = window.normalizer(&c);
            let (ka, da) = area.normalizer(&c);
            let [k, dk, _] = limiting_normalizer(&c, 0.625);
            assert_relative_eq!(ka, side * side * k, max_relative = 1e-12);
            assert_relative_eq!(da, side * side * dk, max_relative = 1e-12);
            assert!(ka > kw && da.abs() > dw.abs());
            gaps.push(1.0 - kw / ka);
        }
        // the edge loss shrinks in proportion to the side
        assert_relative_eq!(gaps[0] / gaps[1], 10.0, max_relative = 0.05);
        let cfg = CLConfig {
            normalizer: NormalizerForm::Area,
            ..CLConfig::new(3, 0.5, ParamBox::interval(0.01, 1.0).unwrap()).unwrap()
        };
        assert!(matches!(cfg.validate(), Err(DppError::Validation(_))));
    }

    fn models() -> Vec<KernelModel> {
        vec![
            KernelModel::gaussian(),
            KernelModel::laplace(),
            KernelModel::cauchy(0.5).unwrap(),
            KernelModel::cauchy(1.0).unwrap(),
        ]
    }

    fn uniform(seed: u64, n: usize, side: f64) -> PointPattern {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n).map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side]).collect();
        PointPattern::new(pts, sq(side)).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let p = uniform(1, 250, 5.0);
        assert_eq!(fit_intensity(&p), 10.0);
        assert_eq!(fit_intensity(&PointPattern::empty(sq(5.0)).unwrap()), 0.0);
    }

    #[test]
    fn angular_integral_matches_direct_quadrature() {
        let w = RectWindow::new(vec![0.0, 0.0], vec![2.0, 3.0]).unwrap();
        for s in [0.1, 1.0, 1.9, 2.5, 3.2, 3.6] {
            let h = 2.0 * PI / 512.0;
            let direct: f64 = (0..512)
                .map(|i| {
                    let f = |t: f64| w.set_covariance(&[s * t.cos(), s * t.sin()]);
                    quadrature::adaptive(f, h * i as f64, h * (i + 1) as f64, 1e-13, 1e-16).0
                })
                .sum();
            assert_relative_eq!(angular_set_covariance(&w, s), direct, max_relative = 1e-7, epsilon = 1e-9);
        }
        assert_eq!(angular_set_covariance(&w, 4.0), 0.0);
    }

    #[test]
    fn normalizer_limits() {
        let g = KernelModel::gaussian();
        let tiny = normalizer_k2(&g, &[0.1], &sq(5.0), 1e-4).unwrap();
        assert!(tiny < 1e-10);
        assert!(normalizer_k2(&g, &[0.1], &sq(5.0), 0.0).is_err());
        // alpha -> 0: 1 - C^2 -> 1 and the normalizer is the integral of the set covariance
        let r: f64 = 0.625;
        let exact = PI * r * r * 25.0 - 4.0 * r.powi(3) / 3.0 * 10.0 + 0.5 * r.powi(4);
        let k0 = normalizer_k2(&g, &[1e-4], &sq(5.0), r).unwrap();
        assert_relative_eq!(k0, exact, max_relative = 1e-6);
    }

    #[test]
    fn normalizer_bounded_by_window_free_value() {
        for m in models() {
            let k = normalizer_k2(&m, &[0.1], &sq(5.0), 0.625).unwrap();
            let c = m.correlation(&[0.1]).unwrap();
            let lim = limiting_normalizer(&c, 0.625)[0] * 25.0;
            assert!(k < lim && k > 0.8 * lim, "{k} {lim}");
        }
    }

    #[test]
    fn normalizer_large_radius_uses_clipped_angles() {
        // r larger than one side: compare with tensor quadrature of the defining integral
        let w = RectWindow::new(vec![0.0, 0.0], vec![1.0, 3.0]).unwrap();
        let m = KernelModel::gaussian();
        let r = 1.5;
        let k = normalizer_k2(&m, &[0.3], &w, r).unwrap();
        let c = m.correlation(&[0.3]).unwrap();
        let rule = quadrature::gl64();
        let brute = quadrature::composite(rule, -1.0, 1.0, 16, |x| {
            quadrature::composite(rule, -r, r, 16, |y| {
                let s = x.hypot(y);
                if s <= r {
                    w.set_covariance(&[x, y]) * c.one_minus_sq(s)
                } else {
                    0.0
                }
            })
        });
        assert_relative_eq!(k, brute, max_relative = 2e-4);
    }

    #[test]
    fn normalizer_derivative_matches_differences() {
        for m in models() {
            let (_, dk) = normalizer_k2_with_grad(&m, &[0.1], &sq(5.0), 0.625).unwrap();
            let h = 1e-6;
            let kp = normalizer_k2(&m, &[0.1 + h], &sq(5.0), 0.625).unwrap();
            let km = normalizer_k2(&m, &[0.1 - h], &sq(5.0), 0.625).unwrap();
            assert_relative_eq!(dk, (kp - km) / (2.0 * h), max_relative = 1e-7);
        }
    }

    #[test]
    fn cl2_single_pair_and_invariances() {
        let g = KernelModel::gaussian();
        let p = PointPattern::new(vec![[1.0, 1.0], [1.05, 1.0]], sq(5.0)).unwrap();
        let k = normalizer_k2(&g, &[0.1], &sq(5.0), 0.625).unwrap();
        let c = g.correlation(&[0.1]).unwrap().value(0.05);
        let expect = 2.0 * ((1.0 - c * c).ln() - k.ln());
        assert_relative_eq!(cl2(&g, &[0.1], &p, 0.625).unwrap(), expect, max_relative = 1e-12);
        // a far point changes nothing
        let p2 = PointPattern::new(vec![[1.0, 1.0], [1.05, 1.0], [4.0, 4.0]], sq(5.0)).unwrap();
        assert_eq!(cl2(&g, &[0.1], &p2, 0.625).unwrap(), cl2(&g, &[0.1], &p, 0.625).unwrap());
        let lonely = PointPattern::new(vec![[1.0, 1.0], [4.0, 4.0]], sq(5.0)).unwrap();
        assert!(matches!(cl2(&g, &[0.1], &lonely, 0.625), Err(DppError::NoPairs)));
        assert!(matches!(score2(&g, &[0.1], &lonely, 0.625), Err(DppError::NoPairs)));
    }

    #[test]
    fn cl2_relabel_and_translate() {
        let g = KernelModel::laplace();
        let p = uniform(3, 200, 5.0);
        let mut pts = p.points().to_vec();
        pts.reverse();
        let q = PointPattern::new(pts, sq(5.0)).unwrap();
        let a = cl2(&g, &[0.12], &p, 0.625).unwrap();
        assert_relative_eq!(a, cl2(&g, &[0.12], &q, 0.625).unwrap(), max_relative = 1e-12);
        let t = p.translated([3.25, -7.5]);
        assert_relative_eq!(a, cl2(&g, &[0.12], &t, 0.625).unwrap(), max_relative = 1e-10);
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let p = uniform(4, 250, 5.0);
        for m in models() {
            for _ in 0..20 {
                let a: f64 = 0.03 + 0.3 * rng.random::<f64>();
                let s = score2(&m, &[a], &p, 0.625).unwrap()[0];
                let h = 1e-5 * a;
                let fd = (cl2(&m, &[a + h], &p, 0.625).unwrap() - cl2(&m, &[a - h], &p, 0.625).unwrap()) / (2.0 * h);
                assert!((s - fd).abs() <= 1e-6 * s.abs().max(1.0), "{} a={a}: {s} vs {fd}", m.label());
            }
        }
    }

    #[test]
    fn score_sign_flips_for_one_pair() {
        // one pair: the score changes sign once as alpha crosses the pair's best fit
        let g = KernelModel::gaussian();
        let p = PointPattern::new(vec![[2.0, 2.0], [2.3, 2.0]], sq(5.0)).unwrap();
        let signs: Vec<f64> = (1..200)
            .map(|i| score2(&g, &[0.005 * i as f64], &p, 0.625).unwrap()[0].signum())
            .collect();
        let flips = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(flips, 1);
        assert_eq!(signs[0], 1.0);
    }

    #[test]
    fn fit_on_singleton_box_returns_it() {
        let g = KernelModel::gaussian();
        let p = uniform(8, 250, 5.0);
        let (a, diag) = fit_alpha2(&g, &p, 0.625, &ParamBox::interval(0.1, 0.1).unwrap()).unwrap();
        assert_eq!(a, vec![0.1]);
        assert!(diag.boundary_hit);
    }

    #[test]
    fn fit_errors() {
        let g = KernelModel::gaussian();
        let lonely = PointPattern::new(vec![[1.0, 1.0], [4.0, 4.0]], sq(5.0)).unwrap();
        assert!(matches!(
            fit_alpha2(&g, &lonely, 0.625, &ParamBox::interval(0.01, 1.0).unwrap()),
            Err(DppError::NoPairs)
        ));
        let twins = PointPattern::new(vec![[1.0, 1.0], [1.0, 1.0]], sq(5.0)).unwrap();
        assert!(matches!(
            fit_alpha2(&g, &twins, 0.625, &ParamBox::interval(0.01, 1.0).unwrap()),
            Err(DppError::DegenerateLikelihood)
        ));
        assert!(ParamBox::interval(0.2, 0.1).is_err());
        assert!(ParamBox::interval(0.0, 0.1).is_err());
        assert!(matches!(
            CLConfig::new(5, 0.625, ParamBox::interval(0.01, 1.0).unwrap()),
            Err(DppError::OrderTooLarge { .. })
        ));
    }

    #[test]
    fn fit_satisfies_first_order_condition() {
        // a sparse, mildly clustered pattern has an interior optimum
        let g = KernelModel::gaussian();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut pts = Vec::new();
        while pts.len() < 250 {
            let x: [f64; 2] = [rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0];
            // thin close neighbours to create repulsion at scale ~0.1
            let ok = pts.iter().all(|q: &[f64; 2]| {
                let d = (x[0] - q[0]).hypot(x[1] - q[1]);
                d > 0.1 || rng.random::<f64>() < (d / 0.1).powi(2)
            });
            if ok {
                pts.push(x);
            }
        }
        let p = PointPattern::new(pts, sq(5.0)).unwrap();
        let cfg = CLConfig::new(2, 0.625, ParamBox::interval(0.01, 1.0).unwrap()).unwrap();
        let fit = fit_two_step(&g, &p, &cfg).unwrap();
        assert!(!fit.diagnostics.boundary_hit);
        assert!(fit.score_norm <= SCORE_TOL_PER_PAIR * fit.n_tuples as f64, "{}", fit.score_norm);
        assert_eq!(fit.lambda_hat, 10.0);
        // no better value nearby
        for d in [-1e-4, 1e-4] {
            assert!(cl2(&g, &[fit.alpha_hat[0] + d], &p, 0.625).unwrap() <= fit.cl_value);
        }
    }

    #[test]
    fn qmc_pair_normalizer_agrees_with_quadrature() {
        for m in [KernelModel::gaussian(), KernelModel::laplace()] {
            let k2 = normalizer_k2(&m, &[0.1], &sq(5.0), 0.625).unwrap();
            let est = normalizer_kp(&m, &[0.1], &sq(5.0), 0.625, 2, 11).unwrap();
            assert!((est.value / k2 - 1.0).abs() < 1e-3, "{} vs {k2}", est.value);
        }
    }

    #[test]
    fn triple_normalizer_bounds_and_oracle() {
        let g = KernelModel::gaussian();
        let w = sq(5.0);
        let r: f64 = 0.625;
        // alpha -> 0 limit is the window-restricted volume, bounded by |D| (pi r^2)^2
        let small = normalizer_kp(&g, &[1e-6], &w, r, 3, 1).unwrap();
        let upper = 25.0 * (PI * r * r).powi(2);
        assert!(small.value <= upper && small.value > 0.8 * upper);
        // plain Monte Carlo over D^3
        let est = normalizer_kp(&g, &[0.1], &w, r, 3, 2).unwrap();
        let c = g.correlation(&[0.1]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = 2_000_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let x: Vec<[f64; 2]> = (0..3).map(|_| [rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0]).collect();
            let d01 = (x[0][0] - x[1][0]).hypot(x[0][1] - x[1][1]);
            let d02 = (x[0][0] - x[2][0]).hypot(x[0][1] - x[2][1]);
            if d01 > r || d02 > r {
                continue;
            }
            let d12 = (x[1][0] - x[2][0]).hypot(x[1][1] - x[2][1]);
            let (a, b, cc) = (c.value(d01), c.value(d02), c.value(d12));
            let det = 1.0 - a * a - b * b - cc * cc + 2.0 * a * b * cc;
            acc += det;
            acc2 += det * det;
        }
        let vol = 25f64.powi(3);
        let mean = acc / n as f64;
        let se = ((acc2 / n as f64 - mean * mean) / n as f64).sqrt() * vol;
        let mc = mean * vol;
        let combined = (se * se + (est.value * est.rel_error).powi(2)).sqrt();
        assert!((mc - est.value).abs() < 4.0 * combined, "mc {mc} +- {se}, qmc {}", est.value);
    }

    #[test]
    fn tuple_fit_errors() {
        let g = KernelModel::gaussian();
        let p = PointPattern::new(vec![[1.0, 1.0], [1.05, 1.0], [3.0, 3.0]], sq(5.0)).unwrap();
        assert!(matches!(
            fit_alphap(&g, &p, 0.1, &ParamBox::interval(0.01, 1.0).unwrap(), 3),
            Err(DppError::NoTuples { order: 3 })
        ));
        let pair_fit = fit_alphap(&g, &uniform(2, 250, 5.0), 0.625, &ParamBox::interval(0.01, 1.0).unwrap(), 2).unwrap();
        let (a2, _) = fit_alpha2(&g, &uniform(2, 250, 5.0), 0.625, &ParamBox::interval(0.01, 1.0).unwrap()).unwrap();
        assert_eq!(pair_fit.alpha_hat, a2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn cl2_permutation_invariant(seed in 0u64..1000, a in 0.02f64..0.5) {
            let p = uniform(seed, 120, 5.0);
            let mut pts = p.points().to_vec();
            pts.rotate_left(17);
            let q = PointPattern::new(pts, sq(5.0)).unwrap();
            let m = KernelModel::gaussian();
            let x = cl2(&m, &[a], &p, 0.625).unwrap();
            let y = cl2(&m, &[a], &q, 0.625).unwrap();
            prop_assert!((x - y).abs() <= 1e-10 * x.abs());
        }
    }
}
