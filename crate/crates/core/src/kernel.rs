//! Parametric stationary DPP kernels `K(x, y) = lambda * C_alpha(x - y)`.
//!
//! Three isotropic correlation families are provided (Gaussian, Laplace and
//! Cauchy with a fixed shape `nu`). Spectral densities use the Fourier
//! convention `F f(xi) = integral f(u) exp(-2 pi i u.xi) du`, under which a
//! DPP with kernel `K` exists iff `0 <= F K <= 1`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{DppError, Result};
use crate::quadrature;

/// Floor applied to reduced joint intensities (determinants of correlation matrices).
pub const DET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Laplace,
    Cauchy,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplace => "laplace",
            KernelFamily::Cauchy => "cauchy",
        };
        f.write_str(name)
    }
}

/// A kernel family together with its fixed (non-estimated) settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct KernelModel {
    family: KernelFamily,
    shape: Option<f64>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(default = "default_dim")]
    dim: usize,
}

fn default_dim() -> usize {
    2
}

impl TryFrom<ModelRepr> for KernelModel {
    type Error = DppError;

    fn try_from(r: ModelRepr) -> Result<Self> {
        KernelModel::new(r.family, r.nu, r.dim)
    }
}

impl From<KernelModel> for ModelRepr {
    fn from(m: KernelModel) -> Self {
        ModelRepr {
            family: m.family,
            nu: m.shape,
            dim: m.dim,
        }
    }
}

impl KernelModel {
    pub fn new(family: KernelFamily, shape: Option<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(DppError::Domain("dimension must be at least 1".into()));
        }
        match (family, shape) {
            (KernelFamily::Cauchy, Some(nu)) => {
                if !(nu > 0.0 && nu.is_finite()) {
                    return Err(DppError::Domain(format!("Cauchy shape must be > 0, got {nu}")));
                }
                // C must be integrable for the spectral density to exist at 0.
                if !(nu + 1.0 > 0.5 * dim as f64) {
                    return Err(DppError::Domain(format!(
                        "Cauchy shape {nu} too small for dimension {dim}"
                    )));
                }
            }
            (KernelFamily::Cauchy, None) => {
                return Err(DppError::Domain("Cauchy kernel requires a shape nu".into()))
            }
            (_, Some(_)) => {
                return Err(DppError::Domain(format!("{family} kernel takes no shape parameter")))
            }
            (_, None) => {}
        }
        Ok(Self { family, shape, dim })
    }

    pub fn gaussian() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            shape: None,
            dim: 2,
        }
    }

    pub fn laplace() -> Self {
        Self {
            family: KernelFamily::Laplace,
            shape: None,
            dim: 2,
        }
    }

    pub fn cauchy(nu: f64) -> Result<Self> {
        Self::new(KernelFamily::Cauchy, Some(nu), 2)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn shape(&self) -> Option<f64> {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of estimated correlation parameters `q`.
    pub fn n_alpha(&self) -> usize {
        1
    }

    /// Short label such as `cauchy(nu=0.5)`.
    pub fn label(&self) -> String {
        match self.shape {
            Some(nu) => format!("{}(nu={})", self.family, nu),
            None => self.family.to_string(),
        }
    }

    /// Validates `alpha` and returns the radial correlation function it selects.
    pub fn correlation(&self, alpha: &[f64]) -> Result<Correlation> {
        if alpha.len() != self.n_alpha() {
            return Err(DppError::Domain(format!(
                "expected {} correlation parameter(s), got {}",
                self.n_alpha(),
                alpha.len()
            )));
        }
        let a = alpha[0];
        if !(a > 0.0 && a.is_finite()) {
            return Err(DppError::Domain(format!("alpha must be positive and finite, got {a}")));
        }
        Ok(Correlation {
            family: self.family,
            alpha: a,
            nu: self.shape.unwrap_or(0.0),
        })
    }
}

/// Parameter point `theta = (lambda, alpha)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub lambda: f64,
    pub alpha: Vec<f64>,
}

impl Theta {
    pub fn new(lambda: f64, alpha: Vec<f64>) -> Self {
        Self { lambda, alpha }
    }

    pub fn validate(&self, model: &KernelModel) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(DppError::Domain(format!("lambda must be positive, got {}", self.lambda)));
        }
        model.correlation(&self.alpha).map(|_| ())
    }
}

/// Radial correlation function `C_alpha(|u|)` of one family at a fixed `alpha`,
/// with its analytic derivatives in `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    family: KernelFamily,
    alpha: f64,
    nu: f64,
}

impl Correlation {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        let a = self.alpha;
        match self.family {
            KernelFamily::Gaussian => (-(s * s) / (a * a)).exp(),
            KernelFamily::Laplace => (-s / a).exp(),
            KernelFamily::Cauchy => (-(self.nu + 1.0) * (s * s / (a * a)).ln_1p()).exp(),
        }
    }

    /// `1 - C(s)^2`, evaluated without cancellation for small `s`.
    #[inline]
    pub fn one_minus_sq(&self, s: f64) -> f64 {
        let a = self.alpha;
        match self.family {
            KernelFamily::Gaussian => -(-2.0 * s * s / (a * a)).exp_m1(),
            KernelFamily::Laplace => -(-2.0 * s / a).exp_m1(),
            KernelFamily::Cauchy => -(-2.0 * (self.nu + 1.0) * (s * s / (a * a)).ln_1p()).exp_m1(),
        }
    }

    /// `d C / d alpha` at distance `s`.
    #[inline]
    pub fn d_alpha(&self, s: f64) -> f64 {
        let a = self.alpha;
        match self.family {
            KernelFamily::Gaussian => 2.0 * s * s / (a * a * a) * self.value(s),
            KernelFamily::Laplace => s / (a * a) * self.value(s),
            KernelFamily::Cauchy => {
                let w = 1.0 + s * s / (a * a);
                2.0 * (self.nu + 1.0) * s * s / (a * a * a) * w.powf(-(self.nu + 2.0))
            }
        }
    }

    /// `d^2 C / d alpha^2` at distance `s`.
    #[inline]
    pub fn d2_alpha(&self, s: f64) -> f64 {
        let a = self.alpha;
        match self.family {
            KernelFamily::Gaussian => {
                let k = 2.0 * s * s / (a * a * a);
                (k * k - 6.0 * s * s / a.powi(4)) * self.value(s)
            }
            KernelFamily::Laplace => {
                let k = s / (a * a);
                (k * k - 2.0 * s / (a * a * a)) * self.value(s)
            }
            KernelFamily::Cauchy => {
                let nu = self.nu;
                let w = 1.0 + s * s / (a * a);
                2.0 * (nu + 1.0)
                    * s
                    * s
                    * (-3.0 / a.powi(4) * w.powf(-(nu + 2.0))
                        + (nu + 2.0) * 2.0 * s * s / a.powi(6) * w.powf(-(nu + 3.0)))
            }
        }
    }

    /// `log(1 - C(s)^2)` with the determinant floor; the flag reports flooring.
    #[inline]
    pub fn log_pair(&self, s: f64) -> (f64, bool) {
        let h = self.one_minus_sq(s);
        if h < DET_FLOOR {
            (DET_FLOOR.ln(), true)
        } else {
            (h.ln(), false)
        }
    }

    /// `d/d alpha log(1 - C(s)^2)`; zero where the determinant is floored.
    #[inline]
    pub fn dlog_pair(&self, s: f64) -> f64 {
        let h = self.one_minus_sq(s);
        if h < DET_FLOOR {
            return 0.0;
        }
        -2.0 * self.value(s) * self.d_alpha(s) / h
    }

    /// `d^2/d alpha^2 log(1 - C(s)^2)`; zero where the determinant is floored.
    #[inline]
    pub fn d2log_pair(&self, s: f64) -> f64 {
        let h = self.one_minus_sq(s);
        if h < DET_FLOOR {
            return 0.0;
        }
        let c = self.value(s);
        let dc = self.d_alpha(s);
        let d2c = self.d2_alpha(s);
        let dh = -2.0 * c * dc;
        let d2h = -2.0 * (dc * dc + c * d2c);
        d2h / h - (dh / h) * (dh / h)
    }

    /// Distance beyond which `|C| < level` (the families are monotone in `s`).
    pub fn range(&self, level: f64) -> f64 {
        let a = self.alpha;
        let l = level.clamp(f64::MIN_POSITIVE, 1.0);
        match self.family {
            KernelFamily::Gaussian => a * (-l.ln()).sqrt(),
            KernelFamily::Laplace => -a * l.ln(),
            KernelFamily::Cauchy => a * (l.powf(-1.0 / (self.nu + 1.0)) - 1.0).max(0.0).sqrt(),
        }
    }

    /// Integral of `C^2` over the plane (radial quadrature; closed form for d = 2 families).
    pub fn integral_sq_plane(&self) -> f64 {
        let scale = self.alpha;
        let (v, _) = quadrature::adaptive_semi_infinite(
            |s| {
                let c = self.value(s);
                2.0 * PI * s * c * c
            },
            0.0,
            scale,
            1e-11,
        );
        v
    }
}

#[inline]
fn norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `C_alpha(u)`.
pub fn corr(model: &KernelModel, alpha: &[f64], u: &[f64]) -> Result<f64> {
    check_dim(model, u)?;
    Ok(model.correlation(alpha)?.value(norm(u)))
}

fn check_dim(model: &KernelModel, u: &[f64]) -> Result<()> {
    if u.len() != model.dim() {
        return Err(DppError::Domain(format!(
            "point has {} coordinates, model dimension is {}",
            u.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// `lambda` times the Fourier transform of `C_alpha` at frequency `xi`.
pub fn spectral_density(model: &KernelModel, theta: &Theta, xi: &[f64]) -> Result<f64> {
    theta.validate(model)?;
    check_dim(model, xi)?;
    Ok(spectral_radial(model, theta.lambda, theta.alpha[0], norm(xi)))
}

/// Radial spectral density at `|xi| = rho`; inputs assumed validated.
pub fn spectral_radial(model: &KernelModel, lambda: f64, alpha: f64, rho: f64) -> f64 {
    let d = model.dim() as f64;
    match model.family() {
        KernelFamily::Gaussian => {
            lambda * (PI.sqrt() * alpha).powf(d) * (-(PI * alpha * rho).powi(2)).exp()
        }
        KernelFamily::Laplace => {
            let c = 2f64.powf(d) * PI.powf(0.5 * (d - 1.0)) * gamma(0.5 * (d + 1.0));
            lambda * c * alpha.powf(d) * (1.0 + 4.0 * (PI * alpha * rho).powi(2)).powf(-0.5 * (d + 1.0))
        }
        KernelFamily::Cauchy => {
            let nu = model.shape().expect("validated Cauchy model has a shape");
            lambda * cauchy_spectral_unit(nu, d, alpha, rho)
        }
    }
}

/// Fourier transform of `(1 + |u|^2/alpha^2)^{-(nu+1)}` in `d` dimensions.
///
/// Uses the Gaussian scale mixture
/// `(1 + s^2/a^2)^{-(nu+1)} = Gamma(nu+1)^{-1} int t^nu e^{-t} e^{-t s^2/a^2} dt`,
/// which turns the radial (Hankel) transform into a positive, non-oscillating
/// integral over `v = log t`:
/// `(pi a^2)^{d/2} / Gamma(nu+1) * int exp(b v - e^v - c e^{-v}) dv`,
/// with `b = nu + 1 - d/2` and `c = (pi a rho)^2`.
fn cauchy_spectral_unit(nu: f64, d: f64, alpha: f64, rho: f64) -> f64 {
    let b = nu + 1.0 - 0.5 * d;
    let c = (PI * alpha * rho).powi(2);
    let log_f = |v: f64| b * v - v.exp() - c * (-v).exp();
    // log-concave integrand: locate the mode, then integrate until it has dropped by e^-60.
    let v_star = (0.5 * (b + (b * b + 4.0 * c).sqrt())).ln();
    let peak = log_f(v_star);
    let drop = 60.0;
    let mut step = 1.0;
    let mut lo = v_star - step;
    while peak - log_f(lo) < drop {
        step *= 2.0;
        lo = v_star - step;
    }
    step = 1.0;
    let mut hi = v_star + step;
    while peak - log_f(hi) < drop {
        step *= 2.0;
        hi = v_star + step;
    }
    let (integral, _) =
        quadrature::adaptive(|v| (log_f(v) - peak).exp(), lo, hi, 1e-12, 0.0);
    let log_pref = 0.5 * d * (PI * alpha * alpha).ln() - statrs::function::gamma::ln_gamma(nu + 1.0);
    (log_pref + peak).exp() * integral
}

/// Existence margin `1 - sup F K_theta`; errors when the kernel is not a valid DPP kernel.
///
/// The supremum is attained at `xi = 0` for the three monotone families.
pub fn check_existence(model: &KernelModel, theta: &Theta) -> Result<f64> {
    theta.validate(model)?;
    let sup = spectral_radial(model, theta.lambda, theta.alpha[0], 0.0);
    let margin = 1.0 - sup;
    if margin < 0.0 {
        return Err(DppError::ExistenceViolated { sup });
    }
    Ok(margin)
}

/// Determinant of a correlation matrix, floored at [`DET_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointIntensity {
    pub value: f64,
    pub degenerate: bool,
}

/// The `p x p` matrix `(C_alpha(x_i - x_j))`.
pub fn corr_matrix<P: AsRef<[f64]>>(model: &KernelModel, alpha: &[f64], points: &[P]) -> Result<DMatrix<f64>> {
    let c = model.correlation(alpha)?;
    for p in points {
        check_dim(model, p.as_ref())?;
    }
    let p = points.len();
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            c.value(distance(points[i].as_ref(), points[j].as_ref()))
        }
    }))
}

/// Determinant of a small symmetric positive semi-definite matrix stored
/// row-major in `m` (destroyed). Returns 0 when a pivot is not positive.
pub fn det_spd_in_place(m: &mut [f64], p: usize) -> f64 {
    let mut det = 1.0;
    for k in 0..p {
        let pivot = m[k * p + k];
        if !(pivot > 0.0) {
            return 0.0;
        }
        det *= pivot;
        for i in (k + 1)..p {
            let f = m[i * p + k] / pivot;
            if f != 0.0 {
                for j in (k + 1)..p {
                    m[i * p + j] -= f * m[k * p + j];
                }
            }
        }
    }
    det
}

/// `det [C_alpha](x_1, ..., x_p)`, floored at [`DET_FLOOR`].
pub fn reduced_joint_intensity<P: AsRef<[f64]>>(
    model: &KernelModel,
    alpha: &[f64],
    points: &[P],
) -> Result<JointIntensity> {
    let c = model.correlation(alpha)?;
    for p in points {
        check_dim(model, p.as_ref())?;
    }
    let p = points.len();
    let raw = match p {
        0 => return Err(DppError::InvalidArgument("at least one point is required".into())),
        1 => 1.0,
        2 => c.one_minus_sq(distance(points[0].as_ref(), points[1].as_ref())),
        _ => {
            let mut m = vec![0.0; p * p];
            for i in 0..p {
                m[i * p + i] = 1.0;
                for j in (i + 1)..p {
                    let v = c.value(distance(points[i].as_ref(), points[j].as_ref()));
                    m[i * p + j] = v;
                    m[j * p + i] = v;
                }
            }
            det_spd_in_place(&mut m, p)
        }
    };
    Ok(if raw < DET_FLOOR {
        JointIntensity {
            value: DET_FLOOR,
            degenerate: true,
        }
    } else {
        JointIntensity {
            value: raw.min(1.0),
            degenerate: false,
        }
    })
}

/// `det [K_theta](x_1, ..., x_p) = lambda^p det [C_alpha]`.
pub fn joint_intensity<P: AsRef<[f64]>>(
    model: &KernelModel,
    theta: &Theta,
    points: &[P],
) -> Result<JointIntensity> {
    theta.validate(model)?;
    let r = reduced_joint_intensity(model, &theta.alpha, points)?;
    Ok(JointIntensity {
        value: theta.lambda.powi(points.len() as i32) * r.value,
        degenerate: r.degenerate,
    })
}

/// Gradient in `alpha` of `log det [C_alpha]`, i.e. `tr(C^{-1} dC/d alpha)`.
pub fn grad_log_reduced<P: AsRef<[f64]>>(model: &KernelModel, alpha: &[f64], points: &[P]) -> Result<Vec<f64>> {
    let c = model.correlation(alpha)?;
    let det = reduced_joint_intensity(model, alpha, points)?;
    if det.degenerate {
        return Err(DppError::DegenerateConfiguration);
    }
    let p = points.len();
    if p == 1 {
        return Ok(vec![0.0; model.n_alpha()]);
    }
    if p == 2 {
        return Ok(vec![c.dlog_pair(distance(points[0].as_ref(), points[1].as_ref()))]);
    }
    let m = corr_matrix(model, alpha, points)?;
    let inv = m
        .cholesky()
        .ok_or(DppError::DegenerateConfiguration)?
        .inverse();
    let mut tr = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                let dc = c.d_alpha(distance(points[i].as_ref(), points[j].as_ref()));
                tr += inv[(i, j)] * dc;
            }
        }
    }
    Ok(vec![tr])
}
