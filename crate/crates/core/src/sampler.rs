//! Simulation of stationary DPPs on rectangles by periodic Fourier
//! approximation: Bernoulli selection of Fourier modes followed by sequential
//! sampling of the resulting projection DPP. A Poisson sampler is included as
//! a baseline.
//!
//! Each lattice frequency `k` is attached to one real basis function: the
//! constant for `k = 0`, `sqrt(2) cos(2 pi k.x/L)` when `k` lies in the upper
//! half-plane and `sqrt(2) sin(2 pi (-k).x/L)` otherwise. Pairing `k` with `-k`
//! this way spans the same eigenspaces with the same eigenvalues as the complex
//! exponentials, so the kernel and hence the DPP are unchanged, while all
//! linear algebra stays real.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::error::{DppError, Result};
use crate::geometry::RectWindow;
use crate::kernel::{self, KernelModel, Theta};
use crate::patterns::{Point, PointPattern};

/// Default cap on the truncation order `M`.
pub const DEFAULT_MAX_ORDER: usize = 256;
/// Proposals per point after which the sampler gives up.
pub const STALL_LIMIT: u64 = 10_000_000;

/// Deterministic random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// What to do with frequencies beyond the truncation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailHandling {
    /// Drop them; building fails when the cap is reached before the tolerance.
    Truncate,
    /// Select them exactly at sampling time by thinning shell blocks.
    Thin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub tail_tol: f64,
    pub max_order: usize,
    pub tail: TailHandling,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tail_tol: 1e-3,
            max_order: DEFAULT_MAX_ORDER,
            tail: TailHandling::Truncate,
        }
    }
}

/// Truncated Fourier eigen-decomposition of `lambda C_alpha` on a rectangle.
#[derive(Debug, Clone)]
pub struct SpectralApprox {
    window: RectWindow,
    model: KernelModel,
    theta: Theta,
    modes: Vec<[i64; 2]>,
    eigenvalues: Vec<f64>,
    truncation_order: usize,
    tail_mass: f64,
    tail: TailHandling,
}

impl SpectralApprox {
    pub fn window(&self) -> &RectWindow {
        &self.window
    }

    pub fn model(&self) -> &KernelModel {
        &self.model
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    /// Lattice indices `k` with `max |k_i| <= M`.
    pub fn modes(&self) -> &[[i64; 2]] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn truncation_order(&self) -> usize {
        self.truncation_order
    }

    /// `lambda |D|` minus the sum of the retained eigenvalues.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn tail_handling(&self) -> TailHandling {
        self.tail
    }

    pub fn eigenvalue_sum(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    fn eigenvalue_at(&self, k: [i64; 2]) -> f64 {
        let l = [self.window.side(0), self.window.side(1)];
        let rho = (k[0] as f64 / l[0]).hypot(k[1] as f64 / l[1]);
        kernel::spectral_radial(&self.model, self.theta.lambda, self.theta.alpha[0], rho).min(1.0)
    }
}

/// Builds the approximation with the smallest order `M` whose omitted mass is at
/// most `tail_tol * lambda |D|`, failing past [`DEFAULT_MAX_ORDER`].
pub fn build_spectral_approx(
    model: &KernelModel,
    theta: &Theta,
    window: &RectWindow,
    tail_tol: f64,
) -> Result<SpectralApprox> {
    build_spectral_approx_with(
        model,
        theta,
        window,
        SpectralOptions {
            tail_tol,
            ..SpectralOptions::default()
        },
    )
}

pub fn build_spectral_approx_with(
    model: &KernelModel,
    theta: &Theta,
    window: &RectWindow,
    opts: SpectralOptions,
) -> Result<SpectralApprox> {
    if model.dim() != 2 {
        return Err(DppError::UnsupportedDimension(model.dim()));
    }
    if window.dim() != 2 {
        return Err(DppError::UnsupportedDimension(window.dim()));
    }
    if !(opts.tail_tol > 0.0 && opts.tail_tol <= 0.1) {
        return Err(DppError::InvalidArgument(format!(
            "tail_tol must lie in (0, 0.1], got {}",
            opts.tail_tol
        )));
    }
    kernel::check_existence(model, theta)?;
    let l = [window.side(0), window.side(1)];
    let total = theta.lambda * window.area();
    let phi = |a: i64, b: i64| {
        let rho = (a as f64 / l[0]).hypot(b as f64 / l[1]);
        kernel::spectral_radial(model, theta.lambda, theta.alpha[0], rho).min(1.0)
    };

    let mut modes = vec![[0i64, 0i64]];
    let mut eigenvalues = vec![phi(0, 0)];
    let mut sum = eigenvalues[0];
    let mut m = 0usize;
    while total - sum > opts.tail_tol * total {
        if m >= opts.max_order {
            match opts.tail {
                TailHandling::Truncate => {
                    return Err(DppError::TruncationFailure {
                        cap: opts.max_order,
                        remaining: (total - sum) / total,
                    })
                }
                TailHandling::Thin => break,
            }
        }
        m += 1;
        let mi = m as i64;
        // shell max(|k1|, |k2|) = m; values depend only on (|k1|, |k2|)
        let row: Vec<f64> = (0..=mi).map(|a| phi(mi, a)).collect();
        let col: Vec<f64> = (0..=mi).map(|a| phi(a, mi)).collect();
        for k1 in -mi..=mi {
            let step = if k1.abs() == mi { 1 } else { 2 * mi as usize };
            for k2 in (-mi..=mi).step_by(step) {
                let v = if k1.abs() == mi { row[k2.unsigned_abs() as usize] } else { col[k1.unsigned_abs() as usize] };
                modes.push([k1, k2]);
                eigenvalues.push(v);
                sum += v;
            }
        }
    }
    Ok(SpectralApprox {
        window: window.clone(),
        model: *model,
        theta: theta.clone(),
        modes,
        eigenvalues,
        truncation_order: m,
        tail_mass: (total - sum).max(0.0),
        tail: opts.tail,
    })
}

/// Frequencies beyond the truncation order selected with probability equal to
/// their eigenvalue, by thinning the blocks `S <= max |k_i| < 2S`.
fn sample_tail_modes(approx: &SpectralApprox, rng: &mut ChaCha8Rng) -> Vec<[i64; 2]> {
    const EXPECTED_CUTOFF: f64 = 1e-8;
    const MAX_SHELL: i64 = 1 << 40;
    let l_max = approx.window.side(0).max(approx.window.side(1));
    let mut out = Vec::new();
    let mut s = approx.truncation_order as i64 + 1;
    let mut seen = HashSet::new();
    while s <= MAX_SHELL {
        let outer = (4 * s - 1) as f64;
        let inner = (2 * s - 1) as f64;
        let count = outer * outer - inner * inner;
        // spectral densities are radially nonincreasing; min |xi| in the block is s / L_max
        let bound = kernel::spectral_radial(&approx.model, approx.theta.lambda, approx.theta.alpha[0], s as f64 / l_max)
            .min(1.0);
        if count * bound < EXPECTED_CUTOFF {
            break;
        }
        let n_cand = if count < 1e15 {
            Binomial::new(count as u64, bound).expect("valid binomial").sample(rng)
        } else {
            Poisson::new(count * bound).expect("valid poisson").sample(rng) as u64
        };
        seen.clear();
        for _ in 0..n_cand {
            let k = loop {
                let k1 = rng.random_range(-(2 * s - 1)..=(2 * s - 1));
                let k2 = rng.random_range(-(2 * s - 1)..=(2 * s - 1));
                if k1.abs().max(k2.abs()) >= s && seen.insert([k1, k2]) {
                    break [k1, k2];
                }
            };
            let p = approx.eigenvalue_at(k) / bound;
            if rng.random::<f64>() < p {
                out.push(k);
            }
        }
        s *= 2;
    }
    out
}

/// Real orthonormal functions attached to a set of selected lattice frequencies.
struct RealBasis {
    lower: [f64; 2],
    inv_side: [f64; 2],
    amp: f64,
    amp0: f64,
    has_const: bool,
    /// (k1 >= 0, k2, is_sin) for frequencies evaluated through the tables.
    table: Vec<(usize, i64, bool)>,
    /// Same for very high frequencies, evaluated directly.
    direct: Vec<(i64, i64, bool)>,
    k1_max: usize,
    k2_max: usize,
    z1: Vec<(f64, f64)>,
    z2: Vec<(f64, f64)>,
}

const TABLE_LIMIT: i64 = 4096;

impl RealBasis {
    fn new(selected: &[[i64; 2]], window: &RectWindow) -> Self {
        let area = window.area();
        let mut b = Self {
            lower: [window.lower()[0], window.lower()[1]],
            inv_side: [1.0 / window.side(0), 1.0 / window.side(1)],
            amp: (2.0 / area).sqrt(),
            amp0: (1.0 / area).sqrt(),
            has_const: false,
            table: Vec::new(),
            direct: Vec::new(),
            k1_max: 0,
            k2_max: 0,
            z1: Vec::new(),
            z2: Vec::new(),
        };
        for &k in selected {
            if k == [0, 0] {
                b.has_const = true;
                continue;
            }
            let upper = k[0] > 0 || (k[0] == 0 && k[1] > 0);
            let (rep, is_sin) = if upper { (k, false) } else { ([-k[0], -k[1]], true) };
            if rep[0].abs().max(rep[1].abs()) <= TABLE_LIMIT {
                b.k1_max = b.k1_max.max(rep[0] as usize);
                b.k2_max = b.k2_max.max(rep[1].unsigned_abs() as usize);
                b.table.push((rep[0] as usize, rep[1], is_sin));
            } else {
                b.direct.push((rep[0], rep[1], is_sin));
            }
        }
        b.z1 = vec![(1.0, 0.0); b.k1_max + 1];
        b.z2 = vec![(1.0, 0.0); b.k2_max + 1];
        b
    }

    fn len(&self) -> usize {
        usize::from(self.has_const) + self.table.len() + self.direct.len()
    }

    /// Fills `out` with the basis values at `x` and returns their squared norm.
    fn eval(&mut self, x: &Point, out: &mut [f64]) -> f64 {
        let t = [
            (x[0] - self.lower[0]) * self.inv_side[0],
            (x[1] - self.lower[1]) * self.inv_side[1],
        ];
        fill_powers(&mut self.z1, t[0]);
        fill_powers(&mut self.z2, t[1]);
        let mut i = 0;
        let mut norm2 = 0.0;
        if self.has_const {
            out[0] = self.amp0;
            norm2 += self.amp0 * self.amp0;
            i = 1;
        }
        for &(k1, k2, is_sin) in &self.table {
            let (ar, ai) = self.z1[k1];
            let (br, bi) = self.z2[k2.unsigned_abs() as usize];
            let bi = if k2 < 0 { -bi } else { bi };
            let v = if is_sin { ar * bi + ai * br } else { ar * br - ai * bi };
            let v = self.amp * v;
            out[i] = v;
            norm2 += v * v;
            i += 1;
        }
        for &(k1, k2, is_sin) in &self.direct {
            let cycles = ((k1 as f64 * t[0]).fract() + (k2 as f64 * t[1]).fract()).fract();
            let (s, c) = (2.0 * PI * cycles).sin_cos();
            let v = self.amp * if is_sin { s } else { c };
            out[i] = v;
            norm2 += v * v;
            i += 1;
        }
        norm2
    }

    /// Upper bound of the squared norm over the window.
    fn bound(&self) -> f64 {
        let n_nonconst = (self.table.len() + self.direct.len()) as f64;
        self.amp * self.amp * n_nonconst + if self.has_const { self.amp0 * self.amp0 } else { 0.0 }
    }
}

/// `z[k] = exp(2 pi i k t)`, by repeated multiplication refreshed every 32 steps.
fn fill_powers(z: &mut [(f64, f64)], t: f64) {
    if z.len() < 2 {
        return;
    }
    let (s1, c1) = (2.0 * PI * t).sin_cos();
    z[0] = (1.0, 0.0);
    for k in 1..z.len() {
        z[k] = if k % 32 == 0 {
            let (s, c) = (2.0 * PI * (k as f64 * t).fract()).sin_cos();
            (c, s)
        } else {
            let (pr, pi) = z[k - 1];
            (pr * c1 - pi * s1, pr * s1 + pi * c1)
        };
    }
}

fn uniform_point(window: &RectWindow, rng: &mut ChaCha8Rng) -> Point {
    loop {
        let x = [
            window.lower()[0] + window.side(0) * rng.random::<f64>(),
            window.lower()[1] + window.side(1) * rng.random::<f64>(),
        ];
        if window.contains(&x) {
            return x;
        }
    }
}

/// Draws one pattern: Bernoulli selection of the modes, then the sequential
/// projection-DPP algorithm with rejection from uniform proposals.
pub fn sample_dpp(approx: &SpectralApprox, stream: &mut RngStream) -> Result<PointPattern> {
    let rng = stream.rng();
    let mut selected = Vec::new();
    for (k, &mu) in approx.modes.iter().zip(&approx.eigenvalues) {
        if rng.random::<f64>() < mu {
            selected.push(*k);
        }
    }
    if approx.tail == TailHandling::Thin {
        selected.extend(sample_tail_modes(approx, rng));
    }
    let points = sample_projection(&selected, &approx.window, rng)?;
    PointPattern::new(points, approx.window.clone())
}

fn batch_size(n_modes: usize) -> usize {
    n_modes.clamp(16, 256)
}

/// Sequential sampler for the projection DPP spanned by the real functions of `selected`.
///
/// Proposals are uniform on the window and pass two rejection stages: first
/// against the bound on `|v(x)|^2` (the diagonal of the full projection
/// kernel), then with probability `|B v(x)|^2 / |v(x)|^2`, where the rows of
/// `B` are an orthonormal basis of the coefficient subspace still available.
/// Each accepted point removes one row through a Householder reflection.
/// Proposals are screened in batches; reflections made inside a batch are
/// applied to the remaining candidates of that batch, and folded into `B` in
/// blocked form at the end of the batch.
fn sample_projection(selected: &[[i64; 2]], window: &RectWindow, rng: &mut ChaCha8Rng) -> Result<Vec<Point>> {
    let mut basis = RealBasis::new(selected, window);
    let n = basis.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let bound = basis.bound();
    let batch = batch_size(n);
    // live rows 0..m0 of `b`; the current basis is (Q b)[0..n_rem] with Q the
    // product of the pending reflections
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut m0 = n;
    let mut n_rem = n;
    let mut v = DMatrix::<f64>::zeros(n, batch);
    let mut cand = vec![([0.0; 2], 0.0); batch];
    let mut refl: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut points = Vec::with_capacity(n);
    let mut proposals = 0u64;

    while n_rem > 0 {
        for (c, slot) in cand.iter_mut().enumerate() {
            loop {
                proposals += 1;
                if proposals > STALL_LIMIT {
                    return Err(DppError::SamplerStall { proposals });
                }
                let x = uniform_point(window, rng);
                let norm2 = basis.eval(&x, v.column_mut(c).as_mut_slice());
                if rng.random::<f64>() * bound < norm2 {
                    *slot = (x, norm2);
                    break;
                }
            }
        }
        let mut w0 = DMatrix::<f64>::zeros(m0, batch);
        w0.gemm(1.0, &b.rows(0, m0), &v, 0.0);
        for (c, &(x, norm2)) in cand.iter().enumerate() {
            let w = w0.column_mut(c).data.into_slice_mut();
            for (u, tau) in &refl {
                let len = u.len();
                let f = tau * dot(u, &w[..len]);
                for (wi, ui) in w[..len].iter_mut().zip(u) {
                    *wi -= f * ui;
                }
            }
            let live = &w[..n_rem];
            let r = dot(live, live);
            if rng.random::<f64>() * norm2 < r {
                points.push(x);
                proposals = 0;
                if n_rem == 1 {
                    n_rem = 0;
                    break;
                }
                // reflection sending w/|w| to -sign * e_last; the last live row is dropped
                let wn = r.sqrt();
                let mut u: Vec<f64> = live.iter().map(|wi| wi / wn).collect();
                let last = n_rem - 1;
                u[last] += if u[last] >= 0.0 { 1.0 } else { -1.0 };
                let tau = 2.0 / dot(&u, &u);
                refl.push((u, tau));
                n_rem -= 1;
            }
        }
        if n_rem > 0 && !refl.is_empty() {
            apply_reflections(&mut b, m0, &refl);
            m0 = n_rem;
            refl.clear();
        }
    }
    Ok(points)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `b[0..m0] <- H_k ... H_1 b[0..m0]` using the compact form
/// `H_k ... H_1 = I - Y T Y^T` with `T` lower triangular.
fn apply_reflections(b: &mut DMatrix<f64>, m0: usize, refl: &[(Vec<f64>, f64)]) {
    let k = refl.len();
    let mut y = DMatrix::<f64>::zeros(m0, k);
    for (i, (u, _)) in refl.iter().enumerate() {
        y.column_mut(i).rows_mut(0, u.len()).copy_from_slice(u);
    }
    let mut t = DMatrix::<f64>::zeros(k, k);
    for (i, (_, tau)) in refl.iter().enumerate() {
        t[(i, i)] = *tau;
        if i > 0 {
            let yu = y.columns(0, i).tr_mul(&y.column(i));
            let row = t.view((0, 0), (i, i)).tr_mul(&yu) * (-tau);
            for j in 0..i {
                t[(i, j)] = row[j];
            }
        }
    }
    let n = b.ncols();
    let mut z = DMatrix::<f64>::zeros(k, n);
    z.gemm(1.0, &y.transpose(), &b.rows(0, m0), 0.0);
    let z2 = &t * &z;
    b.rows_mut(0, m0).gemm(-1.0, &y, &z2, 1.0);
}

/// Homogeneous Poisson pattern with intensity `lambda`.
pub fn sample_poisson(lambda: f64, window: &RectWindow, stream: &mut RngStream) -> Result<PointPattern> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DppError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let mean = lambda * window.area();
    let rng = stream.rng();
    let n = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    let points = (0..n).map(|_| uniform_point(window, rng)).collect();
    PointPattern::new(points, window.clone())
}
