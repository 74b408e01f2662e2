//! Derivative-free maximization on compact boxes: a coarse grid followed by
//! golden-section refinement (coordinate-wise sweeps when `q > 1`), and a
//! bracketed root finder used to polish first-order conditions.

/// Outcome of a box-constrained maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Some coordinate of the maximizer sits on the box boundary.
    pub boundary: bool,
    pub evaluations: usize,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[inline]
fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Golden-section search for a maximum of `f` on `[a, b]`, stopping when the
/// bracket is narrower than `tol`. Returns the best point seen and its value.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64, usize) {
    let mut evals = 2;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = clean(f(c));
    let mut fd = clean(f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = clean(f(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = clean(f(d));
        }
        evals += 1;
        if evals > 500 {
            break;
        }
    }
    if fc >= fd {
        (c, fc, evals)
    } else {
        (d, fd, evals)
    }
}

/// Maximizes a scalar function on `[lo, hi]`: `n_grid` equispaced evaluations,
/// then golden section on the two grid cells around the best grid point.
pub fn grid_golden<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, n_grid: usize, tol: f64) -> OptimResult {
    if !(hi > lo) {
        let v = clean(f(lo));
        return OptimResult {
            x: vec![lo],
            value: v,
            boundary: true,
            evaluations: 1,
        };
    }
    let n_grid = n_grid.max(3);
    let step = (hi - lo) / (n_grid - 1) as f64;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| if i + 1 == n_grid { hi } else { lo + step * i as f64 })
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&x| clean(f(x))).collect();
    let mut best = 0;
    for i in 1..n_grid {
        if vals[i] > vals[best] {
            best = i;
        }
    }
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(n_grid - 1)];
    let (mut x, mut v, ev) = golden_section(&mut f, a, b, tol);
    if vals[best] > v {
        x = grid[best];
        v = vals[best];
    }
    // a maximizer within tol of an end of the box is reported on the boundary
    let boundary = x - lo <= tol || hi - x <= tol;
    if boundary {
        let end = if x - lo <= tol { lo } else { hi };
        let fe = clean(f(end));
        if fe >= v {
            x = end;
            v = fe;
        }
    }
    OptimResult {
        x: vec![x],
        value: v,
        boundary,
        evaluations: n_grid + ev + usize::from(boundary),
    }
}

/// Maximizes `f` over the box `[lower, upper]`. One dimension uses
/// [`grid_golden`]; more dimensions start from the best point of a coarse grid
/// and run coordinate-wise golden-section sweeps until no coordinate moves by
/// more than `tol`.
pub fn maximize_box<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    lower: &[f64],
    upper: &[f64],
    n_grid: usize,
    tol: f64,
) -> OptimResult {
    let q = lower.len();
    assert_eq!(q, upper.len(), "box bounds must have equal length");
    if q == 1 {
        return grid_golden(|x| f(&[x]), lower[0], upper[0], n_grid, tol);
    }
    let mut evals = 0;
    // full tensor grid when affordable, otherwise coarser per axis
    let mut per_axis = n_grid.max(3);
    while (per_axis as f64).powi(q as i32) > 2e5 && per_axis > 3 {
        per_axis /= 2;
    }
    let mut x = lower.to_vec();
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; q];
    let mut cur = vec![0.0; q];
    'grid: loop {
        for d in 0..q {
            cur[d] = if upper[d] > lower[d] {
                lower[d] + (upper[d] - lower[d]) * idx[d] as f64 / (per_axis - 1) as f64
            } else {
                lower[d]
            };
        }
        let v = clean(f(&cur));
        evals += 1;
        if v > best {
            best = v;
            x.copy_from_slice(&cur);
        }
        for d in 0..q {
            idx[d] += 1;
            if idx[d] < per_axis {
                continue 'grid;
            }
            idx[d] = 0;
        }
        break;
    }
    let mut width: Vec<f64> = (0..q).map(|d| (upper[d] - lower[d]) / (per_axis - 1) as f64).collect();
    for _sweep in 0..200 {
        let mut moved: f64 = 0.0;
        for d in 0..q {
            if !(upper[d] > lower[d]) {
                continue;
            }
            let a = (x[d] - width[d]).max(lower[d]);
            let b = (x[d] + width[d]).min(upper[d]);
            let mut probe = x.clone();
            let (xd, v, ev) = golden_section(
                |t| {
                    probe[d] = t;
                    f(&probe)
                },
                a,
                b,
                tol,
            );
            evals += ev;
            let step = (xd - x[d]).abs();
            if v > best {
                moved = moved.max(step);
                x[d] = xd;
                best = v;
            }
            // keep the bracket while the optimum runs into its edge, shrink otherwise
            if step < 0.9 * width[d] {
                width[d] = (0.5 * width[d]).max(4.0 * tol);
            }
        }
        if moved <= tol {
            break;
        }
    }
    let boundary = (0..q).any(|d| upper[d] > lower[d] && (x[d] - lower[d] <= tol || upper[d] - x[d] <= tol));
    OptimResult {
        x,
        value: best,
        boundary,
        evaluations: evals,
    }
}

/// Root of `g` in `[a, b]` given `g(a)` and `g(b)` of opposite signs, by the
/// Illinois variant of regula falsi with bisection safeguards. Stops when
/// `|g| <= f_tol` or the bracket is below `x_tol`.
pub fn bracketed_root<G: FnMut(f64) -> f64>(
    mut g: G,
    mut a: f64,
    mut b: f64,
    mut ga: f64,
    mut gb: f64,
    f_tol: f64,
    x_tol: f64,
) -> f64 {
    if ga == 0.0 {
        return a;
    }
    if gb == 0.0 {
        return b;
    }
    debug_assert!(ga.signum() != gb.signum());
    let mut side = 0i32;
    let mut best = if ga.abs() < gb.abs() { (a, ga) } else { (b, gb) };
    for it in 0..200 {
        let mut c = (a * gb - b * ga) / (gb - ga);
        if !(c > a.min(b) && c < a.max(b)) || it % 8 == 7 {
            c = 0.5 * (a + b);
        }
        let gc = g(c);
        if gc.abs() < best.1.abs() {
            best = (c, gc);
        }
        if gc.abs() <= f_tol || (b - a).abs() <= x_tol || !gc.is_finite() {
            break;
        }
        if gc.signum() == gb.signum() {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v, _) = golden_section(|x| -(x - 0.3f64).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-9);
        assert!(v <= 0.0);
    }

    #[test]
    fn grid_golden_handles_boundaries_and_singletons() {
        let r = grid_golden(|x| x, 0.0, 2.0, 64, 1e-8);
        assert_eq!(r.x[0], 2.0);
        assert!(r.boundary);
        let r = grid_golden(|x| -(x - 1.234567).powi(2), 0.0, 2.0, 64, 1e-9);
        assert!((r.x[0] - 1.234567).abs() < 1e-8);
        assert!(!r.boundary);
        let r = grid_golden(|x| -x * x, 0.7, 0.7, 64, 1e-8);
        assert_eq!(r.x[0], 0.7);
    }

    #[test]
    fn grid_golden_ignores_nan() {
        let r = grid_golden(|x| if x < 0.5 { f64::NAN } else { -(x - 0.8f64).powi(2) }, 0.0, 1.0, 64, 1e-9);
        assert!((r.x[0] - 0.8).abs() < 1e-8);
    }

    #[test]
    fn coordinate_sweeps_on_synthetic_surface() {
        // smooth concave surface with correlated coordinates
        let f = |x: &[f64]| {
            let (a, b, c) = (x[0] - 0.2, x[1] - 0.7, x[2] + 0.1);
            -(a * a + 2.0 * b * b + c * c + 0.5 * a * b)
        };
        let r = maximize_box(f, &[-1.0, -1.0, -1.0], &[1.0, 1.0, 1.0], 16, 1e-9);
        assert!((r.x[0] - 0.2).abs() < 1e-6, "{:?}", r.x);
        assert!((r.x[1] - 0.7).abs() < 1e-6);
        assert!((r.x[2] + 0.1).abs() < 1e-6);
        assert!(!r.boundary);
        let r2 = maximize_box(|x| x[0] + x[1], &[0.0, 0.0], &[1.0, 2.0], 8, 1e-9);
        assert!(r2.boundary);
        assert!((r2.x[0] - 1.0).abs() < 1e-8 && (r2.x[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn root_finder() {
        let g = |x: f64| x.powi(3) - 2.0;
        let x = bracketed_root(g, 0.0, 2.0, g(0.0), g(2.0), 1e-14, 0.0);
        assert!((x - 2f64.cbrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn grid_golden_locates_interior_peak(c in 0.05f64..0.95, s in 0.5f64..20.0) {
            let r = grid_golden(|x| -s * (x - c).powi(2), 0.0, 1.0, 64, 1e-9);
            prop_assert!((r.x[0] - c).abs() < 1e-7);
        }
    }
}
