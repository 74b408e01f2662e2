//! Planar point patterns: container, fixed-radius neighbour enumeration,
//! pair-correlation estimate and CSV input/output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::geometry::RectWindow;

pub type Point = [f64; 2];

/// Default largest tuple order accepted by [`PointPattern::close_tuples`].
pub const DEFAULT_ORDER_CAP: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    points: Vec<Point>,
    window: RectWindow,
}

impl PointPattern {
    /// Builds a pattern, checking that every point lies in the window.
    pub fn new(points: Vec<Point>, window: RectWindow) -> Result<Self> {
        if window.dim() != 2 {
            return Err(DppError::UnsupportedDimension(window.dim()));
        }
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| !window.contains(&p[..])) {
            return Err(DppError::Validation(format!(
                "point {i} ({}, {}) lies outside the window",
                p[0], p[1]
            )));
        }
        Ok(Self { points, window })
    }

    pub fn empty(window: RectWindow) -> Result<Self> {
        Self::new(Vec::new(), window)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn window(&self) -> &RectWindow {
        &self.window
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The points falling in `sub`, observed in `sub`.
    pub fn restrict(&self, sub: &RectWindow) -> Result<Self> {
        let pts = self.points.iter().copied().filter(|p| sub.contains(&p[..])).collect();
        Self::new(pts, sub.clone())
    }

    /// Pattern and window shifted together by `shift`.
    pub fn translated(&self, shift: Point) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect(),
            window: self.window.translated(&shift),
        }
    }

    /// Calls `f(i, j, distance)` once for every unordered pair `i < j` with distance `<= r`.
    pub fn for_each_close_pair<F: FnMut(usize, usize, f64)>(&self, r: f64, mut f: F) {
        if !(r > 0.0) || self.points.len() < 2 {
            return;
        }
        let grid = Grid::new(&self.points, &self.window, r);
        let r2 = r * r;
        for (i, p) in self.points.iter().enumerate() {
            let (cx, cy) = grid.cell_of(p);
            for gx in cx.saturating_sub(1)..=(cx + 1).min(grid.nx - 1) {
                for gy in cy.saturating_sub(1)..=(cy + 1).min(grid.ny - 1) {
                    for &j in grid.cell(gx, gy) {
                        if j <= i {
                            continue;
                        }
                        let q = &self.points[j];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                        if d2 <= r2 {
                            f(i, j, d2.sqrt());
                        }
                    }
                }
            }
        }
    }

    /// Distances of all unordered pairs within `r` (each pair once).
    pub fn close_pair_distances(&self, r: f64) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each_close_pair(r, |_, _, d| out.push(d));
        out
    }

    /// All ordered index pairs `(i, j)`, `i != j`, with `|x_i - x_j| <= r`.
    pub fn close_pairs(&self, r: f64) -> Result<Vec<(usize, usize)>> {
        check_radius(r)?;
        let mut out = Vec::new();
        self.for_each_close_pair(r, |i, j, _| {
            out.push((i, j));
            out.push((j, i));
        });
        out.sort_unstable();
        Ok(out)
    }

    /// Neighbour lists: for each point, the indices within `r` of it (itself excluded).
    pub fn neighbours(&self, r: f64) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.points.len()];
        self.for_each_close_pair(r, |i, j, _| {
            nb[i].push(j);
            nb[j].push(i);
        });
        for v in nb.iter_mut() {
            v.sort_unstable();
        }
        nb
    }

    /// Calls `f` on every ordered tuple of distinct indices `(i_1, ..., i_p)` with
    /// `|x_{i_1} - x_{i_j}| <= r` for all `j` (only distances to the anchor are constrained).
    pub fn for_each_close_tuple<F: FnMut(&[usize])>(&self, r: f64, order: usize, mut f: F) {
        let nb = self.neighbours(r);
        let mut tuple = vec![0usize; order];
        for (anchor, list) in nb.iter().enumerate() {
            tuple[0] = anchor;
            extend_tuple(list, &mut tuple, 1, &mut f);
        }
    }

    /// Ordered `order`-tuples within `r` of their first element; orders above
    /// [`DEFAULT_ORDER_CAP`] are refused.
    pub fn close_tuples(&self, r: f64, order: usize) -> Result<Vec<Vec<usize>>> {
        self.close_tuples_capped(r, order, DEFAULT_ORDER_CAP)
    }

    pub fn close_tuples_capped(&self, r: f64, order: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
        check_radius(r)?;
        if order < 2 {
            return Err(DppError::InvalidArgument(format!("tuple order must be >= 2, got {order}")));
        }
        if order > cap {
            return Err(DppError::OrderTooLarge { order, cap });
        }
        let mut out = Vec::new();
        self.for_each_close_tuple(r, order, |t| out.push(t.to_vec()));
        out.sort_unstable();
        Ok(out)
    }

    /// Translation edge-corrected estimate of the pair correlation function on
    /// the bins `[edges[k], edges[k+1])`; bins without any pair are `None`.
    pub fn empirical_pcf(&self, edges: &[f64]) -> Result<PcfEstimate> {
        let n = self.points.len();
        if n < 2 {
            return Err(DppError::InvalidArgument("pair correlation needs at least two points".into()));
        }
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || edges[0] < 0.0 {
            return Err(DppError::InvalidArgument("bin edges must be increasing and non-negative".into()));
        }
        let nbins = edges.len() - 1;
        let rmax = edges[nbins];
        let mut sums = vec![0.0; nbins];
        let mut counts = vec![0usize; nbins];
        self.for_each_close_pair(rmax, |i, j, d| {
            if d >= rmax || d < edges[0] {
                return;
            }
            let k = edges.partition_point(|e| *e <= d) - 1;
            let p = &self.points[i];
            let q = &self.points[j];
            let gamma = self.window.set_covariance(&[p[0] - q[0], p[1] - q[1]]);
            if gamma > 0.0 {
                // ordered pairs: each unordered pair counts twice
                sums[k] += 2.0 / gamma;
                counts[k] += 2;
            }
        });
        let area = self.window.area();
        let lambda2 = (n * (n - 1)) as f64 / (area * area);
        let values = (0..nbins)
            .map(|k| {
                if counts[k] == 0 {
                    None
                } else {
                    let annulus = std::f64::consts::PI * (edges[k + 1].powi(2) - edges[k].powi(2));
                    Some(sums[k] / (lambda2 * annulus))
                }
            })
            .collect();
        Ok(PcfEstimate {
            edges: edges.to_vec(),
            values,
            pair_counts: counts,
        })
    }
}

fn extend_tuple<F: FnMut(&[usize])>(list: &[usize], tuple: &mut [usize], depth: usize, f: &mut F) {
    if depth == tuple.len() {
        f(tuple);
        return;
    }
    for &j in list {
        if tuple[1..depth].contains(&j) {
            continue;
        }
        tuple[depth] = j;
        extend_tuple(list, tuple, depth + 1, f);
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(DppError::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    Ok(())
}

/// Binned pair-correlation estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcfEstimate {
    pub edges: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub pair_counts: Vec<usize>,
}

/// Uniform bucket grid with cells at least `r` wide, in CSR layout.
struct Grid {
    x0: f64,
    y0: f64,
    cw: f64,
    ch: f64,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl Grid {
    fn new(points: &[Point], window: &RectWindow, r: f64) -> Self {
        let (x0, y0) = (window.lower()[0], window.lower()[1]);
        let (w, h) = (window.side(0), window.side(1));
        // never more than ~4 cells per point
        let max_cells_axis = ((4 * points.len()) as f64).sqrt().ceil().max(1.0);
        let nx = ((w / r).floor().max(1.0)).min(max_cells_axis) as usize;
        let ny = ((h / r).floor().max(1.0)).min(max_cells_axis) as usize;
        let mut g = Self {
            x0,
            y0,
            cw: w / nx as f64,
            ch: h / ny as f64,
            nx,
            ny,
            starts: vec![0; nx * ny + 1],
            items: vec![0; points.len()],
        };
        let cells: Vec<usize> = points
            .iter()
            .map(|p| {
                let (cx, cy) = g.cell_of(p);
                cx * ny + cy
            })
            .collect();
        for &c in &cells {
            g.starts[c + 1] += 1;
        }
        for c in 0..nx * ny {
            g.starts[c + 1] += g.starts[c];
        }
        let mut fill = g.starts.clone();
        for (i, &c) in cells.iter().enumerate() {
            g.items[fill[c]] = i;
            fill[c] += 1;
        }
        g
    }

    #[inline]
    fn cell_of(&self, p: &Point) -> (usize, usize) {
        let cx = (((p[0] - self.x0) / self.cw).floor().max(0.0) as usize).min(self.nx - 1);
        let cy = (((p[1] - self.y0) / self.ch).floor().max(0.0) as usize).min(self.ny - 1);
        (cx, cy)
    }

    #[inline]
    fn cell(&self, cx: usize, cy: usize) -> &[usize] {
        let c = cx * self.ny + cy;
        &self.items[self.starts[c]..self.starts[c + 1]]
    }
}

/// Reads a point CSV with header `x,y` and checks every point against `window`.
pub fn read_csv(path: &Path, window: &RectWindow) -> Result<PointPattern> {
    let text = fs::read_to_string(path).map_err(|e| DppError::io(path, e))?;
    let parse_err = |line: usize, message: String| DppError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    let mut saw_header = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if !saw_header {
            saw_header = true;
            if rec.len() == 2 && &rec[0] == "x" && &rec[1] == "y" {
                continue;
            }
            return Err(parse_err(line, "expected header \"x,y\"".into()));
        }
        if rec.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let mut xy = [0.0; 2];
        for (k, field) in rec.iter().enumerate() {
            xy[k] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("invalid coordinate {field:?}")))?;
        }
        if !window.contains(&xy) {
            return Err(DppError::Validation(format!(
                "{}:{line}: point ({}, {}) lies outside the window",
                path.display(),
                xy[0],
                xy[1]
            )));
        }
        points.push(xy);
    }
    if !saw_header {
        return Err(parse_err(1, "empty file, expected header \"x,y\"".into()));
    }
    PointPattern::new(points, window.clone())
}

/// Writes the pattern as CSV with header `x,y` using shortest round-trip formatting.
pub fn write_csv(pattern: &PointPattern, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(24 * pattern.count() + 4);
    out.push_str("x,y\n");
    for p in pattern.points() {
        out.push_str(&format!("{:?},{:?}\n", p[0], p[1]));
    }
    let mut f = fs::File::create(path).map_err(|e| DppError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| DppError::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    window: RectWindow,
}

/// `points.csv` -> `points.window.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("window.json")
}

pub fn write_window_json(window: &RectWindow, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&Sidecar { window: window.clone() })?;
    fs::write(path, text + "\n").map_err(|e| DppError::io(path, e))
}

pub fn read_window_json(path: &Path) -> Result<RectWindow> {
    let text = fs::read_to_string(path).map_err(|e| DppError::io(path, e))?;
    let s: Sidecar = serde_json::from_str(&text)
        .map_err(|e| DppError::Validation(format!("{}: {e}", path.display())))?;
    Ok(s.window)
}

/// Reads a pattern whose window is stored in the JSON sidecar next to the CSV.
pub fn read_pattern(csv_path: &Path) -> Result<PointPattern> {
    let window = read_window_json(&sidecar_path(csv_path))?;
    read_csv(csv_path, &window)
}

/// Writes a pattern CSV together with its window sidecar.
pub fn write_pattern(pattern: &PointPattern, csv_path: &Path) -> Result<()> {
    write_csv(pattern, csv_path)?;
    write_window_json(pattern.window(), &sidecar_path(csv_path))
}
