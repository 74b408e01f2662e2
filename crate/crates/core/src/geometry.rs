//! Axis-aligned rectangular observation windows.

use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub struct RectWindow {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WindowRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<WindowRepr> for RectWindow {
    type Error = DppError;

    fn try_from(r: WindowRepr) -> Result<Self> {
        RectWindow::new(r.lower, r.upper)
    }
}

impl From<RectWindow> for WindowRepr {
    fn from(w: RectWindow) -> Self {
        WindowRepr {
            lower: w.lower,
            upper: w.upper,
        }
    }
}

impl RectWindow {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(DppError::Validation(format!(
                "window bounds must be non-empty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && u > l) {
                return Err(DppError::Validation(format!(
                    "window side {i} is empty or not finite: [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The square `[0, n]^2`.
    pub fn square(n: f64) -> Result<Self> {
        Self::new(vec![0.0, 0.0], vec![n, n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn sides(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn side(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn area(&self) -> f64 {
        self.sides().iter().product()
    }

    /// `|D intersect (D - u)| = prod (side_i - |u_i|)_+`.
    pub fn set_covariance(&self, u: &[f64]) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(u)
            .map(|((l, h), ui)| (h - l - ui.abs()).max(0.0))
            .product()
    }

    /// The window shrunk by `r` on every side.
    pub fn erode(&self, r: f64) -> Result<Self> {
        if !(r >= 0.0) {
            return Err(DppError::InvalidArgument(format!("erosion radius must be >= 0, got {r}")));
        }
        if self.sides().iter().any(|&s| r >= 0.5 * s) {
            return Err(DppError::EmptyErosion { radius: r });
        }
        Ok(Self {
            lower: self.lower.iter().map(|l| l + r).collect(),
            upper: self.upper.iter().map(|u| u - r).collect(),
        })
    }

    /// Half-open membership: lower bounds inclusive, upper bounds exclusive.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v < *u)
    }

    /// Translates the window by `shift`.
    pub fn translated(&self, shift: &[f64]) -> Self {
        Self {
            lower: self.lower.iter().zip(shift).map(|(l, s)| l + s).collect(),
            upper: self.upper.iter().zip(shift).map(|(u, s)| u + s).collect(),
        }
    }
}
