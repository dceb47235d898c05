//! Time discretization shared by every operator and simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Operators with singular kernels refuse grids coarser than this.
pub const MIN_OPERATOR_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Roughness {
    Rough,
    Standard,
    Smooth,
}

/// Hurst index of the driving noise, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParameter(f64);

impl HurstParameter {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta > 0.0 && beta < 1.0 {
            Ok(Self(beta))
        } else {
            Err(Error::param("beta", format!("{beta} is not in (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn roughness(self) -> Roughness {
        if self.0 < 0.5 {
            Roughness::Rough
        } else if self.0 > 0.5 {
            Roughness::Smooth
        } else {
            Roughness::Standard
        }
    }

    pub fn is_standard(self) -> bool {
        self.roughness() == Roughness::Standard
    }
}

impl TryFrom<f64> for HurstParameter {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<HurstParameter> for f64 {
    fn from(h: HurstParameter) -> f64 {
        h.0
    }
}

/// Uniform partition of `[0, t_end]` into `n_steps` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    t_end: f64,
    n_steps: usize,
}

impl Grid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::param(
                "T",
                format!("horizon {t_end} must be positive"),
            ));
        }
        if n_steps < 2 {
            return Err(Error::param("n_steps", format!("{n_steps} < 2")));
        }
        Ok(Self { t_end, n_steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.node(k)).collect()
    }

    /// Same horizon, `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            t_end: self.t_end,
            n_steps: self.n_steps * factor,
        }
    }

    pub(crate) fn require_operator_resolution(&self) -> Result<()> {
        if self.n_steps < MIN_OPERATOR_STEPS {
            Err(Error::GridTooCoarse {
                n_steps: self.n_steps,
                min: MIN_OPERATOR_STEPS,
            })
        } else {
            Ok(())
        }
    }
}

/// An H-valued function sampled on a grid: one row of node values per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    n_modes: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid, n_modes: usize) -> Self {
        Self {
            grid,
            n_modes,
            values: vec![0.0; n_modes * grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: Grid, n_modes: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid, n_modes);
        for m in 0..n_modes {
            for (k, v) in out.mode_mut(m).iter_mut().enumerate() {
                *v = f(m, grid.node(k));
            }
        }
        out
    }

    pub fn scalar(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, 1, |_, t| f(t))
    }

    /// Builds from per-mode rows; every row must have `n_steps + 1` entries.
    pub fn from_rows(grid: Grid, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::param("n_modes", "at least one mode required"));
        }
        let n = grid.n_nodes();
        let mut values = Vec::with_capacity(rows.len() * n);
        for row in &rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                    context: "grid function row",
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            grid,
            n_modes: rows.len(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn mode(&self, m: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.values[m * n..(m + 1) * n]
    }

    pub fn mode_mut(&mut self, m: usize) -> &mut [f64] {
        let n = self.grid.n_nodes();
        &mut self.values[m * n..(m + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.grid.n_nodes())
    }

    pub fn value(&self, m: usize, k: usize) -> f64 {
        self.values[m * self.grid.n_nodes() + k]
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        let n = self.grid.n_nodes();
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                context,
                mode: i / n,
                node: i % n,
            }),
        }
    }

    /// Applies `op` row by row, producing a function on the same grid.
    pub(crate) fn map_rows(&self, mut op: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.rows() {
            values.extend(op(row));
        }
        Self {
            grid: self.grid,
            n_modes: self.n_modes,
            values,
        }
    }

    /// Trapezoidal `L²(0,T;H)` norm.
    pub fn l2_norm(&self) -> f64 {
        let dt = self.grid.dt();
        self.rows()
            .map(|row| trapezoid_sq(row, dt))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn reversed_in_time(&self) -> Self {
        self.map_rows(|row| row.iter().rev().copied().collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map_rows(|row| row.iter().map(|v| c * v).collect())
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        if self.grid != other.grid || self.n_modes != other.n_modes {
            return Err(Error::GridMismatch("axpy operands differ in shape".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + a * y)
            .collect();
        Ok(Self {
            grid: self.grid,
            n_modes: self.n_modes,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub(crate) fn trapezoid_sq(row: &[f64], dt: f64) -> f64 {
    let n = row.len();
    let inner: f64 = row[1..n - 1].iter().map(|v| v * v).sum();
    dt * (inner + 0.5 * (row[0] * row[0] + row[n - 1] * row[n - 1]))
}
