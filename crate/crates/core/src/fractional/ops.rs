//! Riemann-Liouville integrals and fractional derivatives on a uniform grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::quad::gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// `0+`: memory of the past.
    Left,
    /// `T-`: memory of the future.
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Integral,
    Derivative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracOpSpec {
    pub alpha: f64,
    pub side: Side,
    pub kind: OpKind,
}

impl FracOpSpec {
    pub fn new(alpha: f64, side: Side, kind: OpKind) -> Result<Self> {
        let ok = match kind {
            OpKind::Integral => alpha > 0.0 && alpha <= 1.0,
            OpKind::Derivative => alpha > 0.0 && alpha < 1.0,
        };
        if !ok || !alpha.is_finite() {
            return Err(Error::param(
                "alpha",
                format!("{alpha} outside the admissible range for {kind:?}"),
            ));
        }
        Ok(Self { alpha, side, kind })
    }

    pub fn integral(alpha: f64, side: Side) -> Result<Self> {
        Self::new(alpha, side, OpKind::Integral)
    }

    pub fn derivative(alpha: f64, side: Side) -> Result<Self> {
        Self::new(alpha, side, OpKind::Derivative)
    }
}

/// Applies `spec` mode-wise.
///
/// Integrals use product trapezoid weights (exact for piecewise-linear data);
/// derivatives use Grünwald-Letnikov weights. Right-sided operators are the
/// left-sided ones conjugated by time reversal.
pub fn frac_apply(spec: FracOpSpec, f: &GridFunction) -> Result<GridFunction> {
    let spec = FracOpSpec::new(spec.alpha, spec.side, spec.kind)?;
    f.grid().require_operator_resolution()?;
    f.check_finite("frac_apply input")?;
    let dt = f.grid().dt();
    let left = |row: &[f64]| match spec.kind {
        OpKind::Integral => rl_integral_nodes(row, spec.alpha, dt),
        OpKind::Derivative => gl_derivative(row, spec.alpha, dt),
    };
    let out = match spec.side {
        Side::Left => f.map_rows(left),
        Side::Right => f.map_rows(|row| {
            let rev: Vec<f64> = row.iter().rev().copied().collect();
            let mut v = left(&rev);
            v.reverse();
            v
        }),
    };
    out.check_finite("frac_apply output")?;
    Ok(out)
}

/// `D^α = d/dt ∘ I^{1-α}`, the second discretization of the left derivative.
pub fn derivative_via_integral(alpha: f64, f: &GridFunction) -> Result<GridFunction> {
    FracOpSpec::derivative(alpha, Side::Left)?;
    f.grid().require_operator_resolution()?;
    let dt = f.grid().dt();
    Ok(f.map_rows(|row| {
        let g = rl_integral_nodes(row, 1.0 - alpha, dt);
        let n = g.len() - 1;
        let mut d = vec![0.0; n + 1];
        d[0] = (g[1] - g[0]) / dt;
        for k in 1..n {
            d[k] = (g[k + 1] - g[k - 1]) / (2.0 * dt);
        }
        d[n] = (g[n] - g[n - 1]) / dt;
        d
    }))
}

/// Left RL integral of the piecewise-linear interpolant of `row`, at every node.
pub(crate) fn rl_integral_nodes(row: &[f64], alpha: f64, dt: f64) -> Vec<f64> {
    let n = row.len() - 1;
    let a1 = alpha + 1.0;
    let pw: Vec<f64> = (0..=n + 1).map(|k| (k as f64).powf(a1)).collect();
    // weight for node j at distance d = m - j, 1 <= d <= m - 1
    let inner: Vec<f64> = (0..=n)
        .map(|d| {
            if d == 0 {
                1.0
            } else {
                pw[d + 1] + pw[d - 1] - 2.0 * pw[d]
            }
        })
        .collect();
    let scale = dt.powf(alpha) / gamma(alpha + 2.0);
    let mut out = vec![0.0; n + 1];
    for m in 1..=n {
        let mf = m as f64;
        let a0 = pw[m - 1] - (mf - alpha - 1.0) * mf.powf(alpha);
        let mut acc = a0 * row[0];
        for j in 1..=m {
            acc += inner[m - j] * row[j];
        }
        out[m] = scale * acc;
    }
    out
}

/// Left RL integral at every node of a piecewise-constant function with cell
/// values `cells` (length `n`).
pub(crate) fn rl_integral_cells(cells: &[f64], alpha: f64, dt: f64) -> Vec<f64> {
    let n = cells.len();
    let pw: Vec<f64> = (0..=n).map(|k| (k as f64).powf(alpha)).collect();
    let scale = dt.powf(alpha) / gamma(alpha + 1.0);
    let mut out = vec![0.0; n + 1];
    for m in 1..=n {
        let mut acc = 0.0;
        for (j, g) in cells[..m].iter().enumerate() {
            acc += g * (pw[m - j] - pw[m - j - 1]);
        }
        out[m] = scale * acc;
    }
    out
}

pub(crate) fn gl_weights(alpha: f64, n: usize) -> Vec<f64> {
    let mut w = vec![1.0; n + 1];
    for j in 1..=n {
        w[j] = w[j - 1] * (1.0 - (alpha + 1.0) / j as f64);
    }
    w
}

pub(crate) fn gl_derivative(row: &[f64], alpha: f64, dt: f64) -> Vec<f64> {
    let n = row.len() - 1;
    let w = gl_weights(alpha, n);
    let scale = dt.powf(-alpha);
    (0..=n)
        .map(|m| scale * (0..=m).map(|j| w[j] * row[m - j]).sum::<f64>())
        .collect()
}
