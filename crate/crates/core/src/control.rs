//! Steering controls for the diagonal model, their `H*` norm, exact
//! steering checks and the truncated exponential moment problem.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractional::{c_tilde, invert_kbig_cells};
use crate::fractional::gl6;
use crate::grid::{Grid, GridFunction, HurstParameter};
use crate::quad::{gamma, singular_l2_sq};
use crate::spectral::{phi1, SpectralModel};

/// Pointwise control profile `(mode, t) -> u_mode(t)`.
pub type Profile = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    /// `u_m(t) = Σ c e^{-r t}` over `(c, r)` pairs.
    ExpSums(Vec<Vec<(f64, f64)>>),
    Function(Profile),
    /// Only node values are known; linear between nodes.
    Samples,
}

/// An `H`-valued control in spectral coordinates.
#[derive(Clone)]
pub struct ControlFunction {
    pub grid: Grid,
    pub values: GridFunction,
    pub norm_l2: f64,
    pub hstar: Option<HstarReport>,
    shape: Shape,
}

impl fmt::Debug for ControlFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlFunction")
            .field("grid", &self.grid)
            .field("n_modes", &self.values.n_modes())
            .field("norm_l2", &self.norm_l2)
            .field("hstar", &self.hstar)
            .finish()
    }
}

fn exp_sum(terms: &[(f64, f64)], t: f64) -> f64 {
    terms.iter().map(|(c, r)| c * (-r * t).exp()).sum()
}

/// `∫_0^T (Σ c_i e^{-r_i t})² dt` in closed form.
fn exp_sum_l2_sq(terms: &[(f64, f64)], t_end: f64) -> f64 {
    let mut acc = 0.0;
    for (ci, ri) in terms {
        for (cj, rj) in terms {
            let s = ri + rj;
            acc += ci * cj * t_end * phi1(s * t_end);
        }
    }
    acc
}

impl ControlFunction {
    /// Mode `m` is `Σ c e^{-r t}` over `terms[m]`; norms and cell integrals
    /// are then exact.
    pub fn from_exp_sums(grid: Grid, terms: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let values = GridFunction::from_fn(grid, terms.len(), |m, t| exp_sum(&terms[m], t));
        values.check_finite("control values")?;
        let norm_l2 = terms
            .iter()
            .map(|tm| exp_sum_l2_sq(tm, grid.t_end()))
            .sum::<f64>()
            .max(0.0)
            .sqrt();
        Ok(Self { grid, values, norm_l2, hstar: None, shape: Shape::ExpSums(terms) })
    }

    /// A control known pointwise; `f` may be singular at `t = 0`, which is
    /// never evaluated.
    pub fn from_fn(
        grid: Grid,
        n_modes: usize,
        f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let f: Profile = Arc::new(f);
        let dt = grid.dt();
        let mut values = GridFunction::from_fn(grid, n_modes, |m, t| f(m, t.max(1e-3 * dt)));
        for m in 0..n_modes {
            // the node at 0 holds the first-cell mean so a singularity stays finite
            let c0 = gl_cell(&|t| f(m, t), 0.0, dt) / dt;
            values.mode_mut(m)[0] = c0;
        }
        values.check_finite("control values")?;
        let mut sq = 0.0;
        for m in 0..n_modes {
            for k in 0..grid.n_steps() {
                let (a, b) = (grid.node(k), grid.node(k + 1));
                sq += gl_cell(&|t| f(m, t).powi(2), a, b);
            }
        }
        Ok(Self { grid, values, norm_l2: sq.sqrt(), hstar: None, shape: Shape::Function(f) })
    }

    /// A control known only at the nodes, linear in between.
    pub fn from_samples(values: GridFunction) -> Result<Self> {
        values.check_finite("control values")?;
        Ok(Self {
            grid: *values.grid(),
            norm_l2: values.l2_norm(),
            values,
            hstar: None,
            shape: Shape::Samples,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.values.n_modes()
    }

    /// `∫_{t_k}^{t_{k+1}} u_m` for every cell of `grid`.
    pub fn cell_integrals(&self, m: usize, grid: &Grid) -> Vec<f64> {
        let n = grid.n_steps();
        let node = |k: usize| grid.node(k);
        match &self.shape {
            Shape::ExpSums(terms) => (0..n)
                .map(|k| {
                    let (a, dt) = (node(k), grid.dt());
                    terms[m]
                        .iter()
                        .map(|(c, r)| c * (-r * a).exp() * dt * phi1(r * dt))
                        .sum()
                })
                .collect(),
            Shape::Function(f) => (0..n)
                .map(|k| gl_cell(&|t| f(m, t), node(k), node(k + 1)))
                .collect(),
            Shape::Samples => (0..n)
                .map(|k| {
                    let (a, b) = (node(k), node(k + 1));
                    0.5 * (self.sample_at(m, a) + self.sample_at(m, b)) * (b - a)
                })
                .collect(),
        }
    }

    /// `u_m(0)`: exact for exponential sums and samples, extrapolated from the
    /// first two cell means otherwise.
    fn value_at_origin(&self, m: usize, cells: &[f64], dt: f64) -> f64 {
        match &self.shape {
            Shape::ExpSums(terms) => terms[m].iter().map(|(c, _)| c).sum(),
            Shape::Samples => self.values.value(m, 0),
            Shape::Function(_) if cells.len() >= 2 => (1.5 * cells[0] - 0.5 * cells[1]) / dt,
            Shape::Function(_) => cells[0] / dt,
        }
    }

    /// Linear interpolation of the stored samples.
    fn sample_at(&self, m: usize, t: f64) -> f64 {
        let row = self.values.mode(m);
        let n = self.grid.n_steps();
        let x = (t / self.grid.dt()).clamp(0.0, n as f64);
        let k = (x.floor() as usize).min(n - 1);
        let w = x - k as f64;
        (1.0 - w) * row[k] + w * row[k + 1]
    }

    /// `∫_{t_k}^{t_{k+1}} e^{-α(t_{k+1}-r)} u_m(r) dr` on the control grid.
    fn convolved_cells(&self, m: usize, alpha: f64) -> Vec<f64> {
        let g = self.grid;
        let dt = g.dt();
        let z = alpha * dt;
        match &self.shape {
            Shape::ExpSums(terms) => (0..g.n_steps())
                .map(|k| {
                    let b = g.node(k + 1);
                    terms[m]
                        .iter()
                        .map(|(c, r)| c * (-r * b).exp() * dt * phi1((alpha - r) * dt))
                        .sum()
                })
                .collect(),
            Shape::Function(f) => (0..g.n_steps())
                .map(|k| {
                    let b = g.node(k + 1);
                    gl_cell(&|t| (-alpha * (b - t)).exp() * f(m, t), g.node(k), b)
                })
                .collect(),
            Shape::Samples => {
                let row = self.values.mode(m);
                let (w1, w2) = (phi1(z), phi2(z));
                (0..g.n_steps())
                    .map(|k| dt * (row[k + 1] * w1 - (row[k + 1] - row[k]) * w2))
                    .collect()
            }
        }
    }

    /// CSV with columns `t, u_1, …, u_N`.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_modes()).map(|m| format!("u_{m}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        crate::io::csv_string(
            &header,
            (0..self.grid.n_nodes()).map(|k| {
                let mut row = vec![self.grid.node(k)];
                row.extend((0..self.n_modes()).map(|m| self.values.value(m, k)));
                row
            }),
        )
    }
}

/// `∫_0^1 e^{-z w} w dw`.
fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        0.5 - z / 3.0 + z * z / 8.0
    } else {
        (1.0 - (-z).exp() * (1.0 + z)) / (z * z)
    }
}

fn gl_cell(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    gl6(f, a, b)
}

/// `û_n(t) = -x_n e^{-α_n t} / (T √λ_n)`, which steers `x` to zero at `T`.
pub fn explicit_control(model: &SpectralModel, x: &[f64], grid: Grid) -> Result<ControlFunction> {
    model.check_state(x)?;
    model.check_grid(&grid)?;
    let t = model.t_end();
    let mut terms = Vec::with_capacity(x.len());
    for (m, ((xn, a), l)) in x.iter().zip(model.alphas()).zip(model.lambdas()).enumerate() {
        if *xn != 0.0 && !(l.sqrt() > 0.0) {
            return Err(Error::Uncontrollable { mode: m + 1 });
        }
        let c = if *xn == 0.0 { 0.0 } else { -xn / (t * l.sqrt()) };
        terms.push(vec![(c, *a)]);
    }
    ControlFunction::from_exp_sums(grid, terms)
}

/// Solves `y' = Ay + Bu`, `y(0) = x` mode-wise with exact cell convolutions
/// of the control and returns `‖y(T)‖ / max(‖x‖, 1)`.
pub fn verify_steering(model: &SpectralModel, x: &[f64], u: &ControlFunction) -> Result<f64> {
    model.check_state(x)?;
    model.check_grid(&u.grid)?;
    if u.n_modes() != model.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: model.n_modes(),
            got: u.n_modes(),
            context: "control modes",
        });
    }
    let dt = u.grid.dt();
    let mut sq = 0.0;
    for m in 0..model.n_modes() {
        let (a, l) = (model.alphas()[m], model.lambdas()[m]);
        let decay = (-a * dt).exp();
        let mut y = x[m];
        for inc in u.convolved_cells(m, a) {
            y = decay * y + l.sqrt() * inc;
        }
        sq += y * y;
    }
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(sq.sqrt() / xn.max(1.0))
}

/// Minimum growth per dyadic refinement for the divergence flag on the grid
/// trace.
pub const GRID_GROWTH: f64 = 1.05;
/// Minimum growth of the partial norms when the mode count doubles.
pub const MODE_GROWTH: f64 = 2.0;
/// Relative change below which a trace counts as settled.
pub const SETTLED: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HstarStatus {
    Finite,
    Divergent,
    Inconclusive,
}

/// `H*` norm with the evidence behind the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HstarReport {
    pub status: HstarStatus,
    /// Norm on the finest grid when the status is finite.
    pub value: Option<f64>,
    /// Norms on the base grid and two dyadic refinements.
    pub grid_trace: Vec<(usize, f64)>,
    /// Partial norms over the first `N/4`, `N/2`, `N` modes on the finest grid.
    pub mode_trace: Vec<(usize, f64)>,
    /// Squared norm of each mode on the finest grid.
    pub per_mode_sq: Vec<f64>,
    pub mu_hint: Option<f64>,
    /// `μ < 1 - β`, when a hint was given.
    pub expected_finite: Option<bool>,
}

/// `∫ |𝒦_β^{-1} u_m|²` on `grid`, with `𝒦_β^{-1} u = 𝕂_β^{-1}(∫_0^· u)`.
///
/// The value `u_m(0)` is split off and inverted in closed form,
/// `𝒦_β^{-1} 1 = Γ(3/2-β) / (c̃ Γ(2-2β)) t^{½-β}`, so the discrete inverse only
/// sees a remainder vanishing at the origin.
fn mode_hstar_sq(beta: HurstParameter, u: &ControlFunction, m: usize, grid: &Grid) -> f64 {
    let dt = grid.dt();
    let mut dpsi = u.cell_integrals(m, grid);
    let u0 = u.value_at_origin(m, &dpsi, dt);
    dpsi.iter_mut().for_each(|d| *d -= u0 * dt);
    let mut v = invert_kbig_cells(beta, dt, &dpsi);
    let b = beta.value();
    let amp = u0 * gamma(1.5 - b) / (c_tilde(beta) * gamma(2.0 - 2.0 * b));
    for (k, vk) in v.iter_mut().enumerate() {
        *vk += amp * ((k + 1) as f64 * dt).powf(0.5 - b);
    }
    let mut row = Vec::with_capacity(v.len() + 1);
    row.push(0.0);
    row.extend(v);
    let q = 1.0 - 2.0 * b;
    singular_l2_sq(&row, dt, &[q, q + 1.0, q + 2.0], &[])
}

fn relative_change(a: f64, b: f64) -> f64 {
    (b - a).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Evaluates `‖u‖_{H*} = (∫_0^T ‖𝒦_β^{-1} u‖² dt)^{1/2}` on the control grid
/// and two dyadic refinements, and over growing mode truncations.
///
/// Finite when both traces settle within [`SETTLED`]; divergent when the grid
/// trace grows by at least [`GRID_GROWTH`] at each refinement or the mode
/// trace by at least [`MODE_GROWTH`] at each doubling.
pub fn hstar_norm(
    beta: HurstParameter,
    mut u: ControlFunction,
    mu_hint: Option<f64>,
) -> Result<ControlFunction> {
    let n_modes = u.n_modes();
    let expected_finite = mu_hint.map(|mu| mu < 1.0 - beta.value());
    if beta.is_standard() {
        let v = u.norm_l2;
        u.hstar = Some(HstarReport {
            status: HstarStatus::Finite,
            value: Some(v),
            grid_trace: vec![(u.grid.n_steps(), v)],
            mode_trace: vec![(n_modes, v)],
            per_mode_sq: Vec::new(),
            mu_hint,
            expected_finite,
        });
        return Ok(u);
    }
    let grids = [u.grid, u.grid.refined(2), u.grid.refined(4)];
    let per_level: Vec<Vec<f64>> = grids
        .iter()
        .map(|g| (0..n_modes).map(|m| mode_hstar_sq(beta, &u, m, g)).collect())
        .collect();
    let totals: Vec<f64> = per_level
        .iter()
        .map(|sq| sq.iter().sum::<f64>().max(0.0).sqrt())
        .collect();
    if totals.iter().any(|t| !t.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite H* norm trace {totals:?}")));
    }
    let finest = per_level[2].clone();
    let mut cuts = vec![(n_modes / 4).max(1), (n_modes / 2).max(1), n_modes];
    cuts.dedup();
    let mode_trace: Vec<(usize, f64)> = cuts
        .iter()
        .map(|&c| (c, finest[..c].iter().sum::<f64>().max(0.0).sqrt()))
        .collect();

    let grid_settled = relative_change(totals[1], totals[2]) < SETTLED;
    let grid_grows = totals[1] >= GRID_GROWTH * totals[0] && totals[2] >= GRID_GROWTH * totals[1];
    let mode_settled = mode_trace.len() < 2
        || relative_change(mode_trace[mode_trace.len() - 2].1, mode_trace[mode_trace.len() - 1].1)
            < SETTLED;
    let mode_grows = mode_trace.len() >= 2
        && mode_trace.windows(2).all(|w| w[1].1 >= MODE_GROWTH * w[0].1);
    let status = if grid_grows || mode_grows {
        HstarStatus::Divergent
    } else if grid_settled && mode_settled {
        HstarStatus::Finite
    } else {
        HstarStatus::Inconclusive
    };
    u.hstar = Some(HstarReport {
        status,
        value: (status == HstarStatus::Finite).then_some(totals[2]),
        grid_trace: grids.iter().map(|g| g.n_steps()).zip(totals).collect(),
        mode_trace,
        per_mode_sq: finest,
        mu_hint,
        expected_finite,
    });
    Ok(u)
}

/// Truncated moment problem `∫_0^T e^{-λ_n t} h(t) dt = λ_n c_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProblem {
    pub exponents: Vec<f64>,
    pub targets: Vec<f64>,
    pub t_end: f64,
    pub n_trunc: usize,
    /// Tikhonov ridge; `None` picks 0 up to 15 constraints and
    /// `1e-12·trace(G)` above.
    pub ridge: Option<f64>,
    /// Largest accepted constraint residual, relative to `max |λ_n c_n|`.
    pub tolerance: f64,
}

pub const MAX_MOMENT_TRUNCATION: usize = 40;
pub const RIDGE_FREE_TRUNCATION: usize = 15;

impl MomentProblem {
    pub fn new(exponents: Vec<f64>, targets: Vec<f64>, t_end: f64, n_trunc: usize) -> Result<Self> {
        let p = Self { exponents, targets, t_end, n_trunc, ridge: None, tolerance: 1e-8 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.exponents.len() != self.targets.len() {
            problems.push(format!(
                "{} exponents but {} targets",
                self.exponents.len(),
                self.targets.len()
            ));
        }
        if self.n_trunc == 0 || self.n_trunc > self.exponents.len().min(self.targets.len()) {
            problems.push(format!("n_trunc = {} outside 1..=sequence length", self.n_trunc));
        }
        if self.n_trunc > MAX_MOMENT_TRUNCATION {
            problems.push(format!("n_trunc = {} above {MAX_MOMENT_TRUNCATION}", self.n_trunc));
        }
        if self.exponents.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            problems.push("exponents must be positive".into());
        }
        if self.exponents.windows(2).any(|w| w[1] <= w[0]) {
            problems.push("exponents must be strictly increasing".into());
        }
        if self.targets.iter().any(|c| !c.is_finite()) {
            problems.push("targets must be finite".into());
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            problems.push(format!("T = {} is not positive", self.t_end));
        }
        if let Some(r) = self.ridge {
            if !(r.is_finite() && r >= 0.0) {
                problems.push(format!("ridge = {r} is negative"));
            }
        }
        if !(self.tolerance > 0.0) {
            problems.push("tolerance must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(problems))
        }
    }

    /// `G_ij = (1 - e^{-(λ_i+λ_j)T}) / (λ_i + λ_j)`.
    pub fn gram(&self) -> nalgebra::DMatrix<f64> {
        let l = &self.exponents[..self.n_trunc];
        nalgebra::DMatrix::from_fn(self.n_trunc, self.n_trunc, |i, j| {
            let s = l[i] + l[j];
            self.t_end * phi1(s * self.t_end)
        })
    }

    fn rhs(&self) -> Vec<f64> {
        (0..self.n_trunc)
            .map(|n| self.exponents[n] * self.targets[n])
            .collect()
    }
}

/// Minimum-norm solution of a [`MomentProblem`].
#[derive(Debug, Clone)]
pub struct MomentSolution {
    /// `h = Σ a_j e^{-λ_j t}`.
    pub coefficients: Vec<f64>,
    pub exponents: Vec<f64>,
    pub h: ControlFunction,
    /// `u_0(t) = ∫_0^t h`.
    pub u0: ControlFunction,
    /// `|∫ e^{-λ_n t} h - λ_n c_n|` per constraint, relative to `max |λ_n c_n|`.
    pub residuals: Vec<f64>,
    /// Ratio of extreme eigenvalues of the Gram matrix.
    pub condition: f64,
    pub ridge_used: f64,
}

#[derive(Serialize)]
struct MomentJson<'a> {
    version: u32,
    n_trunc: usize,
    ridge_used: f64,
    condition: f64,
    max_residual: f64,
    residuals: &'a [f64],
    coefficients: &'a [f64],
    norm_h_l2: f64,
}

impl MomentSolution {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MomentJson {
            version: crate::spectral::REPORT_SCHEMA_VERSION,
            n_trunc: self.coefficients.len(),
            ridge_used: self.ridge_used,
            condition: self.condition,
            max_residual: self.max_residual(),
            residuals: &self.residuals,
            coefficients: &self.coefficients,
            norm_h_l2: self.h.norm_l2,
        })?)
    }
}

/// Solves the Gram system `(G + rI) a = (λ_n c_n)` and builds `h` and its
/// antiderivative on `grid`.
pub fn moment_solve(p: &MomentProblem, grid: Grid) -> Result<MomentSolution> {
    p.validate()?;
    if (grid.t_end() - p.t_end).abs() > 1e-12 * p.t_end {
        return Err(Error::GridMismatch(format!(
            "grid horizon {} differs from moment horizon {}",
            grid.t_end(),
            p.t_end
        )));
    }
    let g = p.gram();
    let eig = nalgebra::SymmetricEigen::new(g.clone()).eigenvalues;
    let (emin, emax) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), e| (lo.min(*e), hi.max(*e)));
    let condition = emax / emin.max(f64::MIN_POSITIVE);
    let ridge = p.ridge.unwrap_or(if p.n_trunc > RIDGE_FREE_TRUNCATION {
        1e-12 * g.trace()
    } else {
        0.0
    });
    let b = nalgebra::DVector::from_vec(p.rhs());
    let mut reg = g.clone();
    for i in 0..p.n_trunc {
        reg[(i, i)] += ridge;
    }
    let a = match reg.clone().cholesky() {
        Some(c) => c.solve(&b),
        None => reg
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::SolveFailed(format!("Gram matrix singular, condition {condition:e}")))?,
    };
    let scale = b.amax().max(f64::MIN_POSITIVE);
    let residuals: Vec<f64> = (&g * &a - &b).iter().map(|r| r.abs() / scale).collect();
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    if worst > p.tolerance && ridge == 0.0 {
        return Err(Error::MomentResidual {
            residual: worst,
            tolerance: p.tolerance,
            ridge_tried: ridge,
        });
    }
    let l = &p.exponents[..p.n_trunc];
    let coefficients: Vec<f64> = a.iter().copied().collect();
    let h_terms: Vec<(f64, f64)> = coefficients.iter().copied().zip(l.iter().copied()).collect();
    let mut u0_terms = vec![(h_terms.iter().map(|(c, r)| c / r).sum::<f64>(), 0.0)];
    u0_terms.extend(h_terms.iter().map(|(c, r)| (-c / r, *r)));
    Ok(MomentSolution {
        h: ControlFunction::from_exp_sums(grid, vec![h_terms])?,
        u0: ControlFunction::from_exp_sums(grid, vec![u0_terms])?,
        coefficients,
        exponents: l.to_vec(),
        residuals,
        condition,
        ridge_used: ridge,
    })
}

impl MomentSolution {
    /// `h(t)` at any `t`.
    pub fn h_at(&self, t: f64) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.exponents)
            .map(|(a, l)| a * (-l * t).exp())
            .sum()
    }
}
