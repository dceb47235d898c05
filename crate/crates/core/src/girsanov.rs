//! Semilinear equations with additive fBm: exponential-Euler simulation, the
//! Girsanov density with respect to the linear solution, the transfer
//! identity and a coupled strong Feller probe.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractional::invert_kbig_cells;
use crate::grid::{Grid, GridFunction, HurstParameter};
use crate::noise::{check_cap, FbmGenerator, NoiseSeed, DEFAULT_VALUE_CAP};
use crate::spectral::{drive, ou_from_fbm, ou_single_path, ModeRows, OuEnsemble, SpectralModel};
use crate::stats::{isotonic_nonincreasing, mean_se, MeanSe};

/// State norm above which a path is declared blown up.
pub const BLOW_UP_NORM: f64 = 1e12;

/// Scalar nonlinearity `f` of a Nemytskii operator `F(x)(ξ) = f(x(ξ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarFn {
    Zero,
    Sin,
    NegArctan,
}

impl ScalarFn {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Sin => u.sin(),
            ScalarFn::NegArctan => -u.atan(),
        }
    }

    /// `sup |f|`.
    fn bound(self) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Sin => 1.0,
            ScalarFn::NegArctan => std::f64::consts::FRAC_PI_2,
        }
    }

    fn lipschitz(self) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            _ => 1.0,
        }
    }
}

/// Drift `F` in spectral coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    /// `F(x)(ξ) = f(Σ x_n e_n(ξ))` with `e_n = √2 sin(nπξ)` on `(0,1)`,
    /// projected back with an `n_quad`-point midpoint rule.
    Nemytskii { f: ScalarFn, n_quad: usize },
    /// `F(x) = -rate · x`.
    Linear { rate: f64 },
}

/// `G = B^{-1} F` with the constants of the growth and regularity hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityG {
    pub drift: Drift,
    /// `‖G(x) - G(y)‖ ≤ lipschitz ‖x - y‖`
    pub lipschitz: f64,
    pub holder_alpha: f64,
    /// `‖G(x)‖ ≤ growth (1 + ‖x‖)`
    pub growth: f64,
    inv_sqrt_lambda: Vec<f64>,
    /// `e_n(ξ_q)` row-major by quadrature node.
    basis: Vec<f64>,
    n_modes: usize,
}

impl NonlinearityG {
    pub fn new(drift: Drift, model: &SpectralModel) -> Result<Self> {
        let n_modes = model.n_modes();
        let inv_sqrt_lambda: Vec<f64> = model.lambdas().iter().map(|l| 1.0 / l.sqrt()).collect();
        let worst = inv_sqrt_lambda.iter().copied().fold(0.0, f64::max);
        let (lipschitz, growth, basis) = match &drift {
            Drift::Nemytskii { f, n_quad } => {
                if *n_quad <= n_modes {
                    return Err(Error::param(
                        "n_quad",
                        format!("{n_quad} quadrature nodes cannot resolve {n_modes} modes"),
                    ));
                }
                let q = *n_quad;
                let mut basis = Vec::with_capacity(q * n_modes);
                for i in 0..q {
                    let xi = (i as f64 + 0.5) / q as f64;
                    for n in 1..=n_modes {
                        basis.push(
                            std::f64::consts::SQRT_2 * (n as f64 * std::f64::consts::PI * xi).sin(),
                        );
                    }
                }
                (f.lipschitz() * worst, f.bound() * worst, basis)
            }
            Drift::Linear { rate } => {
                if !rate.is_finite() {
                    return Err(Error::param("rate", "not finite"));
                }
                (rate.abs() * worst, rate.abs() * worst, Vec::new())
            }
        };
        Ok(Self {
            drift,
            lipschitz,
            holder_alpha: 1.0,
            growth,
            inv_sqrt_lambda,
            basis,
            n_modes,
        })
    }

    pub fn zero(model: &SpectralModel) -> Result<Self> {
        Self::new(Drift::Nemytskii { f: ScalarFn::Zero, n_quad: 2 * model.n_modes() + 2 }, model)
    }

    pub fn is_zero(&self) -> bool {
        match self.drift {
            Drift::Nemytskii { f, .. } => f == ScalarFn::Zero,
            Drift::Linear { rate } => rate == 0.0,
        }
    }

    /// `F(x)` written into `out`.
    pub fn eval_f(&self, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            Drift::Nemytskii { f, n_quad } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                if *f == ScalarFn::Zero {
                    return;
                }
                let w = 1.0 / *n_quad as f64;
                for row in self.basis.chunks_exact(self.n_modes) {
                    let u: f64 = row.iter().zip(x).map(|(e, xn)| e * xn).sum();
                    let fu = f.eval(u) * w;
                    out.iter_mut().zip(row).for_each(|(o, e)| *o += fu * e);
                }
            }
            Drift::Linear { rate } => {
                out.iter_mut().zip(x).for_each(|(o, xn)| *o = -rate * xn);
            }
        }
    }

    /// `G(x) = B^{-1} F(x)` written into `out`.
    pub fn eval_g(&self, x: &[f64], out: &mut [f64]) {
        self.eval_f(x, out);
        out.iter_mut().zip(&self.inv_sqrt_lambda).for_each(|(o, s)| *o *= s);
    }

    /// Samples states of several radii and confirms the declared growth and
    /// Lipschitz bounds.
    pub fn check_hypothesis(&self, seed: NoiseSeed, n_samples: usize) -> Result<()> {
        let m = self.n_modes;
        let (mut gx, mut gy) = (vec![0.0; m], vec![0.0; m]);
        for s in 0..n_samples {
            let radius = 10f64.powi((s % 7) as i32 - 3);
            let x: Vec<f64> = seed.normals(0, s, m).iter().map(|v| v * radius).collect();
            let y: Vec<f64> = seed.normals(1, s, m).iter().map(|v| v * radius).collect();
            self.eval_g(&x, &mut gx);
            self.eval_g(&y, &mut gy);
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let slack = 1.0 + 1e-9;
            if norm(&gx) > self.growth * (1.0 + norm(&x)) * slack {
                return Err(Error::param("G", format!("growth bound violated at sample {s}")));
            }
            let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
            if norm(&dg) > self.lipschitz * norm(&dxy) * slack + 1e-15 {
                return Err(Error::param("G", format!("Lipschitz bound violated at sample {s}")));
            }
        }
        Ok(())
    }
}

/// One simulated linear path together with the white-noise increments that
/// drove it. The pairing is what makes the density well defined.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub path_id: usize,
    pub z: GridFunction,
    /// Per mode, `n_steps` increments of the underlying Wiener process.
    pub white: Vec<Vec<f64>>,
}

impl OuEnsemble {
    pub fn record(&self, p: usize) -> Result<PathRecord> {
        let rows = (0..self.model.n_modes()).map(|m| self.path(p, m).to_vec()).collect();
        Ok(PathRecord {
            path_id: p,
            z: GridFunction::from_rows(self.grid, rows)?,
            white: (0..self.model.n_modes())
                .map(|m| self.white_increments(p, m).to_vec())
                .collect(),
        })
    }
}

/// `v = 𝕂_β^{-1}(∫_0^· G(Z_s) ds)` mode-wise.
///
/// The running integral uses the left-point rule, so the value stored at
/// node `k+1` depends on `Z` up to `t_k` only; it is the integrand paired
/// with the noise increment over `[t_k, t_{k+1}]`. Node 0 repeats node 1.
pub fn drift_transform(
    beta: HurstParameter,
    g: &NonlinearityG,
    z: &GridFunction,
) -> Result<GridFunction> {
    z.check_finite("drift_transform input")?;
    if z.n_modes() != g.n_modes {
        return Err(Error::DimensionMismatch {
            expected: g.n_modes,
            got: z.n_modes(),
            context: "drift_transform modes",
        });
    }
    let grid = *z.grid();
    let (n, dt, m) = (grid.n_steps(), grid.dt(), g.n_modes);
    let mut dpsi = vec![vec![0.0; n]; m];
    let (mut x, mut gx) = (vec![0.0; m], vec![0.0; m]);
    for k in 0..n {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = z.value(i, k);
        }
        g.eval_g(&x, &mut gx);
        for i in 0..m {
            dpsi[i][k] = gx[i] * dt;
        }
    }
    let rows = dpsi
        .iter()
        .map(|d| {
            let v = invert_kbig_cells(beta, dt, d);
            let mut row = Vec::with_capacity(n + 1);
            row.push(v[0]);
            row.extend(v);
            row
        })
        .collect();
    GridFunction::from_rows(grid, rows)
}

/// One realization of `ρ_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub path_id: usize,
    /// `exp(log_rho)`, saturated at `f64::MAX` when `overflow` is set.
    pub rho: f64,
    pub log_rho: f64,
    /// `Σ_k ⟨v(t_{k+1}), ΔW_k⟩`
    pub ito_term: f64,
    /// `½ Σ_k ‖v(t_{k+1})‖² Δ`
    pub quadratic_term: f64,
    pub overflow: bool,
}

fn density_from_drift(path_id: usize, v: &GridFunction, white: &[Vec<f64>]) -> DensitySample {
    let dt = v.grid().dt();
    let (mut ito, mut quad) = (0.0, 0.0);
    for (m, dw) in white.iter().enumerate() {
        let row = v.mode(m);
        for (k, w) in dw.iter().enumerate() {
            ito += row[k + 1] * w;
            quad += row[k + 1] * row[k + 1];
        }
    }
    let quadratic_term = 0.5 * quad * dt;
    let log_rho = ito - quadratic_term;
    let rho = log_rho.exp();
    DensitySample {
        path_id,
        rho: if rho.is_finite() { rho } else { f64::MAX },
        log_rho,
        ito_term: ito,
        quadratic_term,
        overflow: !rho.is_finite(),
    }
}

/// `ρ_T = exp(Σ ⟨v, ΔW⟩ - ½ Σ ‖v‖² Δ)` with `v` from [`drift_transform`].
pub fn density_rho(
    beta: HurstParameter,
    g: &NonlinearityG,
    record: &PathRecord,
) -> Result<DensitySample> {
    let n = record.z.grid().n_steps();
    if record.white.len() != record.z.n_modes() || record.white.iter().any(|w| w.len() != n) {
        return Err(Error::Provenance(format!(
            "path {}: white increments do not match the path shape",
            record.path_id
        )));
    }
    if g.is_zero() {
        return Ok(DensitySample {
            path_id: record.path_id,
            rho: 1.0,
            log_rho: 0.0,
            ito_term: 0.0,
            quadratic_term: 0.0,
            overflow: false,
        });
    }
    let v = drift_transform(beta, g, &record.z)?;
    Ok(density_from_drift(record.path_id, &v, &record.white))
}

/// Exponential Euler for `dX = (AX + F(X)) dt + B dB^β`:
/// `X_{k+1} = e^{AΔ} X_k + A^{-1}(e^{AΔ} - I) F(X_k) + √λ φ₁(αΔ) ΔB_k`.
fn semilinear_from_fbm(
    model: &SpectralModel,
    g: &NonlinearityG,
    dt: f64,
    fbm: &[Vec<f64>],
    x0: &[f64],
    p: usize,
) -> Result<Vec<Vec<f64>>> {
    let m = model.n_modes();
    let n = fbm[0].len() - 1;
    let factors = model.step_factors(dt);
    let mut states = vec![vec![0.0; n + 1]; m];
    let mut x = x0.to_vec();
    let mut f = vec![0.0; m];
    for i in 0..m {
        states[i][0] = x[i];
    }
    for k in 0..n {
        g.eval_f(&x, &mut f);
        for i in 0..m {
            let (decay, f1) = factors[i];
            let amp = model.lambdas()[i].sqrt() * f1;
            x[i] = decay * x[i] + dt * f1 * f[i] + amp * (fbm[i][k + 1] - fbm[i][k]);
            states[i][k + 1] = x[i];
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= BLOW_UP_NORM) {
            return Err(Error::BlowUp { path: p, step: k + 1, norm });
        }
    }
    Ok(states)
}

/// Paths of the semilinear equation; with `F ≡ 0` the output equals
/// [`crate::spectral::simulate_ou`] bit for bit under the same seed.
pub fn simulate_semilinear(
    model: &SpectralModel,
    g: &NonlinearityG,
    x: &[f64],
    grid: Grid,
    seed: NoiseSeed,
    n_paths: usize,
) -> Result<OuEnsemble> {
    model.check_state(x)?;
    model.check_grid(&grid)?;
    check_cap(
        n_paths * model.n_modes() * (2 * grid.n_steps() + 1),
        DEFAULT_VALUE_CAP,
    )?;
    let gen = FbmGenerator::new(model.beta(), grid)?;
    let blocks: Vec<ModeRows> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            if g.is_zero() {
                Ok(ou_single_path(model, &gen, seed, x, p))
            } else {
                let (whites, fbm) = drive(&gen, seed, model.n_modes(), p);
                Ok((semilinear_from_fbm(model, g, grid.dt(), &fbm, x, p)?, whites))
            }
        })
        .collect::<Result<_>>()?;
    let mut paths = Vec::with_capacity(n_paths * model.n_modes() * grid.n_nodes());
    let mut white = Vec::with_capacity(n_paths * model.n_modes() * grid.n_steps());
    for (s, w) in blocks {
        s.into_iter().for_each(|r| paths.extend(r));
        w.into_iter().for_each(|r| white.extend(r));
    }
    Ok(OuEnsemble::from_parts(
        model.clone(),
        grid,
        x.to_vec(),
        n_paths,
        seed,
        paths,
        white,
    ))
}

/// Monte Carlo size, resolution and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McParams {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl McParams {
    fn grid(&self, model: &SpectralModel) -> Result<Grid> {
        Grid::new(model.t_end(), self.n_steps)
    }
}

/// Linear path, white increments and density for path `p` started at `x`.
fn linear_with_density(
    model: &SpectralModel,
    g: &NonlinearityG,
    grid: Grid,
    fbm: &[Vec<f64>],
    whites: &[Vec<f64>],
    x: &[f64],
    p: usize,
) -> Result<(Vec<Vec<f64>>, DensitySample)> {
    let z = ou_from_fbm(model, grid.dt(), fbm, x);
    let record = PathRecord {
        path_id: p,
        z: GridFunction::from_rows(grid, z.clone())?,
        white: whites.to_vec(),
    };
    let d = density_rho(model.beta(), g, &record)?;
    Ok((z, d))
}

/// Densities of `n_paths` linear paths from `x`, streamed path by path.
pub fn density_ensemble(
    model: &SpectralModel,
    g: &NonlinearityG,
    x: &[f64],
    mc: McParams,
) -> Result<Vec<DensitySample>> {
    model.check_state(x)?;
    let grid = mc.grid(model)?;
    let gen = FbmGenerator::new(model.beta(), grid)?;
    let seed = NoiseSeed::new(mc.seed);
    (0..mc.n_paths)
        .into_par_iter()
        .map(|p| {
            let (whites, fbm) = drive(&gen, seed, model.n_modes(), p);
            linear_with_density(model, g, grid, &fbm, &whites, x, p).map(|(_, d)| d)
        })
        .collect()
}

/// CSV with columns `path_id, log_rho, ito_term, quadratic_term`.
pub fn densities_csv(samples: &[DensitySample]) -> String {
    crate::io::csv_string(
        &["path_id", "log_rho", "ito_term", "quadratic_term"],
        samples
            .iter()
            .map(|d| vec![d.path_id as f64, d.log_rho, d.ito_term, d.quadratic_term]),
    )
}

/// Bounded functional of the terminal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctional {
    /// `tanh(z_mode / scale)`
    Tanh { mode: usize, scale: f64 },
    /// Logistic smoothing of the half-space `⟨w, z⟩ > offset`.
    SmoothHalfSpace { weights: Vec<f64>, offset: f64, width: f64 },
    /// `exp(-‖z‖² / (2 width²))`
    GaussianBump { width: f64 },
}

impl TestFunctional {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            TestFunctional::Tanh { mode, scale } => (z[*mode] / scale).tanh(),
            TestFunctional::SmoothHalfSpace { weights, offset, width } => {
                let s: f64 = weights.iter().zip(z).map(|(w, v)| w * v).sum();
                1.0 / (1.0 + (-(s - offset) / width).exp())
            }
            TestFunctional::GaussianBump { width } => {
                let r2: f64 = z.iter().map(|v| v * v).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    /// Declared `sup |φ|`.
    pub fn bound(&self) -> f64 {
        1.0
    }

    pub fn name(&self) -> String {
        match self {
            TestFunctional::Tanh { mode, .. } => format!("tanh_z{}", mode + 1),
            TestFunctional::SmoothHalfSpace { .. } => "smooth_half_space".into(),
            TestFunctional::GaussianBump { .. } => "gaussian_bump".into(),
        }
    }

    pub fn validate(&self, n_modes: usize) -> Result<()> {
        let ok = match self {
            TestFunctional::Tanh { mode, scale } => *mode < n_modes && *scale > 0.0,
            TestFunctional::SmoothHalfSpace { weights, width, .. } => {
                weights.len() <= n_modes && *width > 0.0
            }
            TestFunctional::GaussianBump { width } => *width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("phi", format!("{} does not fit {n_modes} modes", self.name())))
        }
    }
}

/// `tanh(z_1)`, a smoothed half-space indicator and a Gaussian bump.
pub fn default_battery(n_modes: usize) -> Vec<TestFunctional> {
    let mut weights = vec![1.0];
    if n_modes > 1 {
        weights.push(-1.0);
    }
    vec![
        TestFunctional::Tanh { mode: 0, scale: 1.0 },
        TestFunctional::SmoothHalfSpace { weights, offset: 0.0, width: 0.1 },
        TestFunctional::GaussianBump { width: 0.5 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub functional: String,
    /// `E φ(X_T)`
    pub lhs: MeanSe,
    /// `E φ(Z_T) ρ_T`
    pub rhs: MeanSe,
    /// Pathwise difference; its standard error is the combined one.
    pub diff: MeanSe,
}

impl TransferRecord {
    pub fn combined_se(&self) -> f64 {
        self.diff.se
    }

    pub fn within(&self, k: f64) -> bool {
        self.diff.covers(0.0, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub records: Vec<TransferRecord>,
    pub mean_rho: MeanSe,
    pub n_overflow: usize,
}

/// Compares `E φ(X_T^x)` with `E φ(Z_T^x) ρ_T(x)` on coupled paths: both
/// sides use the same white noise, so the difference has a small variance
/// and vanishes identically when `F ≡ 0`.
pub fn transfer_check(
    model: &SpectralModel,
    g: &NonlinearityG,
    x: &[f64],
    battery: &[TestFunctional],
    mc: McParams,
) -> Result<TransferReport> {
    model.check_state(x)?;
    for phi in battery {
        phi.validate(model.n_modes())?;
    }
    let grid = mc.grid(model)?;
    let gen = FbmGenerator::new(model.beta(), grid)?;
    let seed = NoiseSeed::new(mc.seed);
    let n = grid.n_steps();
    let rows: Vec<(Vec<f64>, Vec<f64>, DensitySample)> = (0..mc.n_paths)
        .into_par_iter()
        .map(|p| {
            let (whites, fbm) = drive(&gen, seed, model.n_modes(), p);
            let (z, d) = linear_with_density(model, g, grid, &fbm, &whites, x, p)?;
            let xs = if g.is_zero() {
                z.clone()
            } else {
                semilinear_from_fbm(model, g, grid.dt(), &fbm, x, p)?
            };
            let xt: Vec<f64> = xs.iter().map(|r| r[n]).collect();
            let zt: Vec<f64> = z.iter().map(|r| r[n]).collect();
            Ok((
                battery.iter().map(|phi| phi.eval(&xt)).collect(),
                battery.iter().map(|phi| phi.eval(&zt)).collect(),
                d,
            ))
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(battery.len());
    for (i, phi) in battery.iter().enumerate() {
        let lhs: Vec<f64> = rows.iter().map(|r| r.0[i]).collect();
        let rhs: Vec<f64> = rows.iter().map(|r| r.1[i] * r.2.rho).collect();
        if lhs.iter().chain(rows.iter().map(|r| &r.1[i])).any(|v| v.abs() > phi.bound()) {
            return Err(Error::param("phi", format!("{} exceeds its declared bound", phi.name())));
        }
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        records.push(TransferRecord {
            functional: phi.name(),
            lhs: mean_se(&lhs),
            rhs: mean_se(&rhs),
            diff: mean_se(&diff),
        });
    }
    let rho: Vec<f64> = rows.iter().map(|r| r.2.rho).collect();
    Ok(TransferReport {
        records,
        mean_rho: mean_se(&rho),
        n_overflow: rows.iter().filter(|r| r.2.overflow).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub direction: usize,
    pub level: usize,
    /// `‖x_j - x‖`
    pub offset: f64,
    /// `E |ρ_T(x_j) - ρ_T(x)|` on coupled paths.
    pub rho_diff: MeanSe,
    /// `E φ(Z^{x_j}) ρ(x_j) - E φ(Z^x) ρ(x)` per functional; estimates
    /// `E φ(X^{x_j}_T) - E φ(X^x_T)`.
    pub phi_diffs: Vec<MeanSe>,
    /// Mean of `½ Σ ‖v‖² Δ` at `x_j`.
    pub mean_quadratic: f64,
    /// Fraction of paths with `ρ_T(x_j) > K` for `K` in [`TAIL_LEVELS`].
    pub tail_mass: Vec<f64>,
}

pub const TAIL_LEVELS: [f64; 3] = [2.0, 5.0, 10.0];

/// Trend of `E |ρ(x_j) - ρ(x)|` along one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrend {
    pub direction: usize,
    /// Every level lies within 2 SE of its nonincreasing least-squares fit.
    pub nonincreasing: bool,
    pub final_over_initial: f64,
}

impl ProbeTrend {
    pub fn passes(&self, max_ratio: f64) -> bool {
        self.nonincreasing && self.final_over_initial <= max_ratio
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub records: Vec<ProbeRecord>,
    pub trends: Vec<ProbeTrend>,
}

/// Coupled densities at `x_j = x + 2^{-j} d`, `j = 0..dyadic_levels`: the
/// linear paths share one noise realization and differ by `S(t)(x_j - x)`.
pub fn strong_feller_probe(
    model: &SpectralModel,
    g: &NonlinearityG,
    x: &[f64],
    directions: &[Vec<f64>],
    dyadic_levels: usize,
    battery: &[TestFunctional],
    mc: McParams,
) -> Result<ProbeReport> {
    model.check_state(x)?;
    for d in directions {
        model.check_state(d)?;
    }
    for phi in battery {
        phi.validate(model.n_modes())?;
    }
    let grid = mc.grid(model)?;
    let gen = FbmGenerator::new(model.beta(), grid)?;
    let seed = NoiseSeed::new(mc.seed);
    let n = grid.n_steps();
    let starts: Vec<Vec<f64>> = directions
        .iter()
        .flat_map(|d| {
            (0..dyadic_levels).map(move |j| {
                let h = 0.5f64.powi(j as i32);
                x.iter().zip(d).map(|(a, b)| a + h * b).collect()
            })
        })
        .collect();
    // per path: (ρ(x), φ(Z^x_T)), then for each start (ρ, φ(Z_T), quadratic)
    type PathOut = ((f64, Vec<f64>), Vec<(f64, Vec<f64>, f64)>);
    let rows: Vec<PathOut> = (0..mc.n_paths)
        .into_par_iter()
        .map(|p| {
            let (whites, fbm) = drive(&gen, seed, model.n_modes(), p);
            let eval = |start: &[f64]| -> Result<(f64, Vec<f64>, f64)> {
                let (z, d) = linear_with_density(model, g, grid, &fbm, &whites, start, p)?;
                let zt: Vec<f64> = z.iter().map(|r| r[n]).collect();
                Ok((d.rho, battery.iter().map(|phi| phi.eval(&zt)).collect(), d.quadratic_term))
            };
            let base = eval(x)?;
            let shifted = starts.iter().map(|s| eval(s)).collect::<Result<Vec<_>>>()?;
            Ok(((base.0, base.1), shifted))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(starts.len());
    for (s, start) in starts.iter().enumerate() {
        let (direction, level) = (s / dyadic_levels, s % dyadic_levels);
        let absdiff: Vec<f64> = rows.iter().map(|r| (r.1[s].0 - r.0 .0).abs()).collect();
        let phi_diffs = (0..battery.len())
            .map(|i| {
                let v: Vec<f64> = rows
                    .iter()
                    .map(|r| r.1[s].1[i] * r.1[s].0 - r.0 .1[i] * r.0 .0)
                    .collect();
                mean_se(&v)
            })
            .collect();
        let np = rows.len().max(1) as f64;
        records.push(ProbeRecord {
            direction,
            level,
            offset: start.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
            rho_diff: mean_se(&absdiff),
            phi_diffs,
            mean_quadratic: rows.iter().map(|r| r.1[s].2).sum::<f64>() / np,
            tail_mass: TAIL_LEVELS
                .iter()
                .map(|k| rows.iter().filter(|r| r.1[s].0 > *k).count() as f64 / np)
                .collect(),
        });
    }
    let trends = (0..directions.len())
        .map(|d| {
            let seq: Vec<&ProbeRecord> = records.iter().filter(|r| r.direction == d).collect();
            probe_trend(d, &seq)
        })
        .collect();
    Ok(ProbeReport { records, trends })
}

fn probe_trend(direction: usize, seq: &[&ProbeRecord]) -> ProbeTrend {
    let means: Vec<f64> = seq.iter().map(|r| r.rho_diff.mean).collect();
    let weights: Vec<f64> = seq
        .iter()
        .map(|r| 1.0 / r.rho_diff.se.max(1e-300).powi(2))
        .collect();
    let fit = isotonic_nonincreasing(&means, &weights);
    let nonincreasing = seq
        .iter()
        .zip(&fit)
        .all(|(r, f)| (r.rho_diff.mean - f).abs() <= 2.0 * r.rho_diff.se);
    let final_over_initial = match (means.first(), means.last()) {
        (Some(a), Some(b)) if *a > 0.0 => b / a,
        _ => 0.0,
    };
    ProbeTrend { direction, nonincreasing, final_over_initial }
}
