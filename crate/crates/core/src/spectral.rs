//! Diagonal linear model `A e_n = -α_n e_n`, `B e_n = √λ_n e_n`: stochastic
//! convolution paths, the covariance spectrum `q_n` and the equivalence-of-laws
//! criterion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractional::{apply_kstar, hnorm, hnorm_oracle, kstar_l2_sq};
use crate::grid::{Grid, GridFunction, HurstParameter};
use crate::noise::{check_cap, FbmGenerator, NoiseSeed, DEFAULT_VALUE_CAP};
use crate::stats::{variance_se, MeanSe};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// `q_n` is computed on `[0, min(α_n T, Q_HORIZON_CAP)]` after rescaling time by
/// `α_n`. The neglected tail decays like `e^{-cap}` times a power of the cap;
/// at 20 it is about `1e-9` relative.
pub const Q_HORIZON_CAP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    alphas: Vec<f64>,
    lambdas: Vec<f64>,
    beta: HurstParameter,
    t_end: f64,
}

impl SpectralModel {
    /// Validates `0 < α_1 ≤ α_2 ≤ …`, `λ_n > 0` finite, `T > 0`; every violation
    /// is listed in the error.
    pub fn new(alphas: Vec<f64>, lambdas: Vec<f64>, beta: HurstParameter, t_end: f64) -> Result<Self> {
        let mut problems = Vec::new();
        if alphas.is_empty() {
            problems.push("at least one mode required".to_string());
        }
        if alphas.len() != lambdas.len() {
            problems.push(format!(
                "{} alphas but {} lambdas",
                alphas.len(),
                lambdas.len()
            ));
        }
        for (i, a) in alphas.iter().enumerate() {
            if !(a.is_finite() && *a > 0.0) {
                problems.push(format!("alpha[{i}] = {a} is not positive"));
            }
        }
        for (i, w) in alphas.windows(2).enumerate() {
            if w[1] < w[0] {
                problems.push(format!("alphas not nondecreasing at index {}", i + 1));
            }
        }
        for (i, l) in lambdas.iter().enumerate() {
            if !(l.is_finite() && *l > 0.0) {
                problems.push(format!("lambda[{i}] = {l} is not positive and finite"));
            }
        }
        if !(t_end.is_finite() && t_end > 0.0) {
            problems.push(format!("T = {t_end} is not positive"));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidModel(problems));
        }
        Ok(Self { alphas, lambdas, beta, t_end })
    }

    /// Dirichlet Laplacian on `(0,1)` with identity noise: `α_n = (πn)²`, `λ_n = 1`.
    pub fn heat_dirichlet(n_modes: usize, beta: HurstParameter, t_end: f64) -> Result<Self> {
        Self::higher_order(n_modes, 1, beta, t_end)
    }

    /// Order-`2m` elliptic operator on `(0,1)`: `α_n = (πn)^{2m}`, `λ_n = 1`.
    pub fn higher_order(n_modes: usize, m: u32, beta: HurstParameter, t_end: f64) -> Result<Self> {
        let alphas = (1..=n_modes)
            .map(|n| (std::f64::consts::PI * n as f64).powi(2 * m as i32))
            .collect();
        Self::new(alphas, vec![1.0; n_modes], beta, t_end)
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn beta(&self) -> HurstParameter {
        self.beta
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_modes(&self) -> usize {
        self.alphas.len()
    }

    pub fn with_lambdas(&self, lambdas: Vec<f64>) -> Result<Self> {
        Self::new(self.alphas.clone(), lambdas, self.beta, self.t_end)
    }

    pub fn with_beta(&self, beta: HurstParameter) -> Self {
        Self { beta, ..self.clone() }
    }

    /// `S(t)x` mode-wise.
    pub fn semigroup(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.alphas.iter().zip(x).map(|(a, v)| (-a * t).exp() * v).collect()
    }

    /// Per-step factors `(e^{-α_n Δ}, φ₁(α_n Δ))` with `φ₁(z) = (1 - e^{-z})/z`.
    pub(crate) fn step_factors(&self, dt: f64) -> Vec<(f64, f64)> {
        self.alphas
            .iter()
            .map(|a| {
                let z = a * dt;
                ((-z).exp(), phi1(z))
            })
            .collect()
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes(),
                got: x.len(),
                context: "initial state",
            });
        }
        Ok(())
    }

    pub(crate) fn check_grid(&self, grid: &Grid) -> Result<()> {
        if (grid.t_end() - self.t_end).abs() > 1e-12 * self.t_end {
            return Err(Error::GridMismatch(format!(
                "grid horizon {} differs from model horizon {}",
                grid.t_end(),
                self.t_end
            )));
        }
        Ok(())
    }
}

/// `d/(4m) < β`: the sufficient condition for the order-`2m` operator in
/// dimension `d`.
pub fn dm_condition(d: u32, m: u32, beta: HurstParameter) -> bool {
    (d as f64) / (4.0 * m as f64) < beta.value()
}

pub(crate) fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        -(-z).exp_m1() / z
    }
}

/// Monte Carlo sample of `Z^x` with the noise that drove it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuEnsemble {
    pub model: SpectralModel,
    pub grid: Grid,
    pub initial: Vec<f64>,
    pub n_paths: usize,
    pub seed: NoiseSeed,
    paths: Vec<f64>,
    white: Vec<f64>,
}

impl OuEnsemble {
    pub fn path(&self, p: usize, m: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        let off = (p * self.model.n_modes() + m) * n;
        &self.paths[off..off + n]
    }

    pub fn white_increments(&self, p: usize, m: usize) -> &[f64] {
        let n = self.grid.n_steps();
        let off = (p * self.model.n_modes() + m) * n;
        &self.white[off..off + n]
    }

    /// `Z_m(T)` across paths.
    pub fn terminal(&self, m: usize) -> Vec<f64> {
        let k = self.grid.n_steps();
        (0..self.n_paths).map(|p| self.path(p, m)[k]).collect()
    }

    pub(crate) fn from_parts(
        model: SpectralModel,
        grid: Grid,
        initial: Vec<f64>,
        n_paths: usize,
        seed: NoiseSeed,
        paths: Vec<f64>,
        white: Vec<f64>,
    ) -> Self {
        Self { model, grid, initial, n_paths, seed, paths, white }
    }
}

/// Linear paths of every mode driven by the given fBm paths.
pub(crate) fn ou_from_fbm(model: &SpectralModel, dt: f64, fbm: &[Vec<f64>], x: &[f64]) -> Vec<Vec<f64>> {
    let factors = model.step_factors(dt);
    fbm.iter()
        .enumerate()
        .map(|(m, b)| {
            let (decay, f1) = factors[m];
            let amp = model.lambdas[m].sqrt() * f1;
            let mut z = vec![0.0; b.len()];
            z[0] = x[m];
            for k in 0..b.len() - 1 {
                z[k + 1] = decay * z[k] + amp * (b[k + 1] - b[k]);
            }
            z
        })
        .collect()
}

/// White increments and fBm paths of every mode for path `p`.
pub(crate) fn drive(
    gen: &FbmGenerator,
    seed: NoiseSeed,
    n_modes: usize,
    p: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let whites: Vec<Vec<f64>> = (0..n_modes).map(|m| gen.white(seed, m, p)).collect();
    let fbm = whites.iter().map(|w| gen.path_from_white(w)).collect();
    (whites, fbm)
}

/// States and white increments of every mode for one path.
pub(crate) type ModeRows = (Vec<Vec<f64>>, Vec<Vec<f64>>);

pub(crate) fn ou_single_path(
    model: &SpectralModel,
    gen: &FbmGenerator,
    seed: NoiseSeed,
    x: &[f64],
    p: usize,
) -> ModeRows {
    let (whites, fbm) = drive(gen, seed, model.n_modes(), p);
    (ou_from_fbm(model, gen.grid().dt(), &fbm, x), whites)
}

/// Exponential integrator with the fBm increment spread uniformly over each
/// cell: `Z_{k+1} = e^{-αΔ} Z_k + √λ φ₁(αΔ) ΔB_k`.
pub fn simulate_ou(
    model: &SpectralModel,
    grid: Grid,
    x: &[f64],
    n_paths: usize,
    seed: NoiseSeed,
) -> Result<OuEnsemble> {
    model.check_state(x)?;
    model.check_grid(&grid)?;
    check_cap(
        n_paths * model.n_modes() * (2 * grid.n_steps() + 1),
        DEFAULT_VALUE_CAP,
    )?;
    let gen = FbmGenerator::new(model.beta, grid)?;
    let blocks: Vec<ModeRows> = (0..n_paths)
        .into_par_iter()
        .map(|p| ou_single_path(model, &gen, seed, x, p))
        .collect();
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

fn mode_index(model: &SpectralModel, n: usize) -> Result<usize> {
    if n == 0 || n > model.n_modes() {
        return Err(Error::param(
            "n",
            format!("mode {n} outside 1..={}", model.n_modes()),
        ));
    }
    Ok(n - 1)
}

/// Rescaled grid `[0, min(α T, cap)]` with `ψ(t) = e^{-t}` on it.
fn rescaled_psi(alpha: f64, t_end: f64, n_steps: usize) -> Result<GridFunction> {
    let tau = (alpha * t_end).min(Q_HORIZON_CAP);
    Ok(GridFunction::scalar(Grid::new(tau, n_steps)?, |t| (-t).exp()))
}

/// `q_n = λ_n ‖𝒦*_β ψ_n‖²_{L²(0,T)}`, `ψ_n(t) = e^{-α_n t}`, evaluated as
/// `λ_n α_n^{-2β} ‖𝒦*_β e^{-·}‖²` on the rescaled horizon `α_n T`.
pub fn covariance_qn(model: &SpectralModel, n: usize, n_steps: usize) -> Result<f64> {
    let i = mode_index(model, n)?;
    let (a, l) = (model.alphas[i], model.lambdas[i]);
    let psi = rescaled_psi(a, model.t_end, n_steps)?;
    let h = hnorm(model.beta, &psi)?;
    Ok(l * a.powf(-2.0 * model.beta.value()) * h * h)
}

/// Same quantity on the original horizon `[0, T]` without rescaling.
pub fn covariance_qn_direct(model: &SpectralModel, n: usize, n_steps: usize) -> Result<f64> {
    let i = mode_index(model, n)?;
    let (a, l) = (model.alphas[i], model.lambdas[i]);
    let psi = GridFunction::scalar(Grid::new(model.t_end, n_steps)?, |t| (-a * t).exp());
    if model.beta.is_standard() {
        let h = hnorm(model.beta, &psi)?;
        return Ok(l * h * h);
    }
    Ok(l * kstar_l2_sq(model.beta, &apply_kstar(model.beta, &psi)?))
}

/// Oracle route through [`hnorm_oracle`]: equal to `q_n` for `β > ½`,
/// equivalent up to constants for `β < ½`.
pub fn covariance_qn_oracle(model: &SpectralModel, n: usize, n_steps: usize) -> Result<f64> {
    let i = mode_index(model, n)?;
    let (a, l) = (model.alphas[i], model.lambdas[i]);
    let psi = rescaled_psi(a, model.t_end, n_steps)?;
    Ok(l * a.powf(-2.0 * model.beta.value()) * hnorm_oracle(model.beta, &psi)?)
}

/// Sample variance of `Z_n(T)` for every mode, with standard errors.
pub fn empirical_covariance(ensemble: &OuEnsemble) -> Result<Vec<MeanSe>> {
    if ensemble.n_paths < 100 {
        return Err(Error::param(
            "n_paths",
            format!("{} < 100 paths", ensemble.n_paths),
        ));
    }
    if ensemble.initial.iter().any(|v| *v != 0.0) {
        return Err(Error::param("x", "empirical covariance needs x = 0"));
    }
    Ok((0..ensemble.model.n_modes())
        .map(|m| variance_se(&ensemble.terminal(m)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Equivalent,
    Singular,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub n: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub q_n: f64,
    /// `ln e^{-2α_n T}`
    pub ln_decay: f64,
    /// `ln(e^{-2α_n T} / q_n)`
    pub ln_ratio: f64,
    /// `ln(α_n^{2β} λ_n^{-1} e^{-2α_n T})`
    pub ln_necsuf: f64,
    /// `e^{-2α_n T} / q_n` when representable as a finite double
    pub ratio: Option<f64>,
    pub necsuf: Option<f64>,
    /// `q_n α_n^{2β} / λ_n`
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub version: u32,
    pub model: SpectralModel,
    pub n_steps: usize,
    pub per_mode: Vec<ModeRecord>,
    pub sup_necsuf: Option<f64>,
    pub ln_sup_necsuf: f64,
    /// 1-based mode where `e^{-2α_n T}/q_n` is largest.
    pub argmax_ratio: usize,
    /// `(min, max)` of `q_n α_n^{2β} / λ_n` over computed modes.
    pub bounds: (f64, f64),
    pub verdict: Verdict,
}

/// Applies the verdict rule to `ln necsuf_n`: over the last half of the
/// modes, nonincreasing ⇒ equivalent; nondecreasing with total growth at
/// least a factor 10 ⇒ singular; otherwise inconclusive.
pub fn verdict_from_necsuf(ln_necsuf: &[f64]) -> Verdict {
    let n = ln_necsuf.len();
    if n < 2 {
        return Verdict::Inconclusive;
    }
    let tail = &ln_necsuf[n / 2..];
    let tail = if tail.len() < 2 { &ln_necsuf[n - 2..] } else { tail };
    let nonincreasing = tail.windows(2).all(|w| w[1] <= w[0]);
    let nondecreasing = tail.windows(2).all(|w| w[1] >= w[0]);
    let growth = tail[tail.len() - 1] - tail[0];
    if nonincreasing && ln_necsuf.iter().all(|v| v.is_finite()) {
        Verdict::Equivalent
    } else if nondecreasing && growth >= 10f64.ln() {
        Verdict::Singular
    } else {
        Verdict::Inconclusive
    }
}

pub fn equivalence_report(model: &SpectralModel, n_steps: usize) -> Result<CriterionReport> {
    let b = model.beta.value();
    let t = model.t_end;
    let qs: Vec<f64> = (1..=model.n_modes())
        .into_par_iter()
        .map(|n| covariance_qn(model, n, n_steps))
        .collect::<Result<_>>()?;
    let per_mode: Vec<ModeRecord> = qs
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let (a, l) = (model.alphas[i], model.lambdas[i]);
            let ln_decay = -2.0 * a * t;
            let ln_ratio = ln_decay - q.ln();
            let ln_necsuf = 2.0 * b * a.ln() - l.ln() + ln_decay;
            ModeRecord {
                n: i + 1,
                alpha: a,
                lambda: l,
                q_n: *q,
                ln_decay,
                ln_ratio,
                ln_necsuf,
                ratio: representable(ln_ratio),
                necsuf: representable(ln_necsuf),
                band: q * a.powf(2.0 * b) / l,
            }
        })
        .collect();
    let ln_nec: Vec<f64> = per_mode.iter().map(|r| r.ln_necsuf).collect();
    let ln_sup_necsuf = ln_nec.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let argmax_ratio = per_mode
        .iter()
        .max_by(|x, y| x.ln_ratio.total_cmp(&y.ln_ratio))
        .map(|r| r.n)
        .unwrap_or(1);
    let bands = per_mode.iter().map(|r| r.band);
    let bounds = (
        bands.clone().fold(f64::INFINITY, f64::min),
        bands.fold(0.0, f64::max),
    );
    Ok(CriterionReport {
        version: REPORT_SCHEMA_VERSION,
        model: model.clone(),
        n_steps,
        verdict: verdict_from_necsuf(&ln_nec),
        per_mode,
        sup_necsuf: representable(ln_sup_necsuf),
        ln_sup_necsuf,
        argmax_ratio,
        bounds,
    })
}

/// `e^{x}` when it is a finite, nonzero double.
fn representable(ln: f64) -> Option<f64> {
    let v = ln.exp();
    (v.is_finite() && v > 0.0).then_some(v)
}

impl CriterionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per mode: `n, alpha, lambda, q_n, ln_ratio, ln_necsuf, band`.
    pub fn to_csv(&self) -> String {
        crate::io::csv_string(
            &["n", "alpha", "lambda", "q_n", "ln_ratio", "ln_necsuf", "band"],
            self.per_mode.iter().map(|r| {
                vec![
                    r.n as f64,
                    r.alpha,
                    r.lambda,
                    r.q_n,
                    r.ln_ratio,
                    r.ln_necsuf,
                    r.band,
                ]
            }),
        )
    }
}

/// Hölder exponent of one path: slope of `log M(h)` against `log h`, where
/// `M(h)` is the largest increment over lag `h = 2^j Δ`, `j < n_lags`,
/// divided by the Lévy modulus factor `√(2 log(T/h))`.
pub fn holder_exponent(path: &[f64], dt: f64, n_lags: u32) -> f64 {
    let n = path.len() - 1;
    let t_end = n as f64 * dt;
    let pts: Vec<(f64, f64)> = (0..n_lags)
        .map(|j| {
            let lag = 1usize << j;
            let m = (0..=n - lag)
                .map(|k| (path[k + lag] - path[k]).abs())
                .fold(0.0, f64::max);
            let h = lag as f64 * dt;
            (h.ln(), (m / (2.0 * (t_end / h).ln()).sqrt()).ln())
        })
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(b: f64) -> HurstParameter {
        HurstParameter::new(b).unwrap()
    }

    #[test]
    fn heat_preset_first_eigenvalue() {
        let m = SpectralModel::heat_dirichlet(3, h(0.6), 1.0).unwrap();
        assert!((m.alphas()[0] - std::f64::consts::PI.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn invariants_itemized() {
        let err = SpectralModel::new(vec![2.0, 1.0], vec![1.0, -1.0], h(0.6), 1.0).unwrap_err();
        match err {
            Error::InvalidModel(items) => assert_eq!(items.len(), 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn dm_flag() {
        assert!(dm_condition(1, 1, h(0.3)));
        assert!(!dm_condition(1, 1, h(0.25)));
        assert!(!dm_condition(1, 1, h(0.2)));
    }

    #[test]
    fn verdict_rule() {
        assert_eq!(verdict_from_necsuf(&[1.0, 0.0, -1.0, -2.0]), Verdict::Equivalent);
        assert_eq!(verdict_from_necsuf(&[0.0, 1.0, 2.0, 5.0]), Verdict::Singular);
        assert_eq!(verdict_from_necsuf(&[0.0, 1.0, 0.5, 0.7]), Verdict::Inconclusive);
    }

    #[test]
    fn phi1_limits() {
        assert_eq!(phi1(0.0), 1.0);
        assert!((phi1(1.0) - (1.0 - (-1f64).exp())).abs() < 1e-15);
    }
}
