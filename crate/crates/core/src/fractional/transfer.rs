//! Transfer operators `𝒦*_β` (dual side) and `𝕂_β` (Volterra side) with the
//! inverse of the latter.

use rayon::prelude::*;

use super::kernel::{c_tilde, kernel_k, kernel_prefactor, KernelCells};
use super::ops::{frac_apply, gl_derivative, rl_integral_cells, FracOpSpec, Side};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, HurstParameter, Roughness};
use crate::quad::singular_l2_sq;

/// `K_β(T, t_k)` at every node; the singular ends are left at zero.
fn kernel_at_horizon(beta: HurstParameter, grid: &Grid) -> Result<Vec<f64>> {
    let t_end = grid.t_end();
    let n = grid.n_steps();
    let mut out: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|k| {
            if k == 0 || k == n {
                Ok(0.0)
            } else {
                kernel_k(beta, t_end, grid.node(k))
            }
        })
        .collect::<Result<_>>()?;
    out[0] = 0.0;
    Ok(out)
}

/// Exponent `p` of the leading power `t^p` of `𝒦*_β φ` at `t = 0`.
pub(crate) fn kstar_left_exponent(beta: HurstParameter) -> f64 {
    -(beta.value() - 0.5).abs()
}

/// Exponent of the leading power `(T-t)^p` at `t = T`, when singular.
pub(crate) fn kstar_right_exponent(beta: HurstParameter) -> Option<f64> {
    (beta.roughness() == Roughness::Rough).then(|| beta.value() - 0.5)
}

/// Exponents of `|𝒦*_β φ|²` near `t = 0` and `t = T` for smooth `φ`.
pub(crate) fn kstar_sq_exponents(beta: HurstParameter) -> (Vec<f64>, Vec<f64>) {
    let p = (beta.value() - 0.5).abs();
    let mut left: Vec<f64> = Vec::new();
    for q in [-2.0 * p, 0.0, 2.0 * p, 1.0 - 2.0 * p, 1.0, 1.0 + 2.0 * p] {
        if left.iter().all(|e| (e - q).abs() > 1e-9) {
            left.push(q);
        }
    }
    let right = match beta.roughness() {
        Roughness::Rough => vec![-2.0 * p, 1.0 - 2.0 * p],
        _ => vec![2.0 * p, 1.0 + 2.0 * p],
    };
    (left, right)
}

/// `𝒦*_β φ` on the grid.
///
/// The difference form `φ(t)K(T,t) + ∫_t^T (φ(s)-φ(t)) ∂_s K(s,t) ds` is
/// integrated cell by cell with `φ` and `(s/t)^{β-½}` linear on each cell and
/// the power `(s-t)^{β-3/2}` integrated exactly. Nodes where the result is
/// singular hold the cell mean of the leading power law.
pub fn apply_kstar(beta: HurstParameter, phi: &GridFunction) -> Result<GridFunction> {
    phi.check_finite("apply_kstar input")?;
    if beta.is_standard() {
        return Ok(phi.clone());
    }
    let grid = *phi.grid();
    grid.require_operator_resolution()?;
    let kt = kernel_at_horizon(beta, &grid)?;
    let b = beta.value();
    let n = grid.n_steps();
    let mut e1: Vec<f64> = (0..=n).map(|d| (d as f64).powf(b - 0.5)).collect();
    // only ever multiplied by a zero distance
    e1[0] = 0.0;
    let coeff = kernel_prefactor(beta) * (b - 0.5) * grid.dt().powf(b - 0.5);
    let p_left = kstar_left_exponent(beta);
    let p_right = kstar_right_exponent(beta);

    let out = phi.map_rows(|row| {
        let mut out = vec![0.0; n + 1];
        for k in 1..n {
            let mut acc = 0.0;
            for j in k..n {
                let (da, db) = ((j - k) as f64, (j + 1 - k) as f64);
                let slope = row[j + 1] - row[j];
                let a = if j == k {
                    0.0
                } else {
                    row[j] - row[k] - slope * da
                };
                let (wa, wb) = (e1[j] / e1[k], e1[j + 1] / e1[k]);
                let q = wb - wa;
                let p = wa - q * da;
                let m0 = if j == k {
                    0.0
                } else {
                    (e1[j + 1 - k] - e1[j - k]) / (b - 0.5)
                };
                let m1 = (db * e1[j + 1 - k] - da * e1[j - k]) / (b + 0.5);
                let m2 = (db * db * e1[j + 1 - k] - da * da * e1[j - k]) / (b + 1.5);
                acc += a * p * m0 + (a * q + slope * p) * m1 + slope * q * m2;
            }
            out[k] = row[k] * kt[k] + coeff * acc;
        }
        out[0] = out[1] / (p_left + 1.0);
        out[n] = match p_right {
            Some(p) => out[n - 1] / (p + 1.0),
            None => 0.0,
        };
        out
    });
    out.check_finite("apply_kstar output")?;
    Ok(out)
}

/// `𝒦*_β` through its fractional-calculus representation: a weighted
/// right-sided integral for `β > ½`, a weighted right-sided Marchaud
/// derivative for `β < ½`. Slower and less accurate than [`apply_kstar`];
/// kept as an independent route.
pub fn apply_kstar_fractional(beta: HurstParameter, phi: &GridFunction) -> Result<GridFunction> {
    if beta.is_standard() {
        return Ok(phi.clone());
    }
    let grid = *phi.grid();
    let b = beta.value();
    let ct = c_tilde(beta);
    let dt = grid.dt();
    let nodes = grid.nodes();
    let (inner_pow, op) = match beta.roughness() {
        Roughness::Smooth => (b - 0.5, FracOpSpec::integral(b - 0.5, Side::Right)?),
        _ => (b - 0.5, FracOpSpec::derivative(0.5 - b, Side::Right)?),
    };
    let mut weighted = phi.clone();
    for m in 0..phi.n_modes() {
        let row = weighted.mode_mut(m);
        for (k, v) in row.iter_mut().enumerate() {
            *v *= if k == 0 {
                // cell mean of u^{β-½} on [0, Δ]
                dt.powf(inner_pow) / (inner_pow + 1.0)
            } else {
                nodes[k].powf(inner_pow)
            };
        }
    }
    let mut out = frac_apply(op, &weighted)?;
    let n = grid.n_steps();
    for m in 0..out.n_modes() {
        let row = out.mode_mut(m);
        for k in 1..=n {
            row[k] *= ct * nodes[k].powf(-inner_pow);
        }
        row[0] = row[1] / (kstar_left_exponent(beta) + 1.0);
    }
    Ok(out)
}

/// `‖𝒦*_β φ‖_{L²(0,T;H)}`; at `β = ½` this is the trapezoidal `L²` norm.
pub fn hnorm(beta: HurstParameter, phi: &GridFunction) -> Result<f64> {
    if beta.is_standard() {
        phi.check_finite("hnorm input")?;
        return Ok(phi.l2_norm());
    }
    let k = apply_kstar(beta, phi)?;
    Ok(kstar_l2_sq(beta, &k).sqrt())
}

/// Squared `L²` norm of an output of [`apply_kstar`], with endpoint
/// corrections for its power-law singularities.
pub(crate) fn kstar_l2_sq(beta: HurstParameter, k: &GridFunction) -> f64 {
    let dt = k.grid().dt();
    let (left, right) = kstar_sq_exponents(beta);
    k.rows().map(|row| singular_l2_sq(row, dt, &left, &right)).sum()
}

/// `(𝕂_β φ)(t_k) = ∫_0^{t_k} K_β(t_k, s) φ(s) ds` with `φ` replaced by its cell
/// midpoint values and exact cell integrals of the kernel.
pub fn apply_kbig(beta: HurstParameter, phi: &GridFunction) -> Result<GridFunction> {
    phi.check_finite("apply_kbig input")?;
    let grid = *phi.grid();
    grid.require_operator_resolution()?;
    let n = grid.n_steps();
    let scale = grid.dt().powf(beta.value() + 0.5);
    let cells = KernelCells::shared(beta, n)?;
    Ok(phi.map_rows(|row| {
        let mid: Vec<f64> = row.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut out = vec![0.0; n + 1];
        for k in 1..=n {
            out[k] = scale
                * cells
                    .row(k)
                    .iter()
                    .zip(&mid)
                    .map(|(w, f)| w * f)
                    .sum::<f64>();
        }
        out
    }))
}

/// `𝕂_β^{-1}` applied to a function given by its increments over the cells.
///
/// Returns one value per cell: entry `k` is the inverse evaluated at
/// `t_{k+1}` using increments `0..=k` only, so the output is adapted to the
/// filtration generated by the increments.
pub fn invert_kbig_cells(beta: HurstParameter, dt: f64, dpsi: &[f64]) -> Vec<f64> {
    let n = dpsi.len();
    if beta.is_standard() {
        return dpsi.iter().map(|d| d / dt).collect();
    }
    let b = beta.value();
    let c = 1.0 / c_tilde(beta);
    // s^{½-β} ψ' on each cell, assuming ψ' ∝ s^{β-½} inside the cell
    let g: Vec<f64> = (0..n)
        .map(|j| {
            let (lo, hi) = ((j as f64) * dt, ((j + 1) as f64) * dt);
            dpsi[j] * (b + 0.5) / (hi.powf(b + 0.5) - lo.powf(b + 0.5))
        })
        .collect();
    let weight = |k: usize| c * ((k + 1) as f64 * dt).powf(b - 0.5);
    match beta.roughness() {
        Roughness::Rough => {
            let phi = rl_integral_cells(&g, 0.5 - b, dt);
            (0..n).map(|k| weight(k) * phi[k + 1]).collect()
        }
        _ => {
            let e = 1.5 - b;
            let phi = rl_integral_cells(&g, e, dt);
            // the difference quotient is rescaled to be exact when Φ ∝ t^e,
            // the behaviour produced by ψ' ∝ s^{β-½} near the origin
            (0..n)
                .map(|k| {
                    let (lo, hi) = (k as f64, (k + 1) as f64);
                    let exact = e * hi.powf(e - 1.0) / (hi.powf(e) - lo.powf(e));
                    weight(k) * (phi[k + 1] - phi[k]) * exact / dt
                })
                .collect()
        }
    }
}

/// `𝕂_β^{-1} ψ` for absolutely continuous `ψ` with `ψ(0) = 0`: the
/// `I^{½-β}`-route for `β < ½` and the `D^{β-½}`-route for `β > ½`.
///
/// Node `k+1` carries the adapted cell value of [`invert_kbig_cells`]; node 0
/// repeats node 1.
pub fn invert_kbig(beta: HurstParameter, psi: &GridFunction) -> Result<GridFunction> {
    psi.check_finite("invert_kbig input")?;
    psi.grid().require_operator_resolution()?;
    let dt = psi.grid().dt();
    for (m, row) in psi.rows().enumerate() {
        let scale = row.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if row[0].abs() > 1e-12 * scale {
            return Err(Error::param(
                "psi",
                format!("mode {m} has psi(0) = {} != 0", row[0]),
            ));
        }
    }
    let out = psi.map_rows(|row| {
        let d: Vec<f64> = row.windows(2).map(|w| w[1] - w[0]).collect();
        let v = invert_kbig_cells(beta, dt, &d);
        let mut out = Vec::with_capacity(row.len());
        out.push(v[0]);
        out.extend(v);
        out
    });
    out.check_finite("invert_kbig output")?;
    Ok(out)
}

/// `𝕂_β^{-1} ψ = c t^{½-β} D^{½-β}(t^{β-½} D^{2β} ψ)` for `β < ½`, with
/// Grünwald-Letnikov derivatives. Needs no derivative of `ψ`; noisier than
/// [`invert_kbig`].
pub fn invert_kbig_general(beta: HurstParameter, psi: &GridFunction) -> Result<GridFunction> {
    if beta.roughness() != Roughness::Rough {
        return Err(Error::param(
            "beta",
            "the general inverse is implemented for beta < 1/2",
        ));
    }
    psi.grid().require_operator_resolution()?;
    let b = beta.value();
    let c = 1.0 / c_tilde(beta);
    let dt = psi.grid().dt();
    let nodes = psi.grid().nodes();
    let out = psi.map_rows(|row| {
        let d2 = gl_derivative(row, 2.0 * b, dt);
        let mut inner: Vec<f64> = d2
            .iter()
            .zip(&nodes)
            .map(|(v, t)| if *t > 0.0 { v * t.powf(b - 0.5) } else { 0.0 })
            .collect();
        inner[0] = 0.0;
        let d = gl_derivative(&inner, 0.5 - b, dt);
        let mut out: Vec<f64> = d
            .iter()
            .zip(&nodes)
            .map(|(v, t)| c * v * t.powf(0.5 - b))
            .collect();
        out[0] = out[1];
        out
    });
    out.check_finite("invert_kbig_general output")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(b: f64) -> HurstParameter {
        HurstParameter::new(b).unwrap()
    }

    #[test]
    fn standard_collapse() {
        let g = Grid::new(1.0, 16).unwrap();
        let f = GridFunction::scalar(g, |t| (3.0 * t).sin());
        assert_eq!(apply_kstar(h(0.5), &f).unwrap(), f);
        assert_eq!(hnorm(h(0.5), &f).unwrap(), f.l2_norm());
    }

    #[test]
    fn kstar_of_constant_is_kernel() {
        let g = Grid::new(1.0, 32).unwrap();
        let f = GridFunction::scalar(g, |_| 1.0);
        for b in [0.3, 0.8] {
            let k = apply_kstar(h(b), &f).unwrap();
            let t = g.node(10);
            let want = kernel_k(h(b), 1.0, t).unwrap();
            assert!((k.value(0, 10) - want).abs() < 1e-12 * want.abs());
        }
    }

    #[test]
    fn nonzero_start_rejected() {
        let g = Grid::new(1.0, 16).unwrap();
        let f = GridFunction::scalar(g, |t| 1.0 + t);
        assert!(invert_kbig(h(0.3), &f).is_err());
    }

    #[test]
    fn standard_inverse_is_difference_quotient() {
        let dt = 0.1;
        let v = invert_kbig_cells(h(0.5), dt, &[0.2, 0.2, 0.2]);
        assert!(v.iter().all(|x| (x - 2.0).abs() < 1e-14));
    }
}
