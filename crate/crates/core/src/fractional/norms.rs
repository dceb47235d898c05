//! Double-integral evaluations of `‖φ‖²_{H_β}`, independent of `𝒦*_β`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, HurstParameter, Roughness};

/// Autocovariance of unit-step fractional Gaussian noise at lag `m`.
pub fn fgn_autocovariance(beta: HurstParameter, m: usize) -> f64 {
    let h2 = 2.0 * beta.value();
    let m = m as f64;
    0.5 * ((m + 1.0).powf(h2) - 2.0 * m.powf(h2) + (m - 1.0).abs().powf(h2))
}

const GL3_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Smooth case: `∬ φ(r)φ(s) β(2β-1)|r-s|^{2β-2} dr ds`, exact for
/// piecewise-constant `φ` (cell means of the node data).
/// Rough case: the Sobolev-Slobodeckij seminorm
/// `∬ |φ(r)-φ(s)|² / |r-s|^{2-2β} dr ds` of the piecewise-linear interpolant,
/// which is equivalent to, not equal to, the `H_β` norm.
pub fn hnorm_oracle(beta: HurstParameter, phi: &GridFunction) -> Result<f64> {
    phi.check_finite("hnorm_oracle input")?;
    let dt = phi.grid().dt();
    let rows: Vec<&[f64]> = phi.rows().collect();
    match beta.roughness() {
        Roughness::Standard => Err(Error::param(
            "beta",
            "the double-integral oracle is undefined at beta = 1/2; use hnorm",
        )),
        Roughness::Smooth => {
            let n = phi.grid().n_steps();
            let gam: Vec<f64> = (0..n).map(|m| fgn_autocovariance(beta, m)).collect();
            let scale = dt.powf(2.0 * beta.value());
            Ok(rows
                .par_iter()
                .map(|row| {
                    let mean: Vec<f64> = row.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                    let mut acc = 0.0;
                    for i in 0..n {
                        let mut inner = gam[0] * mean[i];
                        for j in 0..i {
                            inner += 2.0 * gam[i - j] * mean[j];
                        }
                        acc += mean[i] * inner;
                    }
                    scale * acc
                })
                .sum())
        }
        Roughness::Rough => Ok(rows
            .par_iter()
            .map(|row| gagliardo_sq(beta.value(), row, dt))
            .sum()),
    }
}

fn gagliardo_sq(b: f64, row: &[f64], dt: f64) -> f64 {
    let n = row.len() - 1;
    let expo = 2.0 - 2.0 * b;
    let lin = |i: usize, x: f64| row[i] + (row[i + 1] - row[i]) * x;
    let mut acc = 0.0;
    for i in 0..n {
        let slope = (row[i + 1] - row[i]) / dt;
        // same cell: slope² ∬ |r-s|^{2β} over a square of side Δ
        acc += slope * slope * dt.powf(2.0 * b + 2.0) * 2.0 / ((2.0 * b + 1.0) * (2.0 * b + 2.0));
        for j in 0..i {
            let (xs, ws): (&[f64], &[f64]) = if i - j == 1 {
                (&GL8_X, &GL8_W)
            } else {
                (&GL3_X, &GL3_W)
            };
            let mut pair = 0.0;
            for (xa, wa) in xs.iter().zip(ws) {
                let ua = 0.5 * (1.0 + xa);
                for (xb, wb) in xs.iter().zip(ws) {
                    let ub = 0.5 * (1.0 + xb);
                    let d = ((i - j) as f64 + ua - ub) * dt;
                    let diff = lin(i, ua) - lin(j, ub);
                    pair += wa * wb * diff * diff / d.powf(expo);
                }
            }
            // two symmetric off-diagonal blocks, each of area Δ²; GL weights sum to 2 per axis
            acc += 2.0 * pair * 0.25 * dt * dt;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn smooth_constant_is_exact() {
        let b = HurstParameter::new(0.75).unwrap();
        let g = Grid::new(2.0, 40).unwrap();
        let one = GridFunction::scalar(g, |_| 1.0);
        let v = hnorm_oracle(b, &one).unwrap();
        assert!((v - 2f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn rough_seminorm_vanishes_on_constants() {
        let b = HurstParameter::new(0.25).unwrap();
        let g = Grid::new(1.0, 16).unwrap();
        let one = GridFunction::scalar(g, |_| 3.0);
        assert!(hnorm_oracle(b, &one).unwrap().abs() < 1e-14);
    }

    #[test]
    fn standard_rejected() {
        let g = Grid::new(1.0, 16).unwrap();
        let one = GridFunction::scalar(g, |_| 1.0);
        assert!(hnorm_oracle(HurstParameter::new(0.5).unwrap(), &one).is_err());
    }
}
