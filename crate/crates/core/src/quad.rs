//! Scalar quadrature and special-function helpers.

use crate::error::{Error, Result};

pub use statrs::function::gamma::gamma;

/// Tanh-sinh quadrature; endpoint power singularities are handled natively.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let out = quadrature::double_exponential::integrate(f, a, b, tol);
    if out.integral.is_finite() {
        Ok(out.integral)
    } else {
        Err(Error::Quadrature(format!(
            "non-finite integral on [{a}, {b}] after {} evaluations",
            out.num_function_evaluations
        )))
    }
}

/// `∫_a^b f` where `f` may behave like `(x-a)^pa` and `(b-x)^pb` (`p > -1`)
/// at the ends. Each half is mapped by `x - a = u^{1/(p+1)}`, which makes the
/// transformed integrand bounded at the singular end.
///
/// `f` receives `(x, x - a, b - x)`; the distance to the nearer end is exact,
/// so integrands can avoid cancellation there.
pub fn integrate_singular(
    f: impl Fn(f64, f64, f64) -> f64,
    a: f64,
    b: f64,
    pa: f64,
    pb: f64,
    tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mid = 0.5 * (a + b);
    let half = mid - a;
    let left = {
        let m = 1.0 / (pa + 1.0);
        integrate(
            |u: f64| {
                if u <= 0.0 {
                    0.0
                } else {
                    {
                        let d = u.powf(m);
                        f(a + d, d, (b - a) - d) * m * u.powf(m - 1.0)
                    }
                }
            },
            0.0,
            half.powf(pa + 1.0),
            tol,
        )?
    };
    let right = {
        let m = 1.0 / (pb + 1.0);
        integrate(
            |u: f64| {
                if u <= 0.0 {
                    0.0
                } else {
                    {
                        let d = u.powf(m);
                        f(b - d, (b - a) - d, d) * m * u.powf(m - 1.0)
                    }
                }
            },
            0.0,
            half.powf(pb + 1.0),
            tol,
        )?
    };
    Ok(left + right)
}

const BERNOULLI_2J: [f64; 6] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
];

/// Riemann zeta for real `s > -8`, `s != 1`, by Euler-Maclaurin summation
/// (the analytic continuation for `s <= 1`).
pub fn zeta(s: f64) -> f64 {
    assert!(
        s > -8.0 && s != 1.0,
        "zeta evaluated outside (-8, inf) \\ {{1}}"
    );
    let n = 12.0f64;
    let mut sum: f64 = (1..12).map(|k| (k as f64).powf(-s)).sum();
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // rising factorial s(s+1)...(s+2j-2) and (2j)!
    let mut rising = s;
    let mut fact = 2.0;
    for (j, b) in BERNOULLI_2J.iter().enumerate() {
        let jj = (j + 1) as f64;
        sum += b / fact * rising * n.powf(-s - 2.0 * jj + 1.0);
        rising *= (s + 2.0 * jj - 1.0) * (s + 2.0 * jj);
        fact *= (2.0 * jj + 1.0) * (2.0 * jj + 2.0);
    }
    sum
}

/// `∫ |f|²` over the grid span from node samples.
///
/// `left` and `right` list the exponents `q_i > -1` of the expansion
/// `|f|² ≈ Σ c_i d^{q_i}` in the distance `d` to each end. An empty list means
/// a smooth end handled by the trapezoid rule. Otherwise the end node is
/// skipped, the `c_i` are fitted to the nearest interior nodes and the
/// generalized Euler-Maclaurin (Navot) terms `ζ(-q_i) c_i Δ^{q_i+1}` are
/// removed.
pub fn singular_l2_sq(row: &[f64], dt: f64, left: &[f64], right: &[f64]) -> f64 {
    let n = row.len() - 1;
    let h: Vec<f64> = row.iter().map(|v| v * v).collect();
    let mut total: f64 = h[1..n].iter().sum::<f64>() * dt;
    let rev: Vec<f64> = h.iter().rev().copied().collect();
    for (exps, vals) in [(left, &h), (right, &rev)] {
        if exps.is_empty() || exps.len() >= n {
            total += 0.5 * dt * vals[0];
        } else {
            total -= dt * navot(&vals[1..=exps.len()], exps);
        }
    }
    total
}

/// `Σ ζ(-q_i) c_i` for `h_k = Σ c_i k^{q_i}`, `k = 1..=m`, in unit spacing.
fn navot(h: &[f64], exps: &[f64]) -> f64 {
    let m = exps.len();
    let a = nalgebra::DMatrix::from_fn(m, m, |k, i| ((k + 1) as f64).powf(exps[i]));
    let b = nalgebra::DVector::from_column_slice(h);
    let Some(c) = a.lu().solve(&b) else {
        return 0.0;
    };
    exps.iter().zip(c.iter()).map(|(q, c)| zeta(-q) * c).sum()
}

/// Exact average of `s^p` over `[a, b]`, `p > -1`.
pub fn power_cell_mean(a: f64, b: f64, p: f64) -> f64 {
    (b.powf(p + 1.0) - a.powf(p + 1.0)) / ((p + 1.0) * (b - a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_known_values() {
        assert!((zeta(2.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-13);
        assert!((zeta(0.5) + 1.460_354_508_809_586_8).abs() < 1e-12);
        assert!((zeta(0.25) + 0.813_278_405_261_891_7).abs() < 1e-12);
        assert!((zeta(-0.3) + 0.293_813_068_129_721_3).abs() < 1e-12);
    }

    #[test]
    fn navot_corrected_trapezoid() {
        // |f|^2 = t^{-1/2} (1 + t) on [0, 1]: exact 2 + 2/3
        let n = 256;
        let dt = 1.0 / n as f64;
        let row: Vec<f64> = (0..=n)
            .map(|k| {
                let t = (k as f64 * dt).max(1e-300);
                (t.powf(-0.5) * (1.0 + t)).sqrt()
            })
            .collect();
        let v = singular_l2_sq(&row, dt, &[-0.5, 0.5], &[]);
        assert!((v - 8.0 / 3.0).abs() < 2e-6, "{v}");
    }

    #[test]
    fn mapped_endpoint_singularities() {
        let v = integrate_singular(|_, x, _| x.powf(-0.75), 0.0, 1.0, -0.75, 0.0, 1e-12).unwrap();
        assert!((v - 4.0).abs() < 1e-10, "{v}");
        let v = integrate_singular(
            |_, l: f64, r: f64| (l * r).powf(-0.5),
            0.0,
            1.0,
            -0.5,
            -0.5,
            1e-12,
        )
        .unwrap();
        assert!((v - std::f64::consts::PI).abs() < 1e-10, "{v}");
    }
}
