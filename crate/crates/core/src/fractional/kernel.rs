//! The fBm Volterra kernel `K_β(t, s)` and its cell integrals on uniform grids.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::HurstParameter;
use crate::quad::{gamma, integrate, integrate_singular};

/// Normalization making `∫_0^t K_β(t,s)² ds = t^{2β}`.
pub fn c_tilde(beta: HurstParameter) -> f64 {
    let b = beta.value();
    (2.0 * b * gamma(1.5 - b) * gamma(b + 0.5) / gamma(2.0 - 2.0 * b)).sqrt()
}

/// Constant `c̃_β / Γ(β+½)` multiplying both terms of the kernel.
pub(crate) fn kernel_prefactor(beta: HurstParameter) -> f64 {
    c_tilde(beta) / gamma(beta.value() + 0.5)
}

const KERNEL_TOL: f64 = 1e-12;

/// Integrand of `J(t,s)` after the shift `w = u - s`.
#[inline]
fn j_integrand(b: f64, s: f64, w: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let c = 0.5 - b;
    w.powf(b - 1.5) * -(-c * (w / s).ln_1p()).exp_m1()
}

/// `J(s + d, s) = ∫_s^{s+d} (u-s)^{β-3/2} (1 - (s/u)^{½-β}) du`.
fn j_integral(b: f64, s: f64, d: f64) -> Result<f64> {
    integrate_singular(
        |_, w, _| j_integrand(b, s, w),
        0.0,
        d,
        b - 0.5,
        0.0,
        KERNEL_TOL,
    )
}

/// `K_β(s + d, s)`, taking the gap `d` directly so it stays exact near the
/// diagonal.
fn kernel_gap(beta: HurstParameter, s: f64, d: f64) -> Result<f64> {
    if beta.is_standard() {
        return Ok(1.0);
    }
    let b = beta.value();
    let j = j_integral(b, s, d)?;
    Ok(kernel_prefactor(beta) * (d.powf(b - 0.5) + (0.5 - b) * j))
}

/// Evaluates `K_β(t, s)` for `0 < s < t`.
pub fn kernel_k(beta: HurstParameter, t: f64, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < t && t.is_finite()) {
        return Err(Error::param(
            "s",
            format!("need 0 < s < t, got s = {s}, t = {t}"),
        ));
    }
    kernel_gap(beta, s, t - s)
}

/// Cell integrals `W_kj = ∫_{t_j}^{t_{j+1}} K_β(t_k, s) ds` on the unit-spaced
/// grid `t_k = k`; a grid with spacing `Δ` rescales them by `Δ^{β+½}`.
#[derive(Debug)]
pub struct KernelCells {
    beta: HurstParameter,
    n_steps: usize,
    packed: Vec<f64>,
    matched_diag: Vec<f64>,
    matched_first: Vec<f64>,
}

const GL6_X: [f64; 6] = [
    -0.932_469_514_203_152,
    -0.661_209_386_466_264_5,
    -0.238_619_186_083_196_9,
    0.238_619_186_083_196_9,
    0.661_209_386_466_264_5,
    0.932_469_514_203_152,
];
const GL6_W: [f64; 6] = [
    0.171_324_492_379_170_3,
    0.360_761_573_048_138_6,
    0.467_913_934_572_691,
    0.467_913_934_572_691,
    0.360_761_573_048_138_6,
    0.171_324_492_379_170_3,
];

pub(crate) fn gl6(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    GL6_X
        .iter()
        .zip(GL6_W)
        .map(|(x, w)| w * f(m + h * x))
        .sum::<f64>()
        * h
}

struct QuadNode {
    s: f64,
    cell: usize,
    /// weight for integrands linear in `J`
    w1: f64,
    /// weight for `J²`
    w2: f64,
}

/// Quadrature nodes in `s` for the `J` part of each cell: geometrically
/// graded Gauss-Legendre on the first cell (power-law tail below the finest
/// level), plain Gauss-Legendre on the next few, midpoint beyond.
struct QuadNodes {
    nodes: Vec<QuadNode>,
    starts: Vec<usize>,
    graded_cells: usize,
}

const GRADED_CELLS: usize = 8;
const GRADING_LEVELS: i32 = 8;

impl QuadNodes {
    fn new(n: usize, p: f64) -> Self {
        let graded_cells = GRADED_CELLS.min(n);
        let mut nodes = Vec::new();
        let mut starts = Vec::with_capacity(n + 1);
        let gl = |cell: usize, a: f64, b: f64, nodes: &mut Vec<QuadNode>| {
            let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
            for (x, w) in GL6_X.iter().zip(GL6_W) {
                nodes.push(QuadNode { s: m + h * x, cell, w1: w * h, w2: w * h });
            }
        };
        starts.push(0);
        let eps = 4f64.powi(-GRADING_LEVELS);
        nodes.push(QuadNode {
            s: 0.5 * eps,
            cell: 0,
            w1: eps / ((p + 1.0) * 0.5f64.powf(p)),
            w2: eps / ((2.0 * p + 1.0) * 0.5f64.powf(2.0 * p)),
        });
        for l in (0..GRADING_LEVELS).rev() {
            gl(0, 4f64.powi(-l - 1), 4f64.powi(-l), &mut nodes);
        }
        for j in 1..n {
            starts.push(nodes.len());
            if j < graded_cells {
                gl(j, j as f64, (j + 1) as f64, &mut nodes);
            } else {
                let s = j as f64 + 0.5;
                nodes.push(QuadNode { s, cell: j, w1: 1.0, w2: 1.0 });
            }
        }
        starts.push(nodes.len());
        Self { nodes, starts, graded_cells }
    }

    fn cell(&self, j: usize) -> std::ops::Range<usize> {
        self.starts[j]..self.starts[j + 1]
    }
}

type CellCache = Mutex<HashMap<(u64, usize), Arc<KernelCells>>>;

fn cache() -> &'static CellCache {
    static CACHE: OnceLock<CellCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl KernelCells {
    /// Cached construction; the table depends only on `(β, n_steps)`.
    pub fn shared(beta: HurstParameter, n_steps: usize) -> Result<Arc<Self>> {
        let key = (beta.value().to_bits(), n_steps);
        if let Some(c) = cache().lock().expect("kernel cache poisoned").get(&key) {
            return Ok(Arc::clone(c));
        }
        let built = Arc::new(Self::build(beta, n_steps)?);
        cache()
            .lock()
            .expect("kernel cache poisoned")
            .insert(key, Arc::clone(&built));
        Ok(built)
    }

    pub fn build(beta: HurstParameter, n_steps: usize) -> Result<Self> {
        let n = n_steps;
        let b = beta.value();
        let mut packed = vec![0.0; n * (n + 1) / 2];
        if beta.is_standard() {
            packed.iter_mut().for_each(|w| *w = 1.0);
            return Ok(Self {
                beta,
                n_steps,
                packed,
                matched_diag: vec![1.0; n + 1],
                matched_first: vec![1.0; n + 1],
            });
        }
        let pre = kernel_prefactor(beta);
        let c = 0.5 - b;
        let e = b + 0.5;
        let p = -(b - 0.5).abs();
        let qn = QuadNodes::new(n, p);

        // column i: J(k, s_i) for k = j_i+1..=n, accumulated cell by cell
        let columns: Vec<Vec<f64>> = qn
            .nodes
            .par_iter()
            .map(|node| -> Result<Vec<f64>> {
                let (s, j) = (node.s, node.cell);
                let f = |u: f64| j_integrand(b, s, u - s);
                let mut col = Vec::with_capacity(n - j);
                let mut acc = j_integral(b, s, (j + 1) as f64 - s)?;
                col.push(acc);
                for k in j + 1..n {
                    let (lo, hi) = (k as f64, (k + 1) as f64);
                    acc += if k < j + 3 {
                        integrate(f, lo, hi, KERNEL_TOL)?
                    } else {
                        gl6(f, lo, hi)
                    };
                    col.push(acc);
                }
                Ok(col)
            })
            .collect::<Result<_>>()?;
        let j_at = |i: usize, k: usize| columns[i][k - qn.nodes[i].cell - 1];

        for k in 1..=n {
            let off = k * (k - 1) / 2;
            let kf = k as f64;
            for j in 0..k {
                let jf = j as f64;
                let lead = ((kf - jf).powf(e) - (kf - jf - 1.0).powf(e)) / e;
                let jpart: f64 = qn.cell(j).map(|i| qn.nodes[i].w1 * j_at(i, k)).sum();
                packed[off + j] = pre * (lead + c * jpart);
            }
        }

        // ∫_cell K(k,s)² ds with the (k-s)^{2β-1} part exact
        let sq_cell = |k: usize, j: usize| -> f64 {
            let (kf, jf) = (k as f64, j as f64);
            let lead = ((kf - jf).powf(2.0 * b) - (kf - jf - 1.0).powf(2.0 * b)) / (2.0 * b);
            let (cross, jj) = if j < qn.graded_cells {
                qn.cell(j).fold((0.0, 0.0), |(x, y), i| {
                    let nd = &qn.nodes[i];
                    let jv = j_at(i, k);
                    (x + nd.w1 * (kf - nd.s).powf(b - 0.5) * jv, y + nd.w2 * jv * jv)
                })
            } else {
                // only the diagonal cell lands here; J ∝ (k-s)^{β+½} across it
                let jm: f64 = qn.cell(j).map(|i| j_at(i, k)).sum();
                (
                    jm * 2f64.powf(b + 0.5) / (2.0 * b + 1.0),
                    jm * jm * 2f64.powf(2.0 * b + 1.0) / (2.0 * b + 2.0),
                )
            };
            pre * pre * (lead + 2.0 * c * cross + c * c * jj)
        };
        let mut matched_diag = vec![0.0; n + 1];
        let mut matched_first = vec![0.0; n + 1];
        for k in 1..=n {
            let off = k * (k - 1) / 2;
            matched_diag[k] = packed[off + k - 1].signum() * sq_cell(k, k - 1).sqrt();
            matched_first[k] = packed[off].signum() * sq_cell(k, 0).sqrt();
        }
        Ok(Self {
            beta,
            n_steps,
            packed,
            matched_diag,
            matched_first,
        })
    }

    pub fn beta(&self) -> HurstParameter {
        self.beta
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Unit-grid cell integrals for node `k >= 1`, cells `0..k`.
    pub fn row(&self, k: usize) -> &[f64] {
        let off = k * (k - 1) / 2;
        &self.packed[off..off + k]
    }

    /// Like [`row`](Self::row), but the first and last cells carry
    /// `sign · (∫_cell K²)^{1/2}` so each cell contributes its exact variance.
    pub fn matched_row(&self, k: usize) -> Vec<f64> {
        let mut r = self.row(k).to_vec();
        r[0] = self.matched_first[k];
        r[k - 1] = self.matched_diag[k];
        r
    }

    /// `Σ_j matched_row(k)[j] · x[j]` without allocating.
    pub fn matched_dot(&self, k: usize, x: &[f64]) -> f64 {
        let row = self.row(k);
        if k == 1 {
            return self.matched_diag[1] * x[0];
        }
        let inner: f64 = row[1..k - 1].iter().zip(&x[1..k - 1]).map(|(w, v)| w * v).sum();
        inner + self.matched_first[k] * x[0] + self.matched_diag[k] * x[k - 1]
    }
}
