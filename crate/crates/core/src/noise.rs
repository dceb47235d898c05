//! Scalar and cylindrical fBm paths: a Volterra-kernel generator that keeps its
//! white-noise increments, and an exact Cholesky generator used as an oracle.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractional::KernelCells;
use crate::grid::{Grid, HurstParameter};
use crate::io::atomic_write;

/// Default bound on the number of stored values per sampling call.
pub const DEFAULT_VALUE_CAP: usize = 1 << 25;

/// `(seed, stream_id)` fixes every random number drawn. Mode `m` reads stream
/// `stream_id + m`, path `p` starts at word offset `p · 2^32` of that stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSeed {
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Independent standard normals for one `(mode, path)` pair.
    pub fn normals(&self, mode: usize, path: usize, count: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id.wrapping_add(mode as u64));
        rng.set_word_pos((path as u128) << 32);
        (0..count).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// `E[B(s)B(t)] = ½(t^{2β} + s^{2β} - |t-s|^{2β})`.
pub fn fbm_covariance(beta: HurstParameter, s: f64, t: f64) -> f64 {
    if beta.is_standard() && s >= 0.0 && t >= 0.0 {
        return s.min(t);
    }
    let h2 = 2.0 * beta.value();
    0.5 * (t.abs().powf(h2) + s.abs().powf(h2) - (t - s).abs().powf(h2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    Kernel,
    Cholesky,
}

/// Volterra synthesis `B(t_k) = Σ_{j<k} (W_kj / Δ) ΔW̃_j` on a fixed grid.
#[derive(Debug, Clone)]
pub struct FbmGenerator {
    beta: HurstParameter,
    grid: Grid,
    cells: Arc<KernelCells>,
}

impl FbmGenerator {
    pub fn new(beta: HurstParameter, grid: Grid) -> Result<Self> {
        grid.require_operator_resolution()?;
        Ok(Self {
            beta,
            grid,
            cells: KernelCells::shared(beta, grid.n_steps())?,
        })
    }

    pub fn beta(&self) -> HurstParameter {
        self.beta
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// White-noise increments `ΔW̃_j = √Δ ξ_j` for one `(mode, path)`.
    pub fn white(&self, seed: NoiseSeed, mode: usize, path: usize) -> Vec<f64> {
        let sq = self.grid.dt().sqrt();
        let mut xi = seed.normals(mode, path, self.grid.n_steps());
        xi.iter_mut().for_each(|x| *x *= sq);
        xi
    }

    /// fBm values at every node driven by the given white increments.
    pub fn path_from_white(&self, dw: &[f64]) -> Vec<f64> {
        let n = self.grid.n_steps();
        let dt = self.grid.dt();
        // W_kj / Δ on a grid of spacing Δ is Δ^{β-½} times the unit-grid value
        let scale = dt.powf(self.beta.value() - 0.5);
        let mut out = vec![0.0; n + 1];
        if self.beta.is_standard() {
            for k in 0..n {
                out[k + 1] = out[k] + dw[k];
            }
            return out;
        }
        for (k, o) in out.iter_mut().enumerate().skip(1) {
            *o = scale * self.cells.matched_dot(k, dw);
        }
        out
    }
}

/// Sampled paths with the increments that generated them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FbmPathSet {
    pub grid: Grid,
    pub beta: HurstParameter,
    pub n_modes: usize,
    pub n_paths: usize,
    pub seed: NoiseSeed,
    pub generator: Generator,
    /// Diagonal jitter added before factorization (Cholesky generator only).
    pub jitter: f64,
    paths: Vec<f64>,
    white: Vec<f64>,
}

impl FbmPathSet {
    pub fn path(&self, p: usize, m: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        let off = (p * self.n_modes + m) * n;
        &self.paths[off..off + n]
    }

    /// Kernel generator: white increments `ΔW̃`. Cholesky generator: the
    /// standard normals multiplied by the factor.
    pub fn white_increments(&self, p: usize, m: usize) -> &[f64] {
        let n = self.grid.n_steps();
        let off = (p * self.n_modes + m) * n;
        &self.white[off..off + n]
    }

    /// Values `B(t_k)` of mode `m` across all paths.
    pub fn marginal(&self, m: usize, k: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.path(p, m)[k]).collect()
    }

    /// Binary dump: magic `FBMP`, `u64` little-endian `n_paths`, `n_modes`,
    /// `n_nodes`, then the path tensor as little-endian `f64`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(28 + 8 * self.paths.len());
        buf.extend_from_slice(b"FBMP");
        for v in [self.n_paths, self.n_modes, self.grid.n_nodes()] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for v in &self.paths {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        atomic_write(path, &buf)
    }
}

/// Reads a dump written by [`FbmPathSet::write_binary`]: `(shape, values)`.
pub fn read_binary(path: &Path) -> Result<([usize; 3], Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let bad = |why: &str| Error::MissingArtifact(format!("{}: {why}", path.display()));
    if bytes.len() < 28 || &bytes[..4] != b"FBMP" {
        return Err(bad("not a path dump"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap());
    let shape = [word(0) as usize, word(1) as usize, word(2) as usize];
    let count = shape.iter().product::<usize>();
    if bytes.len() != 28 + 8 * count {
        return Err(bad("length does not match header"));
    }
    let values = bytes[28..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, values))
}

pub(crate) fn check_cap(requested: usize, cap: usize) -> Result<()> {
    if requested > cap {
        Err(Error::ResourceCap { requested, cap })
    } else {
        Ok(())
    }
}

pub fn sample_fbm_kernel(
    beta: HurstParameter,
    grid: Grid,
    n_modes: usize,
    n_paths: usize,
    seed: NoiseSeed,
) -> Result<FbmPathSet> {
    sample_fbm_kernel_capped(beta, grid, n_modes, n_paths, seed, DEFAULT_VALUE_CAP)
}

pub fn sample_fbm_kernel_capped(
    beta: HurstParameter,
    grid: Grid,
    n_modes: usize,
    n_paths: usize,
    seed: NoiseSeed,
    cap: usize,
) -> Result<FbmPathSet> {
    check_cap(n_paths * n_modes * (2 * grid.n_steps() + 1), cap)?;
    let gen = FbmGenerator::new(beta, grid)?;
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut paths = Vec::with_capacity(n_modes * grid.n_nodes());
            let mut white = Vec::with_capacity(n_modes * grid.n_steps());
            for m in 0..n_modes {
                let dw = gen.white(seed, m, p);
                paths.extend(gen.path_from_white(&dw));
                white.extend(dw);
            }
            (paths, white)
        })
        .collect();
    let (paths, white) = flatten(blocks);
    Ok(FbmPathSet {
        grid,
        beta,
        n_modes,
        n_paths,
        seed,
        generator: Generator::Kernel,
        jitter: 0.0,
        paths,
        white,
    })
}

fn flatten(blocks: Vec<(Vec<f64>, Vec<f64>)>) -> (Vec<f64>, Vec<f64>) {
    let mut paths = Vec::new();
    let mut white = Vec::new();
    for (p, w) in blocks {
        paths.extend(p);
        white.extend(w);
    }
    (paths, white)
}

/// Lower Cholesky factor of the fBm covariance on nodes `t_1..t_n`, with the
/// diagonal jitter that was needed.
pub fn fbm_cholesky_factor(beta: HurstParameter, grid: &Grid) -> Result<(DMatrix<f64>, f64)> {
    let n = grid.n_steps();
    let t = grid.nodes();
    let cov = DMatrix::from_fn(n, n, |i, j| fbm_covariance(beta, t[i + 1], t[j + 1]));
    let scale = cov.trace() / n as f64;
    let mut jitter = 0.0;
    for attempt in 0..8 {
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Ok((ch.l(), jitter));
        }
        jitter = scale * 1e-14 * 10f64.powi(attempt);
    }
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(v.abs())));
    Err(Error::CholeskyFailed {
        jitter,
        condition: hi / lo.abs().max(f64::MIN_POSITIVE),
    })
}

pub fn sample_fbm_cholesky(
    beta: HurstParameter,
    grid: Grid,
    n_modes: usize,
    n_paths: usize,
    seed: NoiseSeed,
) -> Result<FbmPathSet> {
    check_cap(n_paths * n_modes * (2 * grid.n_steps() + 1), DEFAULT_VALUE_CAP)?;
    let (l, jitter) = fbm_cholesky_factor(beta, &grid)?;
    let n = grid.n_steps();
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut paths = Vec::with_capacity(n_modes * (n + 1));
            let mut white = Vec::with_capacity(n_modes * n);
            for m in 0..n_modes {
                let xi = DVector::from_vec(seed.normals(m, p, n));
                let x = &l * &xi;
                paths.push(0.0);
                paths.extend(x.iter());
                white.extend(xi.iter());
            }
            (paths, white)
        })
        .collect();
    let (paths, white) = flatten(blocks);
    Ok(FbmPathSet {
        grid,
        beta,
        n_modes,
        n_paths,
        seed,
        generator: Generator::Cholesky,
        jitter,
        paths,
        white,
    })
}
