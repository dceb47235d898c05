//! End-to-end acceptance suite. Every criterion prints one line
//! `criterion NN PASS|FAIL ...` with its runtime and the numbers behind the
//! verdict; the test fails if any criterion fails.
//!
//! Lines go straight to stderr so they survive the test harness's output
//! capture.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fracspde::control::{explicit_control, hstar_norm, moment_solve, verify_steering, HstarStatus, MomentProblem};
use fracspde::experiment::{run_experiment, ExperimentConfig};
use fracspde::fractional::{apply_kbig, apply_kstar, hnorm, invert_kbig};
use fracspde::girsanov::{
    default_battery, density_ensemble, density_rho, strong_feller_probe, transfer_check, Drift,
    McParams, NonlinearityG, ScalarFn,
};
use fracspde::noise::{sample_fbm_kernel, NoiseSeed};
use fracspde::quad::integrate;
use fracspde::spectral::{
    covariance_qn, equivalence_report, holder_exponent, simulate_ou, SpectralModel, Verdict,
};
use fracspde::stats::mean_se;
use fracspde::{Grid, GridFunction, HurstParameter};

fn h(b: f64) -> HurstParameter {
    HurstParameter::new(b).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Runs one criterion, enforces its time budget and prints its line.
fn criterion(id: u32, title: &str, budget_s: f64, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let secs = start.elapsed().as_secs_f64();
    let pass = o.pass && secs < budget_s;
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {id:02} {} {title} [{secs:.2} s of {budget_s} s] {}",
        if pass { "PASS" } else { "FAIL" },
        o.detail
    );
    pass
}

/// Trapezoidal `L²` norm, written out independently of the library.
fn trapezoid_l2(values: &[f64], dt: f64) -> f64 {
    let n = values.len() - 1;
    let inner: f64 = values[1..n].iter().map(|v| v * v).sum();
    (dt * (inner + 0.5 * (values[0].powi(2) + values[n].powi(2)))).sqrt()
}

fn test_functions() -> Vec<(&'static str, fn(f64) -> f64)> {
    vec![
        ("1", |_| 1.0),
        ("t", |t| t),
        ("exp(-t)", |t| (-t).exp()),
        ("sin(3t)", |t| (3.0 * t).sin()),
        ("t^2 - t", |t| t * t - t),
    ]
}

fn c01() -> Outcome {
    let grid = Grid::new(1.0, 256).unwrap();
    let half = h(0.5);
    let mut worst_apply: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for (_, f) in test_functions() {
        let phi = GridFunction::scalar(grid, f);
        let k = apply_kstar(half, &phi).unwrap();
        worst_apply = worst_apply.max(k.max_abs_diff(&phi));
        let oracle = trapezoid_l2(phi.mode(0), grid.dt());
        worst_norm = worst_norm.max((hnorm(half, &phi).unwrap() - oracle).abs());
    }
    outcome(
        worst_apply <= 1e-12 && worst_norm <= 1e-12,
        format!("max |K*phi - phi| = {worst_apply:.1e}, max |hnorm - L2| = {worst_norm:.1e}"),
    )
}

fn c02() -> Outcome {
    let grid = Grid::new(1.0, 256).unwrap();
    let nodes: Vec<usize> = (1..=8).map(|k| 32 * k).collect();
    let mut worst: f64 = 0.0;
    for b in [0.25, 0.5, 0.75] {
        let set = sample_fbm_kernel(h(b), grid, 1, 10_000, NoiseSeed::new(2)).unwrap();
        for &i in &nodes {
            for &j in &nodes {
                let prod: Vec<f64> = (0..set.n_paths)
                    .map(|p| {
                        let path = set.path(p, 0);
                        path[i] * path[j]
                    })
                    .collect();
                let (s, t) = (grid.node(i), grid.node(j));
                let exact = 0.5 * (s.powf(2.0 * b) + t.powf(2.0 * b) - (t - s).abs().powf(2.0 * b));
                let m = mean_se(&prod);
                worst = worst.max((m.mean - exact).abs() / m.se);
            }
        }
    }
    outcome(worst <= 3.0, format!("largest deviation {worst:.2} SE over 3 x 64 entries"))
}

fn c03() -> Outcome {
    let mut worst: f64 = 0.0;
    for b in [0.25, 0.75] {
        for t_end in [1.0, 2.0] {
            let one = GridFunction::scalar(Grid::new(t_end, 1024).unwrap(), |_| 1.0);
            let n = hnorm(h(b), &one).unwrap();
            let target = f64::powf(t_end, 2.0 * b);
            worst = worst.max((n * n - target).abs() / target);
        }
    }
    outcome(worst <= 0.02, format!("max relative error of hnorm(1)^2 vs T^(2 beta): {worst:.2e}"))
}

fn roundtrip_error(b: f64, n: usize) -> f64 {
    let grid = Grid::new(1.0, n).unwrap();
    let fs: [fn(f64) -> f64; 4] = [|_| 1.0, |t| t, |t| (-t).exp(), |t| t.sin()];
    let phi = GridFunction::from_fn(grid, 4, |m, t| fs[m](t));
    let back = invert_kbig(h(b), &apply_kbig(h(b), &phi).unwrap()).unwrap();
    let diff = back.axpy(-1.0, &phi).unwrap();
    diff.l2_norm() / phi.l2_norm()
}

fn c04() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for b in [0.25, 0.75] {
        let e: Vec<f64> = [128, 256, 512].iter().map(|&n| roundtrip_error(b, n)).collect();
        let ratios = [e[0] / e[1], e[1] / e[2]];
        pass &= e[2] <= 1e-2 && ratios.iter().all(|r| (1.5..=3.0).contains(r));
        detail.push(format!(
            "beta {b}: err(512) {:.2e}, ratios {:.2} {:.2}",
            e[2], ratios[0], ratios[1]
        ));
    }
    outcome(pass, detail.join("; "))
}

fn c05() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for b in [0.25, 0.75] {
        let model = SpectralModel::heat_dirichlet(32, h(b), 1.0).unwrap();
        let band: Vec<f64> = (1..=32)
            .map(|n| {
                let q = covariance_qn(&model, n, 1024).unwrap();
                q * model.alphas()[n - 1].powf(2.0 * b) / model.lambdas()[n - 1]
            })
            .collect();
        let (lo, hi) = band.iter().fold((f64::INFINITY, 0.0f64), |(a, c), v| (a.min(*v), c.max(*v)));
        let tail = &band[16..];
        let (tlo, thi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(a, c), v| (a.min(*v), c.max(*v)));
        let spread = (thi - tlo) / tlo;
        pass &= hi / lo <= 10.0 && spread <= 0.25;
        detail.push(format!("beta {b}: max/min {:.3}, tail spread {:.2e}", hi / lo, spread));
    }
    outcome(pass, detail.join("; "))
}

/// Three models with equivalent laws and three singular ones, all on 8 modes.
fn criterion_models() -> Vec<(&'static str, SpectralModel, bool)> {
    let n8: Vec<f64> = (1..=8).map(|n| n as f64).collect();
    let sq: Vec<f64> = n8.iter().map(|n| n * n).collect();
    let quarter: Vec<f64> = sq.iter().map(|a| a / 4.0).collect();
    let model = |a: &[f64], l: Vec<f64>, b: f64| SpectralModel::new(a.to_vec(), l, h(b), 1.0).unwrap();
    vec![
        ("heat, beta 0.75", SpectralModel::heat_dirichlet(8, h(0.75), 1.0).unwrap(), true),
        ("alpha n^2, lambda n^-1.2, beta 0.25", model(&sq, sq.iter().map(|a| a.powf(-0.6)).collect(), 0.25), true),
        ("alpha n, lambda 1, beta 0.75", model(&n8, vec![1.0; 8], 0.75), true),
        ("alpha n, lambda e^-4n, beta 0.75", model(&n8, n8.iter().map(|a| (-4.0 * a).exp()).collect(), 0.75), false),
        ("alpha n, lambda e^-4n, beta 0.25", model(&n8, n8.iter().map(|a| (-4.0 * a).exp()).collect(), 0.25), false),
        ("alpha n^2/4, lambda e^-3alpha, beta 0.75", model(&quarter, quarter.iter().map(|a| (-3.0 * a).exp()).collect(), 0.75), false),
    ]
}

fn one_over_n(n: usize) -> Vec<f64> {
    (1..=n).map(|k| 1.0 / k as f64).collect()
}

fn c06() -> Outcome {
    let mut agree = 0;
    let mut detail = Vec::new();
    for (name, model, equivalent) in criterion_models() {
        let verdict = equivalence_report(&model, 512).unwrap().verdict;
        let x = one_over_n(model.n_modes());
        let u = explicit_control(&model, &x, Grid::new(1.0, 256).unwrap()).unwrap();
        let status = hstar_norm(model.beta(), u, None).unwrap().hstar.unwrap().status;
        let consistent = matches!(
            (verdict, status),
            (Verdict::Equivalent, HstarStatus::Finite) | (Verdict::Singular, HstarStatus::Divergent)
        );
        let expected = if equivalent { Verdict::Equivalent } else { Verdict::Singular };
        if consistent && verdict == expected {
            agree += 1;
        } else {
            detail.push(format!("{name}: {verdict:?} vs {status:?}"));
        }
    }
    outcome(agree == 6, format!("{agree}/6 consistent {}", detail.join("; ")))
}

fn c07() -> Outcome {
    let mut worst: f64 = 0.0;
    for (_, model, _) in criterion_models() {
        for x in [one_over_n(8), vec![1.0; 8]] {
            let u = explicit_control(&model, &x, Grid::new(1.0, 256).unwrap()).unwrap();
            worst = worst.max(verify_steering(&model, &x, &u).unwrap());
        }
    }
    outcome(worst <= 1e-10, format!("largest steering residual {worst:.2e}"))
}

fn c08() -> Outcome {
    let lambdas: Vec<f64> = (1..=8).map(|n| (std::f64::consts::PI * n as f64).powi(2)).collect();
    let targets: Vec<f64> = lambdas.iter().map(|l| 1.0 / l).collect();
    let p = MomentProblem::new(lambdas.clone(), targets.clone(), 1.0, 8).unwrap();
    let sol = moment_solve(&p, Grid::new(1.0, 1024).unwrap()).unwrap();
    let residual = sol.max_residual();
    // ∫ e^{-λ_n t} u_0'(t) dt with u_0' = h evaluated by tanh-sinh quadrature
    let mut quad_err: f64 = 0.0;
    for (l, c) in lambdas.iter().zip(&targets) {
        let v = integrate(|t| (-l * t).exp() * sol.h_at(t), 0.0, 1.0, 1e-12).unwrap();
        quad_err = quad_err.max((v - l * c).abs());
    }
    outcome(
        residual <= 1e-8 && quad_err <= 1e-6,
        format!("max residual {residual:.2e}, quadrature error {quad_err:.2e}, condition {:.2e}", sol.condition),
    )
}

fn heat4(b: f64) -> SpectralModel {
    SpectralModel::heat_dirichlet(4, h(b), 1.0).unwrap()
}

const X0: [f64; 4] = [0.5, 0.0, 0.0, 0.0];

fn nemytskii(f: ScalarFn) -> Drift {
    Drift::Nemytskii { f, n_quad: 32 }
}

fn c09() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for b in [0.25, 0.75] {
        let model = heat4(b);
        let g = NonlinearityG::new(nemytskii(ScalarFn::Sin), &model).unwrap();
        let mc = McParams { n_paths: 20_000, n_steps: 400, seed: 11 };
        let rho: Vec<f64> = density_ensemble(&model, &g, &X0, mc).unwrap().iter().map(|d| d.rho).collect();
        let m = mean_se(&rho);
        pass &= m.covers(1.0, 3.0);
        detail.push(format!("beta {b}: mean rho {:.4} +- {:.4}", m.mean, m.se));
    }
    outcome(pass, detail.join("; "))
}

fn c10() -> Outcome {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for b in [0.25, 0.75] {
        for f in [ScalarFn::Sin, ScalarFn::NegArctan] {
            let model = heat4(b);
            let g = NonlinearityG::new(nemytskii(f), &model).unwrap();
            let mc = McParams { n_paths: 20_000, n_steps: 400, seed: 12 };
            let r = transfer_check(&model, &g, &X0, &default_battery(4), mc).unwrap();
            for rec in &r.records {
                pass &= rec.within(3.0);
                worst = worst.max(rec.diff.mean.abs() / rec.combined_se());
            }
        }
    }
    outcome(pass, format!("largest |difference| {worst:.2} combined SE over 4 cells x 3 functionals"))
}

/// `G(x)_n = (1/Q) Σ_q sin(Σ_m x_m √2 sin(mπξ_q)) √2 sin(nπξ_q)` at the
/// midpoints `ξ_q`, with unit noise intensities.
fn classical_g(x: &[f64], q: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let e = |n: usize, xi: f64| std::f64::consts::SQRT_2 * (n as f64 * pi * xi).sin();
    let mut out = vec![0.0; x.len()];
    for i in 0..q {
        let xi = (i as f64 + 0.5) / q as f64;
        let u: f64 = x.iter().enumerate().map(|(m, v)| v * e(m + 1, xi)).sum();
        for (n, o) in out.iter_mut().enumerate() {
            *o += u.sin() * e(n + 1, xi) / q as f64;
        }
    }
    out
}

fn c11() -> Outcome {
    let model = heat4(0.5);
    let g = NonlinearityG::new(nemytskii(ScalarFn::Sin), &model).unwrap();
    let grid = Grid::new(1.0, 400).unwrap();
    let ens = simulate_ou(&model, grid, &X0, 100, NoiseSeed::new(3)).unwrap();
    let dt = grid.dt();
    let mut worst: f64 = 0.0;
    for p in 0..100 {
        let rec = ens.record(p).unwrap();
        let lib = density_rho(h(0.5), &g, &rec).unwrap().rho;
        let (mut ito, mut quad) = (0.0, 0.0);
        for k in 0..grid.n_steps() {
            let x: Vec<f64> = (0..4).map(|m| ens.path(p, m)[k]).collect();
            let gx = classical_g(&x, 32);
            for m in 0..4 {
                ito += gx[m] * ens.white_increments(p, m)[k];
                quad += gx[m] * gx[m] * dt;
            }
        }
        let classical = (ito - 0.5 * quad).exp();
        worst = worst.max((lib - classical).abs() / classical.max(1.0));
    }
    outcome(worst <= 1e-10, format!("max per-path discrepancy {worst:.2e} over 100 paths"))
}

fn c12() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for b in [0.25, 0.75] {
        let model = heat4(b);
        let g = NonlinearityG::new(nemytskii(ScalarFn::Sin), &model).unwrap();
        let dirs = [vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let mc = McParams { n_paths: 2000, n_steps: 400, seed: 21 };
        let r = strong_feller_probe(&model, &g, &X0, &dirs, 5, &default_battery(4), mc).unwrap();
        for t in &r.trends {
            pass &= t.passes(0.1);
            detail.push(format!(
                "beta {b} dir {}: monotone {}, final/initial {:.3}",
                t.direction, t.nonincreasing, t.final_over_initial
            ));
        }
    }
    outcome(pass, detail.join("; "))
}

fn c13() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for b in [0.25, 0.75] {
        let model = SpectralModel::new(vec![std::f64::consts::PI.powi(2)], vec![1.0], h(b), 1.0).unwrap();
        let grid = Grid::new(1.0, 4096).unwrap();
        let ens = simulate_ou(&model, grid, &[0.0], 200, NoiseSeed::new(5)).unwrap();
        let hs: Vec<f64> = (0..200).map(|p| holder_exponent(ens.path(p, 0), grid.dt(), 8)).collect();
        let m = mean_se(&hs);
        let floor = 0.9 * (b - 0.05);
        pass &= m.mean >= floor;
        detail.push(format!("beta {b}: exponent {:.3} +- {:.3} vs floor {floor:.3}", m.mean, m.se));
    }
    outcome(pass, detail.join("; "))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Every artifact except the manifest, which carries a timestamp.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| run_experiment(cfg, dir.path())).unwrap();
    artifacts(dir.path())
}

fn c14() -> Outcome {
    let golden = ExperimentConfig::load(&scenario("criterion_heat.toml")).unwrap();
    let mut mc = ExperimentConfig::load(&scenario("density_heat.toml")).unwrap();
    mc.n_paths = 500;
    let mut pass = true;
    let mut files = 0;
    for cfg in [&golden, &mc] {
        let runs = [
            run_with_threads(cfg, 1),
            run_with_threads(cfg, 1),
            run_with_threads(cfg, 4),
        ];
        files += runs[0].len();
        pass &= !runs[0].is_empty() && runs[0] == runs[1] && runs[0] == runs[2];
    }
    outcome(pass, format!("{files} artifacts identical across two runs and 1 vs 4 threads"))
}

#[test]
fn acceptance() {
    let results = [
        criterion(1, "standard collapse", 1.0, c01),
        criterion(2, "fBm covariance", 60.0, c02),
        criterion(3, "variance identity", 10.0, c03),
        criterion(4, "operator roundtrip", 30.0, c04),
        criterion(5, "covariance spectrum band", 120.0, c05),
        criterion(6, "criterion vs controllability", 120.0, c06),
        criterion(7, "exact steering", 1.0, c07),
        criterion(8, "moment problem", 5.0, c08),
        criterion(9, "Girsanov normalization", 300.0, c09),
        criterion(10, "transfer identity", 600.0, c10),
        criterion(11, "classical reduction", 10.0, c11),
        criterion(12, "strong Feller trend", 300.0, c12),
        criterion(13, "path regularity", 120.0, c13),
        criterion(14, "reproducibility", 60.0, c14),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
