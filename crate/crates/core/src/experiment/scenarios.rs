//! One pipeline per scenario; each returns its artifacts as strings.

use serde::Serialize;

use super::config::{ExperimentConfig, Preset, Scenario};
use super::{Check, ScenarioOutput};
use crate::control::{explicit_control, hstar_norm, moment_solve, verify_steering, HstarReport};
use crate::error::Result;
use crate::girsanov::{
    densities_csv, density_ensemble, strong_feller_probe, transfer_check, McParams, NonlinearityG,
    TAIL_LEVELS,
};
use crate::grid::Grid;
use crate::io::csv_string;
use crate::noise::NoiseSeed;
use crate::quad::integrate;
use crate::spectral::{
    covariance_qn, dm_condition, empirical_covariance, equivalence_report, holder_exponent,
    simulate_ou, SpectralModel,
};
use crate::stats::mean_se;

/// Resolution of the reference `q_n` in the simulate scenario.
const REFERENCE_QN_STEPS: usize = 1024;

pub(crate) fn dispatch(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    let model = cfg.build_model()?;
    match cfg.scenario {
        Scenario::Criterion => criterion(cfg, &model),
        Scenario::Simulate => simulate(cfg, &model),
        Scenario::Control => control(cfg, &model),
        Scenario::Moment => moment(cfg, &model),
        Scenario::Density => density(cfg, &model),
        Scenario::Strongfeller => strongfeller(cfg, &model),
    }
}

fn plot_csv(rows: impl IntoIterator<Item = (f64, f64, f64)>) -> String {
    csv_string(&["x", "y", "yerr"], rows.into_iter().map(|(x, y, e)| vec![x, y, e]))
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// The `d/(4m) < β` line for the elliptic presets on `(0,1)`.
fn dm_line(cfg: &ExperimentConfig, model: &SpectralModel) -> Option<String> {
    let m = match cfg.model.preset {
        Preset::Heat => 1,
        Preset::HigherOrder => cfg.model.order?,
        Preset::Diagonal => return None,
    };
    if cfg.model.lambdas.is_some() {
        return None;
    }
    Some(format!(
        "d/(4m) < beta with d = 1, m = {m}: {}",
        dm_condition(1, m, model.beta())
    ))
}

fn criterion(cfg: &ExperimentConfig, model: &SpectralModel) -> Result<ScenarioOutput> {
    let report = equivalence_report(model, cfg.n_steps)?;
    let mut headline = vec![
        format!("verdict: {:?}", report.verdict).to_lowercase(),
        format!("ln sup necsuf_n = {:.6e}", report.ln_sup_necsuf),
        format!(
            "q_n alpha_n^(2 beta) / lambda_n in [{:.6e}, {:.6e}]",
            report.bounds.0, report.bounds.1
        ),
    ];
    headline.extend(dm_line(cfg, model));
    let plot = plot_csv(report.per_mode.iter().map(|r| (r.n as f64, r.ln_necsuf, 0.0)));
    Ok(ScenarioOutput {
        files: vec![
            ("criterion.json".into(), report.to_json()? + "\n"),
            ("criterion.csv".into(), report.to_csv()),
            ("plot.csv".into(), plot),
        ],
        checks: Vec::new(),
        headline,
    })
}

fn simulate(cfg: &ExperimentConfig, model: &SpectralModel) -> Result<ScenarioOutput> {
    let grid = Grid::new(cfg.t_end, cfg.n_steps)?;
    let x = cfg.initial_state();
    let ens = simulate_ou(model, grid, &x, cfg.n_paths, NoiseSeed::new(cfg.seed))?;
    let n_modes = model.n_modes();
    let k = cfg.tolerances.se_multiplier;
    let beta = model.beta().value();

    let mut header = vec!["path".to_string()];
    header.extend((1..=n_modes).map(|m| format!("z_{m}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let terminal = csv_string(
        &header,
        (0..cfg.n_paths).map(|p| {
            let mut row = vec![p as f64];
            row.extend((0..n_modes).map(|m| ens.path(p, m)[cfg.n_steps]));
            row
        }),
    );

    let n_lags = (cfg.n_steps.ilog2().saturating_sub(2)).clamp(2, 8);
    let holder: Vec<_> = (0..n_modes)
        .map(|m| {
            let h: Vec<f64> = (0..cfg.n_paths)
                .map(|p| holder_exponent(ens.path(p, m), grid.dt(), n_lags))
                .collect();
            mean_se(&h)
        })
        .collect();
    let holder_floor = 0.9 * (beta - 0.05);
    let mut checks = vec![Check {
        name: "mode 1 Hoelder exponent >= 0.9 (beta - 0.05)".into(),
        value: holder[0].mean,
        threshold: holder_floor,
        pass: holder[0].mean >= holder_floor,
    }];
    let mut headline = vec![format!(
        "mode 1 Hoelder exponent {:.4} +- {:.4}",
        holder[0].mean, holder[0].se
    )];
    headline.extend(dm_line(cfg, model));
    let mut files = vec![
        ("terminal.csv".to_string(), terminal),
        (
            "holder.csv".to_string(),
            csv_string(
                &["n", "mean", "se"],
                holder.iter().enumerate().map(|(m, h)| vec![(m + 1) as f64, h.mean, h.se]),
            ),
        ),
    ];

    if x.iter().all(|v| *v == 0.0) && cfg.n_paths >= 100 {
        let emp = empirical_covariance(&ens)?;
        let mut rows = Vec::with_capacity(n_modes);
        for (i, e) in emp.iter().enumerate() {
            let q = covariance_qn(model, i + 1, REFERENCE_QN_STEPS)?;
            let z = (e.mean - q) / e.se;
            checks.push(Check::at_most(format!("q_hat_{} vs q_{} in se units", i + 1, i + 1), z.abs(), k));
            rows.push(vec![(i + 1) as f64, e.mean, e.se, q, z]);
        }
        files.push((
            "plot.csv".into(),
            plot_csv(rows.iter().map(|r| (r[0], r[1], r[2]))),
        ));
        files.push((
            "covariance.csv".into(),
            csv_string(&["n", "q_hat", "se", "q_n", "z"], rows),
        ));
    } else {
        files.push((
            "plot.csv".into(),
            plot_csv(holder.iter().enumerate().map(|(m, h)| ((m + 1) as f64, h.mean, h.se))),
        ));
    }
    Ok(ScenarioOutput { files, checks, headline })
}

#[derive(Serialize)]
struct ControlJson<'a> {
    version: u32,
    x: &'a [f64],
    steering_residual: f64,
    norm_l2: f64,
    hstar: Option<&'a HstarReport>,
}

fn control(cfg: &ExperimentConfig, model: &SpectralModel) -> Result<ScenarioOutput> {
    let grid = Grid::new(cfg.t_end, cfg.n_steps)?;
    let x = cfg.x.clone().unwrap_or_else(|| vec![1.0; model.n_modes()]);
    let mut u = explicit_control(model, &x, grid)?;
    let residual = verify_steering(model, &x, &u)?;
    if cfg.hstar {
        u = hstar_norm(model.beta(), u, cfg.mu_hint)?;
    }
    let mut headline = vec![
        format!("steering residual {residual:.3e}"),
        format!("L2 norm of the control {:.6e}", u.norm_l2),
    ];
    if let Some(h) = &u.hstar {
        let status = format!("{:?}", h.status).to_lowercase();
        headline.push(match h.value {
            Some(v) => format!("H* norm: {status}, value {v:.6e}"),
            None => format!("H* norm: {status}"),
        });
    }
    let body = json(&ControlJson {
        version: crate::spectral::REPORT_SCHEMA_VERSION,
        x: &x,
        steering_residual: residual,
        norm_l2: u.norm_l2,
        hstar: u.hstar.as_ref(),
    })?;
    let plot = plot_csv((0..grid.n_nodes()).map(|k| (grid.node(k), u.values.value(0, k), 0.0)));
    Ok(ScenarioOutput {
        files: vec![
            ("control.csv".into(), u.to_csv()),
            ("control.json".into(), body),
            ("plot.csv".into(), plot),
        ],
        checks: vec![Check::at_most("steering residual", residual, cfg.tolerances.steering)],
        headline,
    })
}

/// Relative accuracy asked of the tanh-sinh cross-check of each constraint.
const MOMENT_QUAD_TOL: f64 = 1e-12;

fn moment(cfg: &ExperimentConfig, model: &SpectralModel) -> Result<ScenarioOutput> {
    let p = cfg.moment_problem(model)?;
    let grid = Grid::new(cfg.t_end, cfg.n_steps)?;
    let sol = moment_solve(&p, grid)?;
    let scale = (0..p.n_trunc)
        .map(|n| (p.exponents[n] * p.targets[n]).abs())
        .fold(f64::MIN_POSITIVE, f64::max);
    let mut quad_err: f64 = 0.0;
    for n in 0..p.n_trunc {
        let l = p.exponents[n];
        let got = integrate(|t| (-l * t).exp() * sol.h_at(t), 0.0, p.t_end, MOMENT_QUAD_TOL)?;
        quad_err = quad_err.max((got - l * p.targets[n]).abs() / scale);
    }
    let nodes = csv_string(
        &["t", "h", "u0"],
        (0..grid.n_nodes()).map(|k| vec![grid.node(k), sol.h.values.value(0, k), sol.u0.values.value(0, k)]),
    );
    let plot = plot_csv((0..grid.n_nodes()).map(|k| (grid.node(k), sol.h.values.value(0, k), 0.0)));
    Ok(ScenarioOutput {
        files: vec![
            ("moment.json".into(), sol.to_json()? + "\n"),
            ("moment.csv".into(), nodes),
            ("plot.csv".into(), plot),
        ],
        checks: vec![
            Check::at_most("max constraint residual", sol.max_residual(), p.tolerance),
            Check::at_most("quadrature cross-check of the constraints", quad_err, 1e-6),
        ],
        headline: vec![
            format!("n_trunc {}, ridge {:.3e}", p.n_trunc, sol.ridge_used),
            format!("Gram condition number {:.3e}", sol.condition),
            format!("L2 norm of h {:.6e}", sol.h.norm_l2),
        ],
    })
}

fn mc(cfg: &ExperimentConfig, seed: u64) -> McParams {
    McParams { n_paths: cfg.n_paths, n_steps: cfg.n_steps, seed }
}

fn density(cfg: &ExperimentConfig, model: &SpectralModel) -> Result<ScenarioOutput> {
    let x = cfg.initial_state();
    let g = NonlinearityG::new(cfg.drift(), model)?;
    let k = cfg.tolerances.se_multiplier;
    let samples = density_ensemble(model, &g, &x, mc(cfg, cfg.seed))?;
    let rho: Vec<f64> = samples.iter().map(|d| d.rho).collect();
    let m = mean_se(&rho);
    // an independent ensemble, so the two checks do not share noise
    let tr = transfer_check(model, &g, &x, &cfg.battery(), mc(cfg, cfg.seed.wrapping_add(1)))?;
    let mut checks = vec![Check::at_most("mean rho vs 1 in se units", (m.mean - 1.0).abs() / m.se, k)];
    for r in &tr.records {
        checks.push(Check::at_most(
            format!("transfer {} difference in se units", r.functional),
            r.diff.mean.abs() / r.combined_se(),
            k,
        ));
    }
    let overflow = samples.iter().filter(|d| d.overflow).count();
    let plot = plot_csv(tr.records.iter().enumerate().map(|(i, r)| (i as f64, r.diff.mean, r.diff.se)));
    Ok(ScenarioOutput {
        files: vec![
            ("densities.csv".into(), densities_csv(&samples)),
            ("transfer.json".into(), json(&tr)?),
            ("plot.csv".into(), plot),
        ],
        checks,
        headline: vec![
            format!("mean rho {:.6} +- {:.6} over {} paths", m.mean, m.se, m.n),
            format!("{overflow} density overflows"),
        ],
    })
}

fn strongfeller(cfg: &ExperimentConfig, model: &SpectralModel) -> Result<ScenarioOutput> {
    let x = cfg.initial_state();
    let g = NonlinearityG::new(cfg.drift(), model)?;
    let levels = cfg.dyadic_levels.unwrap_or(5);
    let report = strong_feller_probe(
        model,
        &g,
        &x,
        &cfg.directions(),
        levels,
        &cfg.battery(),
        mc(cfg, cfg.seed),
    )?;
    let mut header = vec!["direction", "level", "offset", "rho_diff", "se", "mean_quadratic"];
    let tails: Vec<String> = TAIL_LEVELS.iter().map(|k| format!("tail_{k}")).collect();
    header.extend(tails.iter().map(String::as_str));
    let probe = csv_string(
        &header,
        report.records.iter().map(|r| {
            let mut row = vec![
                r.direction as f64,
                r.level as f64,
                r.offset,
                r.rho_diff.mean,
                r.rho_diff.se,
                r.mean_quadratic,
            ];
            row.extend(&r.tail_mass);
            row
        }),
    );
    let ratio = cfg.tolerances.probe_ratio;
    let mut checks = Vec::new();
    let mut headline = Vec::new();
    for t in &report.trends {
        checks.push(Check {
            name: format!("direction {} trend nonincreasing within 2 se", t.direction),
            value: if t.nonincreasing { 1.0 } else { 0.0 },
            threshold: 1.0,
            pass: t.nonincreasing,
        });
        checks.push(Check::at_most(
            format!("direction {} final / initial", t.direction),
            t.final_over_initial,
            ratio,
        ));
        headline.push(format!(
            "direction {}: trend {}, final/initial {:.4}",
            t.direction,
            if t.passes(ratio) { "PASS" } else { "FAIL" },
            t.final_over_initial
        ));
    }
    let plot = plot_csv(report.records.iter().map(|r| (r.offset, r.rho_diff.mean, r.rho_diff.se)));
    Ok(ScenarioOutput {
        files: vec![
            ("probe.csv".into(), probe),
            ("probe.json".into(), json(&report)?),
            ("plot.csv".into(), plot),
        ],
        checks,
        headline,
    })
}
