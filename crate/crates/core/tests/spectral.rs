//! Diagonal models: mode covariances, the equivalence verdict and simulation.

use fracspde::noise::NoiseSeed;
use fracspde::quad::gamma;
use fracspde::spectral::{
    covariance_qn, covariance_qn_direct, covariance_qn_oracle, dm_condition, empirical_covariance,
    equivalence_report, simulate_ou, CriterionReport, SpectralModel, Verdict,
};
use fracspde::{Error, Grid, HurstParameter};

fn h(b: f64) -> HurstParameter {
    HurstParameter::new(b).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn standard_case_has_closed_form() {
    let model = SpectralModel::new(vec![0.5, 2.0, 7.0], vec![1.0, 0.3, 2.0], h(0.5), 1.5).unwrap();
    for n in 1..=3 {
        let (a, l) = (model.alphas()[n - 1], model.lambdas()[n - 1]);
        let want = l * (1.0 - (-2.0 * a * 1.5).exp()) / (2.0 * a);
        let got = covariance_qn(&model, n, 1024).unwrap();
        assert!(rel(got, want) < 1e-4, "mode {n}: {got} vs {want}");
    }
}

#[test]
fn three_routes_agree() {
    let model = SpectralModel::new(vec![0.7, 1.5, 3.0], vec![1.0; 3], h(0.75), 1.0).unwrap();
    for n in 1..=3 {
        let q = covariance_qn(&model, n, 1024).unwrap();
        let d = covariance_qn_direct(&model, n, 1024).unwrap();
        let o = covariance_qn_oracle(&model, n, 1024).unwrap();
        assert!(rel(d, q) < 1e-3, "direct, mode {n}: {d} vs {q}");
        assert!(rel(o, q) < 5e-3, "oracle, mode {n}: {o} vs {q}");
    }
    let rough = model.with_beta(h(0.3));
    for n in 1..=3 {
        let q = covariance_qn(&rough, n, 1024).unwrap();
        let d = covariance_qn_direct(&rough, n, 1024).unwrap();
        assert!(rel(d, q) < 1e-2, "rough direct, mode {n}: {d} vs {q}");
    }
}

#[test]
fn high_modes_reach_the_stationary_limit() {
    // α^{2β} q_n / λ_n → Var ∫_0^∞ e^{-s} dB_s = β Γ(2β)
    for b in [0.3, 0.75] {
        let report = equivalence_report(&SpectralModel::heat_dirichlet(8, h(b), 1.0).unwrap(), 1024).unwrap();
        let want = b * gamma(2.0 * b);
        for r in &report.per_mode[1..] {
            assert!(rel(r.band, want) < 5e-4, "beta {b}, mode {}: {} vs {want}", r.n, r.band);
        }
    }
}

#[test]
fn covariance_is_linear_in_lambda() {
    let model = SpectralModel::heat_dirichlet(3, h(0.4), 1.0).unwrap();
    let scaled = model.with_lambdas(vec![5.0; 3]).unwrap();
    for n in 1..=3 {
        let (a, b) = (covariance_qn(&model, n, 256).unwrap(), covariance_qn(&scaled, n, 256).unwrap());
        assert!(rel(b, 5.0 * a) < 1e-13);
    }
}

#[test]
fn verdicts_on_reference_models() {
    let heat = SpectralModel::heat_dirichlet(24, h(0.75), 1.0).unwrap();
    assert_eq!(equivalence_report(&heat, 512).unwrap().verdict, Verdict::Equivalent);
    let rough = heat.with_beta(h(0.3));
    assert_eq!(equivalence_report(&rough, 512).unwrap().verdict, Verdict::Equivalent);

    let alphas: Vec<f64> = (1..=16).map(|n| n as f64).collect();
    let lambdas = alphas.iter().map(|a| (-4.0 * a).exp()).collect();
    let fast = SpectralModel::new(alphas, lambdas, h(0.6), 1.0).unwrap();
    let report = equivalence_report(&fast, 512).unwrap();
    assert_eq!(report.verdict, Verdict::Singular);
    assert!(report.ln_sup_necsuf > 10.0);
}

#[test]
fn report_survives_serialization() {
    let report = equivalence_report(&SpectralModel::heat_dirichlet(4, h(0.6), 1.0).unwrap(), 256).unwrap();
    let back: CriterionReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.to_csv().lines().count(), 5);
}

#[test]
fn sufficient_condition_flag() {
    assert!(dm_condition(1, 1, h(0.3)));
    assert!(!dm_condition(1, 1, h(0.25)));
    assert!(dm_condition(3, 2, h(0.4)));
}

#[test]
fn invalid_models_list_every_problem() {
    let err = SpectralModel::new(vec![2.0, 1.0], vec![-1.0, 1.0], h(0.5), 0.0).unwrap_err();
    match err {
        Error::InvalidModel(p) => assert_eq!(p.len(), 3, "{p:?}"),
        e => panic!("{e}"),
    }
    let model = SpectralModel::heat_dirichlet(2, h(0.5), 1.0).unwrap();
    assert!(covariance_qn(&model, 3, 64).is_err());
}

#[test]
fn terminal_variance_matches_qn() {
    let model = SpectralModel::heat_dirichlet(4, h(0.7), 1.0).unwrap();
    let grid = Grid::new(1.0, 512).unwrap();
    let ens = simulate_ou(&model, grid, &[0.0; 4], 4000, NoiseSeed::new(8)).unwrap();
    let emp = empirical_covariance(&ens).unwrap();
    for (n, e) in emp.iter().enumerate() {
        let q = covariance_qn(&model, n + 1, 1024).unwrap();
        assert!(e.covers(q, 4.0), "mode {}: {} +- {} vs {q}", n + 1, e.mean, e.se);
    }
}

#[test]
fn standard_error_shrinks_with_paths() {
    let model = SpectralModel::heat_dirichlet(1, h(0.4), 1.0).unwrap();
    let grid = Grid::new(1.0, 128).unwrap();
    let se = |n| {
        let ens = simulate_ou(&model, grid, &[0.0], n, NoiseSeed::new(3)).unwrap();
        empirical_covariance(&ens).unwrap()[0].se
    };
    let r = se(1000) / se(4000);
    assert!((1.6..2.5).contains(&r), "{r}");
}

#[test]
fn modes_do_not_interact() {
    let grid = Grid::new(1.0, 64).unwrap();
    let a = SpectralModel::new(vec![1.0, 4.0], vec![1.0, 1.0], h(0.3), 1.0).unwrap();
    let b = a.with_lambdas(vec![1.0, 50.0]).unwrap();
    let ea = simulate_ou(&a, grid, &[1.0, 2.0], 20, NoiseSeed::new(4)).unwrap();
    let eb = simulate_ou(&b, grid, &[1.0, -3.0], 20, NoiseSeed::new(4)).unwrap();
    for p in 0..20 {
        assert_eq!(ea.path(p, 0), eb.path(p, 0));
    }
}

#[test]
fn vanishing_noise_leaves_the_semigroup() {
    let model = SpectralModel::new(vec![1.0, 3.0], vec![1e-300; 2], h(0.6), 1.0).unwrap();
    let grid = Grid::new(1.0, 64).unwrap();
    let x = [1.0, -2.0];
    let ens = simulate_ou(&model, grid, &x, 3, NoiseSeed::new(1)).unwrap();
    let want = model.semigroup(1.0, &x);
    for p in 0..3 {
        for m in 0..2 {
            assert!((ens.path(p, m)[64] - want[m]).abs() < 1e-12 * want[m].abs());
        }
    }
}

#[test]
fn ensemble_rejects_bad_input() {
    let model = SpectralModel::heat_dirichlet(2, h(0.6), 1.0).unwrap();
    let grid = Grid::new(1.0, 64).unwrap();
    assert!(matches!(
        simulate_ou(&model, grid, &[0.0], 10, NoiseSeed::new(1)),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(matches!(
        simulate_ou(&model, Grid::new(2.0, 64).unwrap(), &[0.0; 2], 10, NoiseSeed::new(1)),
        Err(Error::GridMismatch(_))
    ));
    let ens = simulate_ou(&model, grid, &[0.0; 2], 10, NoiseSeed::new(1)).unwrap();
    assert!(empirical_covariance(&ens).is_err());
}
