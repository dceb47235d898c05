//! Declarative experiment configuration: one TOML or JSON document per run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::MomentProblem;
use crate::error::{Error, Result};
use crate::girsanov::{Drift, ScalarFn, TestFunctional};
use crate::grid::{HurstParameter, MIN_OPERATOR_STEPS};
use crate::spectral::SpectralModel;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Criterion,
    Simulate,
    Control,
    Moment,
    Density,
    Strongfeller,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Criterion,
        Scenario::Simulate,
        Scenario::Control,
        Scenario::Moment,
        Scenario::Density,
        Scenario::Strongfeller,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Criterion => "criterion",
            Scenario::Simulate => "simulate",
            Scenario::Control => "control",
            Scenario::Moment => "moment",
            Scenario::Density => "density",
            Scenario::Strongfeller => "strongfeller",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::Criterion => "covariance spectrum q_n and the equivalence-of-laws verdict",
            Scenario::Simulate => "Ornstein-Uhlenbeck paths, empirical covariance and Hoelder exponents",
            Scenario::Control => "explicit null control, steering residual and H* norm",
            Scenario::Moment => "truncated exponential moment problem",
            Scenario::Density => "Girsanov densities and the transfer identity",
            Scenario::Strongfeller => "coupled density differences under shrinking offsets",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `α_n = (πn)²`, `λ_n = 1`
    Heat,
    /// `α_n = (πn)^{2m}`, `λ_n = 1`
    HigherOrder,
    /// `alphas` and `lambdas` given explicitly or by a law.
    Diagonal,
}

/// A sequence indexed by the mode number `n = 1, 2, …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sequence {
    List { values: Vec<f64> },
    Constant { value: f64 },
    /// `scale · n^exponent`
    Power { scale: f64, exponent: f64 },
    /// `α_n^exponent`; only meaningful once the alphas are known.
    AlphaPower { exponent: f64 },
    /// `e^{-rate · α_n · T}`
    ExpAlpha { rate: f64 },
}

impl Sequence {
    fn resolve(&self, n_modes: usize, alphas: Option<&[f64]>, t_end: f64, field: &str) -> Result<Vec<f64>> {
        let need_alphas = || {
            alphas.ok_or_else(|| Error::Validation {
                field: field.to_string(),
                reason: "this law refers to alphas and cannot define them".into(),
            })
        };
        let v = match self {
            Sequence::List { values } => {
                if values.len() != n_modes {
                    return Err(Error::Validation {
                        field: format!("{field}.values"),
                        reason: format!("{} values for {n_modes} modes", values.len()),
                    });
                }
                values.clone()
            }
            Sequence::Constant { value } => vec![*value; n_modes],
            Sequence::Power { scale, exponent } => {
                (1..=n_modes).map(|n| scale * (n as f64).powf(*exponent)).collect()
            }
            Sequence::AlphaPower { exponent } => need_alphas()?.iter().map(|a| a.powf(*exponent)).collect(),
            Sequence::ExpAlpha { rate } => need_alphas()?.iter().map(|a| (-rate * a * t_end).exp()).collect(),
        };
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub preset: Preset,
    pub n_modes: usize,
    /// Order `m` of the `2m`-order operator (`higher_order` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Sequence>,
    /// Overrides the preset noise intensities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Sequence>,
}

/// Checks applied to the outputs; defaults match the acceptance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Monte Carlo comparisons pass within this many standard errors.
    pub se_multiplier: f64,
    /// Largest accepted steering residual.
    pub steering: f64,
    /// Largest accepted `E|ρ(x_J) - ρ(x)| / E|ρ(x_0) - ρ(x)|`.
    pub probe_ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { se_multiplier: 3.0, steering: 1e-10, probe_ratio: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub model: ModelSpec,
    /// Required; optional here only so that its absence is reported by name.
    #[serde(default)]
    pub beta: Option<f64>,
    pub t_end: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Initial state; defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Drift>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<Vec<TestFunctional>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dyadic_levels: Option<usize>,
    /// Moment targets `c_n`; exponents are the model's `α_n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Sequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trunc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    /// Decay exponent `μ` of the control, recorded next to the `H*` verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_hint: Option<f64>,
    /// Whether the control scenario evaluates the `H*` norm.
    #[serde(default = "yes")]
    pub hstar: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn yes() -> bool {
    true
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Validation { field: field.to_string(), reason: reason.into() }
}

impl ExperimentConfig {
    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| {
                let field = e.path().to_string();
                invalid(&field, e.into_inner().to_string())
            })?
        } else {
            let de = toml::Deserializer::new(text);
            serde_path_to_error::deserialize(de).map_err(|e| {
                let field = e.path().to_string();
                invalid(&field, e.into_inner().message().to_string())
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn beta(&self) -> Result<HurstParameter> {
        let b = self.beta.ok_or_else(|| invalid("beta", "required field is missing"))?;
        HurstParameter::new(b).map_err(|_| invalid("beta", format!("{b} is outside (0, 1)")))
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.x.clone().unwrap_or_else(|| vec![0.0; self.model.n_modes])
    }

    pub fn drift(&self) -> Drift {
        self.drift.clone().unwrap_or(Drift::Nemytskii {
            f: ScalarFn::Sin,
            n_quad: 8 * self.model.n_modes.max(4),
        })
    }

    pub fn battery(&self) -> Vec<TestFunctional> {
        self.battery
            .clone()
            .unwrap_or_else(|| crate::girsanov::default_battery(self.model.n_modes))
    }

    pub fn directions(&self) -> Vec<Vec<f64>> {
        self.directions.clone().unwrap_or_else(|| {
            let mut d = vec![0.0; self.model.n_modes];
            d[0] = 1.0;
            vec![d]
        })
    }

    /// Resolves the model spec into a validated [`SpectralModel`].
    pub fn build_model(&self) -> Result<SpectralModel> {
        let m = &self.model;
        let beta = self.beta()?;
        if m.n_modes == 0 {
            return Err(invalid("model.n_modes", "must be at least 1"));
        }
        let base = match m.preset {
            Preset::Heat => SpectralModel::heat_dirichlet(m.n_modes, beta, self.t_end)?,
            Preset::HigherOrder => {
                let order = m.order.ok_or_else(|| invalid("model.order", "required for higher_order"))?;
                if order == 0 {
                    return Err(invalid("model.order", "must be at least 1"));
                }
                SpectralModel::higher_order(m.n_modes, order, beta, self.t_end)?
            }
            Preset::Diagonal => {
                let seq = m.alphas.as_ref().ok_or_else(|| invalid("model.alphas", "required for diagonal"))?;
                let alphas = seq.resolve(m.n_modes, None, self.t_end, "model.alphas")?;
                SpectralModel::new(alphas, vec![1.0; m.n_modes], beta, self.t_end)?
            }
        };
        if m.preset != Preset::Diagonal && m.alphas.is_some() {
            return Err(invalid("model.alphas", "only the diagonal preset takes alphas"));
        }
        match &m.lambdas {
            None => Ok(base),
            Some(seq) => {
                let l = seq.resolve(m.n_modes, Some(base.alphas()), self.t_end, "model.lambdas")?;
                base.with_lambdas(l)
            }
        }
    }

    /// Exponents `α_n` of the model with targets `c_n`.
    pub fn moment_problem(&self, model: &SpectralModel) -> Result<MomentProblem> {
        let seq = self.targets.as_ref().ok_or_else(|| invalid("targets", "required for the moment scenario"))?;
        let targets = seq.resolve(model.n_modes(), Some(model.alphas()), self.t_end, "targets")?;
        let n_trunc = self.n_trunc.unwrap_or(model.n_modes());
        let p = MomentProblem {
            exponents: model.alphas().to_vec(),
            targets,
            t_end: self.t_end,
            n_trunc,
            ridge: self.ridge,
            tolerance: 1e-8,
        };
        p.validate().map_err(|e| invalid("n_trunc", e.to_string()))?;
        Ok(p)
    }

    /// Checks every field against its documented range; the first violation
    /// is returned with its field path.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {CONFIG_SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        self.beta()?;
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(invalid("t_end", format!("{} is not positive", self.t_end)));
        }
        if self.n_steps < MIN_OPERATOR_STEPS {
            return Err(invalid("n_steps", format!("{} < {MIN_OPERATOR_STEPS}", self.n_steps)));
        }
        let model = self.build_model().map_err(|e| match e {
            Error::Validation { .. } => e,
            other => invalid("model", other.to_string()),
        })?;
        let n = model.n_modes();
        if let Some(x) = &self.x {
            if x.len() != n || x.iter().any(|v| !v.is_finite()) {
                return Err(invalid("x", format!("needs {n} finite coordinates")));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.se_multiplier", t.se_multiplier),
            ("tolerances.steering", t.steering),
            ("tolerances.probe_ratio", t.probe_ratio),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("{v} is not positive")));
            }
        }
        match self.scenario {
            Scenario::Criterion | Scenario::Control => {}
            Scenario::Moment => {
                self.moment_problem(&model)?;
            }
            Scenario::Simulate | Scenario::Density | Scenario::Strongfeller => {
                if self.n_paths == 0 {
                    return Err(invalid("n_paths", "must be at least 1"));
                }
            }
        }
        if matches!(self.scenario, Scenario::Density | Scenario::Strongfeller) {
            crate::girsanov::NonlinearityG::new(self.drift(), &model)
                .map_err(|e| invalid("drift", e.to_string()))?;
            for (i, phi) in self.battery().iter().enumerate() {
                phi.validate(n).map_err(|e| invalid(&format!("battery[{i}]"), e.to_string()))?;
            }
        }
        if self.scenario == Scenario::Strongfeller {
            let levels = self.dyadic_levels.unwrap_or(5);
            if levels < 2 {
                return Err(invalid("dyadic_levels", format!("{levels} < 2")));
            }
            for (i, d) in self.directions().iter().enumerate() {
                if d.len() != n || d.iter().all(|v| *v == 0.0) {
                    return Err(invalid(
                        &format!("directions[{i}]"),
                        format!("needs {n} coordinates, not all zero"),
                    ));
                }
            }
        }
        Ok(())
    }
}
