//! Built-in SDE systems with known structure.

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SdeError};
use crate::system::{to_formulation, Formulation, SdeSystem};

/// Exact solution `y_t` from `(y0, t, W_t)`.
pub type ExactFn = Arc<dyn Fn(&[f64], f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Previsible step size `h(C, y)` computed from the state at the left
/// endpoint only.
pub type PrevisibleFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A system plus the metadata experiments need.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: &'static str,
    pub horizon: f64,
    pub y0: Vec<f64>,
    pub native: Formulation,
    ito: Arc<dyn SdeSystem>,
    stratonovich: Arc<dyn SdeSystem>,
    pub exact: Option<ExactFn>,
    pub previsible_step: Option<PrevisibleFn>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("y0", &self.y0)
            .field("native", &self.native)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl ModelSpec {
    fn new(name: &'static str, horizon: f64, y0: Vec<f64>, native: Arc<dyn SdeSystem>) -> Self {
        let form = native.formulation();
        let ito = to_formulation(native.clone(), Formulation::Ito);
        let stratonovich = to_formulation(native, Formulation::Stratonovich);
        Self { name, horizon, y0, native: form, ito, stratonovich, exact: None, previsible_step: None }
    }

    /// Wraps a user system; the other calculus is derived by the drift
    /// correction.
    pub fn custom(name: &'static str, horizon: f64, y0: Vec<f64>, system: Arc<dyn SdeSystem>) -> Self {
        Self::new(name, horizon, y0, system)
    }

    /// Builds from two hand-written forms (for systems whose correction
    /// vanishes, so both share one drift).
    fn with_forms(
        name: &'static str,
        horizon: f64,
        y0: Vec<f64>,
        native: Formulation,
        ito: Arc<dyn SdeSystem>,
        stratonovich: Arc<dyn SdeSystem>,
    ) -> Self {
        Self { name, horizon, y0, native, ito, stratonovich, exact: None, previsible_step: None }
    }

    /// The system written in the requested calculus.
    pub fn system(&self, form: Formulation) -> Arc<dyn SdeSystem> {
        match form {
            Formulation::Ito => self.ito.clone(),
            Formulation::Stratonovich => self.stratonovich.clone(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.ito.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.ito.noise_dim()
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SdeError::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }
}

/// Simplified SABR in `(S, ν)`: `dS = e^ν ∘ dW¹`, `dν = -½ dt + dW²`.
///
/// `g₁' g₁ = g₂' g₂ = 0`, so the Ito and Stratonovich drifts coincide.
#[derive(Debug, Clone, Copy)]
pub struct Sabr {
    pub form: Formulation,
}

impl SdeSystem for Sabr {
    fn state_dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn formulation(&self) -> Formulation {
        self.form
    }
    fn drift(&self, _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = -0.5;
    }
    fn diffusion(&self, y: &[f64], out: &mut [f64]) {
        out[0] = y[1].exp();
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = 1.0;
    }
    fn second_order(&self, y: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = y[1].exp() * u[1] * v[0];
        out[1] = 0.0;
    }
    fn has_analytic_second_order(&self) -> bool {
        true
    }
}

/// `h(ν) = log(1 + C e^{-2ν})`.
pub fn sabr_previsible_step(tolerance: f64, y: &[f64]) -> f64 {
    (tolerance * (-2.0 * y[1]).exp()).ln_1p()
}

pub fn sabr_model() -> ModelSpec {
    let mut spec = ModelSpec::with_forms(
        "sabr",
        8.0,
        vec![0.0, 0.0],
        Formulation::Stratonovich,
        Arc::new(Sabr { form: Formulation::Ito }),
        Arc::new(Sabr { form: Formulation::Stratonovich }),
    );
    spec.previsible_step = Some(Arc::new(sabr_previsible_step));
    spec
}

/// `dx = dW¹`, `dy = x ∘ dW²`; `g₂' g₁ = (0, 1)` is the only non-zero
/// second-order term and the Ito correction vanishes.
#[derive(Debug, Clone, Copy)]
pub struct Counterexample {
    pub form: Formulation,
}

impl SdeSystem for Counterexample {
    fn state_dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn formulation(&self) -> Formulation {
        self.form
    }
    fn drift(&self, _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
    }
    fn diffusion(&self, y: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = y[0];
    }
    fn second_order(&self, _y: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = u[0] * v[1];
    }
    fn has_analytic_second_order(&self) -> bool {
        true
    }
}

pub fn counterexample_model() -> ModelSpec {
    ModelSpec::with_forms(
        "counterexample",
        1.0,
        vec![0.0, 0.0],
        Formulation::Stratonovich,
        Arc::new(Counterexample { form: Formulation::Ito }),
        Arc::new(Counterexample { form: Formulation::Stratonovich }),
    )
}

/// Scalar geometric Brownian motion `dy = μ y dt + σ y dW` (Ito).
#[derive(Debug, Clone, Copy)]
pub struct Gbm {
    pub mu: f64,
    pub sigma: f64,
}

impl SdeSystem for Gbm {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn formulation(&self) -> Formulation {
        Formulation::Ito
    }
    fn drift(&self, y: &[f64], out: &mut [f64]) {
        out[0] = self.mu * y[0];
    }
    fn diffusion(&self, y: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * y[0];
    }
    fn second_order(&self, y: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * self.sigma * y[0] * u[0] * v[0];
    }
    fn has_analytic_second_order(&self) -> bool {
        true
    }
}

pub fn gbm_model(mu: f64, sigma: f64) -> ModelSpec {
    let mut spec = ModelSpec::new("gbm", 1.0, vec![1.0], Arc::new(Gbm { mu, sigma }));
    spec.exact = Some(Arc::new(move |y0: &[f64], t: f64, w: &[f64]| {
        vec![y0[0] * ((mu - 0.5 * sigma * sigma) * t + sigma * w[0]).exp()]
    }));
    spec
}

/// Ornstein-Uhlenbeck with additive noise, `dy = -θ y dt + σ dW`.
#[derive(Debug, Clone, Copy)]
pub struct AdditiveOu {
    pub theta: f64,
    pub sigma: f64,
    pub form: Formulation,
}

impl SdeSystem for AdditiveOu {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn formulation(&self) -> Formulation {
        self.form
    }
    fn drift(&self, y: &[f64], out: &mut [f64]) {
        out[0] = -self.theta * y[0];
    }
    fn diffusion(&self, _y: &[f64], out: &mut [f64]) {
        out[0] = self.sigma;
    }
    fn second_order(&self, _y: &[f64], _u: &[f64], _v: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn has_analytic_second_order(&self) -> bool {
        true
    }
}

pub fn additive_ou_model(theta: f64, sigma: f64) -> Result<ModelSpec> {
    if !(theta > 0.0) {
        return Err(SdeError::InvalidParameter(format!("ou requires theta > 0, got {theta}")));
    }
    Ok(ModelSpec::with_forms(
        "ou",
        1.0,
        vec![1.0],
        Formulation::Ito,
        Arc::new(AdditiveOu { theta, sigma, form: Formulation::Ito }),
        Arc::new(AdditiveOu { theta, sigma, form: Formulation::Stratonovich }),
    ))
}

/// Registered model names.
pub const MODEL_NAMES: [&str; 4] = ["sabr", "counterexample", "gbm", "ou"];

/// Parameters accepted by [`model_by_name`] for each model.
pub fn model_parameters(name: &str) -> &'static [&'static str] {
    match name {
        "gbm" => &["mu", "sigma", "y0", "T"],
        "ou" => &["theta", "sigma", "y0", "T"],
        "sabr" | "counterexample" => &["T"],
        _ => &[],
    }
}

/// Looks a model up by name and applies `key=value` overrides; unknown
/// names and keys are errors.
pub fn model_by_name(name: &str, overrides: &[(String, f64)]) -> Result<ModelSpec> {
    if !MODEL_NAMES.contains(&name) {
        return Err(SdeError::InvalidParameter(format!(
            "unknown model '{name}' (expected one of {})",
            MODEL_NAMES.join(", ")
        )));
    }
    let allowed = model_parameters(name);
    let get = |key: &str, default: f64| -> f64 {
        overrides.iter().rev().find(|(k, _)| k == key).map(|(_, v)| *v).unwrap_or(default)
    };
    if let Some((k, _)) = overrides.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return Err(SdeError::InvalidParameter(format!(
            "model '{name}' has no parameter '{k}' (accepted: {})",
            allowed.join(", ")
        )));
    }
    let mut spec = match name {
        "sabr" => sabr_model(),
        "counterexample" => counterexample_model(),
        "gbm" => gbm_model(get("mu", 0.05), get("sigma", 0.5)),
        "ou" => additive_ou_model(get("theta", 1.0), get("sigma", 1.0))?,
        _ => unreachable!(),
    };
    if allowed.contains(&"y0") {
        spec.y0 = vec![get("y0", spec.y0[0])];
    }
    let horizon = get("T", spec.horizon);
    spec.with_horizon(horizon)
}
