//! One-step embedded integrators.
//!
//! Every stepper maps `(y, h, W, H, z)` to a main approximation and an
//! embedded one; their distance is the local error proxy a controller uses.
//! Steppers report the raw Euclidean distance. Tolerance scaling belongs to
//! the controller.

use std::fmt;
use std::str::FromStr;

use crate::brownian_tree::BrownianSample;
use crate::error::{Result, SdeError};
use crate::system::{ito_correction, Formulation, SdeSystem};

/// SPaRK weight on the outer stages, `(3 - √3) / 6`.
pub const SPARK_A: f64 = 0.211_324_865_405_187_13;
/// SPaRK weight on the middle stage, `√3 / 3`.
pub const SPARK_B: f64 = 0.577_350_269_189_625_8;
const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Brownian information handed to a stepper.
#[derive(Debug, Clone, Copy)]
pub struct PathIncrement<'a> {
    pub h: f64,
    pub w: &'a [f64],
    /// Space-time Levy area; required by `spark`.
    pub area: Option<&'a [f64]>,
    /// Auxiliary randomness independent of `W` (Rademacher signs for
    /// `ito-heun-rand`).
    pub aux: Option<&'a [f64]>,
}

impl<'a> PathIncrement<'a> {
    pub fn new(h: f64, w: &'a [f64]) -> Self {
        Self { h, w, area: None, aux: None }
    }

    pub fn with_area(mut self, area: &'a [f64]) -> Self {
        self.area = Some(area);
        self
    }

    pub fn with_aux(mut self, aux: &'a [f64]) -> Self {
        self.aux = Some(aux);
        self
    }

    pub fn from_sample(s: &'a BrownianSample) -> Self {
        Self { h: s.h, w: &s.w, area: Some(&s.area), aux: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub y_next: Vec<f64>,
    pub y_embedded: Vec<f64>,
    /// `‖y_next - y_embedded‖₂`
    pub error_norm: f64,
}

impl StepOutput {
    fn new(y_next: Vec<f64>, y_embedded: Vec<f64>) -> Self {
        let error_norm = y_next.iter().zip(&y_embedded).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Self { y_next, y_embedded, error_norm }
    }

    /// `‖Y - Ỹ‖₂ / (C √d)`.
    pub fn scaled_error(&self, tolerance: f64, noise_dim: usize) -> f64 {
        self.error_norm / (tolerance * (noise_dim as f64).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.y_next.iter().chain(&self.y_embedded).all(|x| x.is_finite())
    }
}

/// `f(y)` and `g(y)` from a single evaluation of `F = (f g)`.
struct Field {
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Field {
    fn eval<S: SdeSystem + ?Sized>(sys: &S, y: &[f64]) -> Self {
        let (e, d) = (sys.state_dim(), sys.noise_dim());
        let mut f = vec![0.0; e];
        let mut g = vec![0.0; e * d];
        sys.drift(y, &mut f);
        sys.diffusion(y, &mut g);
        Self { f, g }
    }

    /// `out += F(y) (time, noise)ᵀ`
    fn accumulate(&self, time: f64, noise: &[f64], out: &mut [f64]) {
        let d = noise.len();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.g[i * d..(i + 1) * d];
            *o += self.f[i] * time + row.iter().zip(noise).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn check_dims<S: SdeSystem + ?Sized>(sys: &S, y: &[f64], inc: &PathIncrement) -> Result<()> {
    if y.len() != sys.state_dim() {
        return Err(SdeError::DimensionMismatch { what: "state", expected: sys.state_dim(), got: y.len() });
    }
    if inc.w.len() != sys.noise_dim() {
        return Err(SdeError::DimensionMismatch { what: "increment", expected: sys.noise_dim(), got: inc.w.len() });
    }
    if let Some(a) = inc.area {
        if a.len() != sys.noise_dim() {
            return Err(SdeError::DimensionMismatch { what: "area", expected: sys.noise_dim(), got: a.len() });
        }
    }
    Ok(())
}

fn require<S: SdeSystem + ?Sized>(sys: &S, method: &'static str, want: Formulation) -> Result<()> {
    if sys.formulation() != want {
        return Err(SdeError::FormulationMismatch { method, required: want.name(), got: sys.formulation().name() });
    }
    Ok(())
}

/// `Y' = y + f h + g W`, no embedded pair (`Ỹ = Y'`).
pub fn euler_maruyama_step<S: SdeSystem + ?Sized>(sys: &S, y: &[f64], inc: &PathIncrement) -> Result<StepOutput> {
    require(sys, "euler", Formulation::Ito)?;
    check_dims(sys, y, inc)?;
    let field = Field::eval(sys, y);
    let mut next = y.to_vec();
    field.accumulate(inc.h, inc.w, &mut next);
    Ok(StepOutput::new(next.clone(), next))
}

/// Milstein without Levy area, embedded Euler-Maruyama.
///
/// Ito: `y + f h + g W + ½ Σ g_j' g_i (W_i W_j - h δ_ij)`.
/// Stratonovich: `y + f h + g W + ½ Σ g_j' g_i W_i W_j`, with the embedded
/// Euler step taken on the Ito drift.
pub fn no_area_milstein_step<S: SdeSystem + ?Sized>(sys: &S, y: &[f64], inc: &PathIncrement) -> Result<StepOutput> {
    check_dims(sys, y, inc)?;
    let e = sys.state_dim();
    let field = Field::eval(sys, y);
    let mut correction = vec![0.0; e];
    ito_correction(sys, y, &mut correction);
    let mut quad = vec![0.0; e];
    sys.second_order(y, inc.w, inc.w, &mut quad);

    let mut euler = y.to_vec();
    field.accumulate(inc.h, inc.w, &mut euler);
    let mut next = euler.clone();
    for i in 0..e {
        next[i] += 0.5 * quad[i];
    }
    match sys.formulation() {
        Formulation::Ito => {
            for i in 0..e {
                next[i] -= inc.h * correction[i];
            }
        }
        Formulation::Stratonovich => {
            for i in 0..e {
                euler[i] += inc.h * correction[i];
            }
        }
    }
    Ok(StepOutput::new(next, euler))
}

/// Heun with embedded Euler-Maruyama for Stratonovich SDEs.
pub fn heun_step<S: SdeSystem + ?Sized>(sys: &S, y: &[f64], inc: &PathIncrement) -> Result<StepOutput> {
    require(sys, "heun", Formulation::Stratonovich)?;
    check_dims(sys, y, inc)?;
    let f0 = Field::eval(sys, y);
    let mut embedded = y.to_vec();
    f0.accumulate(inc.h, inc.w, &mut embedded);
    let f1 = Field::eval(sys, &embedded);
    let half_w: Vec<f64> = inc.w.iter().map(|x| 0.5 * x).collect();
    let mut next = y.to_vec();
    f0.accumulate(0.5 * inc.h, &half_w, &mut next);
    f1.accumulate(0.5 * inc.h, &half_w, &mut next);
    Ok(StepOutput::new(next, embedded))
}

/// Splitting path Runge-Kutta with embedded Heun; three evaluations of `F`.
///
/// ```text
/// Y½ = y + F(y)(½W̄ + √3 H̄)          Z = y + F(Y½) W̄
/// Y' = y + F(y)(a W̄ + H̄) + b F(Y½) W̄ + F(Z)(a W̄ - H̄)
/// Ỹ  = y + ½ (F(y) + F(Z)) W̄
/// ```
/// with `W̄ = (h, W)`, `H̄ = (0, H)`.
pub fn spark_step<S: SdeSystem + ?Sized>(sys: &S, y: &[f64], inc: &PathIncrement) -> Result<StepOutput> {
    require(sys, "spark", Formulation::Stratonovich)?;
    check_dims(sys, y, inc)?;
    let area = inc.area.ok_or(SdeError::MissingArea("spark"))?;
    let (h, w) = (inc.h, inc.w);
    let d = w.len();

    let f0 = Field::eval(sys, y);
    let mut mid = y.to_vec();
    let mid_noise: Vec<f64> = (0..d).map(|i| 0.5 * w[i] + SQRT_3 * area[i]).collect();
    f0.accumulate(0.5 * h, &mid_noise, &mut mid);

    let f_mid = Field::eval(sys, &mid);
    let mut z = y.to_vec();
    f_mid.accumulate(h, w, &mut z);

    let f_z = Field::eval(sys, &z);
    let plus: Vec<f64> = (0..d).map(|i| SPARK_A * w[i] + area[i]).collect();
    let minus: Vec<f64> = (0..d).map(|i| SPARK_A * w[i] - area[i]).collect();
    let scaled_w: Vec<f64> = w.iter().map(|x| SPARK_B * x).collect();
    let mut next = y.to_vec();
    f0.accumulate(SPARK_A * h, &plus, &mut next);
    f_mid.accumulate(SPARK_B * h, &scaled_w, &mut next);
    f_z.accumulate(SPARK_A * h, &minus, &mut next);

    let half_w: Vec<f64> = w.iter().map(|x| 0.5 * x).collect();
    let mut embedded = y.to_vec();
    f0.accumulate(0.5 * h, &half_w, &mut embedded);
    f_z.accumulate(0.5 * h, &half_w, &mut embedded);
    Ok(StepOutput::new(next, embedded))
}

/// Heun for Ito SDEs with Rademacher shifts `S̄ = (0, √h S)`:
///
/// ```text
/// Z  = y + F(y)(W̄ + S̄)
/// Y' = y + ½ F(y)(W̄ + S̄) + ½ F(Z)(W̄ - S̄)
/// Ỹ  = y + F(y) W̄
/// ```
pub fn ito_heun_randomized_step<S: SdeSystem + ?Sized>(sys: &S, y: &[f64], inc: &PathIncrement) -> Result<StepOutput> {
    require(sys, "ito-heun-rand", Formulation::Ito)?;
    check_dims(sys, y, inc)?;
    let signs =
        inc.aux.ok_or_else(|| SdeError::MissingAuxiliary("ito-heun-rand requires Rademacher signs in z".into()))?;
    if signs.len() != inc.w.len() {
        return Err(SdeError::DimensionMismatch { what: "signs", expected: inc.w.len(), got: signs.len() });
    }
    if let Some(bad) = signs.iter().find(|s| **s != 1.0 && **s != -1.0) {
        return Err(SdeError::MissingAuxiliary(format!("sign entries must be ±1, got {bad}")));
    }
    let root_h = inc.h.sqrt();
    let up: Vec<f64> = inc.w.iter().zip(signs).map(|(w, s)| w + root_h * s).collect();
    let down: Vec<f64> = inc.w.iter().zip(signs).map(|(w, s)| w - root_h * s).collect();

    let f0 = Field::eval(sys, y);
    let mut z = y.to_vec();
    f0.accumulate(inc.h, &up, &mut z);
    let fz = Field::eval(sys, &z);

    let half = |v: &[f64]| v.iter().map(|x| 0.5 * x).collect::<Vec<f64>>();
    let mut next = y.to_vec();
    f0.accumulate(0.5 * inc.h, &half(&up), &mut next);
    fz.accumulate(0.5 * inc.h, &half(&down), &mut next);

    let mut embedded = y.to_vec();
    f0.accumulate(inc.h, inc.w, &mut embedded);
    Ok(StepOutput::new(next, embedded))
}

/// `E[∫ W_{s,r}^i ∘ dW_r^j | W, H]` as a `d × d` matrix:
/// `½ W_i W_j` without `H`, `½ W_i W_j + H_i W_j - W_i H_j` with it.
pub fn conditional_levy_expectation(w: &[f64], area: Option<&[f64]>) -> Vec<Vec<f64>> {
    let d = w.len();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let base = 0.5 * w[i] * w[j];
                    match area {
                        Some(h) => base + h[i] * w[j] - w[i] * h[j],
                        None => base,
                    }
                })
                .collect()
        })
        .collect()
}

/// `y + f h + g W + Σ_{ij} g_j' g_i M_ij` for a given iterated-integral
/// matrix `M`; the reference expansion a consistent stepper must match up
/// to `o(h)`.
pub fn taylor_reference<S: SdeSystem + ?Sized>(sys: &S, y: &[f64], h: f64, w: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    let (e, d) = (sys.state_dim(), sys.noise_dim());
    let field = Field::eval(sys, y);
    let mut out = y.to_vec();
    field.accumulate(h, w, &mut out);
    let mut ei = vec![0.0; d];
    let mut ej = vec![0.0; d];
    let mut tmp = vec![0.0; e];
    for i in 0..d {
        for j in 0..d {
            if m[i][j] == 0.0 {
                continue;
            }
            ei.iter_mut().for_each(|x| *x = 0.0);
            ej.iter_mut().for_each(|x| *x = 0.0);
            ei[i] = 1.0;
            ej[j] = 1.0;
            sys.second_order(y, &ei, &ej, &mut tmp);
            for k in 0..e {
                out[k] += m[i][j] * tmp[k];
            }
        }
    }
    out
}

/// The stepper registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Euler,
    Milstein,
    Heun,
    Spark,
    ItoHeunRandomized,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Euler, Method::Milstein, Method::Heun, Method::Spark, Method::ItoHeunRandomized];

    pub fn name(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Milstein => "milstein",
            Method::Heun => "heun",
            Method::Spark => "spark",
            Method::ItoHeunRandomized => "ito-heun-rand",
        }
    }

    /// Evaluations of `F` per step, used for cost accounting.
    pub fn evals_per_step(self) -> usize {
        match self {
            Method::Euler | Method::Milstein => 1,
            Method::Heun | Method::ItoHeunRandomized => 2,
            Method::Spark => 3,
        }
    }

    /// Calculus the stepper integrates in; `None` accepts either.
    pub fn formulation(self) -> Option<Formulation> {
        match self {
            Method::Euler | Method::ItoHeunRandomized => Some(Formulation::Ito),
            Method::Heun | Method::Spark => Some(Formulation::Stratonovich),
            Method::Milstein => None,
        }
    }

    pub fn needs_area(self) -> bool {
        matches!(self, Method::Spark)
    }

    pub fn needs_signs(self) -> bool {
        matches!(self, Method::ItoHeunRandomized)
    }

    /// Whether `Ỹ` differs from `Y` in general.
    pub fn has_embedded_pair(self) -> bool {
        !matches!(self, Method::Euler)
    }

    pub fn step<S: SdeSystem + ?Sized>(self, sys: &S, y: &[f64], inc: &PathIncrement) -> Result<StepOutput> {
        match self {
            Method::Euler => euler_maruyama_step(sys, y, inc),
            Method::Milstein => no_area_milstein_step(sys, y, inc),
            Method::Heun => heun_step(sys, y, inc),
            Method::Spark => spark_step(sys, y, inc),
            Method::ItoHeunRandomized => ito_heun_randomized_step(sys, y, inc),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SdeError::InvalidParameter(format!("unknown method '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{to_formulation, CountingSystem};
    use std::sync::Arc;

    /// Diagonal linear test system `dy = a y dt + b y dW` in either calculus.
    struct Linear {
        a: f64,
        b: f64,
        form: Formulation,
    }

    impl SdeSystem for Linear {
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
            out[0] = self.a * y[0];
        }
        fn diffusion(&self, y: &[f64], out: &mut [f64]) {
            out[0] = self.b * y[0];
        }
        fn second_order(&self, y: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
            out[0] = self.b * self.b * y[0] * u[0] * v[0];
        }
    }

    /// `dy = f(y) dt + σ ∘ dW` with `d` noise channels on `e` states.
    struct Additive {
        theta: f64,
        sigma: Vec<f64>,
        e: usize,
        d: usize,
        form: Formulation,
    }

    impl SdeSystem for Additive {
        fn state_dim(&self) -> usize {
            self.e
        }
        fn noise_dim(&self) -> usize {
            self.d
        }
        fn formulation(&self) -> Formulation {
            self.form
        }
        fn drift(&self, y: &[f64], out: &mut [f64]) {
            for i in 0..self.e {
                out[i] = -self.theta * y[i];
            }
        }
        fn diffusion(&self, _y: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&self.sigma);
        }
    }

    fn pure_noise(d: usize, form: Formulation) -> Additive {
        let mut sigma = vec![0.0; d * d];
        for i in 0..d {
            sigma[i * d + i] = 1.0;
        }
        Additive { theta: 0.0, sigma, e: d, d, form }
    }

    #[test]
    fn euler_examples() {
        let sys = pure_noise(2, Formulation::Ito);
        let w = [0.3, -0.1];
        let out = euler_maruyama_step(&sys, &[0.0, 0.0], &PathIncrement::new(0.1, &w)).unwrap();
        assert_eq!(out.y_next, vec![0.3, -0.1]);
        assert_eq!(out.error_norm, 0.0);

        let decay = Additive { theta: 1.0, sigma: vec![0.0], e: 1, d: 1, form: Formulation::Ito };
        let out = euler_maruyama_step(&decay, &[1.0], &PathIncrement::new(0.1, &[0.7])).unwrap();
        assert!((out.y_next[0] - 0.9).abs() < 1e-15);

        let gbm = Linear { a: 0.05, b: 0.2, form: Formulation::Ito };
        let out = euler_maruyama_step(&gbm, &[1.0], &PathIncrement::new(0.01, &[0.1])).unwrap();
        assert!((out.y_next[0] - 1.0205).abs() < 1e-15);
    }

    #[test]
    fn euler_rejects_stratonovich_and_bad_dims() {
        let sys = pure_noise(2, Formulation::Stratonovich);
        assert!(matches!(
            euler_maruyama_step(&sys, &[0.0, 0.0], &PathIncrement::new(0.1, &[0.0, 0.0])),
            Err(SdeError::FormulationMismatch { .. })
        ));
        let sys = pure_noise(2, Formulation::Ito);
        assert!(matches!(
            euler_maruyama_step(&sys, &[0.0], &PathIncrement::new(0.1, &[0.0, 0.0])),
            Err(SdeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn milstein_examples() {
        let gbm = Linear { a: 0.0, b: 1.0, form: Formulation::Ito };
        let out = no_area_milstein_step(&gbm, &[1.0], &PathIncrement::new(0.04, &[0.2])).unwrap();
        assert!((out.y_next[0] - 1.2).abs() < 1e-15);
        assert!((out.y_embedded[0] - 1.2).abs() < 1e-15);

        let add = Additive { theta: 0.7, sigma: vec![0.3], e: 1, d: 1, form: Formulation::Ito };
        for w in [-1.3, 0.0, 0.4] {
            let inc = PathIncrement::new(0.1, std::slice::from_ref(&w));
            let m = no_area_milstein_step(&add, &[0.8], &inc).unwrap();
            let e = euler_maruyama_step(&add, &[0.8], &inc).unwrap();
            assert_eq!(m.y_next, e.y_next);
        }
    }

    #[test]
    fn milstein_agrees_across_calculi() {
        let ito: Arc<dyn SdeSystem> = Arc::new(Linear { a: 0.3, b: 0.5, form: Formulation::Ito });
        let strat = to_formulation(ito.clone(), Formulation::Stratonovich);
        let inc = PathIncrement::new(0.05, &[0.17]);
        let a = no_area_milstein_step(&*ito, &[1.3], &inc).unwrap();
        let b = no_area_milstein_step(&*strat, &[1.3], &inc).unwrap();
        assert!((a.y_next[0] - b.y_next[0]).abs() < 1e-12);
        assert!((a.y_embedded[0] - b.y_embedded[0]).abs() < 1e-12);
    }

    #[test]
    fn heun_examples() {
        let decay = Additive { theta: 1.0, sigma: vec![0.0], e: 1, d: 1, form: Formulation::Stratonovich };
        let out = heun_step(&decay, &[1.0], &PathIncrement::new(0.1, &[0.0])).unwrap();
        assert!((out.y_next[0] - 0.905).abs() < 1e-15);
        assert!((out.y_embedded[0] - 0.9).abs() < 1e-15);

        let add = Additive { theta: 0.0, sigma: vec![0.4], e: 1, d: 1, form: Formulation::Stratonovich };
        let out = heun_step(&add, &[2.0], &PathIncrement::new(0.1, &[0.25])).unwrap();
        assert!((out.y_next[0] - (2.0 + 0.4 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn spark_weights() {
        assert!((2.0 * SPARK_A + SPARK_B - 1.0).abs() < 1e-16);
        assert!((SPARK_A - (3.0 - 3f64.sqrt()) / 6.0).abs() < 1e-17);
        assert!((SPARK_B - 3f64.sqrt() / 3.0).abs() < 2e-16);
    }

    #[test]
    fn spark_deterministic_stages() {
        let decay = Additive { theta: 1.0, sigma: vec![0.0], e: 1, d: 1, form: Formulation::Stratonovich };
        let h = 0.1;
        let out = spark_step(&decay, &[1.0], &PathIncrement::new(h, &[0.0]).with_area(&[0.0])).unwrap();
        let y_half = 1.0 - 0.5 * h;
        let z = 1.0 - h * y_half;
        let want = 1.0 - h * (SPARK_A * 1.0 + SPARK_B * y_half + SPARK_A * z);
        assert!((out.y_next[0] - want).abs() < 1e-15);
        // exp(-0.1) to second order
        assert!((out.y_next[0] - (-h).exp()).abs() < 1e-3);
        assert!(spark_step(&decay, &[1.0], &PathIncrement::new(h, &[0.0])).is_err());
    }

    #[test]
    fn affine_exactness_for_all_steppers() {
        let sigma = vec![0.5, -0.2, 0.1, 0.9];
        let w = [0.3, -0.7];
        let area = [0.05, 0.11];
        let signs = [1.0, -1.0];
        let y = [1.0, 2.0];
        let want = [1.0 + 0.5 * 0.3 + 0.2 * 0.7, 2.0 + 0.1 * 0.3 - 0.9 * 0.7];
        for m in Method::ALL {
            let form = m.formulation().unwrap_or(Formulation::Stratonovich);
            let sys = Additive { theta: 0.0, sigma: sigma.clone(), e: 2, d: 2, form };
            let inc = PathIncrement::new(0.2, &w).with_area(&area).with_aux(&signs);
            let out = m.step(&sys, &y, &inc).unwrap();
            for i in 0..2 {
                assert!((out.y_next[i] - want[i]).abs() < 1e-15, "{m}: {:?}", out.y_next);
            }
        }
    }

    #[test]
    fn evaluation_counts() {
        for (m, expected) in [(Method::Heun, 2), (Method::Spark, 3), (Method::Euler, 1), (Method::ItoHeunRandomized, 2)]
        {
            let form = m.formulation().unwrap();
            let sys = CountingSystem::new(Arc::new(Linear { a: 0.1, b: 0.3, form }));
            let inc = PathIncrement::new(0.1, &[0.2]).with_area(&[0.01]).with_aux(&[1.0]);
            m.step(&sys, &[1.0], &inc).unwrap();
            assert_eq!(sys.evaluations(), expected, "{m}");
            assert_eq!(m.evals_per_step(), expected);
        }
    }

    #[test]
    fn randomized_heun_cases() {
        let decay = Additive { theta: 1.0, sigma: vec![0.0], e: 1, d: 1, form: Formulation::Ito };
        for s in [1.0, -1.0] {
            let out =
                ito_heun_randomized_step(&decay, &[1.0], &PathIncrement::new(0.1, &[0.3]).with_aux(&[s])).unwrap();
            assert!((out.y_next[0] - 0.905).abs() < 1e-15);
        }
        let add = Additive { theta: 1.0, sigma: vec![0.5], e: 1, d: 1, form: Formulation::Ito };
        let h = 0.1;
        let w = 0.3;
        for s in [1.0, -1.0] {
            let out = ito_heun_randomized_step(&add, &[1.0], &PathIncrement::new(h, &[w]).with_aux(&[s])).unwrap();
            let z = 1.0 - h + 0.5 * (w + h.sqrt() * s);
            let want = 1.0 + 0.5 * h * (-1.0 - z) + 0.5 * w;
            assert!((out.y_next[0] - want).abs() < 1e-15);
        }
        assert!(ito_heun_randomized_step(&add, &[1.0], &PathIncrement::new(h, &[w])).is_err());
        assert!(ito_heun_randomized_step(&add, &[1.0], &PathIncrement::new(h, &[w]).with_aux(&[0.5])).is_err());
    }

    #[test]
    fn levy_expectation_examples() {
        let m = conditional_levy_expectation(&[1.0, 2.0], None);
        assert_eq!(m, vec![vec![0.5, 1.0], vec![1.0, 2.0]]);
        let m = conditional_levy_expectation(&[0.0, 0.0], Some(&[1.0, 1.0]));
        assert_eq!(m, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let m = conditional_levy_expectation(&[1.0, 0.0], Some(&[0.0, 2.0]));
        // H⊗W - W⊗H: (0·1 - 1·2) in the (0,1) slot, antisymmetric
        assert_eq!(m[0][1], -2.0);
        assert_eq!(m[1][0], 2.0);
    }

    #[test]
    fn parse_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("rk4".parse::<Method>().is_err());
    }
}
