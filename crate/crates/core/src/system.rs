//! Vector fields of `dy = f(y) dt + g(y) dW` (Ito) or `∘ dW` (Stratonovich).

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Ito,
    Stratonovich,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::Ito => "Ito",
            Formulation::Stratonovich => "Stratonovich",
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An SDE with `e`-dimensional state driven by `d`-dimensional noise.
///
/// `diffusion` writes the `e × d` matrix row-major: column `j` is `g_j(y)`.
/// `second_order(y, u, v)` computes `Σ_{i,j} g_j'(y) g_i(y) u_i v_j`; the
/// default is a central finite difference, models with closed forms
/// override it.
pub trait SdeSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn formulation(&self) -> Formulation;
    fn drift(&self, y: &[f64], out: &mut [f64]);
    fn diffusion(&self, y: &[f64], out: &mut [f64]);

    fn second_order(&self, y: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        finite_difference_second_order(self, y, u, v, out);
    }

    fn has_analytic_second_order(&self) -> bool {
        false
    }
}

/// `out = g(y) w` for a row-major `e × d` matrix.
pub fn apply_matrix(g: &[f64], w: &[f64], out: &mut [f64]) {
    let d = w.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = g[i * d..(i + 1) * d].iter().zip(w).map(|(a, b)| a * b).sum();
    }
}

/// Central difference of `y ↦ g(y) v` along `g(y) u`, step
/// `cbrt(eps) (1 + |y|)` measured in the direction's unit length.
pub fn finite_difference_second_order<S: SdeSystem + ?Sized>(
    sys: &S,
    y: &[f64],
    u: &[f64],
    v: &[f64],
    out: &mut [f64],
) {
    let (e, d) = (sys.state_dim(), sys.noise_dim());
    let mut g = vec![0.0; e * d];
    sys.diffusion(y, &mut g);
    let mut dir = vec![0.0; e];
    apply_matrix(&g, u, &mut dir);
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let ynorm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
    let delta = f64::EPSILON.cbrt() * (1.0 + ynorm) / norm;
    let plus: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a + delta * b).collect();
    let minus: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a - delta * b).collect();
    let (mut gp, mut gm) = (vec![0.0; e * d], vec![0.0; e * d]);
    sys.diffusion(&plus, &mut gp);
    sys.diffusion(&minus, &mut gm);
    let (mut fp, mut fm) = (vec![0.0; e], vec![0.0; e]);
    apply_matrix(&gp, v, &mut fp);
    apply_matrix(&gm, v, &mut fm);
    for i in 0..e {
        out[i] = (fp[i] - fm[i]) / (2.0 * delta);
    }
}

/// `½ Σ_i g_i'(y) g_i(y)`, the Ito-Stratonovich drift correction.
pub fn ito_correction<S: SdeSystem + ?Sized>(sys: &S, y: &[f64], out: &mut [f64]) {
    let (e, d) = (sys.state_dim(), sys.noise_dim());
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut basis = vec![0.0; d];
    let mut tmp = vec![0.0; e];
    for i in 0..d {
        basis.iter_mut().for_each(|b| *b = 0.0);
        basis[i] = 1.0;
        sys.second_order(y, &basis, &basis, &mut tmp);
        for k in 0..e {
            out[k] += 0.5 * tmp[k];
        }
    }
}

/// The same SDE rewritten in the other calculus: the drift is shifted by
/// `∓ ½ Σ g_i' g_i`, diffusion and `g'g` are unchanged.
pub struct Converted {
    inner: Arc<dyn SdeSystem>,
    target: Formulation,
}

impl SdeSystem for Converted {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }
    fn formulation(&self) -> Formulation {
        self.target
    }
    fn drift(&self, y: &[f64], out: &mut [f64]) {
        self.inner.drift(y, out);
        let mut c = vec![0.0; out.len()];
        ito_correction(&*self.inner, y, &mut c);
        let sign = match self.target {
            Formulation::Stratonovich => -1.0,
            Formulation::Ito => 1.0,
        };
        for (o, ci) in out.iter_mut().zip(&c) {
            *o += sign * ci;
        }
    }
    fn diffusion(&self, y: &[f64], out: &mut [f64]) {
        self.inner.diffusion(y, out);
    }
    fn second_order(&self, y: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        self.inner.second_order(y, u, v, out);
    }
    fn has_analytic_second_order(&self) -> bool {
        self.inner.has_analytic_second_order()
    }
}

/// Returns `sys` in the requested calculus, wrapping only when needed.
pub fn to_formulation(sys: Arc<dyn SdeSystem>, target: Formulation) -> Arc<dyn SdeSystem> {
    if sys.formulation() == target {
        sys
    } else {
        Arc::new(Converted { inner: sys, target })
    }
}

/// Counts drift evaluations; one drift call is one evaluation of `F = (f g)`.
pub struct CountingSystem<S: ?Sized> {
    evals: AtomicUsize,
    inner: Arc<S>,
}

impl<S: SdeSystem + ?Sized> CountingSystem<S> {
    pub fn new(inner: Arc<S>) -> Self {
        Self { evals: AtomicUsize::new(0), inner }
    }

    pub fn evaluations(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }
}

impl<S: SdeSystem + ?Sized> SdeSystem for CountingSystem<S> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }
    fn formulation(&self) -> Formulation {
        self.inner.formulation()
    }
    fn drift(&self, y: &[f64], out: &mut [f64]) {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.drift(y, out);
    }
    fn diffusion(&self, y: &[f64], out: &mut [f64]) {
        self.inner.diffusion(y, out);
    }
    fn second_order(&self, y: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        self.inner.second_order(y, u, v, out);
    }
    fn has_analytic_second_order(&self) -> bool {
        self.inner.has_analytic_second_order()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// g_1(y) = (sin y2, y1), g_2(y) = (y1 y2, 1); only f.d. second order.
    struct Bumpy;

    impl SdeSystem for Bumpy {
        fn state_dim(&self) -> usize {
            2
        }
        fn noise_dim(&self) -> usize {
            2
        }
        fn formulation(&self) -> Formulation {
            Formulation::Stratonovich
        }
        fn drift(&self, y: &[f64], out: &mut [f64]) {
            out[0] = -y[0];
            out[1] = 0.5 * y[1];
        }
        fn diffusion(&self, y: &[f64], out: &mut [f64]) {
            out[0] = y[1].sin();
            out[1] = y[0] * y[1];
            out[2] = y[0];
            out[3] = 1.0;
        }
    }

    fn exact_second_order(y: &[f64], u: &[f64], v: &[f64]) -> [f64; 2] {
        // Jacobians: Dg_1 = [[0, cos y2], [1, 0]], Dg_2 = [[y2, y1], [0, 0]]
        let g1 = [y[1].sin(), y[0]];
        let g2 = [y[0] * y[1], 1.0];
        let w = [g1[0] * u[0] + g2[0] * u[1], g1[1] * u[0] + g2[1] * u[1]];
        let dg1w = [y[1].cos() * w[1], w[0]];
        let dg2w = [y[1] * w[0] + y[0] * w[1], 0.0];
        [dg1w[0] * v[0] + dg2w[0] * v[1], dg1w[1] * v[0] + dg2w[1] * v[1]]
    }

    #[test]
    fn finite_difference_matches_closed_form() {
        let y = [0.3, -1.2];
        let u = [0.7, -0.4];
        let v = [1.1, 0.5];
        let mut out = [0.0; 2];
        Bumpy.second_order(&y, &u, &v, &mut out);
        let want = exact_second_order(&y, &u, &v);
        for i in 0..2 {
            assert!((out[i] - want[i]).abs() < 1e-8, "{out:?} vs {want:?}");
        }
    }

    #[test]
    fn conversion_round_trip() {
        let base: Arc<dyn SdeSystem> = Arc::new(Bumpy);
        let ito = to_formulation(base.clone(), Formulation::Ito);
        assert_eq!(ito.formulation(), Formulation::Ito);
        let back = to_formulation(ito, Formulation::Stratonovich);
        let y = [0.4, 0.9];
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        base.drift(&y, &mut a);
        back.drift(&y, &mut b);
        for i in 0..2 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
        let same = to_formulation(base.clone(), Formulation::Stratonovich);
        assert!(Arc::ptr_eq(&same, &base));
    }

    #[test]
    fn counting_wrapper_counts_drift_calls() {
        let c = CountingSystem::new(Arc::new(Bumpy));
        let mut out = [0.0; 2];
        c.drift(&[0.0, 0.0], &mut out);
        c.drift(&[0.0, 0.0], &mut out);
        assert_eq!(c.evaluations(), 2);
        c.reset();
        assert_eq!(c.evaluations(), 0);
    }
}
