use std::sync::Arc;

use adaptive_sde::controllers::{halving_controller, no_skip_audit, pi_controller, ControllerSpec, PiParams};
use adaptive_sde::driver::{integrate, IntegrateOptions};
use adaptive_sde::harness::stats::{fit_rate, MeanEstimate};
use adaptive_sde::harness::strong::{constant_grid, strong_error, Reference, StrongErrorConfig};
use adaptive_sde::models::{additive_ou_model, gbm_model, sabr_model};
use adaptive_sde::rng::KeyedRng;
use adaptive_sde::solvers::taylor_reference;
use adaptive_sde::{
    conditional_levy_expectation, BrownianTree, DyadicInterval, DyadicTime, Formulation, Method, PathIncrement,
    SdeSystem,
};
use proptest::prelude::*;

/// Smooth, non-commutative two-dimensional test system.
struct Smooth;

impl SdeSystem for Smooth {
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
        out[0] = -0.5 * y[0] + y[1].sin();
        out[1] = 0.3 * y[0].cos();
    }
    fn diffusion(&self, y: &[f64], out: &mut [f64]) {
        out[0] = 1.0 + 0.5 * y[1].sin();
        out[1] = 0.4 * y[0];
        out[2] = 0.2 * y[0].cos();
        out[3] = 0.8 + 0.1 * y[1] * y[1];
    }
}

fn taylor_residual_slope(method: Method) -> f64 {
    let sys = Smooth;
    let y = [0.3, -0.7];
    let mut pts = Vec::new();
    for k in 4..=10 {
        let h = 0.5f64.powi(k);
        let mut rng = KeyedRng::new(11, &[k as u64]);
        let mut sq = Vec::new();
        for _ in 0..400 {
            let w: Vec<f64> = (0..2).map(|_| h.sqrt() * rng.gaussian()).collect();
            let a: Vec<f64> = (0..2).map(|_| (h / 12.0).sqrt() * rng.gaussian()).collect();
            let inc = PathIncrement::new(h, &w).with_area(&a);
            let area = method.needs_area().then_some(a.as_slice());
            let m = conditional_levy_expectation(&w, area);
            let reference = taylor_reference(&sys, &y, h, &w, &m);
            let out = method.step(&sys, &y, &inc).unwrap().y_next;
            sq.push(out.iter().zip(&reference).map(|(p, q)| (p - q) * (p - q)).sum::<f64>());
        }
        pts.push((h, MeanEstimate::from_samples(&sq).mean.sqrt()));
    }
    fit_rate(&pts).unwrap().slope
}

#[test]
fn heun_matches_taylor_expansion_beyond_first_order() {
    let s = taylor_residual_slope(Method::Heun);
    assert!(s > 1.0, "slope {s}");
}

#[test]
fn spark_matches_taylor_expansion_beyond_first_order() {
    let s = taylor_residual_slope(Method::Spark);
    assert!(s > 1.0, "slope {s}");
}

#[test]
fn euler_on_gbm_has_half_order() {
    let mut cfg =
        StrongErrorConfig::new(gbm_model(0.05, 0.5), Method::Euler, constant_grid(1.0, 3..=8), Reference::Exact);
    cfg.samples = 1000;
    let r = strong_error(&cfg).unwrap();
    let slope = r.rate().unwrap();
    assert!((slope - 0.5).abs() < 0.15, "slope {slope}");
}

/// With scalar noise the sign pair reproduces the Milstein correction exactly.
#[test]
fn randomized_ito_heun_on_scalar_gbm_has_first_order() {
    let mut cfg = StrongErrorConfig::new(
        gbm_model(0.05, 0.5),
        Method::ItoHeunRandomized,
        constant_grid(1.0, 3..=8),
        Reference::Exact,
    );
    cfg.samples = 1000;
    let r = strong_error(&cfg).unwrap();
    let slope = r.rate().unwrap();
    assert!((slope - 1.0).abs() < 0.15, "slope {slope}");
}

#[test]
fn ou_variance_matches_closed_form() {
    let (theta, sigma) = (1.0, 1.0);
    let m = additive_ou_model(theta, sigma).unwrap();
    let sys = m.system(Formulation::Stratonovich);
    let finals: Vec<f64> = (0..4000u64)
        .map(|i| {
            let mut tree = BrownianTree::new(i, 1, m.horizon).unwrap();
            let mut c = ControllerSpec::Constant { h: 1.0 / 64.0 }.build(&m).unwrap();
            integrate(&*sys, Method::Spark, &mut *c, &mut tree, &[0.0], &[], &IntegrateOptions::default())
                .unwrap()
                .final_state[0]
        })
        .collect();
    let sq: Vec<f64> = finals.iter().map(|y| y * y).collect();
    let target = sigma * sigma * (1.0 - (-2.0 * theta * m.horizon).exp()) / (2.0 * theta);
    let est = MeanEstimate::from_samples(&sq);
    assert!(est.brackets(target, 4.0), "{est:?} vs {target}");
    assert!(MeanEstimate::from_samples(&finals).brackets(0.0, 4.0));
}

#[test]
fn sabr_volatility_is_a_martingale() {
    let m = sabr_model().with_horizon(1.0).unwrap();
    let sys = m.system(Formulation::Stratonovich);
    let vols: Vec<f64> = (0..4000u64)
        .map(|i| {
            let mut tree = BrownianTree::new(i, 2, 1.0).unwrap();
            let mut c = ControllerSpec::Constant { h: 1.0 / 16.0 }.build(&m).unwrap();
            let y = integrate(&*sys, Method::Heun, &mut *c, &mut tree, &m.y0, &[], &IntegrateOptions::default())
                .unwrap()
                .final_state;
            y[1].exp()
        })
        .collect();
    let est = MeanEstimate::from_samples(&vols);
    assert!(est.brackets(1.0, 4.0), "{est:?}");
}

#[test]
fn adaptive_runs_pass_the_audit() {
    let m = sabr_model();
    let sys = m.system(Formulation::Stratonovich);
    let opts = IntegrateOptions { record_trace: true, ..Default::default() };
    for seed in 0..20u64 {
        let mut tree = BrownianTree::new(seed, 2, m.horizon).unwrap();
        let mut c = halving_controller(0.5, 0.5).unwrap();
        let t = integrate(&*sys, Method::Heun, &mut c, &mut tree, &m.y0, &[], &opts).unwrap();
        assert!(no_skip_audit(t.trace.as_ref().unwrap()).unwrap().passed(), "halving seed {seed}");

        let mut c = pi_controller(0.05, PiParams::default()).unwrap();
        let t = integrate(&*sys, Method::Spark, &mut c, &mut tree, &m.y0, &[], &opts).unwrap();
        assert!(no_skip_audit(t.trace.as_ref().unwrap()).unwrap().passed(), "pi seed {seed}");
    }
}

#[test]
fn unclipped_pi_can_skip() {
    let m = sabr_model();
    let sys = m.system(Formulation::Stratonovich);
    let opts = IntegrateOptions { record_trace: true, ..Default::default() };
    let skipped = (0..50u64).any(|seed| {
        let mut tree = BrownianTree::new(seed, 2, m.horizon).unwrap();
        let mut c = pi_controller(0.05, PiParams::default()).unwrap().with_clipping(false);
        let t = integrate(&*sys, Method::Heun, &mut c, &mut tree, &m.y0, &[], &opts).unwrap();
        !no_skip_audit(t.trace.as_ref().unwrap()).unwrap().passed()
    });
    assert!(skipped);
}

#[test]
fn custom_system_runs_through_the_harness() {
    let m = adaptive_sde::models::ModelSpec::custom("smooth", 1.0, vec![0.1, 0.2], Arc::new(Smooth));
    let mut cfg = StrongErrorConfig::new(
        m,
        Method::Spark,
        constant_grid(1.0, 2..=5),
        Reference::Fine(ControllerSpec::Constant { h: 1.0 / 512.0 }),
    );
    cfg.samples = 200;
    let r = strong_error(&cfg).unwrap();
    assert_eq!(r.used() + r.flagged, r.requested);
    assert!(r.points.windows(2).all(|w| w[1].error < w[0].error), "{:?}", r.points);
}

/// Additive noise with a nonlinear drift.
struct AdditiveSine;

impl SdeSystem for AdditiveSine {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn formulation(&self) -> Formulation {
        Formulation::Stratonovich
    }
    fn drift(&self, y: &[f64], out: &mut [f64]) {
        out[0] = -y[0].sin();
    }
    fn diffusion(&self, _y: &[f64], out: &mut [f64]) {
        out[0] = 2.0;
    }
}

fn spark_rate(m: adaptive_sde::models::ModelSpec) -> f64 {
    let mut cfg = StrongErrorConfig::new(
        m,
        Method::Spark,
        constant_grid(1.0, 2..=6),
        Reference::Fine(ControllerSpec::Constant { h: 1.0 / 4096.0 }),
    );
    cfg.samples = 1000;
    strong_error(&cfg).unwrap().rate().unwrap()
}

/// Order 1.5 needs a drift with curvature; on a linear drift the
/// leading residual term vanishes and the observed rate is 2.
#[test]
fn spark_rate_on_additive_noise_depends_on_drift_curvature() {
    let nonlinear = spark_rate(adaptive_sde::models::ModelSpec::custom("sine", 1.0, vec![1.0], Arc::new(AdditiveSine)));
    assert!((nonlinear - 1.5).abs() < 0.2, "nonlinear drift: {nonlinear}");
    let linear = spark_rate(additive_ou_model(1.0, 1.0).unwrap());
    assert!((linear - 2.0).abs() < 0.2, "linear drift: {linear}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_values_ignore_query_order(seed in any::<u64>(), picks in proptest::collection::vec((1u32..12, any::<u64>()), 1..20)) {
        let nodes: Vec<DyadicInterval> =
            picks.iter().map(|&(d, i)| DyadicInterval::new(d, i % (1u64 << d)).unwrap()).collect();
        let mut forward = BrownianTree::new(seed, 2, 3.0).unwrap();
        let mut backward = BrownianTree::new(seed, 2, 3.0).unwrap().with_cache_capacity(4);
        let a: Vec<_> = nodes.iter().map(|&n| forward.sample(n).unwrap()).collect();
        let mut b: Vec<_> = nodes.iter().rev().map(|&n| backward.sample(n).unwrap()).collect();
        b.reverse();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn increments_add_up(seed in any::<u64>(), a in 0u64..1024, b in 0u64..1024) {
        let (lo, hi) = (a.min(b), a.max(b) + 1);
        let mut tree = BrownianTree::new(seed, 1, 1.0).unwrap();
        let t = |k: u64| DyadicTime::new(k, 10).unwrap();
        let whole = tree.increment_between(t(0), t(hi)).unwrap();
        let left = if lo == 0 { 0.0 } else { tree.increment_between(t(0), t(lo)).unwrap().w[0] };
        let right = tree.increment_between(t(lo), t(hi)).unwrap().w[0];
        prop_assert!((left + right - whole.w[0]).abs() < 1e-12);
    }
}
