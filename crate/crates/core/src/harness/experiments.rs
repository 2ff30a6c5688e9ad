//! Bias, moment, local-error and regression experiments.
//!
//! Every experiment takes a master seed and derives one key per sample or
//! per chunk, so results are reproducible and independent of thread count.

use rayon::prelude::*;

use crate::brownian_tree::{chain_samples, BrownianSample, BrownianTree};
use crate::controllers::SkippingMaxController;
use crate::dyadic::DyadicInterval;
use crate::error::{Result, SdeError};
use crate::harness::stats::{determinant, half_normal_moment, LeastSquares, MeanEstimate, MomentCheck};
use crate::models::counterexample_model;
use crate::rng::{derive_key, KeyedRng};
use crate::solvers::{heun_step, spark_step, PathIncrement};
use crate::system::Formulation;

const TAG_COUNTER: u64 = 0x4345_5831;
const TAG_DET: u64 = 0x4445_5431;
const TAG_LOCAL: u64 = 0x4c4d_5345;
const TAG_BRIDGE: u64 = 0x4252_4447;
const TAG_CHAIN: u64 = 0x4348_4149;
const TAG_BOUND: u64 = 0x424e_4431;
const TAG_LEVY: u64 = 0x4c45_5659;

/// Draws per RNG chunk in the plain Monte Carlo experiments.
const CHUNK: usize = 4096;

fn require_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(SdeError::InvalidParameter("at least one sample is required".into()));
    }
    Ok(())
}

/// Runs `f` for every index in parallel and collects in index order.
fn per_sample<T: Send>(samples: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..samples as u64).into_par_iter().map(&f).collect()
}

/// Runs `f(chunk, len)` over fixed-size chunks in parallel and concatenates
/// in chunk order.
fn per_chunk(samples: usize, f: impl Fn(u64, usize) -> Vec<f64> + Sync) -> Vec<f64> {
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> =
        (0..chunks).into_par_iter().map(|c| f(c as u64, CHUNK.min(samples - c * CHUNK))).collect();
    parts.concat()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleReport {
    pub horizon: f64,
    pub steps: u64,
    /// Final second component under the skipping controller.
    pub skipping: MeanEstimate,
    /// Final second component with one Heun step per coarse interval.
    pub control: MeanEstimate,
    /// Bias of the skipping controller, `T / 8`.
    pub target: f64,
}

impl CounterexampleReport {
    pub fn passed(&self, sigmas: f64) -> bool {
        self.skipping.brackets(self.target, sigmas) && self.control.brackets(0.0, sigmas)
    }
}

/// Counterexample bias: on each of `steps` coarse intervals the skipping
/// controller keeps whichever of one Heun step or two half steps has the
/// larger second component. The control run takes the single step.
pub fn counterexample_experiment(horizon: f64, steps: u64, samples: usize, seed: u64) -> Result<CounterexampleReport> {
    require_samples(samples)?;
    if steps == 0 || !steps.is_power_of_two() {
        return Err(SdeError::InvalidParameter(format!("step count {steps} is not a power of two")));
    }
    let model = counterexample_model().with_horizon(horizon)?;
    let sys = model.system(Formulation::Stratonovich);
    let depth = steps.trailing_zeros();
    let ctl = SkippingMaxController;
    let finals = per_sample(samples, |i| {
        let tree = BrownianTree::new(derive_key(seed, &[TAG_COUNTER, i]), 2, horizon)?;
        let levels = tree.levels(depth + 1)?;
        let (coarse, halves) = (&levels[depth as usize], &levels[depth as usize + 1]);
        let mut y = model.y0.clone();
        let mut z = model.y0.clone();
        for k in 0..steps as usize {
            y = ctl.advance(&*sys, &y, &halves[2 * k], &halves[2 * k + 1])?;
            z = heun_step(&*sys, &z, &PathIncrement::new(coarse[k].h, &coarse[k].w))?.y_next;
        }
        Ok((y[1], z[1]))
    })?;
    let skipping: Vec<f64> = finals.iter().map(|p| p.0).collect();
    let control: Vec<f64> = finals.iter().map(|p| p.1).collect();
    Ok(CounterexampleReport {
        horizon,
        steps,
        skipping: MeanEstimate::from_samples(&skipping),
        control: MeanEstimate::from_samples(&control),
        target: horizon / 8.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeterminantReport {
    pub n: u32,
    pub estimate: MeanEstimate,
    /// `E|Z|^n`.
    pub target: f64,
}

/// Monte Carlo estimate of `E|det A|` for an `n × n` matrix of independent
/// standard normals.
pub fn gaussian_determinant_mc(n: u32, samples: usize, seed: u64) -> Result<DeterminantReport> {
    require_samples(samples)?;
    if n == 0 {
        return Err(SdeError::InvalidParameter("matrix size must be positive".into()));
    }
    let size = n as usize;
    let values = per_chunk(samples, |chunk, len| {
        let mut rng = KeyedRng::new(seed, &[TAG_DET, n as u64, chunk]);
        let mut m = vec![0.0; size * size];
        (0..len)
            .map(|_| {
                m.iter_mut().for_each(|x| *x = rng.gaussian());
                match size {
                    1 => m[0].abs(),
                    2 => (m[0] * m[3] - m[1] * m[2]).abs(),
                    _ => determinant(&mut m, size).abs(),
                }
            })
            .collect()
    });
    Ok(DeterminantReport { n, estimate: MeanEstimate::from_samples(&values), target: half_normal_moment(n) })
}

/// Ratio of two means with a delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub std_err: f64,
}

fn ratio_estimate(num: &[f64], den: &[f64]) -> RatioEstimate {
    let n = num.len() as f64;
    let a = num.iter().sum::<f64>() / n;
    let b = den.iter().sum::<f64>() / n;
    let r = a / b;
    let resid: Vec<f64> = num.iter().zip(den).map(|(x, y)| x - r * y).collect();
    let var = resid.iter().map(|e| e * e).sum::<f64>() / (n - 1.0).max(1.0);
    RatioEstimate { ratio: r, std_err: (var / n).sqrt() / b.abs() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMseReport {
    pub h: f64,
    pub fine_depth: u32,
    /// `E‖Y₁ - y_h‖² / h²` per method.
    pub heun_one_step: MeanEstimate,
    pub heun_two_step: MeanEstimate,
    pub spark: MeanEstimate,
    pub spark_over_heun: RatioEstimate,
    pub two_step_over_heun: RatioEstimate,
}

/// Local mean squared errors of one step on the counterexample system from
/// `(1, 0)`, against a trapezoid path on `2^fine_depth` sub-steps of the
/// same tree.
pub fn local_mse_ratio(h: f64, fine_depth: u32, samples: usize, seed: u64) -> Result<LocalMseReport> {
    require_samples(samples)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(SdeError::InvalidParameter(format!("step must be positive, got {h}")));
    }
    if fine_depth < 1 {
        return Err(SdeError::InvalidParameter("fine depth must be at least 1".into()));
    }
    let sys = counterexample_model().system(Formulation::Stratonovich);
    let y0 = [1.0, 0.0];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / (h * h);
    let rows = per_sample(samples, |i| {
        let tree = BrownianTree::new(derive_key(seed, &[TAG_LOCAL, i]), 2, h)?;
        let levels = tree.levels(fine_depth)?;
        let root = &levels[0][0];
        let mut fine = y0.to_vec();
        for leaf in &levels[fine_depth as usize] {
            fine = heun_step(&*sys, &fine, &PathIncrement::new(leaf.h, &leaf.w))?.y_next;
        }
        let one = heun_step(&*sys, &y0, &PathIncrement::new(root.h, &root.w))?.y_next;
        let mut two = y0.to_vec();
        for half in &levels[1] {
            two = heun_step(&*sys, &two, &PathIncrement::new(half.h, &half.w))?.y_next;
        }
        let sp = spark_step(&*sys, &y0, &PathIncrement::from_sample(root))?.y_next;
        Ok([sq(&one, &fine), sq(&two, &fine), sq(&sp, &fine)])
    })?;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let (one, two, sp) = (col(0), col(1), col(2));
    Ok(LocalMseReport {
        h,
        fine_depth,
        heun_one_step: MeanEstimate::from_samples(&one),
        heun_two_step: MeanEstimate::from_samples(&two),
        spark: MeanEstimate::from_samples(&sp),
        spark_over_heun: ratio_estimate(&sp, &one),
        two_step_over_heun: ratio_estimate(&two, &one),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeReport {
    pub checks: Vec<MomentCheck>,
    /// Largest `|chain(children) - parent| / √h` over random nodes.
    pub chain_error: f64,
    pub chain_nodes: usize,
}

impl BridgeReport {
    /// Tolerance on the normalized chaining error.
    pub const CHAIN_TOLERANCE: f64 = 1e-14;

    pub fn failures(&self) -> Vec<&MomentCheck> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty() && self.chain_error <= Self::CHAIN_TOLERANCE
    }
}

/// Statistics of the midpoint split on a unit root in two dimensions,
/// marginals of the first levels of the tree, and chaining round trips on
/// `chain_nodes` random nodes.
pub fn bridge_moment_tests(samples: usize, chain_nodes: usize, seed: u64) -> Result<BridgeReport> {
    require_samples(samples)?;
    const DEPTHS: u32 = 3;
    // Per sample: root (W, H), children, and all nodes of levels 1..=DEPTHS.
    let trees = per_sample(samples, |i| {
        let tree = BrownianTree::new(derive_key(seed, &[TAG_BRIDGE, i]), 2, 1.0)?;
        tree.levels(DEPTHS)
    })?;

    let mut checks = Vec::new();
    let est = |f: &dyn Fn(&[Vec<BrownianSample>]) -> f64| {
        let xs: Vec<f64> = trees.iter().map(|t| f(t)).collect();
        MeanEstimate::from_samples(&xs)
    };
    for c in 0..2 {
        let w = move |t: &[Vec<BrownianSample>]| t[0][0].w[c];
        let hh = move |t: &[Vec<BrownianSample>]| t[0][0].area[c];
        let wl = move |t: &[Vec<BrownianSample>]| t[1][0].w[c];
        let wr = move |t: &[Vec<BrownianSample>]| t[1][1].w[c];
        let hl = move |t: &[Vec<BrownianSample>]| t[1][0].area[c];
        let hr = move |t: &[Vec<BrownianSample>]| t[1][1].area[c];
        let rw = move |t: &[Vec<BrownianSample>]| wl(t) - 0.5 * w(t) - 1.5 * hh(t);
        let rhl = move |t: &[Vec<BrownianSample>]| hl(t) - 0.25 * hh(t);
        let rhr = move |t: &[Vec<BrownianSample>]| hr(t) - 0.25 * hh(t);
        let mut add = |name: &str, f: &dyn Fn(&[Vec<BrownianSample>]) -> f64, target: f64| {
            checks.push(MomentCheck::sigma(format!("{name}[{c}]"), est(f), target, 4.0));
        };
        add("E W_left", &wl, 0.0);
        add("E H_left", &hl, 0.0);
        add("Var W_left", &|t| wl(t) * wl(t), 0.5);
        add("Var W_right", &|t| wr(t) * wr(t), 0.5);
        add("Var H_left", &|t| hl(t) * hl(t), 1.0 / 24.0);
        add("Var H_right", &|t| hr(t) * hr(t), 1.0 / 24.0);
        add("Cov W_left W_right", &|t| wl(t) * wr(t), 0.0);
        add("Cov H_left H_right", &|t| hl(t) * hr(t), 0.0);
        add("Cov W_left H_left", &|t| wl(t) * hl(t), 0.0);
        add("Cov W_left H_right", &|t| wl(t) * hr(t), 0.0);
        add("Var R_W", &|t| rw(t) * rw(t), 1.0 / 16.0);
        add("Var R_H_left", &|t| rhl(t) * rhl(t), 7.0 / 192.0);
        add("Cov R_H_left R_H_right", &|t| rhl(t) * rhr(t), -1.0 / 192.0);
        add("Cov R_W R_H_left", &|t| rw(t) * rhl(t), -1.0 / 32.0);
        add("Cov R_W R_H_right", &|t| rw(t) * rhr(t), -1.0 / 32.0);
        add("Cov R_W W", &|t| rw(t) * w(t), 0.0);
        add("Cov R_W H", &|t| rw(t) * hh(t), 0.0);
        add("Cov R_H_left W", &|t| rhl(t) * w(t), 0.0);
        add("Cov R_H_left H", &|t| rhl(t) * hh(t), 0.0);

        let mut reg_w = LeastSquares::new(2);
        let mut reg_h = LeastSquares::new(1);
        for t in &trees {
            reg_w.add(&[w(t), hh(t)], wl(t));
            reg_h.add(&[hh(t)], hl(t) + hr(t));
        }
        let (b, se) = reg_w.solve()?;
        checks.push(MomentCheck::absolute(format!("W_left on W[{c}]"), b[0], se[0], 0.5, 0.02));
        checks.push(MomentCheck::absolute(format!("W_left on H[{c}]"), b[1], se[1], 1.5, 0.02));
        let (b, se) = reg_h.solve()?;
        checks.push(MomentCheck::absolute(format!("H_left + H_right on H[{c}]"), b[0], se[0], 0.5, 0.02));
    }

    // Node marginals, pooled over the independent nodes of each level.
    for depth in 0..=DEPTHS {
        let h = 0.5f64.powi(depth as i32);
        let nodes = |f: &dyn Fn(&BrownianSample) -> f64| {
            let xs: Vec<f64> = trees.iter().flat_map(|t| t[depth as usize].iter().map(f)).collect();
            MeanEstimate::from_samples(&xs)
        };
        for c in 0..2 {
            checks.push(MomentCheck::sigma(format!("Var W depth {depth}[{c}]"), nodes(&|s| s.w[c] * s.w[c]), h, 4.0));
            checks.push(MomentCheck::sigma(
                format!("Var H depth {depth}[{c}]"),
                nodes(&|s| s.area[c] * s.area[c]),
                h / 12.0,
                4.0,
            ));
        }
    }

    let chain_error = chain_round_trips(chain_nodes, seed)?;
    Ok(BridgeReport { checks, chain_error, chain_nodes })
}

/// Splits random nodes and chains the children back together.
fn chain_round_trips(nodes: usize, seed: u64) -> Result<f64> {
    let tree = BrownianTree::new(derive_key(seed, &[TAG_CHAIN]), 2, 1.0)?;
    let errors = per_sample(nodes, |i| {
        let mut rng = KeyedRng::new(seed, &[TAG_CHAIN, i]);
        let depth = 1 + (rng.next_u64() % 30) as u32;
        let index = rng.next_u64() % (1u64 << depth);
        let node = DyadicInterval::new(depth, index)?;
        let parent = tree.sample_uncached(node)?;
        let (l, r) = tree.split(node, &parent);
        let back = chain_samples(&l, &r)?;
        let scale = parent.h.sqrt();
        let err = parent
            .w
            .iter()
            .zip(&back.w)
            .chain(parent.area.iter().zip(&back.area))
            .map(|(a, b)| (a - b).abs() / scale)
            .fold(0.0, f64::max);
        Ok(err)
    })?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundPoint {
    pub t: f64,
    /// Mean of `log(1 + C e^{-2ν_t})`.
    pub estimate: MeanEstimate,
    /// `log(1 + C e^t)`.
    pub bound: f64,
}

impl BoundPoint {
    pub fn passed(&self, sigmas: f64) -> bool {
        self.estimate.mean >= self.bound - sigmas * self.estimate.std_err
    }
}

/// Mean previsible SABR step `log(1 + C e^{-2ν_t})` with `ν_t = -t/2 + W_t`
/// drawn exactly, against its lower bound `log(1 + C e^t)`.
pub fn previsible_bound_check(tolerance: f64, times: &[f64], samples: usize, seed: u64) -> Result<Vec<BoundPoint>> {
    require_samples(samples)?;
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(SdeError::InvalidParameter(format!("tolerance must be positive, got {tolerance}")));
    }
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(SdeError::InvalidParameter(format!("time must be non-negative, got {t}")));
            }
            let values = per_chunk(samples, |chunk, len| {
                let mut rng = KeyedRng::new(seed, &[TAG_BOUND, k as u64, chunk]);
                (0..len)
                    .map(|_| {
                        let nu = -0.5 * t + t.sqrt() * rng.gaussian();
                        (tolerance * (-2.0 * nu).exp()).ln_1p()
                    })
                    .collect()
            });
            Ok(BoundPoint { t, estimate: MeanEstimate::from_samples(&values), bound: (tolerance * t.exp()).ln_1p() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub regressors: Vec<&'static str>,
    pub coefficients: Vec<f64>,
    pub std_errs: Vec<f64>,
    pub expected: Vec<f64>,
}

impl Regression {
    pub fn max_deviation(&self) -> f64 {
        self.coefficients.iter().zip(&self.expected).map(|(b, e)| (b - e).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevyRegressionReport {
    pub samples: usize,
    pub fine_depth: u32,
    pub full: Regression,
    pub compact: Regression,
}

/// Regresses the fine-grid iterated integral `∫ W¹ ∘ dW²` over a unit
/// interval on products of the interval's increments and space-time areas.
pub fn levy_regression(fine_depth: u32, samples: usize, seed: u64) -> Result<LevyRegressionReport> {
    require_samples(samples)?;
    let rows = per_sample(samples, |i| {
        let tree = BrownianTree::new(derive_key(seed, &[TAG_LEVY, i]), 2, 1.0)?;
        let root = tree.root_sample();
        let mut x1 = 0.0;
        let mut integral = 0.0;
        for leaf in tree.leaves(fine_depth)? {
            integral += (x1 + 0.5 * leaf.w[0]) * leaf.w[1];
            x1 += leaf.w[0];
        }
        Ok([root.w[0], root.w[1], root.area[0], root.area[1], integral])
    })?;
    let mut full = LeastSquares::new(3);
    let mut compact = LeastSquares::new(2);
    for &[w1, w2, h1, h2, y] in &rows {
        full.add(&[w1 * w2, h1 * w2, w1 * h2], y);
        compact.add(&[0.5 * w1 * w2, h1 * w2 - w1 * h2], y);
    }
    let (b, se) = full.solve()?;
    let full = Regression {
        regressors: vec!["W1 W2", "H1 W2", "W1 H2"],
        coefficients: b,
        std_errs: se,
        expected: vec![0.5, 1.0, -1.0],
    };
    let (b, se) = compact.solve()?;
    let compact = Regression {
        regressors: vec!["W1 W2 / 2", "H1 W2 - W1 H2"],
        coefficients: b,
        std_errs: se,
        expected: vec![1.0, 1.0],
    };
    Ok(LevyRegressionReport { samples, fine_depth, full, compact })
}
