//! Coupled coarse/fine strong-error estimation.
//!
//! For every sample one Brownian tree drives a reference run and every
//! coarse run in the sweep. The error is
//!
//! ```text
//! S = max_k sqrt( mean_i ‖Y_coarse(t_k) - Y_ref(t_k)‖² )
//! ```
//!
//! over the checkpoints `t_k = k T / 32`. A constant step coarser than the
//! checkpoint spacing is compared only at multiples of its own step.

use rayon::prelude::*;

use crate::brownian_tree::BrownianTree;
use crate::controllers::ControllerSpec;
use crate::driver::{integrate, uniform_checkpoints, IntegrateOptions, Trajectory};
use crate::dyadic::DyadicTime;
use crate::error::{Result, SdeError};
use crate::harness::stats::{fit_rate, Fit, MeanEstimate};
use crate::models::ModelSpec;
use crate::rng::derive_key;
use crate::solvers::Method;

const TAG_TREE: u64 = 0x5452_4545;
const TAG_AUX: u64 = 0x4155_5831;

/// Nodes kept per sample tree; deep adaptive runs would otherwise grow
/// the cache without bound.
pub const TREE_CACHE: usize = 1 << 18;

/// Default number of checkpoints.
pub const CHECKPOINTS: u64 = 32;

/// What the coarse runs are compared against.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// The same method under a finer controller, on the same tree.
    Fine(ControllerSpec),
    /// The model's closed-form solution evaluated on the tree's path.
    Exact,
}

#[derive(Debug, Clone)]
pub struct StrongErrorConfig {
    pub model: ModelSpec,
    pub method: Method,
    /// One entry per swept point; all of one kind in practice.
    pub controllers: Vec<ControllerSpec>,
    pub reference: Reference,
    pub samples: usize,
    pub seed: u64,
    pub checkpoints: u64,
    /// Fraction of non-finite samples tolerated before the experiment fails.
    pub flag_limit: f64,
}

impl StrongErrorConfig {
    pub fn new(model: ModelSpec, method: Method, controllers: Vec<ControllerSpec>, reference: Reference) -> Self {
        Self {
            model,
            method,
            controllers,
            reference,
            samples: 2000,
            seed: 0,
            checkpoints: CHECKPOINTS,
            flag_limit: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorPoint {
    pub controller: ControllerSpec,
    /// `h` for constant steps, `C` otherwise.
    pub param: f64,
    pub samples: usize,
    /// Mean accepted steps times evaluations per step.
    pub avg_evals: f64,
    pub avg_steps: f64,
    pub avg_rejections: f64,
    pub error: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorReport {
    pub model: String,
    pub method: Method,
    pub reference: Reference,
    pub requested: usize,
    pub flagged: usize,
    pub points: Vec<StrongErrorPoint>,
}

impl StrongErrorReport {
    pub fn used(&self) -> usize {
        self.requested - self.flagged
    }

    /// Error against step size (constant steps only).
    pub fn fit_vs_step(&self) -> Result<Fit> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.param, p.error)).collect();
        fit_rate(&pts)
    }

    /// Error against mean evaluation count.
    pub fn fit_vs_cost(&self) -> Result<Fit> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.avg_evals, p.error)).collect();
        fit_rate(&pts)
    }

    /// Convergence rate in the CSV's sign convention: the slope against
    /// `h` for constant steps, minus the slope against cost otherwise.
    pub fn rate(&self) -> Option<f64> {
        let constant = self.points.iter().all(|p| matches!(p.controller, ControllerSpec::Constant { .. }));
        if constant {
            self.fit_vs_step().ok().map(|f| f.slope)
        } else {
            self.fit_vs_cost().ok().map(|f| -f.slope)
        }
    }
}

/// Per-sample outcome: squared errors per point per global checkpoint
/// (`NaN` where a point is not compared), plus costs.
struct SampleResult {
    sq_errors: Vec<Vec<f64>>,
    evals: Vec<usize>,
    steps: Vec<usize>,
    rejections: Vec<usize>,
}

/// Checkpoints a controller can be compared at: all of them, or for a
/// constant dyadic step coarser than the spacing, its own multiples.
fn coarse_checkpoints(spec: &ControllerSpec, horizon: f64, all: &[DyadicTime]) -> Vec<DyadicTime> {
    if let ControllerSpec::Constant { h } = spec {
        if let Ok(step) = DyadicTime::from_value(h.min(horizon), horizon, 62) {
            if step.numerator() == 1 && (1u64 << step.depth()) < all.len() as u64 {
                return all.iter().copied().filter(|t| t.is_multiple_of_depth(step.depth())).collect();
            }
        }
    }
    all.to_vec()
}

fn run_sample(cfg: &StrongErrorConfig, index: usize, all: &[DyadicTime]) -> Result<Option<SampleResult>> {
    let model = &cfg.model;
    let form = cfg.method.formulation().unwrap_or(model.native);
    let sys = model.system(form);
    let tree_seed = derive_key(cfg.seed, &[TAG_TREE, index as u64]);
    let opts = IntegrateOptions { aux_seed: derive_key(cfg.seed, &[TAG_AUX, index as u64]), ..Default::default() };
    let mut tree = BrownianTree::new(tree_seed, model.noise_dim(), model.horizon)?.with_cache_capacity(TREE_CACHE);

    let flag = |r: Result<Trajectory>| -> Result<Option<Trajectory>> {
        match r {
            Ok(t) => Ok(Some(t)),
            Err(SdeError::NonFinite { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let reference: Vec<Vec<f64>> = match &cfg.reference {
        Reference::Fine(spec) => {
            let mut c = spec.build(model)?;
            match flag(integrate(&*sys, cfg.method, &mut *c, &mut tree, &model.y0, all, &opts))? {
                Some(t) => t.states,
                None => return Ok(None),
            }
        }
        Reference::Exact => {
            let exact = model
                .exact
                .as_ref()
                .ok_or_else(|| SdeError::InvalidParameter(format!("model '{}' has no exact solution", model.name)))?;
            let mut out = Vec::with_capacity(all.len());
            for &t in all {
                let w = tree.increment_between(DyadicTime::ZERO, t)?.w;
                out.push(exact(&model.y0, t.value(model.horizon), &w));
            }
            out
        }
    };

    let mut result = SampleResult {
        sq_errors: Vec::with_capacity(cfg.controllers.len()),
        evals: Vec::new(),
        steps: Vec::new(),
        rejections: Vec::new(),
    };
    for spec in &cfg.controllers {
        let cps = coarse_checkpoints(spec, model.horizon, all);
        let mut c = spec.build(model)?;
        let traj = match flag(integrate(&*sys, cfg.method, &mut *c, &mut tree, &model.y0, &cps, &opts))? {
            Some(t) => t,
            None => return Ok(None),
        };
        let mut sq = vec![f64::NAN; all.len()];
        let mut k = 0;
        for (j, t) in all.iter().enumerate() {
            if k < cps.len() && cps[k] == *t {
                let a = &traj.states[k];
                let b = &reference[j];
                sq[j] = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                k += 1;
            }
        }
        result.sq_errors.push(sq);
        result.evals.push(traj.evaluations);
        result.steps.push(traj.accepted);
        result.rejections.push(traj.rejected);
    }
    Ok(Some(result))
}

/// Runs the sweep. Samples are processed in parallel; the reduction is
/// sequential in sample order, so results do not depend on thread count.
pub fn strong_error(cfg: &StrongErrorConfig) -> Result<StrongErrorReport> {
    if cfg.samples == 0 {
        return Err(SdeError::InvalidParameter("strong error needs at least one sample".into()));
    }
    let all = uniform_checkpoints(cfg.checkpoints)?;
    let results: Vec<Result<Option<SampleResult>>> =
        (0..cfg.samples).into_par_iter().map(|i| run_sample(cfg, i, &all)).collect();
    let mut used = Vec::with_capacity(cfg.samples);
    let mut flagged = 0usize;
    for r in results {
        match r? {
            Some(s) => used.push(s),
            None => flagged += 1,
        }
    }
    let limit = (cfg.flag_limit * cfg.samples as f64).floor() as usize;
    if flagged > limit {
        return Err(SdeError::TooManyFlagged { flagged, requested: cfg.samples, limit });
    }
    if used.is_empty() {
        return Err(SdeError::TooManyFlagged { flagged, requested: cfg.samples, limit });
    }

    let n = used.len() as f64;
    let mut points = Vec::with_capacity(cfg.controllers.len());
    for (p, spec) in cfg.controllers.iter().enumerate() {
        let mut best: Option<(f64, f64)> = None;
        for j in 0..all.len() {
            if used[0].sq_errors[p][j].is_nan() {
                continue;
            }
            let column: Vec<f64> = used.iter().map(|s| s.sq_errors[p][j]).collect();
            let ms = MeanEstimate::from_samples(&column);
            let rms = ms.mean.sqrt();
            if best.is_none_or(|b| rms > b.0) {
                let se = if rms > 0.0 { ms.std_err / (2.0 * rms) } else { 0.0 };
                best = Some((rms, se));
            }
        }
        let best = best.unwrap_or((0.0, 0.0));
        let mean = |f: &dyn Fn(&SampleResult) -> usize| used.iter().map(|s| f(s) as f64).sum::<f64>() / n;
        points.push(StrongErrorPoint {
            controller: spec.clone(),
            param: spec.parameter(),
            samples: used.len(),
            avg_evals: mean(&|s| s.evals[p]),
            avg_steps: mean(&|s| s.steps[p]),
            avg_rejections: mean(&|s| s.rejections[p]),
            error: best.0,
            std_err: best.1,
        });
    }
    Ok(StrongErrorReport {
        model: cfg.model.name.to_string(),
        method: cfg.method,
        reference: cfg.reference.clone(),
        requested: cfg.samples,
        flagged,
        points,
    })
}

/// Constant-step grid `T 2^-k` for `k` in `depths`.
pub fn constant_grid(horizon: f64, depths: impl IntoIterator<Item = u32>) -> Vec<ControllerSpec> {
    depths.into_iter().map(|k| ControllerSpec::Constant { h: horizon / (1u64 << k) as f64 }).collect()
}

/// Fine constant step for desk-scale runs, as a fraction of the horizon.
pub const FINE_DEPTH: u32 = 12;
/// Fine constant step for full-scale runs.
pub const FULL_SCALE_FINE_DEPTH: u32 = 14;

/// A parameter sweep with its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub controllers: Vec<ControllerSpec>,
    pub reference: Reference,
}

/// Sweeps `template` over `values`. The reference uses the same controller
/// kind: `T 2^-12` (`2^-14` at full scale) for constant steps, a tolerance
/// of an eighth of the smallest value otherwise.
pub fn sweep(template: &ControllerSpec, values: &[f64], horizon: f64, full_scale: bool) -> Result<Sweep> {
    if values.is_empty() {
        return Err(SdeError::InvalidParameter("sweep needs at least one value".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(SdeError::InvalidParameter(format!("sweep values must be positive and finite, got {v}")));
    }
    let controllers = values.iter().map(|&v| template.with_parameter(v)).collect();
    let reference = match template {
        ControllerSpec::Constant { .. } => {
            let depth = if full_scale { FULL_SCALE_FINE_DEPTH } else { FINE_DEPTH };
            ControllerSpec::Constant { h: horizon / (1u64 << depth) as f64 }
        }
        _ => template.with_parameter(values.iter().copied().fold(f64::INFINITY, f64::min) / 8.0),
    };
    Ok(Sweep { controllers, reference: Reference::Fine(reference) })
}

/// Default sweep values for a controller kind, tuned to the SABR model:
/// `T 2^-4 .. T 2^-9` for constant steps and tolerances giving comparable
/// average costs otherwise.
pub fn default_values(kind: &str, horizon: f64) -> Vec<f64> {
    match kind {
        "constant" => (4..=9).map(|k| horizon / (1u64 << k) as f64).collect(),
        "previsible" => vec![32.0, 16.0, 8.0],
        "pi" => vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
        "halving" => vec![1.0, 0.5, 0.25],
        _ => Vec::new(),
    }
}
