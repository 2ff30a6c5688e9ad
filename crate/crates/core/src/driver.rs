//! The integration loop: controller proposes, tree samples, stepper steps,
//! controller judges.

use crate::brownian_tree::BrownianTree;
use crate::controllers::{PartitionTrace, StepController, StepEvent};
use crate::dyadic::DyadicTime;
use crate::error::{Result, SdeError};
use crate::rng::KeyedRng;
use crate::solvers::{Method, PathIncrement};
use crate::system::SdeSystem;

const TAG_SIGNS: u64 = 0x5349_474e;

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    /// Keep the full propose/judge log.
    pub record_trace: bool,
    /// Consecutive rejections tolerated before giving up.
    pub max_rejections: usize,
    /// Total attempts tolerated over the whole run.
    pub max_attempts: usize,
    /// Seed for auxiliary per-step randomness (Rademacher signs).
    pub aux_seed: u64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { record_trace: false, max_rejections: 10_000, max_attempts: 100_000_000, aux_seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// State at each requested checkpoint, in order.
    pub states: Vec<Vec<f64>>,
    pub final_state: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    /// Accepted steps times evaluations per step.
    pub evaluations: usize,
    pub trace: Option<PartitionTrace>,
}

/// Integrates `y0` over `[0, T]` with `T = tree.horizon()`.
///
/// `checkpoints` must be strictly increasing in `(0, T]`; every one is hit
/// exactly because proposals are clipped to the next checkpoint.
pub fn integrate(
    sys: &dyn SdeSystem,
    method: Method,
    controller: &mut dyn StepController,
    tree: &mut BrownianTree,
    y0: &[f64],
    checkpoints: &[DyadicTime],
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if y0.len() != sys.state_dim() {
        return Err(SdeError::DimensionMismatch { what: "initial state", expected: sys.state_dim(), got: y0.len() });
    }
    if tree.dim() != sys.noise_dim() {
        return Err(SdeError::DimensionMismatch { what: "tree", expected: sys.noise_dim(), got: tree.dim() });
    }
    if let Some(want) = method.formulation() {
        if want != sys.formulation() {
            return Err(SdeError::FormulationMismatch {
                method: method.name(),
                required: want.name(),
                got: sys.formulation().name(),
            });
        }
    }
    if checkpoints.first() == Some(&DyadicTime::ZERO) || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SdeError::InvalidInterval("checkpoints must be strictly increasing in (0, T]".into()));
    }
    let horizon = tree.horizon();
    let d = sys.noise_dim();
    controller.begin(horizon, d)?;

    let mut targets: Vec<(DyadicTime, bool)> = checkpoints.iter().map(|&c| (c, true)).collect();
    if checkpoints.last() != Some(&DyadicTime::END) {
        targets.push((DyadicTime::END, false));
    }

    let mut trace = opts.record_trace.then(|| PartitionTrace::new(controller.dyadic()));
    let mut y = y0.to_vec();
    let mut t = DyadicTime::ZERO;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut states = Vec::with_capacity(checkpoints.len());
    let mut signs = vec![0.0; d];

    for (target, record) in targets {
        while t < target {
            let mut streak = 0usize;
            loop {
                let end = controller.propose(t, &y, target)?;
                if end <= t || end > target {
                    return Err(SdeError::InvalidInterval(format!(
                        "{} proposed [{t}, {end}] outside (t, {target}]",
                        controller.name()
                    )));
                }
                let sample = tree.increment_between(t, end)?;
                let mut inc = PathIncrement::from_sample(&sample);
                if method.needs_signs() {
                    let mut rng = KeyedRng::new(
                        opts.aux_seed,
                        &[TAG_SIGNS, t.numerator(), t.depth() as u64, end.numerator(), end.depth() as u64],
                    );
                    signs.iter_mut().for_each(|s| *s = rng.sign());
                    inc = inc.with_aux(&signs);
                }
                let out = method.step(sys, &y, &inc)?;
                if !out.is_finite() {
                    return Err(SdeError::NonFinite { t: t.value(horizon) });
                }
                let verdict = controller.judge(t, end, &out)?;
                if let Some(tr) = trace.as_mut() {
                    tr.record(StepEvent { start: t, end, error: verdict.error, accepted: verdict.accepted });
                }
                if verdict.accepted {
                    accepted += 1;
                    y = out.y_next;
                    t = end;
                    break;
                }
                rejected += 1;
                streak += 1;
                if streak > opts.max_rejections {
                    return Err(SdeError::NoProgress { target: end, attempts: streak });
                }
                if accepted + rejected > opts.max_attempts {
                    return Err(SdeError::NoProgress { target, attempts: accepted + rejected });
                }
            }
            if accepted + rejected > opts.max_attempts {
                return Err(SdeError::NoProgress { target, attempts: accepted + rejected });
            }
        }
        if record {
            states.push(y.clone());
        }
    }

    Ok(Trajectory {
        states,
        final_state: y,
        accepted,
        rejected,
        evaluations: accepted * method.evals_per_step(),
        trace,
    })
}

/// `k T / n` for `k = 1..=n`, `n` a power of two.
pub fn uniform_checkpoints(n: u64) -> Result<Vec<DyadicTime>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(SdeError::InvalidParameter(format!("checkpoint count {n} is not a power of two")));
    }
    let depth = n.trailing_zeros();
    (1..=n).map(|k| DyadicTime::new(k, depth)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{constant_controller, halving_controller, no_skip_audit};
    use crate::models::{counterexample_model, sabr_model};
    use crate::system::Formulation;

    #[test]
    fn constant_heun_hits_checkpoints() {
        let m = sabr_model();
        let sys = m.system(Formulation::Stratonovich);
        let mut tree = BrownianTree::new(1, 2, m.horizon).unwrap();
        let mut c = constant_controller(m.horizon / 64.0).unwrap();
        let cps = uniform_checkpoints(32).unwrap();
        let opts = IntegrateOptions { record_trace: true, ..Default::default() };
        let traj = integrate(&*sys, Method::Heun, &mut c, &mut tree, &m.y0, &cps, &opts).unwrap();
        assert_eq!(traj.states.len(), 32);
        assert_eq!(traj.accepted, 64);
        assert_eq!(traj.evaluations, 128);
        assert_eq!(traj.final_state, traj.states[31]);
        // ν is integrated exactly: ν_T = -T/2 + W²_T
        let w = tree.root_sample().w;
        assert!((traj.final_state[1] - (-4.0 + w[1])).abs() < 1e-12);
        assert!(no_skip_audit(traj.trace.as_ref().unwrap()).unwrap().passed());
    }

    #[test]
    fn formulation_checked_up_front() {
        let m = sabr_model();
        let sys = m.system(Formulation::Stratonovich);
        let mut tree = BrownianTree::new(1, 2, m.horizon).unwrap();
        let mut c = constant_controller(1.0).unwrap();
        let err = integrate(&*sys, Method::Euler, &mut c, &mut tree, &m.y0, &[], &Default::default());
        assert!(matches!(err, Err(SdeError::FormulationMismatch { .. })));
    }

    #[test]
    fn halving_run_is_audited_clean() {
        let m = sabr_model();
        let sys = m.system(Formulation::Stratonovich);
        let mut tree = BrownianTree::new(7, 2, m.horizon).unwrap();
        let mut c = halving_controller(0.1, m.horizon / 16.0).unwrap();
        let opts = IntegrateOptions { record_trace: true, ..Default::default() };
        let traj = integrate(&*sys, Method::Heun, &mut c, &mut tree, &m.y0, &[], &opts).unwrap();
        let trace = traj.trace.unwrap();
        assert!(trace.rejections() > 0);
        assert!(no_skip_audit(&trace).unwrap().passed());
    }

    #[test]
    fn ito_heun_signs_are_reproducible() {
        let m = counterexample_model();
        let sys = m.system(Formulation::Ito);
        let run = |seed| {
            let mut tree = BrownianTree::new(3, 2, 1.0).unwrap();
            let mut c = constant_controller(1.0 / 8.0).unwrap();
            let opts = IntegrateOptions { aux_seed: seed, ..Default::default() };
            integrate(&*sys, Method::ItoHeunRandomized, &mut c, &mut tree, &[1.0, 0.0], &[], &opts).unwrap().final_state
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn bad_checkpoints() {
        assert!(uniform_checkpoints(3).is_err());
        assert_eq!(uniform_checkpoints(4).unwrap().last(), Some(&DyadicTime::END));
    }
}
