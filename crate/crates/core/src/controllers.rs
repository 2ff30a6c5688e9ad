//! Step-size controllers and the no-skip partition audit.
//!
//! A controller proposes the right endpoint of the next step from the
//! current accepted time and state, then judges the stepper's output on
//! that interval. All times are exact [`DyadicTime`]s; controllers that
//! think in free-form step sizes (previsible, PI) snap their proposals down
//! to a dyadic grid about 2^-6 of the step fine, so rejected endpoints can be
//! tracked and revisited exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Bound::{Excluded, Unbounded};
use std::str::FromStr;

use crate::brownian_tree::{chain_samples, BrownianSample, DEFAULT_MAX_DEPTH};
use crate::dyadic::{DyadicInterval, DyadicTime};
use crate::error::{Result, SdeError};
use crate::models::{ModelSpec, PrevisibleFn};
use crate::solvers::{heun_step, PathIncrement, StepOutput};
use crate::system::SdeSystem;

/// Extra binary digits kept when snapping a free-form step to the grid.
const SNAP_DIGITS: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgement {
    pub accepted: bool,
    /// Error in the controller's own normalisation (1.0 is the threshold
    /// for the adaptive controllers).
    pub error: f64,
}

pub trait StepController: Send {
    fn name(&self) -> &'static str;

    /// Resets per-trajectory state.
    fn begin(&mut self, horizon: f64, noise_dim: usize) -> Result<()>;

    /// Right endpoint of the next attempt from `t`; must lie in
    /// `(t, limit]`. Only the state at `t` is visible here.
    fn propose(&mut self, t: DyadicTime, y: &[f64], limit: DyadicTime) -> Result<DyadicTime>;

    fn judge(&mut self, start: DyadicTime, end: DyadicTime, out: &StepOutput) -> Result<Judgement>;

    /// Whether every accepted step is an aligned dyadic interval.
    fn dyadic(&self) -> bool;
}

/// `t + h` rounded down on a grid a few digits finer than `h`, never less
/// than one grid unit.
pub fn snap_step(t: DyadicTime, fraction: f64, max_depth: u32) -> Result<DyadicTime> {
    if !(fraction > 0.0 && fraction.is_finite()) {
        return Err(SdeError::InvalidParameter(format!("step fraction must be positive, got {fraction}")));
    }
    let fraction = fraction.min(1.0);
    let need = (-fraction.log2()).ceil().max(0.0) as u32 + SNAP_DIGITS;
    let depth = need.min(max_depth);
    let ticks = (fraction * (1u64 << depth) as f64).floor() as u64;
    if ticks == 0 {
        return Err(SdeError::ResolutionExhausted { depth: need, max_depth });
    }
    advance(t, ticks, depth)
}

/// `t + ticks 2^-depth`, saturating at the horizon.
fn advance(t: DyadicTime, ticks: u64, depth: u32) -> Result<DyadicTime> {
    let d = depth.max(t.depth());
    let target = t.ticks_at(d) + (ticks << (d - depth));
    if target >= 1u64 << d {
        Ok(DyadicTime::END)
    } else {
        DyadicTime::new(target, d)
    }
}

/// Fixed step `h`. Dyadic fractions of the horizon step exactly; other
/// values are snapped.
#[derive(Debug, Clone)]
pub struct ConstantController {
    h: f64,
    ticks: u64,
    depth: u32,
    aligned: bool,
}

pub fn constant_controller(h: f64) -> Result<ConstantController> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SdeError::InvalidParameter(format!("constant step must be positive, got {h}")));
    }
    Ok(ConstantController { h, ticks: 0, depth: 0, aligned: false })
}

impl StepController for ConstantController {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn begin(&mut self, horizon: f64, _noise_dim: usize) -> Result<()> {
        let step = match DyadicTime::from_value(self.h.min(horizon), horizon, DEFAULT_MAX_DEPTH) {
            Ok(t) => t,
            Err(_) => snap_step(DyadicTime::ZERO, self.h / horizon, DEFAULT_MAX_DEPTH)?,
        };
        self.ticks = step.numerator();
        self.depth = step.depth();
        self.aligned = self.ticks == 1;
        Ok(())
    }

    fn propose(&mut self, t: DyadicTime, _y: &[f64], limit: DyadicTime) -> Result<DyadicTime> {
        Ok(advance(t, self.ticks, self.depth)?.min(limit))
    }

    fn judge(&mut self, _start: DyadicTime, _end: DyadicTime, _out: &StepOutput) -> Result<Judgement> {
        Ok(Judgement { accepted: true, error: 0.0 })
    }

    fn dyadic(&self) -> bool {
        self.aligned
    }
}

/// Dyadic halving control: accept iff `‖Y - Ỹ‖₂ ≤ C √h`, otherwise halve.
///
/// After an acceptance the next candidate is the largest aligned dyadic
/// step no longer than `h_init` that stays inside the limit and does not
/// strictly contain a time sampled earlier.
#[derive(Debug, Clone)]
pub struct HalvingController {
    tolerance: f64,
    h_init: f64,
    init_depth: u32,
    max_depth: u32,
    horizon: f64,
    next_min_depth: u32,
    pending: BTreeSet<DyadicTime>,
}

pub fn halving_controller(tolerance: f64, h_init: f64) -> Result<HalvingController> {
    if !(tolerance >= 0.0) {
        return Err(SdeError::InvalidParameter(format!("tolerance must be non-negative, got {tolerance}")));
    }
    if !(h_init > 0.0 && h_init.is_finite()) {
        return Err(SdeError::InvalidParameter(format!("h0 must be positive, got {h_init}")));
    }
    Ok(HalvingController {
        tolerance,
        h_init,
        init_depth: 0,
        max_depth: DEFAULT_MAX_DEPTH,
        horizon: 1.0,
        next_min_depth: 0,
        pending: BTreeSet::new(),
    })
}

impl HalvingController {
    pub fn with_max_depth(mut self, max_depth: u32) -> Self {
        self.max_depth = max_depth;
        self
    }
}

impl StepController for HalvingController {
    fn name(&self) -> &'static str {
        "halving"
    }

    fn begin(&mut self, horizon: f64, _noise_dim: usize) -> Result<()> {
        let t = DyadicTime::from_value(self.h_init, horizon, self.max_depth).map_err(|_| {
            SdeError::InvalidParameter(format!("h0 = {} is not T / 2^m for T = {horizon}", self.h_init))
        })?;
        if t.numerator() != 1 {
            return Err(SdeError::InvalidParameter(format!("h0 = {} is not T / 2^m for T = {horizon}", self.h_init)));
        }
        self.horizon = horizon;
        self.init_depth = t.depth();
        self.next_min_depth = t.depth();
        self.pending.clear();
        Ok(())
    }

    fn propose(&mut self, t: DyadicTime, _y: &[f64], limit: DyadicTime) -> Result<DyadicTime> {
        let mut depth = self.next_min_depth.max(t.depth());
        loop {
            if depth > self.max_depth {
                return Err(SdeError::ResolutionExhausted { depth, max_depth: self.max_depth });
            }
            let end = t.add_ticks(1, depth)?;
            let skips = self.pending.range((Excluded(t), Excluded(end))).next().is_some();
            if end <= limit && !skips {
                return Ok(end);
            }
            depth += 1;
        }
    }

    fn judge(&mut self, start: DyadicTime, end: DyadicTime, out: &StepOutput) -> Result<Judgement> {
        let h = end.fraction_since(start) * self.horizon;
        let bound = self.tolerance * h.sqrt();
        let accepted = out.error_norm <= bound || self.tolerance == f64::INFINITY;
        let error = if bound > 0.0 {
            out.error_norm / bound
        } else if out.error_norm == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if accepted {
            self.pending = self.pending.split_off(&end);
            self.pending.remove(&end);
            self.next_min_depth = self.init_depth;
        } else {
            self.pending.insert(end);
            let step = DyadicInterval::from_endpoints(start, end)
                .ok_or_else(|| SdeError::MalformedTrace(format!("halving step [{start}, {end}] is not dyadic")))?;
            self.next_min_depth = step.depth() + 1;
        }
        Ok(Judgement { accepted, error })
    }

    fn dyadic(&self) -> bool {
        true
    }
}

/// Previsible control: `h = step_fn(C, y_t)`, always accepted.
#[derive(Clone)]
pub struct PrevisibleController {
    tolerance: f64,
    step_fn: PrevisibleFn,
    horizon: f64,
    max_depth: u32,
}

impl fmt::Debug for PrevisibleController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrevisibleController").field("tolerance", &self.tolerance).finish()
    }
}

pub fn previsible_controller(tolerance: f64, step_fn: PrevisibleFn) -> Result<PrevisibleController> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(SdeError::InvalidParameter(format!("tolerance must be positive, got {tolerance}")));
    }
    Ok(PrevisibleController { tolerance, step_fn, horizon: 1.0, max_depth: DEFAULT_MAX_DEPTH })
}

impl StepController for PrevisibleController {
    fn name(&self) -> &'static str {
        "previsible"
    }

    fn begin(&mut self, horizon: f64, _noise_dim: usize) -> Result<()> {
        self.horizon = horizon;
        Ok(())
    }

    fn propose(&mut self, t: DyadicTime, y: &[f64], limit: DyadicTime) -> Result<DyadicTime> {
        let h = (self.step_fn)(self.tolerance, y);
        if !(h > 0.0 && h.is_finite()) {
            return Err(SdeError::InvalidParameter(format!("previsible step function returned {h}")));
        }
        Ok(snap_step(t, h / self.horizon, self.max_depth)?.min(limit))
    }

    fn judge(&mut self, _start: DyadicTime, _end: DyadicTime, _out: &StepOutput) -> Result<Judgement> {
        Ok(Judgement { accepted: true, error: 0.0 })
    }

    fn dyadic(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiParams {
    pub fac: f64,
    pub fac_min: f64,
    pub fac_max: f64,
    pub k_i: f64,
    pub k_p: f64,
    pub h_init: f64,
}

impl Default for PiParams {
    fn default() -> Self {
        Self { fac: 0.9, fac_min: 0.2, fac_max: 10.0, k_i: 0.3, k_p: 0.1, h_init: 0.01 }
    }
}

impl PiParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fac_min > 0.0
            && self.fac_min < 1.0
            && self.fac_max > 1.0
            && self.fac > 0.0
            && self.fac < 1.0
            && self.fac_min <= self.fac
            && self.k_i >= 0.0
            && self.k_p >= 0.0
            && self.h_init > 0.0
            && self.h_init.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SdeError::InvalidParameter(format!("invalid PI parameters {self:?}")))
        }
    }

    /// `clamp(fac (1/e)^{K_I} (e_prev/e)^{K_P}, fac_min, cap)`; `e = 0`
    /// gives `cap`.
    pub fn factor(&self, e: f64, e_prev: f64, cap: f64) -> f64 {
        if e == 0.0 {
            return cap;
        }
        let mut f = self.fac * e.powf(-self.k_i);
        if e_prev > 0.0 {
            f *= (e_prev / e).powf(self.k_p);
        }
        f.clamp(self.fac_min, cap)
    }
}

/// Proportional-integral control on the rescaled error
/// `e = ‖Y - Ỹ‖₂ / (C √d)`, accepting when `e ≤ 1`.
///
/// With clipping on, every proposal stops at the nearest earlier rejected
/// endpoint ahead of `t`, which keeps the partition no-skip. Clipping can be
/// switched off to exhibit the failure the audit is meant to catch.
#[derive(Debug, Clone)]
pub struct PiController {
    tolerance: f64,
    params: PiParams,
    clip_rejected: bool,
    horizon: f64,
    noise_dim: usize,
    max_depth: u32,
    h: f64,
    e_prev: f64,
    pending: BTreeSet<DyadicTime>,
}

pub fn pi_controller(tolerance: f64, params: PiParams) -> Result<PiController> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(SdeError::InvalidParameter(format!("tolerance must be positive, got {tolerance}")));
    }
    params.validate()?;
    Ok(PiController {
        tolerance,
        params,
        clip_rejected: true,
        horizon: 1.0,
        noise_dim: 1,
        max_depth: DEFAULT_MAX_DEPTH,
        h: params.h_init,
        e_prev: 1.0,
        pending: BTreeSet::new(),
    })
}

impl PiController {
    pub fn with_clipping(mut self, clip_rejected: bool) -> Self {
        self.clip_rejected = clip_rejected;
        self
    }

    pub fn params(&self) -> &PiParams {
        &self.params
    }
}

impl StepController for PiController {
    fn name(&self) -> &'static str {
        "pi"
    }

    fn begin(&mut self, horizon: f64, noise_dim: usize) -> Result<()> {
        self.horizon = horizon;
        self.noise_dim = noise_dim;
        self.h = self.params.h_init;
        self.e_prev = 1.0;
        self.pending.clear();
        Ok(())
    }

    fn propose(&mut self, t: DyadicTime, _y: &[f64], limit: DyadicTime) -> Result<DyadicTime> {
        let mut end = snap_step(t, self.h / self.horizon, self.max_depth)?.min(limit);
        if self.clip_rejected {
            if let Some(&next) = self.pending.range((Excluded(t), Unbounded)).next() {
                end = end.min(next);
            }
        }
        Ok(end)
    }

    fn judge(&mut self, start: DyadicTime, end: DyadicTime, out: &StepOutput) -> Result<Judgement> {
        let e = out.scaled_error(self.tolerance, self.noise_dim);
        let h_used = end.fraction_since(start) * self.horizon;
        let accepted = e <= 1.0;
        if accepted {
            self.h = h_used * self.params.factor(e, self.e_prev, self.params.fac_max);
            self.e_prev = e;
            self.pending = self.pending.split_off(&end);
            self.pending.remove(&end);
        } else {
            self.h = h_used * self.params.factor(e, self.e_prev, self.params.fac);
            self.pending.insert(end);
        }
        Ok(Judgement { accepted, error: e })
    }

    fn dyadic(&self) -> bool {
        false
    }
}

/// The deliberately broken controller: on each coarse interval take one
/// Heun step and two half steps and keep whichever gives the larger second
/// component.
#[derive(Debug, Clone, Copy, Default)]
pub struct SkippingMaxController;

pub fn skipping_max_controller() -> SkippingMaxController {
    SkippingMaxController
}

impl SkippingMaxController {
    /// Advances over one coarse interval whose halves carry `left` and
    /// `right`. Only defined for two-dimensional state and noise.
    pub fn advance<S: SdeSystem + ?Sized>(
        &self,
        sys: &S,
        y: &[f64],
        left: &BrownianSample,
        right: &BrownianSample,
    ) -> Result<Vec<f64>> {
        if sys.state_dim() != 2 || sys.noise_dim() != 2 {
            return Err(SdeError::InvalidParameter(
                "skipping-max control needs the two-dimensional counterexample system".into(),
            ));
        }
        let whole = chain_samples(left, right)?;
        let one = heun_step(sys, y, &PathIncrement::new(whole.h, &whole.w))?.y_next;
        let mid = heun_step(sys, y, &PathIncrement::new(left.h, &left.w))?.y_next;
        let two = heun_step(sys, &mid, &PathIncrement::new(right.h, &right.w))?.y_next;
        Ok(if two[1] > one[1] { two } else { one })
    }
}

/// Parsed controller description, buildable once per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    Constant { h: f64 },
    Halving { tolerance: f64, h_init: f64 },
    Previsible { tolerance: f64 },
    Pi { tolerance: f64, params: PiParams, clip_rejected: bool },
}

/// Registered controller kinds.
pub const CONTROLLER_NAMES: [&str; 4] = ["constant", "halving", "previsible", "pi"];

impl ControllerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerSpec::Constant { .. } => "constant",
            ControllerSpec::Halving { .. } => "halving",
            ControllerSpec::Previsible { .. } => "previsible",
            ControllerSpec::Pi { .. } => "pi",
        }
    }

    /// The swept parameter: `h` for constant steps, `C` otherwise.
    pub fn parameter(&self) -> f64 {
        match *self {
            ControllerSpec::Constant { h } => h,
            ControllerSpec::Halving { tolerance, .. }
            | ControllerSpec::Previsible { tolerance }
            | ControllerSpec::Pi { tolerance, .. } => tolerance,
        }
    }

    /// Same controller with its swept parameter replaced.
    pub fn with_parameter(&self, value: f64) -> ControllerSpec {
        let mut c = self.clone();
        match &mut c {
            ControllerSpec::Constant { h } => *h = value,
            ControllerSpec::Halving { tolerance, .. }
            | ControllerSpec::Previsible { tolerance }
            | ControllerSpec::Pi { tolerance, .. } => *tolerance = value,
        }
        c
    }

    pub fn build(&self, model: &ModelSpec) -> Result<Box<dyn StepController>> {
        Ok(match *self {
            ControllerSpec::Constant { h } => Box::new(constant_controller(h)?),
            ControllerSpec::Halving { tolerance, h_init } => Box::new(halving_controller(tolerance, h_init)?),
            ControllerSpec::Previsible { tolerance } => {
                let step = model.previsible_step.clone().ok_or_else(|| {
                    SdeError::InvalidParameter(format!("model '{}' has no previsible step rule", model.name))
                })?;
                Box::new(previsible_controller(tolerance, step)?)
            }
            ControllerSpec::Pi { tolerance, params, clip_rejected } => {
                Box::new(pi_controller(tolerance, params)?.with_clipping(clip_rejected))
            }
        })
    }

    /// Parameter keys accepted after the colon, by kind.
    pub fn keys(kind: &str) -> &'static [&'static str] {
        match kind {
            "constant" => &["h"],
            "halving" => &["C", "h0"],
            "previsible" => &["C"],
            "pi" => &["C", "fac", "facmin", "facmax", "ki", "kp", "h0"],
            _ => &[],
        }
    }
}

impl fmt::Display for ControllerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerSpec::Constant { h } => write!(f, "constant:h={h}"),
            ControllerSpec::Halving { tolerance, h_init } => write!(f, "halving:C={tolerance},h0={h_init}"),
            ControllerSpec::Previsible { tolerance } => write!(f, "previsible:C={tolerance}"),
            ControllerSpec::Pi { tolerance, params, clip_rejected } => {
                let d = PiParams::default();
                write!(f, "pi:C={tolerance}")?;
                for (key, value, default) in [
                    ("fac", params.fac, d.fac),
                    ("facmin", params.fac_min, d.fac_min),
                    ("facmax", params.fac_max, d.fac_max),
                    ("ki", params.k_i, d.k_i),
                    ("kp", params.k_p, d.k_p),
                    ("h0", params.h_init, d.h_init),
                ] {
                    if value != default {
                        write!(f, ",{key}={value}")?;
                    }
                }
                if !clip_rejected {
                    write!(f, ",noclip")?;
                }
                Ok(())
            }
        }
    }
}

fn parse_number(key: &str, value: &str) -> Result<f64> {
    let v = match value {
        "inf" | "infinity" => f64::INFINITY,
        _ => {
            if let Some((num, den)) = value.split_once('/') {
                let n: f64 = num.trim().parse().map_err(|_| bad_value(key, value))?;
                let d: f64 = den.trim().parse().map_err(|_| bad_value(key, value))?;
                n / d
            } else {
                value.parse().map_err(|_| bad_value(key, value))?
            }
        }
    };
    if v.is_nan() {
        return Err(bad_value(key, value));
    }
    Ok(v)
}

fn bad_value(key: &str, value: &str) -> SdeError {
    SdeError::InvalidParameter(format!("cannot parse {key}={value}"))
}

impl FromStr for ControllerSpec {
    type Err = SdeError;

    /// `kind` or `kind:key=value,...`; values accept `a/b` and `inf`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        if !CONTROLLER_NAMES.contains(&kind) {
            return Err(SdeError::InvalidParameter(format!(
                "unknown controller '{kind}' (expected one of {})",
                CONTROLLER_NAMES.join(", ")
            )));
        }
        let allowed = ControllerSpec::keys(kind);
        let mut values: Vec<(&str, f64)> = Vec::new();
        let mut clip = true;
        for item in rest.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            if kind == "pi" && item == "noclip" {
                clip = false;
                continue;
            }
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| SdeError::InvalidParameter(format!("expected key=value, got '{item}'")))?;
            let k = k.trim();
            if !allowed.contains(&k) {
                return Err(SdeError::InvalidParameter(format!(
                    "controller '{kind}' has no parameter '{k}' (accepted: {})",
                    allowed.join(", ")
                )));
            }
            values.push((k, parse_number(k, v.trim())?));
        }
        let get = |key: &str| values.iter().rev().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let need = |key: &str| {
            get(key).ok_or_else(|| SdeError::InvalidParameter(format!("controller '{kind}' requires {key}=")))
        };
        Ok(match kind {
            "constant" => ControllerSpec::Constant { h: need("h")? },
            "halving" => ControllerSpec::Halving { tolerance: need("C")?, h_init: need("h0")? },
            "previsible" => ControllerSpec::Previsible { tolerance: need("C")? },
            "pi" => {
                let d = PiParams::default();
                let params = PiParams {
                    fac: get("fac").unwrap_or(d.fac),
                    fac_min: get("facmin").unwrap_or(d.fac_min),
                    fac_max: get("facmax").unwrap_or(d.fac_max),
                    k_i: get("ki").unwrap_or(d.k_i),
                    k_p: get("kp").unwrap_or(d.k_p),
                    h_init: get("h0").unwrap_or(d.h_init),
                };
                params.validate()?;
                ControllerSpec::Pi { tolerance: need("C")?, params, clip_rejected: clip }
            }
            _ => unreachable!(),
        })
    }
}

/// One propose/judge round.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEvent {
    pub start: DyadicTime,
    pub end: DyadicTime,
    pub error: f64,
    pub accepted: bool,
}

/// Accepted partition plus the full attempt log.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTrace {
    pub accepted: Vec<DyadicTime>,
    pub events: Vec<StepEvent>,
    /// Whether accepted steps are required to be aligned dyadic intervals.
    pub dyadic: bool,
}

impl PartitionTrace {
    pub fn new(dyadic: bool) -> Self {
        Self { accepted: vec![DyadicTime::ZERO], events: Vec::new(), dyadic }
    }

    /// Rebuilds the accepted sequence from an event log.
    pub fn from_events(events: Vec<StepEvent>, dyadic: bool) -> Self {
        let mut trace = Self::new(dyadic);
        for e in events {
            trace.record(e);
        }
        trace
    }

    pub fn record(&mut self, event: StepEvent) {
        if event.accepted {
            self.accepted.push(event.end);
        }
        self.events.push(event);
    }

    pub fn rejected_times(&self) -> BTreeSet<DyadicTime> {
        self.events.iter().filter(|e| !e.accepted).map(|e| e.end).collect()
    }

    pub fn rejections(&self) -> usize {
        self.events.iter().filter(|e| !e.accepted).count()
    }

    /// Largest accepted step as a fraction of the horizon.
    pub fn mesh(&self) -> f64 {
        self.accepted.windows(2).map(|w| w[1].fraction_since(w[0])).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// The accepted step `(start, end)` jumped over the earlier sample
    /// `skipped`.
    Skipped {
        start: DyadicTime,
        end: DyadicTime,
        skipped: DyadicTime,
    },
    NotDyadic {
        start: DyadicTime,
        end: DyadicTime,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Skipped { start, end, skipped } => {
                write!(f, "step [{start}, {end}] skips sampled time {skipped}")
            }
            Violation::NotDyadic { start, end } => write!(f, "step [{start}, {end}] is not a dyadic interval"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub steps: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn skips(&self) -> usize {
        self.violations.iter().filter(|v| matches!(v, Violation::Skipped { .. })).count()
    }
}

/// Checks that no accepted step strictly contains a time sampled before it
/// was taken, and (in dyadic mode) that accepted steps are aligned dyadic
/// intervals.
pub fn no_skip_audit(trace: &PartitionTrace) -> Result<AuditReport> {
    if trace.accepted.first() != Some(&DyadicTime::ZERO) {
        return Err(SdeError::MalformedTrace("accepted times must start at 0".into()));
    }
    if trace.accepted.last() != Some(&DyadicTime::END) {
        return Err(SdeError::MalformedTrace("accepted times must end at T".into()));
    }
    if trace.accepted.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SdeError::MalformedTrace("accepted times must be strictly increasing".into()));
    }
    let mut report = AuditReport::default();
    let mut sampled: BTreeSet<DyadicTime> = BTreeSet::new();
    sampled.insert(DyadicTime::ZERO);
    let mut position = DyadicTime::ZERO;
    let mut accepted = trace.accepted.iter().skip(1);
    for (i, ev) in trace.events.iter().enumerate() {
        if ev.start != position || ev.end <= ev.start {
            return Err(SdeError::MalformedTrace(format!(
                "event {i} [{}, {}] does not start at the current time {position}",
                ev.start, ev.end
            )));
        }
        if ev.accepted {
            if accepted.next() != Some(&ev.end) {
                return Err(SdeError::MalformedTrace(format!("event {i} disagrees with the accepted times")));
            }
            report.steps += 1;
            if let Some(&skipped) = sampled.range((Excluded(ev.start), Excluded(ev.end))).next() {
                report.violations.push(Violation::Skipped { start: ev.start, end: ev.end, skipped });
            }
            if trace.dyadic && DyadicInterval::from_endpoints(ev.start, ev.end).is_none() {
                report.violations.push(Violation::NotDyadic { start: ev.start, end: ev.end });
            }
            position = ev.end;
        }
        sampled.insert(ev.end);
    }
    if accepted.next().is_some() || position != DyadicTime::END {
        return Err(SdeError::MalformedTrace("event log ends before T".into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(k: u64, n: u32) -> DyadicTime {
        DyadicTime::new(k, n).unwrap()
    }

    fn out_with_error(err: f64) -> StepOutput {
        StepOutput { y_next: vec![err], y_embedded: vec![0.0], error_norm: err }
    }

    fn drive(c: &mut dyn StepController, mut errors: impl FnMut(DyadicTime, DyadicTime) -> f64) -> PartitionTrace {
        let mut trace = PartitionTrace::new(c.dyadic());
        let mut now = DyadicTime::ZERO;
        let mut guard = 0;
        while now < DyadicTime::END {
            let end = c.propose(now, &[0.0], DyadicTime::END).unwrap();
            let j = c.judge(now, end, &out_with_error(errors(now, end))).unwrap();
            trace.record(StepEvent { start: now, end, error: j.error, accepted: j.accepted });
            if j.accepted {
                now = end;
            }
            guard += 1;
            assert!(guard < 100_000);
        }
        trace
    }

    #[test]
    fn constant_eighths() {
        let mut c = constant_controller(0.125).unwrap();
        c.begin(1.0, 1).unwrap();
        let trace = drive(&mut c, |_, _| 0.0);
        assert_eq!(trace.accepted.len(), 9);
        assert_eq!(trace.rejections(), 0);
        assert_eq!(trace.mesh(), 0.125);
        assert!(no_skip_audit(&trace).unwrap().passed());
        assert!(constant_controller(0.0).is_err());
    }

    #[test]
    fn constant_respects_limits() {
        let mut c = constant_controller(0.25).unwrap();
        c.begin(1.0, 1).unwrap();
        assert_eq!(c.propose(DyadicTime::ZERO, &[0.0], t(1, 3)).unwrap(), t(1, 3));
        let mut c = constant_controller(0.3).unwrap();
        c.begin(1.0, 1).unwrap();
        let trace = drive(&mut c, |_, _| 0.0);
        assert_eq!(*trace.accepted.last().unwrap(), DyadicTime::END);
        assert!(!c.dyadic());
    }

    #[test]
    fn halving_with_infinite_tolerance_is_constant() {
        let mut c = halving_controller(f64::INFINITY, 0.125).unwrap();
        c.begin(1.0, 1).unwrap();
        let trace = drive(&mut c, |_, _| 1e9);
        assert_eq!(trace.accepted.len(), 9);
        assert_eq!(trace.rejections(), 0);
    }

    #[test]
    fn halving_with_zero_tolerance_exhausts() {
        let mut c = halving_controller(0.0, 0.5).unwrap().with_max_depth(12);
        c.begin(1.0, 1).unwrap();
        let mut now_end = c.propose(DyadicTime::ZERO, &[0.0], DyadicTime::END).unwrap();
        loop {
            let j = c.judge(DyadicTime::ZERO, now_end, &out_with_error(1.0)).unwrap();
            assert!(!j.accepted);
            match c.propose(DyadicTime::ZERO, &[0.0], DyadicTime::END) {
                Ok(e) => now_end = e,
                Err(e) => {
                    assert!(matches!(e, SdeError::ResolutionExhausted { .. }));
                    break;
                }
            }
        }
    }

    #[test]
    fn halving_revisits_rejected_time() {
        let mut c = halving_controller(1.0, 0.5).unwrap();
        c.begin(1.0, 1).unwrap();
        // reject anything longer than 1/8
        let trace = drive(&mut c, |s, e| if e.fraction_since(s) > 0.125 { 10.0 } else { 0.0 });
        assert!(trace.rejections() > 0);
        let report = no_skip_audit(&trace).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
        assert!(trace.accepted.contains(&t(1, 1)));
        assert_eq!(trace.mesh(), 0.125);
    }

    #[test]
    fn halving_rejects_non_dyadic_h0() {
        let mut c = halving_controller(1.0, 0.3).unwrap();
        assert!(c.begin(1.0, 1).is_err());
    }

    #[test]
    fn pi_factor_examples() {
        let p = PiParams::default();
        assert!((p.factor(1.0, 1.0, p.fac_max) - 0.9).abs() < 1e-15);
        // 0.9 * e^{-0.3} * (1/e)^{0.1} = 37 needs e = (0.9/37)^{2.5}
        let e = (0.9f64 / 37.0).powf(2.5);
        assert_eq!(p.factor(e, 1.0, p.fac_max), 10.0);
        assert_eq!(p.factor(0.0, 0.5, p.fac_max), 10.0);
        assert_eq!(p.factor(1e9, 1.0, p.fac_max), 0.2);
        assert!(p.factor(1.5, 1.0, p.fac) < p.fac);
    }

    #[test]
    fn pi_shrinks_after_rejection_and_revisits() {
        let mut c = pi_controller(1.0, PiParams { h_init: 0.5, ..PiParams::default() }).unwrap();
        c.begin(1.0, 1).unwrap();
        let first = c.propose(DyadicTime::ZERO, &[0.0], DyadicTime::END).unwrap();
        let j = c.judge(DyadicTime::ZERO, first, &out_with_error(2.0)).unwrap();
        assert!(!j.accepted);
        let second = c.propose(DyadicTime::ZERO, &[0.0], DyadicTime::END).unwrap();
        assert!(second < first);
        c.judge(DyadicTime::ZERO, second, &out_with_error(0.0)).unwrap();
        // after an error-free step the factor is 10, but the step stops at
        // the rejected endpoint
        assert_eq!(c.propose(second, &[0.0], DyadicTime::END).unwrap(), first);
    }

    #[test]
    fn unclipped_pi_can_skip() {
        let run = |clip: bool| {
            let mut c =
                pi_controller(1.0, PiParams { h_init: 0.5, ..PiParams::default() }).unwrap().with_clipping(clip);
            c.begin(1.0, 1).unwrap();
            let mut first = true;
            drive(&mut c, move |_, _| {
                if first {
                    first = false;
                    2.0
                } else {
                    0.0
                }
            })
        };
        assert!(no_skip_audit(&run(true)).unwrap().passed());
        let report = no_skip_audit(&run(false)).unwrap();
        assert!(!report.passed());
        assert!(report.skips() >= 1);
    }

    #[test]
    fn previsible_uses_step_function() {
        let mut c = previsible_controller(0.1, std::sync::Arc::new(crate::models::sabr_previsible_step)).unwrap();
        c.begin(8.0, 2).unwrap();
        let end = c.propose(DyadicTime::ZERO, &[0.0, 0.0], DyadicTime::END).unwrap();
        let h = end.value(8.0);
        let target = 1.1f64.ln();
        assert!(h <= target && h > target * (1.0 - 1.0 / 32.0), "{h}");
        let bad = previsible_controller(0.1, std::sync::Arc::new(|_, _: &[f64]| -1.0)).unwrap();
        let mut bad = bad;
        bad.begin(1.0, 1).unwrap();
        assert!(bad.propose(DyadicTime::ZERO, &[0.0], DyadicTime::END).is_err());
    }

    #[test]
    fn audit_catches_constructed_skip() {
        let half = t(1, 1);
        let quarter = t(1, 2);
        let events = vec![
            StepEvent { start: DyadicTime::ZERO, end: half, error: 2.0, accepted: false },
            StepEvent { start: DyadicTime::ZERO, end: quarter, error: 0.5, accepted: true },
            StepEvent { start: quarter, end: t(3, 2), error: 0.5, accepted: true },
            StepEvent { start: t(3, 2), end: DyadicTime::END, error: 0.5, accepted: true },
        ];
        let trace = PartitionTrace::from_events(events, true);
        let report = no_skip_audit(&trace).unwrap();
        assert_eq!(
            report.violations,
            vec![
                Violation::Skipped { start: quarter, end: t(3, 2), skipped: half },
                Violation::NotDyadic { start: quarter, end: t(3, 2) },
            ]
        );
    }

    #[test]
    fn audit_rejects_malformed_logs() {
        let mut trace = PartitionTrace::new(false);
        assert!(no_skip_audit(&trace).is_err());
        trace.record(StepEvent { start: t(1, 2), end: DyadicTime::END, error: 0.0, accepted: true });
        assert!(matches!(no_skip_audit(&trace), Err(SdeError::MalformedTrace(_))));
    }

    #[test]
    fn spec_strings() {
        let c: ControllerSpec = "pi:C=0.5,ki=0.2".parse().unwrap();
        assert_eq!(
            c,
            ControllerSpec::Pi {
                tolerance: 0.5,
                params: PiParams { k_i: 0.2, ..PiParams::default() },
                clip_rejected: true
            }
        );
        assert_eq!(c.to_string().parse::<ControllerSpec>().unwrap(), c);
        let h: ControllerSpec = "constant:h=1/64".parse().unwrap();
        assert_eq!(h, ControllerSpec::Constant { h: 1.0 / 64.0 });
        assert_eq!(
            "halving:C=0.1,h0=0.25".parse::<ControllerSpec>().unwrap(),
            ControllerSpec::Halving { tolerance: 0.1, h_init: 0.25 }
        );
        assert!("pi".parse::<ControllerSpec>().is_err());
        assert!("pi:C=1,foo=2".parse::<ControllerSpec>().is_err());
        assert!("rk:C=1".parse::<ControllerSpec>().is_err());
        assert!("pi:C=1,facmin=2".parse::<ControllerSpec>().is_err());
    }

    #[test]
    fn snapping() {
        let end = snap_step(DyadicTime::ZERO, 0.3, 40).unwrap();
        assert!(end.fraction() <= 0.3 && end.fraction() > 0.3 * (1.0 - 1.0 / 32.0));
        assert!(snap_step(DyadicTime::ZERO, 1e-15, 40).is_err());
        assert_eq!(snap_step(t(3, 2), 0.9, 40).unwrap(), DyadicTime::END);
    }
}
