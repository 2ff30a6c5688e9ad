//! Subcommand implementations. Each returns whether `--check` passed
//! (always `true` without `--check`).

use std::io::Write;
use std::path::PathBuf;

use adaptive_sde::controllers::ControllerSpec;
use adaptive_sde::harness::report::{strong_rows, to_csv, CsvRow, Summary};
use adaptive_sde::harness::{
    bridge_moment_tests, counterexample_experiment, default_values, gaussian_determinant_mc, holder_decay,
    levy_regression, local_mse_ratio, previsible_bound_check, strong_error, sweep, Reference, StrongErrorConfig,
};
use adaptive_sde::models::model_by_name;
use adaptive_sde::Method;

use crate::config::{parse_depths, parse_list, parse_number, parse_params, parse_seed, ConfigFile, SEED_ENV};
use crate::{
    BridgeArgs, CliError, Command, Common, ConvergenceArgs, CounterexampleArgs, HolderArgs, LocalErrorArgs,
    MomentsArgs, PrevisibleBoundArgs, RegressionArgs,
};

/// Bracket width, in standard errors, used by `--check`.
const SIGMAS: f64 = 4.0;
/// Sample count under `--full-scale`.
const FULL_SCALE_SAMPLES: usize = 100_000;

pub fn run(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Convergence(a) => convergence(a),
        Command::Counterexample(a) => counterexample(a),
        Command::Moments(a) => moments(a),
        Command::LocalError(a) => local_error(a),
        Command::Holder(a) => holder(a),
        Command::Bridge(a) => bridge(a),
        Command::PrevisibleBound(a) => previsible_bound(a),
        Command::Regression(a) => regression(a),
    }
}

/// Settings shared by every subcommand after merging flags, file and
/// environment.
struct Context {
    config: ConfigFile,
    seed: u64,
    samples: Option<usize>,
    out: Option<PathBuf>,
    check: bool,
    full_scale: bool,
}

impl Context {
    fn new(common: Common, command: &str, extra: &[&str]) -> Result<Self, CliError> {
        let config = match &common.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        config.validate(command, extra)?;
        let seed = match config.pick(common.seed, "seed")? {
            Some(s) => parse_seed(&s)?,
            None => match std::env::var(SEED_ENV) {
                Ok(s) => parse_seed(&s)?,
                Err(_) => 0,
            },
        };
        let samples = config.pick(common.samples, "samples")?;
        if samples == Some(0) {
            return Err(CliError::Usage("--samples must be positive".into()));
        }
        if let Some(n) = config.pick(common.threads, "threads")? {
            if n == 0 {
                return Err(CliError::Usage("--threads must be positive".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Io(format!("cannot start thread pool: {e}")))?;
        }
        Ok(Self {
            seed,
            samples,
            out: config.pick(common.out, "out")?,
            check: config.flag(common.check, "check")?,
            full_scale: config.flag(common.full_scale, "full-scale")?,
            config,
        })
    }

    fn samples(&self, desk: usize) -> usize {
        self.samples.unwrap_or(if self.full_scale { FULL_SCALE_SAMPLES.max(desk) } else { desk })
    }

    /// Writes the CSV, then the summary on stdout. Human-readable lines
    /// go to stderr so stdout stays machine-readable.
    fn finish(&self, rows: &[CsvRow], mut summary: Summary, human: &str, passed: bool) -> Result<bool, CliError> {
        let csv = to_csv(rows);
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        let io = |e: std::io::Error| CliError::Io(e.to_string());
        match &self.out {
            Some(path) => {
                std::fs::write(path, &csv).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?
            }
            None => out.write_all(csv.as_bytes()).map_err(io)?,
        }
        summary.push("seed", self.seed);
        summary.push("pass", passed);
        out.write_all(summary.to_string().as_bytes()).map_err(io)?;
        eprint!("{human}");
        if self.check && !passed {
            eprintln!("check failed");
        }
        Ok(!self.check || passed)
    }
}

fn pm(mean: f64, se: f64) -> String {
    format!("{mean:.6} ± {se:.6}")
}

/// Completes a controller description with defaults for missing keys so
/// that a bare kind such as `pi` is accepted.
fn controller_template(text: &str, horizon: f64) -> Result<ControllerSpec, CliError> {
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let has = |key: &str| rest.split(',').any(|item| item.split_once('=').is_some_and(|(k, _)| k.trim() == key));
    let mut items: Vec<String> = rest.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    let defaults: &[(&str, f64)] = match kind {
        "constant" => &[("h", 1.0)],
        "halving" => &[("C", 1.0), ("h0", horizon / 16.0)],
        "previsible" | "pi" => &[("C", 1.0)],
        _ => &[],
    };
    for (k, v) in defaults {
        if !has(k) {
            items.push(format!("{k}={v}"));
        }
    }
    let full = if items.is_empty() { kind.to_string() } else { format!("{kind}:{}", items.join(",")) };
    full.parse::<ControllerSpec>().map_err(|e| CliError::Usage(e.to_string()))
}

fn convergence(a: ConvergenceArgs) -> Result<bool, CliError> {
    let extra = ["model", "params", "method", "controller", "grid", "reference", "expect-slope", "slope-tol"];
    let ctx = Context::new(a.common, "convergence", &extra)?;
    let c = &ctx.config;
    let model_name = c.pick(a.model, "model")?.unwrap_or_else(|| "sabr".into());
    let params = match c.pick(a.params, "params")? {
        Some(p) => parse_params(&p)?,
        None => Vec::new(),
    };
    let model = model_by_name(&model_name, &params).map_err(|e| CliError::Usage(e.to_string()))?;
    let method_name = c.pick(a.method, "method")?.unwrap_or_else(|| "heun".into());
    let method: Method = method_name.parse().map_err(|e: adaptive_sde::SdeError| CliError::Usage(e.to_string()))?;
    let controller = c.pick(a.controller, "controller")?.unwrap_or_else(|| "constant".into());
    let template = controller_template(&controller, model.horizon)?;
    let values = match c.pick(a.grid, "grid")? {
        Some(g) => parse_list(&g)?,
        None => default_values(template.kind(), model.horizon),
    };
    let plan = sweep(&template, &values, model.horizon, ctx.full_scale).map_err(|e| CliError::Usage(e.to_string()))?;
    let reference = match c.pick(a.reference, "reference")?.as_deref() {
        None | Some("fine") => plan.reference,
        Some("exact") => Reference::Exact,
        Some(other) => return Err(CliError::Usage(format!("unknown reference '{other}' (expected fine or exact)"))),
    };
    let expect = c.pick(a.expect_slope, "expect-slope")?.unwrap_or(0.5);
    let tol = c.pick(a.slope_tol, "slope-tol")?.unwrap_or(0.12);

    let mut cfg = StrongErrorConfig::new(model, method, plan.controllers, reference);
    cfg.samples = ctx.samples(2000);
    cfg.seed = ctx.seed;
    let report = strong_error(&cfg)?;
    let rate = report.rate();
    let passed = rate.is_some_and(|r| (r - expect).abs() <= tol);

    let mut human = format!("convergence: {} / {} / {}\n", report.model, method.name(), template.kind());
    for p in &report.points {
        human.push_str(&format!("  {}  evals {:.1}  error {}\n", p.controller, p.avg_evals, pm(p.error, p.std_err)));
    }
    let rate_text = rate.map_or("n/a".to_string(), |r| format!("{r:.4}"));
    human.push_str(&format!("  rate {rate_text} (expected {expect} ± {tol}); {} flagged samples\n", report.flagged));

    let mut s = Summary::new();
    s.push("experiment", "convergence");
    s.push("model", &report.model);
    s.push("method", method.name());
    s.push("controller", template.kind());
    s.push("samples", report.used());
    s.push("flagged", report.flagged);
    s.push("slope", rate.map_or("nan".to_string(), |r| r.to_string()));
    s.push("expected_slope", expect);
    s.push("slope_tol", tol);
    ctx.finish(&strong_rows("convergence", &report), s, &human, passed)
}

fn counterexample(a: CounterexampleArgs) -> Result<bool, CliError> {
    let ctx = Context::new(a.common, "counterexample", &["horizon", "steps"])?;
    let horizon = ctx.config.pick(a.horizon, "horizon")?.unwrap_or(1.0);
    let steps = ctx.config.pick(a.steps, "steps")?.unwrap_or(8);
    let samples = ctx.samples(200_000);
    let r = counterexample_experiment(horizon, steps, samples, ctx.seed)?;
    let rows = vec![
        CsvRow::estimate(
            "counterexample-skipping",
            "counterexample",
            steps as f64,
            samples,
            r.skipping.mean,
            r.skipping.std_err,
        ),
        CsvRow::estimate(
            "counterexample-control",
            "counterexample",
            steps as f64,
            samples,
            r.control.mean,
            r.control.std_err,
        ),
    ];
    let human = format!(
        "counterexample: T={horizon}, N={steps}, M={samples}\n  skipping controller E[Y_N] = {} (target {})\n  no-skip control     E[Y_N] = {} (target 0)\n",
        pm(r.skipping.mean, r.skipping.std_err),
        r.target,
        pm(r.control.mean, r.control.std_err)
    );
    let mut s = Summary::new();
    s.push("experiment", "counterexample");
    s.push("target", r.target);
    s.push("estimate", r.skipping.mean);
    s.push("stderr", r.skipping.std_err);
    s.push("control", r.control.mean);
    s.push("control_stderr", r.control.std_err);
    ctx.finish(&rows, s, &human, r.passed(SIGMAS))
}

fn moments(a: MomentsArgs) -> Result<bool, CliError> {
    let ctx = Context::new(a.common, "moments", &["dim"])?;
    let n = ctx.config.pick(a.dim, "dim")?.unwrap_or(2);
    let samples = ctx.samples(1_000_000);
    let r = gaussian_determinant_mc(n, samples, ctx.seed)?;
    let rows = vec![CsvRow::estimate(
        "moments",
        "gaussian-determinant",
        n as f64,
        samples,
        r.estimate.mean,
        r.estimate.std_err,
    )];
    let human = format!(
        "moments: E|det Z| for {n}x{n} standard Gaussian Z, M={samples}\n  estimate {} (target {})\n",
        pm(r.estimate.mean, r.estimate.std_err),
        r.target
    );
    let mut s = Summary::new();
    s.push("experiment", "moments");
    s.push("dim", n);
    s.push("target", r.target);
    s.push("estimate", r.estimate.mean);
    s.push("stderr", r.estimate.std_err);
    ctx.finish(&rows, s, &human, r.estimate.brackets(r.target, SIGMAS))
}

fn local_error(a: LocalErrorArgs) -> Result<bool, CliError> {
    let ctx = Context::new(a.common, "local-error", &["h", "fine-depth", "tol"])?;
    let h = match ctx.config.pick(a.h, "h")? {
        Some(h) => parse_number(&h)?,
        None => 1.0 / 256.0,
    };
    let depth = ctx.config.pick(a.fine_depth, "fine-depth")?.unwrap_or(7);
    let tol = ctx.config.pick(a.tol, "tol")?.unwrap_or(0.05);
    let samples = ctx.samples(100_000);
    let r = local_mse_ratio(h, depth, samples, ctx.seed)?;
    let rows = vec![
        CsvRow::estimate(
            "local-error-heun-1",
            "counterexample",
            h,
            samples,
            r.heun_one_step.mean,
            r.heun_one_step.std_err,
        ),
        CsvRow::estimate(
            "local-error-heun-2",
            "counterexample",
            h,
            samples,
            r.heun_two_step.mean,
            r.heun_two_step.std_err,
        ),
        CsvRow::estimate("local-error-spark", "counterexample", h, samples, r.spark.mean, r.spark.std_err),
        CsvRow::estimate(
            "local-error-spark/heun",
            "counterexample",
            h,
            samples,
            r.spark_over_heun.ratio,
            r.spark_over_heun.std_err,
        ),
        CsvRow::estimate(
            "local-error-heun2/heun",
            "counterexample",
            h,
            samples,
            r.two_step_over_heun.ratio,
            r.two_step_over_heun.std_err,
        ),
    ];
    let human = format!(
        "local-error: h={h}, reference depth {depth}, M={samples}\n  SPaRK / Heun        {} (target 1/3)\n  Heun 2-step / Heun  {} (target 1/2)\n",
        pm(r.spark_over_heun.ratio, r.spark_over_heun.std_err),
        pm(r.two_step_over_heun.ratio, r.two_step_over_heun.std_err)
    );
    let passed = (r.spark_over_heun.ratio - 1.0 / 3.0).abs() <= tol && (r.two_step_over_heun.ratio - 0.5).abs() <= tol;
    let mut s = Summary::new();
    s.push("experiment", "local-error");
    s.push("target_spark_over_heun", 1.0 / 3.0);
    s.push("spark_over_heun", r.spark_over_heun.ratio);
    s.push("target_two_step_over_heun", 0.5);
    s.push("two_step_over_heun", r.two_step_over_heun.ratio);
    ctx.finish(&rows, s, &human, passed)
}

fn holder(a: HolderArgs) -> Result<bool, CliError> {
    let ctx = Context::new(a.common, "holder", &["alpha", "depths", "fine-depth"])?;
    let alpha = ctx.config.pick(a.alpha, "alpha")?.unwrap_or(0.4);
    let depths = match ctx.config.pick(a.depths, "depths")? {
        Some(d) => parse_depths(&d)?,
        None => (2..=8).collect(),
    };
    let fine = ctx.config.pick(a.fine_depth, "fine-depth")?.unwrap_or(if ctx.full_scale { 14 } else { 12 });
    let seeds = ctx.samples.unwrap_or(50);
    let r = holder_decay(alpha, &depths, fine, seeds, ctx.seed)?;
    let mut rows = Vec::new();
    let mut human =
        format!("holder: alpha={alpha}, reference depth {fine}, {seeds} seeds\n  depth  level1     level2\n");
    for (i, d) in r.depths.iter().enumerate() {
        rows.push(CsvRow::estimate("holder-level1", "brownian", *d as f64, seeds, r.level1[i], f64::NAN));
        rows.push(CsvRow::estimate("holder-level2", "brownian", *d as f64, seeds, r.level2[i], f64::NAN));
        human.push_str(&format!("  {d:>5}  {:<9.5}  {:.5}\n", r.level1[i], r.level2[i]));
    }
    let (d1, d2) = r.decay();
    human.push_str(&format!("  last/first: level1 {d1:.4}, level2 {d2:.4} (target <= 0.5)\n"));
    let mut s = Summary::new();
    s.push("experiment", "holder");
    s.push("decay_level1", d1);
    s.push("decay_level2", d2);
    s.push("decreasing_fraction", r.decreasing_fraction);
    ctx.finish(&rows, s, &human, r.passed())
}

fn bridge(a: BridgeArgs) -> Result<bool, CliError> {
    let ctx = Context::new(a.common, "bridge", &["chain-nodes"])?;
    let nodes = ctx.config.pick(a.chain_nodes, "chain-nodes")?.unwrap_or(10_000);
    let samples = ctx.samples(100_000);
    let r = bridge_moment_tests(samples, nodes, ctx.seed)?;
    let mut rows = Vec::new();
    let mut human = format!("bridge: M={samples}, {} checks, {nodes} chaining nodes\n", r.checks.len());
    for c in &r.checks {
        rows.push(CsvRow::estimate(
            &format!("bridge:{}", c.name),
            "brownian",
            c.target,
            samples,
            c.estimate,
            c.std_err,
        ));
        if !c.passed() {
            human.push_str(&format!("  FAILED {}: {} vs {}\n", c.name, pm(c.estimate, c.std_err), c.target));
        }
    }
    rows.push(CsvRow::estimate("bridge:chain", "brownian", 0.0, nodes, r.chain_error, 0.0));
    human.push_str(&format!(
        "  {} of {} checks passed; max chaining error {:e}\n",
        r.checks.len() - r.failures().len(),
        r.checks.len(),
        r.chain_error
    ));
    let mut s = Summary::new();
    s.push("experiment", "bridge");
    s.push("checks", r.checks.len());
    s.push("failures", r.failures().len());
    s.push("chain_error", r.chain_error);
    ctx.finish(&rows, s, &human, r.passed())
}

fn previsible_bound(a: PrevisibleBoundArgs) -> Result<bool, CliError> {
    let ctx = Context::new(a.common, "previsible-bound", &["tolerance", "times"])?;
    let tolerance = match ctx.config.pick(a.tolerance, "tolerance")? {
        Some(t) => parse_number(&t)?,
        None => 0.01,
    };
    let times = match ctx.config.pick(a.times, "times")? {
        Some(t) => parse_list(&t)?,
        None => vec![0.5, 1.0, 2.0],
    };
    let samples = ctx.samples(100_000);
    let points = previsible_bound_check(tolerance, &times, samples, ctx.seed)?;
    let mut rows = Vec::new();
    let mut human = format!("previsible-bound: C={tolerance}, M={samples}\n");
    let mut s = Summary::new();
    s.push("experiment", "previsible-bound");
    for p in &points {
        rows.push(CsvRow::estimate("previsible-bound", "sabr", p.t, samples, p.estimate.mean, p.estimate.std_err));
        human.push_str(&format!(
            "  t={}: E[h] = {} >= bound {:.6}\n",
            p.t,
            pm(p.estimate.mean, p.estimate.std_err),
            p.bound
        ));
        s.push(format!("bound_t{}", p.t), p.bound);
        s.push(format!("estimate_t{}", p.t), p.estimate.mean);
    }
    let passed = points.iter().all(|p| p.passed(SIGMAS));
    ctx.finish(&rows, s, &human, passed)
}

fn regression(a: RegressionArgs) -> Result<bool, CliError> {
    let ctx = Context::new(a.common, "regression", &["fine-depth", "tol"])?;
    let depth = ctx.config.pick(a.fine_depth, "fine-depth")?.unwrap_or(5);
    let tol = ctx.config.pick(a.tol, "tol")?.unwrap_or(0.02);
    let samples = ctx.samples(1_000_000);
    let r = levy_regression(depth, samples, ctx.seed)?;
    let mut rows = Vec::new();
    let mut human = format!("regression: M={samples}, reference depth {depth}\n");
    let mut s = Summary::new();
    s.push("experiment", "regression");
    for (label, reg) in [("full", &r.full), ("compact", &r.compact)] {
        for i in 0..reg.regressors.len() {
            let name = format!("regression-{label}:{}", reg.regressors[i]);
            rows.push(CsvRow::estimate(
                &name,
                "brownian",
                reg.expected[i],
                samples,
                reg.coefficients[i],
                reg.std_errs[i],
            ));
            human.push_str(&format!(
                "  {label:<7} {:<12} {} (expected {})\n",
                reg.regressors[i],
                pm(reg.coefficients[i], reg.std_errs[i]),
                reg.expected[i]
            ));
        }
        s.push(format!("max_deviation_{label}"), reg.max_deviation());
    }
    let passed = r.full.max_deviation() <= tol && r.compact.max_deviation() <= tol;
    ctx.finish(&rows, s, &human, passed)
}
