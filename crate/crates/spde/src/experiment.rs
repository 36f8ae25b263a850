//! Configuration-driven convergence experiments: spatial and temporal
//! order studies, localization decay, and the characteristics
//! cross-check.
//!
//! Error metric throughout: `max_i max_{x in B_{nu R}} |a - b|^2`,
//! estimated over Monte Carlo samples by the plain sample mean with its
//! standard error. Within a sample every ladder level consumes
//! increments derived from one fine path, so comparisons are pathwise.
//! Levels whose error sits at or below ten standard errors are excluded
//! from slope fits (the noise floor), as are exact zeros.

use crate::cutoff::{truncated_reference_data, CutoffFlavor, CutoffFn};
use crate::error::{Error, Result};
use crate::expr;
use crate::noise::NoisePath;
use crate::oracle::{estimate_u, DerivativeMode, FlowConfig};
use crate::par;
use crate::problem::{ChannelFn, DiscreteCoeffs, EntryFn, ScalarFn};
use crate::problems::{builtin, from_discrete_1d, truncate_derivatives_1d, Problem};
use crate::report::{fit_line, ConvergenceReport, EmitFormat, ReportRow, SlopeFit};
use crate::richardson;
use crate::solver::{
    localize, run, run_collect, solver_grid, LocalizedProblem, Stepper, StepperOptions, Trajectory,
};
use crate::stencil::{Grid, StencilSet};
use std::io::Write;
use std::sync::Arc;

/// How the time step is chosen per spatial ladder level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauPolicy {
    /// One fixed step for every level (required for self-referencing
    /// ladders, where all levels must share one noise path).
    Fixed,
    /// `tau ~ h^4` per level, making the time error scale with the
    /// extrapolated spatial error. Levels then run on separate noise
    /// paths, which is statistically sound only against an analytic
    /// reference (the error expectation does not depend on coupling).
    QuarticInH,
}

impl std::str::FromStr for TauPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "h4" | "quartic" => Ok(Self::QuarticInH),
            other => Err(format!("unknown tau policy `{other}` (fixed, h4)")),
        }
    }
}

/// A problem defined in the configuration text: 1D discrete
/// coefficients over an integer stencil, with expressions in `t`, `x`.
#[derive(Debug, Clone)]
pub struct InlineProblem {
    pub name: String,
    pub channels: usize,
    pub horizon: f64,
    pub stencil: Vec<i64>,
    pub bound: f64,
    pub psi: String,
    pub f: String,
    /// `(channel, expression)`, 1-based channel in the config keys.
    pub g: Vec<(usize, String)>,
    /// `(lambda ordinal, kappa ordinal, expression)`.
    pub fra: Vec<(usize, usize, String)>,
    /// `(lambda ordinal, channel, expression)`.
    pub frb: Vec<(usize, usize, String)>,
}

impl Default for InlineProblem {
    fn default() -> Self {
        Self {
            name: "inline".into(),
            channels: 1,
            horizon: 1.0,
            stencil: vec![1],
            bound: 1.0,
            psi: "0".into(),
            f: "0".into(),
            g: Vec::new(),
            fra: Vec::new(),
            frb: Vec::new(),
        }
    }
}

type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

impl InlineProblem {
    pub fn compile(&self) -> Result<Problem> {
        let stencil = StencilSet::line(&self.stencil)?;
        let m = stencil.len();
        let mut time_dependent = false;
        let mut compile_expr = |src: &str| -> Result<Fn2> {
            let e = expr::parse(src)?;
            time_dependent |= e.uses_time();
            Ok(e.into_fn())
        };
        let mut fra_table: Vec<Option<Fn2>> = vec![None; m * m];
        for (l, k, src) in &self.fra {
            if *l >= m || *k >= m {
                return Err(Error::Config(format!(
                    "fra_{l}_{k} is out of range for a stencil with {m} vectors"
                )));
            }
            fra_table[l * m + k] = Some(compile_expr(src)?);
        }
        let mut frb_table: Vec<Option<Fn2>> = vec![None; m * self.channels];
        for (l, k, src) in &self.frb {
            if *l >= m || *k >= self.channels {
                return Err(Error::Config(format!(
                    "frb_{l}_{} is out of range ({m} vectors, {} channels)",
                    k + 1,
                    self.channels
                )));
            }
            frb_table[l * self.channels + k] = Some(compile_expr(src)?);
        }
        let mut g_table: Vec<Option<Fn2>> = vec![None; self.channels];
        for (k, src) in &self.g {
            if *k >= self.channels {
                return Err(Error::Config(format!("g_{} exceeds channel count", k + 1)));
            }
            g_table[*k] = Some(compile_expr(src)?);
        }
        let psi_fn = compile_expr(&self.psi)?;
        let f_fn = compile_expr(&self.f)?;

        let channels = self.channels;
        let fra: EntryFn =
            Arc::new(move |t, x, l, k| fra_table[l * m + k].as_ref().map_or(0.0, |f| f(t, x[0])));
        let frb: EntryFn = Arc::new(move |t, x, l, k| {
            frb_table[l * channels + k]
                .as_ref()
                .map_or(0.0, |f| f(t, x[0]))
        });
        let g: ChannelFn = Arc::new(move |t, x, k| g_table[k].as_ref().map_or(0.0, |f| f(t, x[0])));
        let psi: ScalarFn = Arc::new(move |t, x| psi_fn(t, x[0]));
        let f: ScalarFn = Arc::new(move |t, x| f_fn(t, x[0]));
        let mut dc = DiscreteCoeffs::new(stencil, self.channels, fra, frb, self.bound);
        if !time_dependent {
            dc = dc.autonomous();
        }
        Ok(from_discrete_1d(&self.name, dc, psi, f, g, self.horizon))
    }
}

/// Everything a study needs; built from defaults, a config file, and
/// command-line overrides (in that order).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: String,
    pub inline_problem: Option<InlineProblem>,
    /// Overrides the problem's horizon when set.
    pub horizon: Option<f64>,
    /// Truncation plateau radius `R`.
    pub radius: f64,
    /// Evaluation-ball fraction.
    pub nu: f64,
    /// Base (coarsest) spatial mesh.
    pub h: f64,
    /// Spatial ladder length.
    pub h_levels: usize,
    /// Richardson depth `r`.
    pub extrapolation: usize,
    /// Base (coarsest) time step.
    pub tau: f64,
    pub tau_levels: usize,
    pub tau_policy: TauPolicy,
    /// Extra halvings separating the time-study reference from the
    /// finest fitted level. At 0 the finest level is the reference
    /// itself (its zero-error row falls to the noise-floor guard);
    /// larger values keep the `tau - tau_ref` bias out of the fit.
    pub ref_refine: usize,
    /// Monte Carlo samples.
    pub samples: usize,
    pub seed: u64,
    pub out_dir: Option<String>,
    pub formats: Vec<EmitFormat>,
    pub lin_tol: f64,
    pub max_iter_factor: usize,
    pub cutoff: CutoffFlavor,
    /// Localization ladder radii and reference radius.
    pub radius_ladder: Vec<f64>,
    pub radius_ref: f64,
    /// Oracle check controls.
    pub substeps: usize,
    pub inner_samples: usize,
    pub eval_x: f64,
    pub oracle_allowance: f64,
    pub inv_tol: f64,
    /// Wall-clock stamp for reports; empty keeps output reproducible.
    pub timestamp: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: "paper-example".into(),
            inline_problem: None,
            horizon: None,
            radius: 10.0,
            nu: 0.9,
            h: 0.1,
            h_levels: 3,
            extrapolation: 0,
            tau: 1e-3,
            tau_levels: 5,
            tau_policy: TauPolicy::Fixed,
            ref_refine: 2,
            samples: 10,
            seed: 1,
            out_dir: None,
            formats: vec![EmitFormat::Csv, EmitFormat::Json],
            lin_tol: 1e-11,
            max_iter_factor: 10,
            cutoff: CutoffFlavor::ArctanBump,
            radius_ladder: vec![4.0, 6.0, 8.0],
            radius_ref: 16.0,
            substeps: 4,
            inner_samples: 10_000,
            eval_x: 0.0,
            oracle_allowance: 0.02,
            inv_tol: 1e-7,
            timestamp: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::Config(format!(
                "nu must lie in (0, 1), got {}",
                self.nu
            )));
        }
        if self.h_levels == 0 || self.tau_levels == 0 || self.radius_ladder.is_empty() {
            return Err(Error::Config("ladders must be nonempty".into()));
        }
        if self.radius_ladder.iter().any(|r| !(r.is_finite() && *r > 0.0))
            || !self.radius_ref.is_finite()
        {
            return Err(Error::Config("ladder radii must be positive and finite".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("need at least one sample".into()));
        }
        if !(self.h > 0.0 && self.tau > 0.0 && self.radius > 0.0) {
            return Err(Error::Config("h, tau, R must be positive".into()));
        }
        if !self.substeps.is_power_of_two() {
            return Err(Error::Config(format!(
                "substeps must be a power of two so solver and oracle share one path, got {}",
                self.substeps
            )));
        }
        Ok(())
    }

    /// Parses the plain-text `key = value` format with optional
    /// `[experiment]` and `[problem]` sections; bare keys belong to the
    /// experiment section. Later assignments win.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        #[derive(PartialEq)]
        enum Section {
            Experiment,
            Problem,
        }
        let mut section = Section::Experiment;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = match name.trim() {
                    "experiment" => Section::Experiment,
                    "problem" => Section::Problem,
                    other => {
                        return Err(Error::Config(format!(
                            "line {}: unknown section [{other}]",
                            lineno + 1
                        )))
                    }
                };
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let fail = |what: &str| Error::Config(format!("line {}: {what}", lineno + 1));
            match section {
                Section::Experiment => {
                    self.set_experiment_key(key, value)
                        .map_err(|e| fail(&e.to_string()))?;
                }
                Section::Problem => {
                    let inline = self.inline_problem.get_or_insert_with(Default::default);
                    set_problem_key(inline, key, value).map_err(|e| fail(&e.to_string()))?;
                    self.problem = inline.name.clone();
                }
            }
        }
        Ok(())
    }

    fn set_experiment_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "problem" => self.problem = value.to_string(),
            "T" | "horizon" => self.horizon = Some(num(key, value)?),
            "R" | "radius" => self.radius = num(key, value)?,
            "nu" => self.nu = num(key, value)?,
            "h" => self.h = num(key, value)?,
            "h_levels" => self.h_levels = num(key, value)?,
            "r" | "extrapolation" => self.extrapolation = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "tau_levels" => self.tau_levels = num(key, value)?,
            "tau_policy" => {
                self.tau_policy = value.parse().map_err(Error::Config)?;
            }
            "ref_refine" => self.ref_refine = num(key, value)?,
            "samples" | "M" => self.samples = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out_dir = Some(value.to_string()),
            "format" | "formats" => {
                let mut fmts = Vec::new();
                for part in value.split(',') {
                    fmts.push(part.trim().parse::<EmitFormat>().map_err(Error::Config)?);
                }
                self.formats = fmts;
            }
            "lin_tol" => self.lin_tol = num(key, value)?,
            "max_iter_factor" => self.max_iter_factor = num(key, value)?,
            "cutoff" => self.cutoff = value.parse().map_err(Error::Config)?,
            "radius_ladder" => {
                let mut ladder = Vec::new();
                for part in value.split(',') {
                    ladder.push(num::<f64>(key, part.trim())?);
                }
                self.radius_ladder = ladder;
            }
            "radius_ref" => self.radius_ref = num(key, value)?,
            "substeps" => self.substeps = num(key, value)?,
            "inner_samples" | "m_inner" => self.inner_samples = num(key, value)?,
            "eval_x" => self.eval_x = num(key, value)?,
            "allowance" | "oracle_allowance" => self.oracle_allowance = num(key, value)?,
            "inv_tol" => self.inv_tol = num(key, value)?,
            "timestamp" => self.timestamp = Some(value.to_string()),
            other => {
                return Err(Error::Config(format!("unknown experiment key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn stepper_options(&self) -> StepperOptions {
        StepperOptions {
            lin_tol: self.lin_tol,
            max_iter_factor: self.max_iter_factor,
            ..StepperOptions::default()
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            substeps: self.substeps,
            derivative_mode: DerivativeMode::FiniteDifference { eps_scale: 1e-5 },
            inner_samples: self.inner_samples,
            inv_tol: self.inv_tol,
            ..FlowConfig::default()
        }
    }

    /// Deterministic key-value echo for report metadata.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut pairs = vec![
            ("problem".into(), self.problem.clone()),
            ("R".into(), self.radius.to_string()),
            ("nu".into(), self.nu.to_string()),
            ("h".into(), self.h.to_string()),
            ("h_levels".into(), self.h_levels.to_string()),
            ("r".into(), self.extrapolation.to_string()),
            ("tau".into(), self.tau.to_string()),
            ("tau_levels".into(), self.tau_levels.to_string()),
            (
                "tau_policy".into(),
                match self.tau_policy {
                    TauPolicy::Fixed => "fixed".into(),
                    TauPolicy::QuarticInH => "h4".into(),
                },
            ),
            ("samples".into(), self.samples.to_string()),
            ("seed".into(), self.seed.to_string()),
            (
                "radius_ladder".into(),
                self.radius_ladder
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("radius_ref".into(), self.radius_ref.to_string()),
            ("substeps".into(), self.substeps.to_string()),
            ("inner_samples".into(), self.inner_samples.to_string()),
        ];
        if let Some(t) = self.horizon {
            pairs.push(("T".into(), t.to_string()));
        }
        pairs.sort();
        pairs
    }

    pub fn resolve_problem(&self) -> Result<Problem> {
        let mut p = match &self.inline_problem {
            Some(inline) if inline.name == self.problem => inline.compile()?,
            _ => builtin(&self.problem)?,
        };
        if let Some(t) = self.horizon {
            p = p.with_horizon(t);
        }
        Ok(p)
    }
}

fn set_problem_key(p: &mut InlineProblem, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse::<T>()
            .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
    }
    if let Some(rest) = key.strip_prefix("fra_") {
        let (l, k) = rest
            .split_once('_')
            .ok_or_else(|| Error::Config(format!("expected fra_<l>_<k>, got `{key}`")))?;
        p.fra.push((num(key, l)?, num(key, k)?, value.to_string()));
        return Ok(());
    }
    if let Some(rest) = key.strip_prefix("frb_") {
        let (l, k) = rest
            .split_once('_')
            .ok_or_else(|| Error::Config(format!("expected frb_<l>_<channel>, got `{key}`")))?;
        let channel: usize = num(key, k)?;
        if channel == 0 {
            return Err(Error::Config("channels are 1-based in frb keys".into()));
        }
        p.frb.push((num(key, l)?, channel - 1, value.to_string()));
        return Ok(());
    }
    if let Some(k) = key.strip_prefix("g_") {
        let channel: usize = num(key, k)?;
        if channel == 0 {
            return Err(Error::Config("channels are 1-based in g keys".into()));
        }
        p.g.push((channel - 1, value.to_string()));
        return Ok(());
    }
    match key {
        "name" => p.name = value.to_string(),
        "channels" => p.channels = num(key, value)?,
        "T" | "horizon" => p.horizon = num(key, value)?,
        "bound" | "K" => p.bound = num(key, value)?,
        "psi" => p.psi = value.to_string(),
        "f" => p.f = value.to_string(),
        "stencil" => {
            let mut offsets = Vec::new();
            for part in value.split([',', ' ']).filter(|s| !s.is_empty()) {
                offsets.push(num::<i64>(key, part)?);
            }
            p.stencil = offsets;
        }
        other => return Err(Error::Config(format!("unknown problem key `{other}`"))),
    }
    Ok(())
}

/// `max_i max_{x in B_{nu R}} |a - b|^2` for two trajectories on one
/// grid and time ladder.
pub fn error_metric(
    a: &Trajectory,
    b: &Trajectory,
    grid: &Grid,
    nu: f64,
    radius: f64,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "trajectories have {} and {} time levels",
            a.len(),
            b.len()
        )));
    }
    let ball = grid.points_in_ball(nu * radius);
    let mut worst: f64 = 0.0;
    for (fa, fb) in a.fields.iter().zip(&b.fields) {
        if fa.len() != grid.len() || fb.len() != grid.len() {
            return Err(Error::ShapeMismatch("field/grid size mismatch".into()));
        }
        for &p in &ball {
            let d = fa[p] - fb[p];
            worst = worst.max(d * d);
        }
    }
    Ok(worst)
}

fn steps_for(horizon: f64, tau: f64) -> Result<usize> {
    let n = (horizon / tau).round();
    if n < 1.0 || ((n * tau - horizon) / horizon).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "tau = {tau} does not divide the horizon {horizon}"
        )));
    }
    Ok(n as usize)
}

/// Index map from each point of `coarse` to the identical point of
/// `fine` (whose mesh is `coarse.h / 2^k`, boxes may differ).
fn restriction_map(coarse: &Grid, fine: &Grid) -> Result<Vec<usize>> {
    let ratio = coarse.h() / fine.h();
    let level = ratio.log2().round();
    if level < 0.0 || (ratio - level.exp2()).abs() > 1e-12 * ratio {
        return Err(Error::ShapeMismatch(format!(
            "mesh ratio {ratio} is not a power of two"
        )));
    }
    let scale = 1i64 << level as u32;
    (0..coarse.len())
        .map(|p| {
            let key: Vec<i64> = coarse.coords(p).iter().map(|&c| c * scale).collect();
            fine.index_of(&key).ok_or(Error::NestingViolation {
                point: coarse.coords(p).to_vec(),
            })
        })
        .collect()
}

/// Errors that mean "this Monte Carlo sample failed" rather than "the
/// experiment is misconfigured".
fn is_sample_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::StepFailure { .. }
            | Error::LinearSolve { .. }
            | Error::BlowUp { .. }
            | Error::Inversion(_)
    )
}

struct SampleStats {
    mse: Vec<f64>,
    stderr: Vec<f64>,
    used: usize,
    failures: usize,
    fingerprint: String,
}

/// Reduces per-sample, per-level squared errors deterministically in
/// sample order; propagates the first non-sample error eagerly.
fn reduce_samples(results: Vec<Result<(Vec<f64>, u64)>>, levels: usize) -> Result<SampleStats> {
    let mut per_level: Vec<Vec<f64>> = vec![Vec::new(); levels];
    let mut failures = 0usize;
    let mut first_failure: Option<Error> = None;
    let mut fp = 0xcbf2_9ce4_8422_2325u64;
    for r in results {
        match r {
            Ok((errs, origin)) => {
                for (lv, e) in errs.into_iter().enumerate() {
                    per_level[lv].push(e);
                }
                for b in origin.to_le_bytes() {
                    fp = (fp ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
            Err(e) if is_sample_failure(&e) => {
                failures += 1;
                if first_failure.is_none() {
                    first_failure = Some(e);
                }
            }
            Err(e) => return Err(e),
        }
    }
    let used = per_level[0].len();
    if used == 0 {
        return Err(first_failure.unwrap_or_else(|| Error::Domain("no samples succeeded".into())));
    }
    let mut mse = Vec::with_capacity(levels);
    let mut stderr = Vec::with_capacity(levels);
    for values in &per_level {
        let mean = values.iter().sum::<f64>() / used as f64;
        mse.push(mean);
        if used > 1 {
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (used - 1) as f64;
            stderr.push((var / used as f64).sqrt());
        } else {
            stderr.push(0.0);
        }
    }
    Ok(SampleStats {
        mse,
        stderr,
        used,
        failures,
        fingerprint: format!("{fp:016x}"),
    })
}

/// Rows admitted to a slope fit: positive error above the noise floor.
fn admitted(rows: &[ReportRow]) -> Vec<&ReportRow> {
    rows.iter()
        .filter(|r| r.mse > 0.0 && r.mse > 10.0 * r.stderr)
        .collect()
}

fn finish_report(
    study: &str,
    cfg: &ExperimentConfig,
    problem: &str,
    reference: String,
    rows: Vec<ReportRow>,
    fit: Option<SlopeFit>,
    stats: &SampleStats,
) -> ConvergenceReport {
    ConvergenceReport {
        study: study.to_string(),
        problem: problem.to_string(),
        reference,
        nu: cfg.nu,
        samples: stats.used,
        seed: cfg.seed,
        rows,
        fit,
        failures: stats.failures,
        valid: stats.failures * 20 <= cfg.samples,
        coupling_fingerprint: stats.fingerprint.clone(),
        config_echo: cfg.echo(),
        timestamp: cfg.timestamp.clone().unwrap_or_default(),
    }
}

/// An extrapolated ladder entry stepping all of its sub-grids in
/// lockstep; `value_at` reads the weighted combination at a point of
/// the entry's coarsest grid.
struct Group<'a> {
    steppers: Vec<Stepper<'a>>,
    weights: &'a [f64],
    maps: &'a [Vec<usize>],
}

impl<'a> Group<'a> {
    fn new(
        lp: &'a LocalizedProblem,
        grids: &'a [Grid],
        maps: &'a [Vec<usize>],
        weights: &'a [f64],
        noise: &'a NoisePath,
        tau: f64,
        n: usize,
        opts: &StepperOptions,
    ) -> Result<Self> {
        let steppers = grids
            .iter()
            .map(|g| Stepper::new(lp, g, noise, tau, n, opts.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            steppers,
            weights,
            maps,
        })
    }

    fn advance(&mut self) -> Result<()> {
        for s in &mut self.steppers {
            s.advance()?;
        }
        Ok(())
    }

    #[inline]
    fn value_at(&self, p: usize) -> f64 {
        self.weights
            .iter()
            .zip(&self.steppers)
            .zip(self.maps)
            .map(|((w, s), map)| w * s.values()[map[p]])
            .sum()
    }
}

/// Convergence study in the spatial mesh. Reference: the analytic
/// solution when the problem has one, otherwise the extrapolated
/// solution one ladder level finer (which requires the fixed tau
/// policy so all levels share one noise path).
pub fn run_convergence_space(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let problem = cfg.resolve_problem()?;
    let horizon = problem.horizon();
    let zeta = CutoffFn::with_flavor(cfg.cutoff, cfg.radius);
    let lp = localize(
        &problem.discrete,
        &problem.continuous.psi,
        &problem.continuous.f,
        &problem.continuous.g,
        &zeta,
    );
    let depth = cfg.extrapolation;
    let weights = richardson::weights(depth)?.floats().to_vec();
    let levels = cfg.h_levels;
    let self_ref = problem.analytic.is_none();
    if self_ref && cfg.tau_policy != TauPolicy::Fixed {
        return Err(Error::Config(
            "self-referencing space studies need tau_policy = fixed".into(),
        ));
    }
    let group_count = levels + usize::from(self_ref);

    // Per-group meshes, grids, restriction maps. Every grid in the
    // study shares one box (sized by the coarsest mesh's stencil halo)
    // so nesting is exact across all levels.
    let group_h: Vec<f64> = (0..group_count)
        .map(|j| cfg.h / (1u64 << j) as f64)
        .collect();
    let stencil = lp.coeffs.stencil().clone();
    let box_radius = if lp.support_radius.is_finite() {
        lp.support_radius + 2.0 * cfg.h * stencil.max_norm()
    } else {
        cfg.radius + 3.0
    };
    let mut grids: Vec<Vec<Grid>> = Vec::with_capacity(group_count);
    let mut maps: Vec<Vec<Vec<usize>>> = Vec::with_capacity(group_count);
    for h in &group_h {
        let level_grids: Vec<Grid> = (0..=depth)
            .map(|s| crate::stencil::build_grid(&stencil, h / (1u64 << s) as f64, box_radius))
            .collect::<Result<_>>()?;
        let level_maps: Vec<Vec<usize>> = level_grids
            .iter()
            .map(|g| restriction_map(&level_grids[0], g))
            .collect::<Result<_>>()?;
        grids.push(level_grids);
        maps.push(level_maps);
    }
    let taus: Vec<(f64, usize)> = match cfg.tau_policy {
        TauPolicy::Fixed => {
            let n = steps_for(horizon, cfg.tau)?;
            vec![(horizon / n as f64, n); group_count]
        }
        TauPolicy::QuarticInH => group_h
            .iter()
            .map(|h| {
                let n = (horizon / h.powi(4)).ceil().max(1.0) as usize;
                (horizon / n as f64, n)
            })
            .collect(),
    };
    // Evaluation sets: ball indices and positions on each level's
    // output grid, plus self-reference lookups into the finest group.
    let eval_ball: Vec<Vec<usize>> = (0..levels)
        .map(|j| grids[j][0].points_in_ball(cfg.nu * cfg.radius))
        .collect();
    let ref_maps: Vec<Vec<usize>> = if self_ref {
        (0..levels)
            .map(|j| restriction_map(&grids[j][0], &grids[levels][0]))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let opts = cfg.stepper_options();
    let analytic = problem.analytic.clone();
    let channels = problem.channels();

    let results: Vec<Result<(Vec<f64>, u64)>> = par::map_indexed(cfg.samples, |m| {
        let shared_fixed = matches!(cfg.tau_policy, TauPolicy::Fixed);
        let base_path = if shared_fixed {
            Some(NoisePath::generate(
                cfg.seed, m as u64, taus[0].1, taus[0].0, channels,
            )?)
        } else {
            None
        };
        let mut errors = vec![0.0f64; levels];
        if self_ref {
            // Lockstep: all ladder levels plus the finer reference
            // consume the same path at the same tau.
            let path = base_path.as_ref().expect("fixed policy");
            let (tau, n) = taus[0];
            let mut groups: Vec<Group> = (0..group_count)
                .map(|j| Group::new(&lp, &grids[j], &maps[j], &weights, path, tau, n, &opts))
                .collect::<Result<_>>()?;
            for i in 0..=n {
                if i > 0 {
                    for g in groups.iter_mut() {
                        g.advance()?;
                    }
                }
                let (ladder, reference) = groups.split_at(levels);
                let reference = &reference[0];
                for (j, group) in ladder.iter().enumerate() {
                    let mut worst = errors[j];
                    for &p in &eval_ball[j] {
                        let d = group.value_at(p) - reference.value_at(ref_maps[j][p]);
                        let d2 = d * d;
                        if d2 > worst {
                            worst = d2;
                        }
                    }
                    errors[j] = worst;
                }
            }
            Ok((errors, path.origin_fingerprint()))
        } else {
            let u = analytic.as_ref().expect("analytic reference");
            let mut origin = 0u64;
            for j in 0..levels {
                let (tau, n) = taus[j];
                let path_storage;
                let path = if let Some(p) = base_path.as_ref() {
                    p
                } else {
                    path_storage = NoisePath::generate(cfg.seed, m as u64, n, tau, channels)?;
                    &path_storage
                };
                origin = path.origin_fingerprint();
                let mut group =
                    Group::new(&lp, &grids[j], &maps[j], &weights, path, tau, n, &opts)?;
                let mut worst = 0.0f64;
                for i in 0..=n {
                    if i > 0 {
                        group.advance()?;
                    }
                    let t = i as f64 * tau;
                    let w_row = path.value_row(i);
                    for &p in &eval_ball[j] {
                        let x = grids[j][0].position(p);
                        let d = group.value_at(p) - u(t, &x, w_row);
                        let d2 = d * d;
                        if d2 > worst {
                            worst = d2;
                        }
                    }
                }
                errors[j] = worst;
            }
            Ok((errors, origin))
        }
    });

    let stats = reduce_samples(results, levels)?;
    let rows: Vec<ReportRow> = (0..levels)
        .map(|j| ReportRow {
            level: j,
            h: group_h[j],
            tau: taus[j].0,
            radius: cfg.radius,
            mse: stats.mse[j],
            rmse: stats.mse[j].sqrt(),
            stderr: stats.stderr[j],
            samples: stats.used,
        })
        .collect();
    let keep = admitted(&rows);
    let xs: Vec<f64> = keep.iter().map(|r| r.h.ln()).collect();
    let ys: Vec<f64> = keep.iter().map(|r| r.rmse.ln()).collect();
    let fit = fit_line("log_h", "log_rmse", &xs, &ys);
    let reference = if self_ref {
        format!("self-extrapolated (h = {})", group_h[levels])
    } else {
        "analytic".to_string()
    };
    Ok(finish_report(
        "converge-space",
        cfg,
        &problem.name,
        reference,
        rows,
        fit,
        &stats,
    ))
}

/// Convergence study in the time step against the finest-tau run:
/// every ladder level consumes a coarsening of one fine path per
/// sample, and the reference runs `ref_refine` halvings below the
/// finest fitted level (so the `tau - tau_ref` self-comparison bias
/// stays out of the fitted slope).
pub fn run_convergence_time(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    if cfg.tau_levels < 2 {
        return Err(Error::Config(
            "the time study needs at least two tau levels".into(),
        ));
    }
    let problem = cfg.resolve_problem()?;
    let horizon = problem.horizon();
    let zeta = CutoffFn::with_flavor(cfg.cutoff, cfg.radius);
    let lp = localize(
        &problem.discrete,
        &problem.continuous.psi,
        &problem.continuous.f,
        &problem.continuous.g,
        &zeta,
    );
    let grid = solver_grid(&lp, cfg.h, cfg.radius + 3.0)?;
    let levels = cfg.tau_levels;
    let n_base = steps_for(horizon, cfg.tau)?;
    let ns: Vec<usize> = (0..levels).map(|j| n_base << j).collect();
    let taus: Vec<f64> = ns.iter().map(|&n| horizon / n as f64).collect();
    let n_ref = ns[levels - 1] << cfg.ref_refine;
    let tau_ref = horizon / n_ref as f64;
    if (n_ref + 1) * grid.len() > 50_000_000 {
        return Err(Error::Config(
            "reference trajectory would not fit in memory; reduce tau_levels or the grid".into(),
        ));
    }
    let ball = grid.points_in_ball(cfg.nu * cfg.radius);
    let opts = cfg.stepper_options();
    let channels = problem.channels();

    let results: Vec<Result<(Vec<f64>, u64)>> = par::map_indexed(cfg.samples, |m| {
        let fine = NoisePath::generate(cfg.seed, m as u64, n_ref, tau_ref, channels)?;
        let reference = run_collect(&lp, &grid, &fine, tau_ref, n_ref, &opts)?;
        let mut errors = Vec::with_capacity(levels);
        for j in 0..levels {
            let factor = n_ref / ns[j];
            let worst = if factor == 1 {
                0.0 // the level coincides with the reference
            } else {
                let path = fine.coarsen(factor)?;
                debug_assert_eq!(path.origin_fingerprint(), fine.origin_fingerprint());
                let mut worst = 0.0f64;
                run(&lp, &grid, &path, taus[j], ns[j], &opts, |i, _, v| {
                    let ref_field = &reference.fields[i * factor];
                    for &p in &ball {
                        let d = v[p] - ref_field[p];
                        let d2 = d * d;
                        if d2 > worst {
                            worst = d2;
                        }
                    }
                    Ok(())
                })?;
                worst
            };
            errors.push(worst);
        }
        Ok((errors, fine.origin_fingerprint()))
    });

    let stats = reduce_samples(results, levels)?;
    let rows: Vec<ReportRow> = (0..levels)
        .map(|j| ReportRow {
            level: j,
            h: cfg.h,
            tau: taus[j],
            radius: cfg.radius,
            mse: stats.mse[j],
            rmse: stats.mse[j].sqrt(),
            stderr: stats.stderr[j],
            samples: stats.used,
        })
        .collect();
    let keep = admitted(&rows);
    let xs: Vec<f64> = keep.iter().map(|r| r.tau.ln()).collect();
    let ys: Vec<f64> = keep.iter().map(|r| r.mse.ln()).collect();
    let fit = fit_line("log_tau", "log_mse", &xs, &ys);
    Ok(finish_report(
        "converge-time",
        cfg,
        &problem.name,
        format!("self (tau = {tau_ref})"),
        rows,
        fit,
        &stats,
    ))
}

/// Localization study: truncation at each ladder radius against the
/// reference radius, errors measured on each level's own ball
/// `B_{nu R}`; expected to decay superexponentially in `R`.
pub fn run_localization(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let problem = cfg.resolve_problem()?;
    let horizon = problem.horizon();
    let mut ladder = cfg.radius_ladder.clone();
    ladder.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r_max = *ladder.last().unwrap();
    if cfg.radius_ref < 2.0 * r_max {
        return Err(Error::Config(format!(
            "reference radius {} must be at least twice the largest ladder radius {r_max}",
            cfg.radius_ref
        )));
    }
    let n = steps_for(horizon, cfg.tau)?;
    let localize_at = |r: f64| -> LocalizedProblem {
        let zeta = CutoffFn::with_flavor(cfg.cutoff, r);
        localize(
            &problem.discrete,
            &problem.continuous.psi,
            &problem.continuous.f,
            &problem.continuous.g,
            &zeta,
        )
    };
    let lps: Vec<LocalizedProblem> = ladder.iter().map(|&r| localize_at(r)).collect();
    let lp_ref = localize_at(cfg.radius_ref);
    let grids: Vec<Grid> = lps
        .iter()
        .map(|lp| solver_grid(lp, cfg.h, cfg.radius_ref + 3.0))
        .collect::<Result<_>>()?;
    let grid_ref = solver_grid(&lp_ref, cfg.h, cfg.radius_ref + 3.0)?;
    if (n + 1) * grid_ref.len() > 50_000_000 {
        return Err(Error::Config(
            "reference trajectory would not fit in memory; reduce the ladder".into(),
        ));
    }
    // Each level's evaluation ball, with lookups into the reference grid.
    let balls: Vec<Vec<usize>> = grids
        .iter()
        .zip(&ladder)
        .map(|(g, &r)| g.points_in_ball(cfg.nu * r))
        .collect();
    let ref_maps: Vec<Vec<usize>> = grids
        .iter()
        .map(|g| restriction_map(g, &grid_ref))
        .collect::<Result<_>>()?;
    let opts = cfg.stepper_options();
    let channels = problem.channels();

    let results: Vec<Result<(Vec<f64>, u64)>> = par::map_indexed(cfg.samples, |m| {
        let path = NoisePath::generate(cfg.seed, m as u64, n, horizon / n as f64, channels)?;
        let reference = run_collect(&lp_ref, &grid_ref, &path, horizon / n as f64, n, &opts)?;
        let mut errors = Vec::with_capacity(ladder.len());
        for (level, lp) in lps.iter().enumerate() {
            let mut worst = 0.0f64;
            run(
                lp,
                &grids[level],
                &path,
                horizon / n as f64,
                n,
                &opts,
                |i, _, v| {
                    let ref_field = &reference.fields[i];
                    for &p in &balls[level] {
                        let d = v[p] - ref_field[ref_maps[level][p]];
                        let d2 = d * d;
                        if d2 > worst {
                            worst = d2;
                        }
                    }
                    Ok(())
                },
            )?;
            errors.push(worst);
        }
        Ok((errors, path.origin_fingerprint()))
    });

    let stats = reduce_samples(results, ladder.len())?;
    let rows: Vec<ReportRow> = ladder
        .iter()
        .enumerate()
        .map(|(j, &r)| ReportRow {
            level: j,
            h: cfg.h,
            tau: horizon / n as f64,
            radius: r,
            mse: stats.mse[j],
            rmse: stats.mse[j].sqrt(),
            stderr: stats.stderr[j],
            samples: stats.used,
        })
        .collect();
    let keep = admitted(&rows);
    let xs: Vec<f64> = keep.iter().map(|r| r.radius * r.radius).collect();
    let ys: Vec<f64> = keep.iter().map(|r| r.mse.ln()).collect();
    let fit = fit_line("radius_sq", "log_mse", &xs, &ys);
    Ok(finish_report(
        "localize",
        cfg,
        &problem.name,
        format!("truncation at R = {}", cfg.radius_ref),
        rows,
        fit,
        &stats,
    ))
}

/// Cross-validation of the grid solver against the characteristics
/// estimator at one space-time point, sharing the driving path.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OracleReport {
    pub problem: String,
    pub t: f64,
    pub x: f64,
    pub grid_value: f64,
    pub oracle_mean: f64,
    pub oracle_stderr: f64,
    pub inner_samples: usize,
    pub inner_failures: usize,
    pub difference: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub h: f64,
    pub tau: f64,
    pub radius: f64,
    pub substeps: usize,
    pub seed: u64,
}

pub fn oracle_check(cfg: &ExperimentConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let problem = cfg.resolve_problem()?;
    let horizon = problem.horizon();
    let zeta = CutoffFn::with_flavor(cfg.cutoff, cfg.radius);
    let lp = localize(
        &problem.discrete,
        &problem.continuous.psi,
        &problem.continuous.f,
        &problem.continuous.g,
        &zeta,
    );
    let grid = solver_grid(&lp, cfg.h, cfg.radius + 3.0)?;
    let n = steps_for(horizon, cfg.tau)?;
    let tau = horizon / n as f64;
    let channels = problem.channels();

    // One fine path shared between the solver (coarsened) and the
    // oracle (at substep resolution).
    let fine = NoisePath::generate(
        cfg.seed,
        0,
        n * cfg.substeps,
        tau / cfg.substeps as f64,
        channels,
    )?;
    let coarse = fine.coarsen(cfg.substeps)?;
    let terminal = run(
        &lp,
        &grid,
        &coarse,
        tau,
        n,
        &cfg.stepper_options(),
        |_, _, _| Ok(()),
    )?;

    if grid.dim() != 1 {
        return Err(Error::Domain("oracle check runs in one dimension".into()));
    }
    // Snap the evaluation point to the grid.
    let k = (cfg.eval_x / grid.h()).round() as i64;
    let idx = grid
        .index_of(&[k])
        .filter(|_| (k as f64 * grid.h() - cfg.eval_x).abs() <= 1e-9 * (1.0 + cfg.eval_x.abs()))
        .ok_or_else(|| {
            Error::Config(format!(
                "evaluation point {} is not a grid point",
                cfg.eval_x
            ))
        })?;
    let grid_value = terminal[idx];

    let truncated = truncated_reference_data(&zeta, &problem.continuous);
    let derivs = truncate_derivatives_1d(&problem, &zeta);
    let mut flow_cfg = cfg.flow_config();
    if derivs.is_some() {
        flow_cfg.derivative_mode = DerivativeMode::Analytic;
    }
    let est = estimate_u(
        &truncated,
        derivs.as_ref(),
        horizon,
        cfg.eval_x,
        &fine,
        &flow_cfg,
    )?;
    let difference = (grid_value - est.mean).abs();
    let tolerance = 3.0 * est.stderr + cfg.oracle_allowance;
    Ok(OracleReport {
        problem: problem.name.clone(),
        t: horizon,
        x: cfg.eval_x,
        grid_value,
        oracle_mean: est.mean,
        oracle_stderr: est.stderr,
        inner_samples: est.used,
        inner_failures: est.failures,
        difference,
        tolerance,
        pass: difference <= tolerance,
        h: cfg.h,
        tau,
        radius: cfg.radius,
        substeps: cfg.substeps,
        seed: cfg.seed,
    })
}

/// Single run for the `solve` subcommand; returns the grid and the
/// terminal field.
pub fn solve_single(cfg: &ExperimentConfig) -> Result<(Grid, Vec<f64>)> {
    cfg.validate()?;
    let problem = cfg.resolve_problem()?;
    let horizon = problem.horizon();
    let zeta = CutoffFn::with_flavor(cfg.cutoff, cfg.radius);
    let lp = localize(
        &problem.discrete,
        &problem.continuous.psi,
        &problem.continuous.f,
        &problem.continuous.g,
        &zeta,
    );
    let grid = solver_grid(&lp, cfg.h, cfg.radius + 3.0)?;
    let n = steps_for(horizon, cfg.tau)?;
    let tau = horizon / n as f64;
    let path = NoisePath::generate(cfg.seed, 0, n, tau, problem.channels())?;
    let terminal = run(
        &lp,
        &grid,
        &path,
        tau,
        n,
        &cfg.stepper_options(),
        |_, _, _| Ok(()),
    )?;
    Ok((grid, terminal))
}

/// Terminal-field dump: one line per grid point, coordinates then value.
pub fn write_field_csv<W: Write>(grid: &Grid, field: &[f64], mut w: W) -> Result<()> {
    let dim = grid.dim();
    let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(w, "{},value", header.join(","))?;
    for p in 0..grid.len() {
        let pos = grid.position(p);
        let coords: Vec<String> = pos.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{},{}", coords.join(","), field[p])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Trajectory;
    use crate::stencil::build_grid;

    #[test]
    fn metric_basics() {
        let grid = build_grid(&StencilSet::line(&[1]).unwrap(), 0.5, 2.0).unwrap();
        let zeros = Trajectory {
            times: vec![0.0, 1.0],
            fields: vec![vec![0.0; grid.len()]; 2],
        };
        assert_eq!(error_metric(&zeros, &zeros, &grid, 0.9, 2.0).unwrap(), 0.0);
        // Constant difference 2 at one interior ball point: metric 4.
        let mut bumped = zeros.clone();
        let mid = grid.index_of(&[0]).unwrap();
        bumped.fields[1][mid] = 2.0;
        assert_eq!(error_metric(&bumped, &zeros, &grid, 0.9, 2.0).unwrap(), 4.0);
        // Difference outside the ball is ignored.
        let mut outside = zeros.clone();
        let edge = grid.index_of(&[4]).unwrap(); // |x| = 2 > 0.9 * 2
        outside.fields[0][edge] = 7.0;
        assert_eq!(
            error_metric(&outside, &zeros, &grid, 0.9, 2.0).unwrap(),
            0.0
        );
        // Shape mismatch.
        let short = Trajectory {
            times: vec![0.0],
            fields: vec![vec![0.0; grid.len()]],
        };
        assert!(error_metric(&short, &zeros, &grid, 0.9, 2.0).is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "# comment\n\
             problem = heat\n\
             R = 8\n\
             nu = 0.8\n\
             h = 0.2\n\
             h_levels = 4\n\
             r = 1\n\
             tau = 0.001\n\
             samples = 3\n\
             seed = 42\n\
             format = csv, json\n\
             radius_ladder = 4, 6, 8\n\
             tau_policy = h4\n",
        )
        .unwrap();
        assert_eq!(cfg.problem, "heat");
        assert_eq!(cfg.radius, 8.0);
        assert_eq!(cfg.h_levels, 4);
        assert_eq!(cfg.extrapolation, 1);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.tau_policy, TauPolicy::QuarticInH);
        assert_eq!(cfg.radius_ladder, vec![4.0, 6.0, 8.0]);
        assert!(cfg.apply_text("nonsense_key = 3\n").is_err());
        assert!(cfg.apply_text("nu 0.5\n").is_err());
    }

    #[test]
    fn inline_problem_compiles_the_example() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "[problem]\n\
             name = inline-example\n\
             T = 1\n\
             psi = 1/(1+x^2)\n\
             fra_1_1 = sin(x)^2\n\
             frb_1_1 = sin(x)\n",
        )
        .unwrap();
        let p = cfg.resolve_problem().unwrap();
        assert_eq!(p.name, "inline-example");
        assert!(!p.discrete.is_time_dependent());
        let builtin_p = builtin("paper-example").unwrap();
        for &x in &[-2.0, 0.3, 1.9] {
            let xs = [x];
            assert!(
                (p.continuous.a_entry(0.0, &xs, 0, 0)
                    - builtin_p.continuous.a_entry(0.0, &xs, 0, 0))
                .abs()
                    < 1e-15
            );
            assert!(
                (p.continuous.sigma_entry(0.0, &xs, 0, 0)
                    - builtin_p.continuous.sigma_entry(0.0, &xs, 0, 0))
                .abs()
                    < 1e-15
            );
        }
        // Time-dependent expressions flip the autonomy flag.
        let mut cfg2 = ExperimentConfig::default();
        cfg2.apply_text("[problem]\nname = td\nfra_1_1 = t*x\n")
            .unwrap();
        assert!(cfg2.resolve_problem().unwrap().discrete.is_time_dependent());
    }

    #[test]
    fn tau_must_divide_horizon() {
        assert_eq!(steps_for(1.0, 0.25).unwrap(), 4);
        assert!(steps_for(1.0, 0.3).is_err());
    }

    fn quick_cfg() -> ExperimentConfig {
        ExperimentConfig {
            problem: "stochastic-transport".into(),
            radius: 4.0,
            h: 0.25,
            h_levels: 2,
            tau: 0.05,
            tau_levels: 3,
            samples: 2,
            seed: 9,
            cutoff: CutoffFlavor::ArctanBump,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn space_study_runs_and_reports() {
        let report = run_convergence_space(&quick_cfg()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.valid);
        assert_eq!(report.reference, "analytic");
        assert!(report.rows[0].mse > 0.0);
        // Finer level is better on this smooth problem.
        assert!(report.rows[1].mse < report.rows[0].mse);
        assert_eq!(report.timestamp, "");
    }

    #[test]
    fn space_study_is_deterministic() {
        let a = run_convergence_space(&quick_cfg()).unwrap();
        let b = run_convergence_space(&quick_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn time_study_runs_and_couples() {
        let report = run_convergence_time(&quick_cfg()).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows.iter().all(|r| r.mse >= 0.0));
        // Coarser steps are worse against the shared fine reference.
        assert!(report.rows[0].mse > report.rows[2].mse);
        assert!(report.valid);
    }

    #[test]
    fn deterministic_time_study_sees_first_order_steps() {
        // Deterministic implicit Euler converges at order one in the
        // field, i.e. slope near 2 in the squared-error metric.
        let cfg = ExperimentConfig {
            problem: "heat".into(),
            radius: 4.0,
            h: 0.2,
            tau: 0.05,
            tau_levels: 3,
            ref_refine: 3,
            samples: 1,
            seed: 1,
            ..ExperimentConfig::default()
        };
        let report = run_convergence_time(&cfg).unwrap();
        let slope = report.fit.expect("deterministic fit").slope;
        assert!((slope - 2.0).abs() < 0.5, "slope {slope}");
    }

    #[test]
    fn zero_data_time_study_has_zero_errors_and_no_fit() {
        let mut cfg = quick_cfg();
        cfg.apply_text("[problem]\nname = silent\npsi = 0\nfra_1_1 = 0.5\n")
            .unwrap();
        cfg.problem = "silent".into();
        let report = run_convergence_time(&cfg).unwrap();
        assert!(report.rows.iter().all(|r| r.mse == 0.0));
        assert!(report.fit.is_none(), "zero rows must not be fitted");
    }

    #[test]
    fn self_reference_requires_a_fixed_time_step() {
        // The paper-example has no analytic solution, so the space
        // study self-references; per-level time steps would decouple
        // the ladder's noise paths.
        let cfg = ExperimentConfig {
            problem: "paper-example".into(),
            tau_policy: TauPolicy::QuarticInH,
            ..quick_cfg()
        };
        assert!(matches!(run_convergence_space(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn localization_needs_a_distant_reference() {
        let mut cfg = quick_cfg();
        cfg.radius_ladder = vec![3.0, 4.0];
        cfg.radius_ref = 6.0; // less than 2 * 4
        assert!(run_localization(&cfg).is_err());
    }
}
