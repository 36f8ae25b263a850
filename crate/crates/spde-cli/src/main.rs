//! Experiment driver for the localized SPDE solver.
//!
//! Exit codes: 0 success / gates passed, 1 gate failure, 2
//! configuration error, 3 solver failure.

use clap::{Args, Parser, Subcommand};
use spde::error::Error;
use spde::experiment::{
    oracle_check, run_convergence_space, run_convergence_time, run_localization, solve_single,
    write_field_csv, ExperimentConfig,
};
use spde::report::{emit, ConvergenceReport};
use spde::richardson;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "spde",
    about = "Finite-difference experiments for localized degenerate parabolic SPDEs",
    version
)]
struct Cli {
    /// Plain-text key=value configuration file ([experiment] and
    /// [problem] sections); command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Problem name (built-in registry or the [problem] section name).
    #[arg(long, global = true)]
    problem: Option<String>,
    /// Horizon T.
    #[arg(long = "T", global = true)]
    horizon: Option<f64>,
    /// Truncation plateau radius.
    #[arg(long = "R", global = true)]
    radius: Option<f64>,
    /// Evaluation-ball fraction in (0, 1).
    #[arg(long, global = true)]
    nu: Option<f64>,
    /// Base (coarsest) spatial mesh.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Spatial ladder length.
    #[arg(long, global = true)]
    h_levels: Option<usize>,
    /// Richardson extrapolation depth.
    #[arg(long = "r", global = true)]
    extrapolation: Option<usize>,
    /// Base (coarsest) time step.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Time ladder length.
    #[arg(long, global = true)]
    tau_levels: Option<usize>,
    /// fixed | h4.
    #[arg(long, global = true)]
    tau_policy: Option<String>,
    /// Extra halvings separating the time-study reference from the
    /// finest fitted level.
    #[arg(long, global = true)]
    ref_refine: Option<usize>,
    /// Monte Carlo samples.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for emitted reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated: csv, json, gnuplot-dat.
    #[arg(long, global = true)]
    format: Option<String>,
    /// arctan | smoothstep | identity.
    #[arg(long, global = true)]
    cutoff: Option<String>,
    /// Localization ladder, comma-separated radii.
    #[arg(long, global = true)]
    radius_ladder: Option<String>,
    /// Localization reference radius.
    #[arg(long, global = true)]
    radius_ref: Option<f64>,
    /// Oracle substeps per solver step (power of two).
    #[arg(long, global = true)]
    substeps: Option<usize>,
    /// Oracle inner Monte Carlo samples.
    #[arg(long, global = true)]
    inner_samples: Option<usize>,
    /// Oracle evaluation point.
    #[arg(long, global = true, allow_negative_numbers = true)]
    eval_x: Option<f64>,
    /// Oracle discretization allowance added to 3 stderr.
    #[arg(long, global = true)]
    allowance: Option<f64>,
    /// Stamp reports with this string (breaks byte-reproducibility).
    #[arg(long, global = true)]
    timestamp: Option<String>,
    /// Gate: require the fitted slope to be at least this.
    #[arg(long, global = true, allow_negative_numbers = true)]
    gate_slope_min: Option<f64>,
    /// Gate: require the fitted slope to be at most this.
    #[arg(long, global = true, allow_negative_numbers = true)]
    gate_slope_max: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Single run; dumps the terminal field as CSV.
    Solve,
    /// Convergence order in the spatial mesh.
    ConvergeSpace,
    /// Convergence order in the time step.
    ConvergeTime,
    /// Truncation-radius error decay.
    Localize,
    /// Cross-validate the grid solver against the characteristics
    /// estimator.
    OracleCheck,
    /// Print the extrapolation weights for a given depth.
    Weights {
        /// Ladder depth r.
        #[arg(default_value_t = 1)]
        depth: usize,
    },
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    let o = &cli.overrides;
    if let Some(v) = &o.problem {
        cfg.problem = v.clone();
    }
    if let Some(v) = o.horizon {
        cfg.horizon = Some(v);
    }
    if let Some(v) = o.radius {
        cfg.radius = v;
    }
    if let Some(v) = o.nu {
        cfg.nu = v;
    }
    if let Some(v) = o.h {
        cfg.h = v;
    }
    if let Some(v) = o.h_levels {
        cfg.h_levels = v;
    }
    if let Some(v) = o.extrapolation {
        cfg.extrapolation = v;
    }
    if let Some(v) = o.tau {
        cfg.tau = v;
    }
    if let Some(v) = o.tau_levels {
        cfg.tau_levels = v;
    }
    if let Some(v) = &o.tau_policy {
        cfg.tau_policy = v.parse().map_err(Error::Config)?;
    }
    if let Some(v) = o.ref_refine {
        cfg.ref_refine = v;
    }
    if let Some(v) = o.samples {
        cfg.samples = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.out {
        cfg.out_dir = Some(v.display().to_string());
    }
    if let Some(v) = &o.format {
        let mut fmts = Vec::new();
        for part in v.split(',') {
            fmts.push(part.trim().parse().map_err(Error::Config)?);
        }
        cfg.formats = fmts;
    }
    if let Some(v) = &o.cutoff {
        cfg.cutoff = v.parse().map_err(Error::Config)?;
    }
    if let Some(v) = &o.radius_ladder {
        let mut ladder = Vec::new();
        for part in v.split(',') {
            ladder.push(
                part.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad radius `{part}`")))?,
            );
        }
        cfg.radius_ladder = ladder;
    }
    if let Some(v) = o.radius_ref {
        cfg.radius_ref = v;
    }
    if let Some(v) = o.substeps {
        cfg.substeps = v;
    }
    if let Some(v) = o.inner_samples {
        cfg.inner_samples = v;
    }
    if let Some(v) = o.eval_x {
        cfg.eval_x = v;
    }
    if let Some(v) = o.allowance {
        cfg.oracle_allowance = v;
    }
    if let Some(v) = &o.timestamp {
        cfg.timestamp = Some(v.clone());
    }
    Ok(cfg)
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) => 2,
        _ => 3,
    }
}

fn print_report(report: &ConvergenceReport) {
    println!(
        "study {} | problem {} | reference {} | nu {} | samples {} (failures {})",
        report.study, report.problem, report.reference, report.nu, report.samples, report.failures
    );
    println!(
        "{:>5} {:>12} {:>12} {:>8} {:>14} {:>14} {:>12}",
        "level", "h", "tau", "R", "mse", "rmse", "stderr"
    );
    for r in &report.rows {
        println!(
            "{:>5} {:>12} {:>12} {:>8} {:>14.6e} {:>14.6e} {:>12.3e}",
            r.level, r.h, r.tau, r.radius, r.mse, r.rmse, r.stderr
        );
    }
    match &report.fit {
        Some(f) => println!(
            "fit: {} per {} slope {:.4} (intercept {:.4}, residual {:.2e}, {} levels)",
            f.ordinate, f.axis, f.slope, f.intercept, f.residual, f.points_used
        ),
        None => println!("fit: undefined (no levels above the noise floor)"),
    }
}

/// Emits the report and applies the slope gate; returns the exit code.
fn finish(report: &ConvergenceReport, cfg: &ExperimentConfig, cli: &Cli) -> i32 {
    print_report(report);
    if let Some(dir) = &cfg.out_dir {
        match emit(report, &cfg.formats, std::path::Path::new(dir)) {
            Ok(paths) => {
                for p in paths {
                    println!("wrote {}", p.display());
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return 3;
            }
        }
    }
    if !report.valid {
        eprintln!("error: more than 5% of samples failed; report marked invalid");
        return 3;
    }
    let (lo, hi) = (cli.overrides.gate_slope_min, cli.overrides.gate_slope_max);
    if lo.is_some() || hi.is_some() {
        let Some(fit) = &report.fit else {
            eprintln!("gate: FAIL (no fitted slope)");
            return 1;
        };
        let ok_lo = lo.map_or(true, |v| fit.slope >= v);
        let ok_hi = hi.map_or(true, |v| fit.slope <= v);
        if !(ok_lo && ok_hi) {
            eprintln!(
                "gate: FAIL (slope {:.4} outside [{}, {}])",
                fit.slope,
                lo.map_or("-inf".into(), |v| v.to_string()),
                hi.map_or("+inf".into(), |v| v.to_string()),
            );
            return 1;
        }
        println!("gate: PASS (slope {:.4})", fit.slope);
    }
    0
}

fn run_cli() -> i32 {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match &cli.command {
        Command::Weights { depth } => match richardson::weights(*depth) {
            Ok(w) => {
                println!("extrapolation weights for depth r = {depth}:");
                for (i, (rat, fl)) in w.rationals().iter().zip(w.floats()).enumerate() {
                    println!(
                        "  c_{i} = {:>12} = {}",
                        richardson::format_rational(rat),
                        fl
                    );
                }
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
        Command::Solve => match solve_single(&cfg) {
            Ok((grid, field)) => {
                let peak = field.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                println!(
                    "solved {} on {} grid points (h = {}, R = {}); terminal max |v| = {peak:.6}",
                    cfg.problem,
                    grid.len(),
                    cfg.h,
                    cfg.radius
                );
                let dir = cfg.out_dir.clone().unwrap_or_else(|| ".".into());
                let path = std::path::Path::new(&dir).join("field.csv");
                let write = || -> Result<(), Error> {
                    std::fs::create_dir_all(&dir)?;
                    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
                    write_field_csv(&grid, &field, &mut f)
                };
                match write() {
                    Ok(()) => {
                        println!("wrote {}", path.display());
                        0
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        3
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
        Command::ConvergeSpace => match run_convergence_space(&cfg) {
            Ok(report) => finish(&report, &cfg, &cli),
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
        Command::ConvergeTime => match run_convergence_time(&cfg) {
            Ok(report) => finish(&report, &cfg, &cli),
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
        Command::Localize => match run_localization(&cfg) {
            Ok(report) => finish(&report, &cfg, &cli),
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
        Command::OracleCheck => match oracle_check(&cfg) {
            Ok(rep) => {
                println!(
                    "oracle check at (t, x) = ({}, {}) on {}:",
                    rep.t, rep.x, rep.problem
                );
                println!("  grid value     {:.8}", rep.grid_value);
                println!(
                    "  oracle mean    {:.8}  (stderr {:.3e}, {} inner samples, {} failures)",
                    rep.oracle_mean, rep.oracle_stderr, rep.inner_samples, rep.inner_failures
                );
                println!(
                    "  |difference|   {:.4e}  vs tolerance {:.4e} (3 stderr + {})",
                    rep.difference,
                    rep.tolerance,
                    rep.tolerance - 3.0 * rep.oracle_stderr
                );
                if let Some(dir) = &cfg.out_dir {
                    let path = std::path::Path::new(dir).join("oracle-check.json");
                    let dump = || -> Result<(), Error> {
                        std::fs::create_dir_all(dir)?;
                        let text = serde_json::to_string_pretty(&rep)
                            .map_err(|e| Error::Config(e.to_string()))?;
                        std::fs::write(&path, text + "\n")?;
                        Ok(())
                    };
                    match dump() {
                        Ok(()) => println!("wrote {}", path.display()),
                        Err(e) => {
                            eprintln!("error: {e}");
                            return 3;
                        }
                    }
                }
                if rep.pass {
                    println!("  PASS");
                    0
                } else {
                    println!("  FAIL");
                    1
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
    }
}

fn main() {
    std::process::exit(run_cli());
}
