mod config;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use mnchemo::diagnostics::{blow_up_cause, check_functional_dissipation, write_csv, FunctionalReport};
use mnchemo::experiments::{
    convergence_study, run_observed, run_sweep, ConvergenceKind, ConvergenceRow, ExperimentError, RunRecord, StepStats,
};
use mnchemo::models::homogeneous_equilibria;
use mnchemo::stepper::{BlowUpCause, Termination};
use mnchemo::{Classification, DiagnosticsRow, State};
use serde::Serialize;
use thiserror::Error;

use config::{ConfigError, GridSection, ModelOnly, RunConfig};
use svg::{line_plot, Series};

const DEFAULT_OUTPUT_DIR: &str = "mnchemo-out";

#[derive(Parser)]
#[command(name = "mnchemo", version, about = "Chemotaxis virus-dynamics simulator")]
struct Cli {
    /// Directory for all artifacts; overrides `[output] directory`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Simulate { config: PathBuf },
    /// Run every (alpha, kappa, seed) tuple of the `[sweep]` section.
    Sweep { config: PathBuf },
    /// Refinement study against an exact solution.
    Converge {
        kind: KindArg,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Homogeneous equilibria of the `[model]` section.
    Equilibria { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    WEquationExact,
    WEquationSpatial,
    MassOde,
    LaplacianEigen,
}

impl KindArg {
    fn kind(self) -> ConvergenceKind {
        match self {
            KindArg::WEquationExact => ConvergenceKind::WEquationExact,
            KindArg::WEquationSpatial => ConvergenceKind::WEquationSpatial,
            KindArg::MassOde => ConvergenceKind::MassOde,
            KindArg::LaplacianEigen => ConvergenceKind::LaplacianEigen,
        }
    }

    fn name(self) -> &'static str {
        match self {
            KindArg::WEquationExact => "w_equation_exact",
            KindArg::WEquationSpatial => "w_equation_spatial",
            KindArg::MassOde => "mass_ode",
            KindArg::LaplacianEigen => "laplacian_eigen",
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("serialization: {0}")]
    Serialize(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } | CliError::Serialize(_) => 4,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            ExperimentError::InvalidSpec(_) | ExperimentError::BracketInvalid { .. } => {
                CliError::Config(ConfigError::Invalid(e.to_string()))
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Serialize(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

fn write_diagnostics(path: &Path, series: &[DiagnosticsRow]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_csv(series, file).map_err(|e| CliError::Serialize(e.to_string()))
}

#[derive(Serialize)]
struct Peaks {
    linf_u: f64,
    grad_v_lq: f64,
    linf_w: Option<f64>,
    grad_v_max: f64,
}

#[derive(Serialize)]
struct PlateauRatios {
    linf_u: Option<f64>,
    grad_v_lq: Option<f64>,
    linf_w: Option<f64>,
}

/// Schema of `summary.json`; field order is the key order.
#[derive(Serialize)]
struct RunSummary<'a> {
    classification: &'static str,
    detection_time: Option<f64>,
    blow_up_cause: Option<BlowUpCause>,
    termination: Termination,
    peaks: Peaks,
    plateau_ratios: PlateauRatios,
    steps: StepStats,
    functional: FunctionalReport,
    samples: usize,
    wall_time_s: f64,
    config: &'a RunConfig,
}

fn run_summary<'a>(record: &RunRecord, config: &'a RunConfig, spatial_dim: usize, wall: f64) -> RunSummary<'a> {
    let ev = &record.outcome.evidence;
    RunSummary {
        classification: record.outcome.classification.label(),
        detection_time: record.outcome.classification.detection_time(),
        blow_up_cause: blow_up_cause(&record.outcome),
        termination: ev.termination,
        peaks: Peaks {
            linf_u: ev.peak_linf_u,
            grad_v_lq: ev.peak_grad_v_lq,
            linf_w: ev.peak_linf_w,
            grad_v_max: ev.peak_grad_v_max,
        },
        plateau_ratios: PlateauRatios {
            linf_u: ev.linf_u.map(|p| p.ratio()),
            grad_v_lq: ev.grad_v_lq.map(|p| p.ratio()),
            linf_w: ev.linf_w.map(|p| p.ratio()),
        },
        steps: record.stats,
        functional: check_functional_dissipation(&record.series, config.model.alpha(), spatial_dim),
        samples: record.series.len(),
        wall_time_s: wall,
        config,
    }
}

fn write_plots(dir: &Path, series: &[DiagnosticsRow]) -> Result<(), CliError> {
    let ts: Vec<f64> = series.iter().map(|r| r.t).collect();
    let col = |f: fn(&DiagnosticsRow) -> Option<f64>| -> Vec<f64> {
        series.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect()
    };
    let mut norms = vec![
        Series {
            label: "linf_u",
            values: col(|r| Some(r.linf_u)),
        },
        Series {
            label: "grad_v_lq",
            values: col(|r| Some(r.grad_v_lq)),
        },
    ];
    if series.iter().any(|r| r.linf_w.is_some()) {
        norms.push(Series {
            label: "linf_w",
            values: col(|r| r.linf_w),
        });
    }
    write_file(&dir.join("norms.svg"), line_plot("Monitored norms", "t", &ts, &norms))?;
    let mut masses = vec![
        Series {
            label: "mass_u",
            values: col(|r| Some(r.mass_u)),
        },
        Series {
            label: "mass_v",
            values: col(|r| Some(r.mass_v)),
        },
    ];
    if series.iter().any(|r| r.mass_w.is_some()) {
        masses.push(Series {
            label: "mass_w",
            values: col(|r| r.mass_w),
        });
    }
    write_file(&dir.join("masses.svg"), line_plot("Masses", "t", &ts, &masses))?;
    if series.iter().any(|r| r.functional_e.is_some()) {
        let e = [Series {
            label: "E",
            values: col(|r| r.functional_e),
        }];
        write_file(&dir.join("functional.svg"), line_plot("Energy functional", "t", &ts, &e))?;
    }
    Ok(())
}

fn snapshot_csv(state: &State) -> String {
    let grid = state.grid();
    let mut out = String::from("t,x,y,u,v,w\n");
    for (i, c) in grid.centers().iter().enumerate() {
        let w = state.w.as_ref().map(|w| w.values()[i].to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            state.t,
            c[0],
            c[1],
            state.u.values()[i],
            state.v.values()[i],
            w
        ));
    }
    out
}

struct Ctx {
    output_dir: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn dir(&self, config: Option<&RunConfig>) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| config.and_then(|c| c.output.directory.clone()))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn cmd_simulate(ctx: &Ctx, path: &Path) -> Result<u8, CliError> {
    let config = RunConfig::load(path)?;
    let spec = config.run_spec()?;
    let dir = ctx.dir(Some(&config));
    create_dir(&dir)?;
    let snap_dir = dir.join("snapshots");
    if config.output.snapshots {
        create_dir(&snap_dir)?;
    }
    let mut snapshots = Vec::new();
    let start = Instant::now();
    let record = run_observed(&spec, |state| {
        if config.output.snapshots {
            snapshots.push(snapshot_csv(state));
        }
    })?;
    let wall = start.elapsed().as_secs_f64();
    for (k, text) in snapshots.iter().enumerate() {
        write_file(&snap_dir.join(format!("snapshot_{k:04}.csv")), text)?;
    }
    write_diagnostics(&dir.join("diagnostics.csv"), &record.series)?;
    write_json(
        &dir.join("summary.json"),
        &run_summary(&record, &config, spec.grid.spatial_dim(), wall),
    )?;
    if config.output.plots {
        write_plots(&dir, &record.series)?;
    }
    let class = record.outcome.classification;
    match class.detection_time() {
        Some(t) => ctx.say(format!("{} at t = {t}", class.label())),
        None => ctx.say(class.label()),
    }
    ctx.say(format!("artifacts written to {}", dir.display()));
    Ok(if matches!(class, Classification::Diverged { .. }) { 3 } else { 0 })
}

#[derive(Serialize)]
struct SweepRunEntry {
    alpha: f64,
    kappa: f64,
    seed: u64,
    directory: String,
    classification: &'static str,
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepReport {
    runs: usize,
    empirical_critical_alpha: Option<f64>,
    critical_bracket: Option<(f64, f64)>,
    wall_time_s: f64,
    entries: Vec<SweepRunEntry>,
}

fn cmd_sweep(ctx: &Ctx, path: &Path) -> Result<u8, CliError> {
    let config = RunConfig::load(path)?;
    let spec = config.sweep_spec()?;
    let dir = ctx.dir(Some(&config));
    create_dir(&dir)?;
    let start = Instant::now();
    let result = run_sweep(&spec)?;
    let wall = start.elapsed().as_secs_f64();

    let mut entries = Vec::with_capacity(result.rows.len());
    for (i, row) in result.rows.iter().enumerate() {
        let name = format!("run_{i:03}");
        let run_dir = dir.join(&name);
        create_dir(&run_dir)?;
        let run_spec = spec.run_spec(row.alpha, row.kappa, row.seed);
        let mut echo = config.clone();
        echo.sweep = None;
        echo.model = run_spec.model.clone();
        echo.initial.seed = row.seed;
        echo.grid = GridSection::from_spec(&run_spec.grid);
        match &row.record {
            Some(rec) => {
                write_diagnostics(&run_dir.join("diagnostics.csv"), &rec.series)?;
                write_json(
                    &run_dir.join("summary.json"),
                    &run_summary(rec, &echo, run_spec.grid.spatial_dim(), f64::NAN),
                )?;
            }
            None => {
                write_diagnostics(&run_dir.join("diagnostics.csv"), &[])?;
                #[derive(Serialize)]
                struct Failed<'a> {
                    classification: &'static str,
                    error: &'a Option<String>,
                    config: &'a RunConfig,
                }
                write_json(
                    &run_dir.join("summary.json"),
                    &Failed {
                        classification: row.outcome.classification.label(),
                        error: &row.error,
                        config: &echo,
                    },
                )?;
            }
        }
        entries.push(SweepRunEntry {
            alpha: row.alpha,
            kappa: row.kappa,
            seed: row.seed,
            directory: name,
            classification: row.outcome.classification.label(),
            error: row.error.clone(),
        });
    }
    let summary_path = dir.join("sweep_summary.csv");
    let file = fs::File::create(&summary_path).map_err(io_err(&summary_path))?;
    result.write_summary_csv(file)?;
    write_json(
        &dir.join("sweep.json"),
        &SweepReport {
            runs: entries.len(),
            empirical_critical_alpha: result.empirical_critical_alpha.map(|c| c.estimate),
            critical_bracket: result.empirical_critical_alpha.map(|c| c.bracket),
            wall_time_s: wall,
            entries,
        },
    )?;
    for s in result.summary() {
        ctx.say(format!(
            "alpha = {:<6} kappa = {:<6} seed = {:<4} {}",
            s.alpha, s.kappa, s.seed, s.classification
        ));
    }
    if let Some(c) = result.empirical_critical_alpha {
        ctx.say(format!(
            "empirical critical alpha {} in ({}, {})",
            c.estimate, c.bracket.0, c.bracket.1
        ));
    }
    ctx.say(format!("artifacts written to {}", dir.display()));
    Ok(0)
}

fn cmd_converge(ctx: &Ctx, kind: KindArg, levels: usize) -> Result<u8, CliError> {
    let rows: Vec<ConvergenceRow> = convergence_study(kind.kind(), levels)?;
    let dir = ctx.dir(None);
    create_dir(&dir)?;
    let mut csv = String::from("h,error,observed_order\n");
    for r in &rows {
        let order = r.observed_order.map(|o| o.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{}\n", r.h, r.error, order));
    }
    write_file(&dir.join(format!("convergence_{}.csv", kind.name())), csv)?;
    ctx.say(format!("{:>12} {:>14} {:>8}", "h", "error", "order"));
    for r in &rows {
        let order = r.observed_order.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into());
        ctx.say(format!("{:>12.4e} {:>14.6e} {:>8}", r.h, r.error, order));
    }
    Ok(0)
}

#[derive(Serialize)]
struct EquilibriaReport {
    kappa: f64,
    equilibria: Vec<[f64; 3]>,
}

fn cmd_equilibria(ctx: &Ctx, path: &Path) -> Result<u8, CliError> {
    let model = ModelOnly::load(path)?;
    let eqs = homogeneous_equilibria(&model).map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?;
    let dir = ctx.dir(None);
    create_dir(&dir)?;
    write_json(
        &dir.join("equilibria.json"),
        &EquilibriaReport {
            kappa: model.kappa,
            equilibria: eqs.clone(),
        },
    )?;
    for e in &eqs {
        ctx.say(format!("({}, {}, {})", e[0], e[1], e[2]));
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        output_dir: cli.output_dir,
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::Simulate { config } => cmd_simulate(&ctx, config),
        Command::Sweep { config } => cmd_sweep(&ctx, config),
        Command::Converge { kind, levels } => cmd_converge(&ctx, *kind, *levels),
        Command::Equilibria { config } => cmd_equilibria(&ctx, config),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
