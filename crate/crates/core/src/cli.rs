//! The `palmrt` command line.
//!
//! Input tables are comma-separated with a header: one `y` column, one or
//! more `x*` columns (covariates of interest) and any number of `z*`
//! columns (controls). An intercept is added to the controls unless one of
//! the `z` columns is already a nonzero constant.
//!
//! Exit codes: 0 success, 1 failed self-check, 2 malformed input or usage,
//! 3 numerical failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::framework::{
    dispersion_test, invert_ci, palmrt_test_with_ties, Dataset, EvaluatorSpec, FitterSpec,
    FrameworkError, Method, TestReport, TieRule, DEFAULT_PERMUTATIONS,
};
use crate::linalg::Matrix;
use crate::regressors::QuantileConfig;
use crate::simulation::{
    calibrate_beta, run_power_study, study_cdf, write_csv, DesignKind, ErrorKind, Manifest,
    SimError, SimSetting,
};
use crate::theory_checks::spot_checks;

#[derive(Debug, Parser)]
#[command(
    name = "palmrt",
    version,
    about = "Permutation tests for linear-model partial association"
)]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test whether the x columns explain y beyond the z columns.
    Test(TestArgs),
    /// Test for a difference in conditional spread between the groups of a 0/1 x column.
    Dispersion(DispersionArgs),
    /// Confidence interval for a single x coefficient by test inversion.
    Ci(CiArgs),
    /// Run the simulation study described by a JSON manifest.
    Simulate(SimulateArgs),
    /// Find the effect size giving a target F-test power.
    Calibrate(CalibrateArgs),
    /// Run the invariance and lemma self-checks.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Ties {
    Conservative,
    Half,
}

#[derive(Debug, Args)]
struct Io {
    /// Input table (CSV with header).
    #[arg(long)]
    input: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[command(flatten)]
    io: Io,
    /// OLS-L2, OLS-L1, OLS-Huber, Huber-Huber or Dispersion.
    #[arg(long, default_value = "Huber-Huber")]
    method: Method,
    /// Huber threshold for fitting and evaluation.
    #[arg(long)]
    delta: Option<f64>,
    /// Number of random permutations B.
    #[arg(short = 'B', long = "permutations", default_value_t = DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Ties::Conservative)]
    ties: Ties,
}

#[derive(Debug, Args)]
struct DispersionArgs {
    #[command(flatten)]
    io: Io,
    #[arg(long, default_value_t = 0.10)]
    q_low: f64,
    #[arg(long, default_value_t = 0.90)]
    q_high: f64,
    #[arg(short = 'B', long = "permutations", default_value_t = DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CiArgs {
    #[command(flatten)]
    io: Io,
    #[arg(long, default_value = "Huber-Huber")]
    method: Method,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(short = 'B', long = "permutations", default_value_t = DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Explicit grid, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with_all = ["grid_from", "grid_to", "grid_steps"])]
    grid: Option<Vec<f64>>,
    /// Evenly spaced grid: first value.
    #[arg(long, allow_negative_numbers = true, requires_all = ["grid_to", "grid_steps"])]
    grid_from: Option<f64>,
    /// Evenly spaced grid: last value.
    #[arg(long, allow_negative_numbers = true, requires_all = ["grid_from", "grid_steps"])]
    grid_to: Option<f64>,
    /// Evenly spaced grid: number of points (at least 2).
    #[arg(long, requires_all = ["grid_from", "grid_to"])]
    grid_steps: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON manifest with `settings`, `methods` and optional `cdf_alphas`.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for trials.csv, aggregate.csv, cdf.csv and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CalibrateArgs {
    #[arg(long, default_value = "normal")]
    design: DesignKind,
    #[arg(long, default_value = "normal")]
    error: ErrorKind,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    p: usize,
    /// Target F-test power.
    #[arg(long)]
    target: f64,
    #[arg(long, default_value_t = 5000)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[serde(skip)]
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Random instances per fitter.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// A failure mapped to an exit status.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
    CheckFailed(usize),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::CheckFailed(k) => write!(f, "{k} check(s) failed"),
        }
    }
}

impl From<FrameworkError> for CliError {
    fn from(e: FrameworkError) -> Self {
        match e {
            FrameworkError::InvalidDataset(_) | FrameworkError::InvalidArgument(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidSetting(_)
            | SimError::Unresolved(_)
            | SimError::Io(_)
            | SimError::Csv(_) => CliError::Input(e.to_string()),
            SimError::Framework(f) => f.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Column names by role, as read from the header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Columns {
    pub y: String,
    pub x: Vec<String>,
    pub z: Vec<String>,
    pub intercept_added: bool,
}

/// Reads a table with `y`, `x*` and `z*` columns.
pub fn read_table(path: &Path) -> Result<(Dataset, Columns), CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let header = rdr.headers().map_err(|e| io_err(path, e))?.clone();

    let (mut y_col, mut x_cols, mut z_cols) = (None, Vec::new(), Vec::new());
    for (j, name) in header.iter().enumerate() {
        if name == "y" {
            if y_col.replace(j).is_some() {
                return Err(io_err(path, "more than one `y` column"));
            }
        } else if name.starts_with('x') {
            x_cols.push(j);
        } else if name.starts_with('z') {
            z_cols.push(j);
        } else {
            return Err(io_err(
                path,
                format!("column `{name}` is neither `y` nor prefixed with `x` or `z`"),
            ));
        }
    }
    let y_col = y_col.ok_or_else(|| io_err(path, "missing required column `y`"))?;
    if x_cols.is_empty() {
        return Err(io_err(
            path,
            "no covariate of interest: need at least one column prefixed with `x`",
        ));
    }

    let width = header.len();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); width];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                io_err(
                    path,
                    format!(
                        "row {}, column `{}`: `{field}` is not a number",
                        row + 2,
                        &header[j]
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(io_err(
                    path,
                    format!("row {}, column `{}`: non-finite value", row + 2, &header[j]),
                ));
            }
            data[j].push(v);
        }
    }
    let n = data[y_col].len();
    if n < 2 {
        return Err(io_err(path, format!("need at least 2 data rows, got {n}")));
    }

    let constant = z_cols.iter().any(|&j| {
        let c = &data[j];
        c[0] != 0.0 && c.iter().all(|&v| v == c[0])
    });
    let mut z: Vec<Vec<f64>> = Vec::new();
    if !constant {
        z.push(vec![1.0; n]);
    }
    z.extend(z_cols.iter().map(|&j| data[j].clone()));
    let x: Vec<Vec<f64>> = x_cols.iter().map(|&j| data[j].clone()).collect();
    let dataset = Dataset::new(
        data[y_col].clone(),
        Matrix::from_columns(n, &x),
        Matrix::from_columns(n, &z),
    )?;
    let names = |cols: &[usize]| cols.iter().map(|&j| header[j].to_owned()).collect();
    Ok((
        dataset,
        Columns {
            y: "y".into(),
            x: names(&x_cols),
            z: names(&z_cols),
            intercept_added: !constant,
        },
    ))
}

fn specs(method: Method, delta: Option<f64>) -> Result<(FitterSpec, EvaluatorSpec), CliError> {
    let (mut fitter, mut eval) = (method.fitter(), method.evaluator());
    if let Some(d) = delta {
        if !(d > 0.0 && d.is_finite()) {
            return Err(CliError::Input(format!(
                "--delta must be positive, got {d}"
            )));
        }
        match &mut fitter {
            FitterSpec::HuberMadPrelim(cfg) => cfg.delta = d,
            FitterSpec::Ols {
                prelim_scale: Some(cfg),
            } => cfg.delta = d,
            _ => {}
        }
        if let EvaluatorSpec::HuberScaled { delta } = &mut eval {
            *delta = d;
        }
    }
    fitter
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok((fitter, eval))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    let mut w = open_output(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Input(e.to_string()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Input(e.to_string()))
}

fn write_rows<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<(), CliError> {
    let w = open_output(path)?;
    write_csv(rows, w).map_err(CliError::from)
}

#[derive(Serialize)]
struct TestConfig<'a> {
    input: &'a Path,
    method: Method,
    fitter: FitterSpec,
    evaluator: EvaluatorSpec,
    permutations: usize,
    seed: u64,
    ties: TieRule,
}

#[derive(Serialize)]
struct TestOutput<'a> {
    command: &'static str,
    config: TestConfig<'a>,
    columns: Columns,
    report: TestReport,
}

#[derive(Serialize)]
struct TestRow<'a> {
    command: &'static str,
    input: &'a Path,
    method: &'a str,
    fitter: &'a str,
    evaluator: &'a str,
    permutations: usize,
    seed: u64,
    ties: TieRule,
    p_value: f64,
    indicator_sum: f64,
    alpha_note: &'a str,
}

fn emit_report(
    command: &'static str,
    io: &Io,
    config: TestConfig<'_>,
    columns: Columns,
    report: TestReport,
) -> Result<(), CliError> {
    match io.format {
        Format::Json => write_json(
            &TestOutput {
                command,
                config,
                columns,
                report,
            },
            io.output.as_deref(),
        ),
        Format::Csv => write_rows(
            &[TestRow {
                command,
                input: config.input,
                method: config.method.label(),
                fitter: &report.fitter,
                evaluator: &report.evaluator,
                permutations: report.b,
                seed: report.seed,
                ties: report.ties,
                p_value: report.p_value,
                indicator_sum: report.indicators.iter().sum(),
                alpha_note: &report.alpha_note,
            }],
            io.output.as_deref(),
        ),
    }
}

fn cmd_test(a: &TestArgs) -> Result<(), CliError> {
    let (data, columns) = read_table(&a.io.input)?;
    let (fitter, eval) = specs(a.method, a.delta)?;
    let ties = match a.ties {
        Ties::Conservative => TieRule::Conservative,
        Ties::Half => TieRule::HalfWeight,
    };
    let report = palmrt_test_with_ties(&data, &fitter, &eval, a.permutations, a.seed, ties)?;
    let config = TestConfig {
        input: &a.io.input,
        method: a.method,
        fitter,
        evaluator: eval,
        permutations: a.permutations,
        seed: a.seed,
        ties,
    };
    emit_report("test", &a.io, config, columns, report)
}

fn cmd_dispersion(a: &DispersionArgs) -> Result<(), CliError> {
    let (data, columns) = read_table(&a.io.input)?;
    let (low, high) = (QuantileConfig::new(a.q_low), QuantileConfig::new(a.q_high));
    let fitter = FitterSpec::QuantilePair { low, high };
    fitter
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let report = dispersion_test(&data, low, high, a.permutations, a.seed)?;
    let config = TestConfig {
        input: &a.io.input,
        method: Method::Dispersion,
        fitter,
        evaluator: EvaluatorSpec::IqrLogRatio,
        permutations: a.permutations,
        seed: a.seed,
        ties: TieRule::Conservative,
    };
    emit_report("dispersion", &a.io, config, columns, report)
}

#[derive(Serialize)]
struct CiRow<'a> {
    input: &'a Path,
    method: &'a str,
    permutations: usize,
    seed: u64,
    alpha: f64,
    beta: f64,
    p_value: f64,
    accepted: bool,
    beta_lo: f64,
    beta_hi: f64,
    contiguous: bool,
}

fn cmd_ci(a: &CiArgs) -> Result<(), CliError> {
    let grid = match (&a.grid, a.grid_from, a.grid_to, a.grid_steps) {
        (Some(g), ..) => g.clone(),
        (None, Some(from), Some(to), Some(steps)) => {
            if steps < 2 || !(from < to) {
                return Err(CliError::Input(
                    "need --grid-from < --grid-to and --grid-steps >= 2".into(),
                ));
            }
            (0..steps)
                .map(|i| from + (to - from) * i as f64 / (steps - 1) as f64)
                .collect()
        }
        _ => {
            return Err(CliError::Input(
                "give --grid or --grid-from/--grid-to/--grid-steps".into(),
            ))
        }
    };
    let (data, columns) = read_table(&a.io.input)?;
    let (fitter, eval) = specs(a.method, a.delta)?;
    let ci = invert_ci(
        &data,
        &fitter,
        &eval,
        a.permutations,
        a.seed,
        a.alpha,
        &grid,
    )?;
    match a.io.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                command: &'static str,
                config: TestConfig<'a>,
                alpha: f64,
                columns: Columns,
                interval: crate::framework::ConfidenceInterval,
            }
            let config = TestConfig {
                input: &a.io.input,
                method: a.method,
                fitter,
                evaluator: eval,
                permutations: a.permutations,
                seed: a.seed,
                ties: TieRule::Conservative,
            };
            write_json(
                &Out {
                    command: "ci",
                    config,
                    alpha: a.alpha,
                    columns,
                    interval: ci,
                },
                a.io.output.as_deref(),
            )
        }
        Format::Csv => {
            let rows: Vec<CiRow> = ci
                .grid
                .iter()
                .map(|g| CiRow {
                    input: &a.io.input,
                    method: a.method.label(),
                    permutations: a.permutations,
                    seed: a.seed,
                    alpha: a.alpha,
                    beta: g.beta,
                    p_value: g.p_value,
                    accepted: g.p_value > a.alpha,
                    beta_lo: ci.beta_lo,
                    beta_hi: ci.beta_hi,
                    contiguous: ci.contiguous,
                })
                .collect();
            write_rows(&rows, a.io.output.as_deref())
        }
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| io_err(&a.manifest, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| io_err(&a.manifest, e))?;
    manifest.validate()?;
    let study = run_power_study(&manifest.settings, &manifest.methods)?;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let path = |name: &str| a.out_dir.join(name);
    write_rows(&study.trials, Some(&path("trials.csv")))?;
    write_rows(&study.rows, Some(&path("aggregate.csv")))?;
    if !manifest.cdf_alphas.is_empty() {
        let cdf = study_cdf(&study, &manifest.methods, &manifest.cdf_alphas);
        write_rows(&cdf, Some(&path("cdf.csv")))?;
    }
    #[derive(Serialize)]
    struct Echo<'a> {
        manifest: &'a Manifest,
        resolved: &'a [crate::simulation::ResolvedSetting],
    }
    write_json(
        &Echo {
            manifest: &manifest,
            resolved: &study.settings,
        },
        Some(&path("manifest.json")),
    )
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    let mut setting = SimSetting::location(a.design, a.error, a.n, a.p, 0.0);
    setting.beta = None;
    setting.target_power = Some(a.target);
    setting.seed0 = a.seed;
    setting.alpha = a.alpha;
    setting.calibration_reps = a.reps;
    setting.trials = 1;
    setting.validate()?;
    let cal = calibrate_beta(&setting, a.reps)?;
    #[derive(Serialize)]
    struct Out<'a> {
        command: &'static str,
        config: &'a CalibrateArgs,
        calibration: crate::simulation::Calibration,
    }
    write_json(
        &Out {
            command: "calibrate",
            config: a,
            calibration: cal,
        },
        a.output.as_deref(),
    )
}

fn cmd_check(a: &CheckArgs) -> Result<(), CliError> {
    if a.instances == 0 {
        return Err(CliError::Input("--instances must be at least 1".into()));
    }
    let outcomes = spot_checks(a.instances, a.seed);
    let mut failed = 0;
    for c in &outcomes {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        Err(CliError::CheckFailed(failed))
    } else {
        Ok(())
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Dispersion(a) => cmd_dispersion(a),
        Command::Ci(a) => cmd_ci(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Check(a) => cmd_check(a),
    }
}

/// Entry point for the binary: parses `std::env::args`, runs, and maps
/// failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("palmrt: {e}");
            ExitCode::from(e.code())
        }
    }
}
