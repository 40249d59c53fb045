//! Command-line front end.
//!
//! Subcommands: `ingest`, `identify`, `predict`, `run`, `synth`. Pipeline
//! runs are driven by a flat key-value configuration file (see
//! [`RunConfig`]) so an experiment is reproducible from a checked-in
//! artifact; every command is deterministic and produces byte-identical
//! outputs for identical inputs.
//!
//! Exit codes: 0 ok, 2 schema/config, 3 I/O, 4 ill-conditioned,
//! 5 model/cycle mismatch, 6 non-convergence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::KeyValueFile;
use crate::datasets::{
    ingest_csv_with, read_canonical_csv, write_canonical_csv, ColumnMap, IngestReport,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_cycle, export_profiles, synth_generate, EvalResult, InputProfile, SynthSpec};
use crate::identify::{fit_one_shot, BoxConstraints, FitReport};
use crate::model::{
    params_to_linear, simulate_cycle, CycleData, LinearParams, PhysicalParams, Polynomial,
    PredictionMode,
};

pub const EXIT_SCHEMA: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_ILL_CONDITIONED: u8 = 4;
pub const EXIT_MODEL_MISMATCH: u8 = 5;
pub const EXIT_NON_CONVERGENCE: u8 = 6;

/// Map every error to its documented exit code.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::IllConditioned { .. } => EXIT_ILL_CONDITIONED,
        Error::NonConvergence { .. } => EXIT_NON_CONVERGENCE,
        Error::ModelMismatch { .. } | Error::DimensionMismatch { .. } => EXIT_MODEL_MISMATCH,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_SCHEMA,
    }
}

#[derive(Parser)]
#[command(
    name = "ectm",
    version,
    about = "Battery surface-temperature modeling: one-shot identification and cross-cycle prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert dataset CSV exports into canonical cycle files
    Ingest(IngestArgs),
    /// Fit the model on the configured base cycle
    Identify(IdentifyArgs),
    /// Predict cycles with a previously fitted model
    Predict(PredictArgs),
    /// Full pipeline: ingest (if configured), identify, predict, export
    Run(RunArgs),
    /// Generate a synthetic cycle with known true parameters
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Column-mapping configuration file
    #[arg(long)]
    map: PathBuf,
    /// Directory for the canonical cycle CSVs
    #[arg(long)]
    out_dir: PathBuf,
    /// Resample onto this interval in seconds
    #[arg(long)]
    resample_dt: Option<f64>,
    /// Input cycles as INDEX=PATH
    #[arg(required = true, value_name = "INDEX=PATH")]
    files: Vec<String>,
}

/// Flag mirrors of the RunConfig fields; any flag given overrides the
/// config-file value.
#[derive(Args, Default)]
struct ConfigOverrides {
    #[arg(long)]
    cycles_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    base_cycle: Option<u32>,
    /// Comma-separated cycle indices
    #[arg(long)]
    eval_cycles: Option<String>,
    /// Heat-polynomial degree d (m = d + 4)
    #[arg(long)]
    degree: Option<usize>,
    /// teacher_forced or free_running
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    resample_dt: Option<f64>,
}

impl ConfigOverrides {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(dir) = &self.cycles_dir {
            config.cycles_dir = dir.clone();
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(base) = self.base_cycle {
            config.base_cycle = base;
        }
        if let Some(raw) = &self.eval_cycles {
            config.eval_cycles = if raw.trim().is_empty() {
                Vec::new()
            } else {
                raw.split(',')
                    .map(|part| {
                        part.trim().parse().map_err(|_| {
                            Error::Config(format!(
                                "invalid cycle index {part:?} in --eval-cycles"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?
            };
        }
        if let Some(degree) = self.degree {
            config.degree = degree;
        }
        if let Some(mode) = &self.mode {
            config.mode = mode.parse()?;
        }
        if let Some(dt) = self.resample_dt {
            config.resample_dt = Some(dt);
        }
        if config.eval_cycles.contains(&config.base_cycle) {
            return Err(Error::Config(format!(
                "base_cycle {} must not appear in eval_cycles (train/test separation)",
                config.base_cycle
            )));
        }
        if let Some(bounds) = &config.bounds {
            if bounds.len() != config.degree + 4 {
                return Err(Error::Config(format!(
                    "box constraints have {} values but degree {} needs {}",
                    bounds.len(),
                    config.degree,
                    config.degree + 4
                )));
            }
        }
        Ok(())
    }
}

#[derive(Args)]
struct IdentifyArgs {
    /// Run configuration file
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct PredictArgs {
    /// Run configuration file
    #[arg(long)]
    config: PathBuf,
    /// Fitted model report (default: <output_dir>/fit_report.json)
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Optional target overrides as INDEX=PATH (default: eval_cycles
    /// resolved inside cycles_dir)
    #[arg(value_name = "INDEX=PATH")]
    files: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct SynthArgs {
    /// True linear parameters, comma-separated (theta_1..theta_m)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Thermal resistance of the physical parameterization
    #[arg(long)]
    r_t: Option<f64>,
    /// Thermal capacitance of the physical parameterization
    #[arg(long)]
    c_t: Option<f64>,
    /// Heat-polynomial coefficients eta_0..eta_d, comma-separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eta: Option<Vec<f64>>,
    /// Input profile: constant_current, cc_cv_like or random_steps
    #[arg(long, default_value = "random_steps")]
    profile: String,
    /// Gaussian observation noise on the surface temperature, deg C
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 5000)]
    length: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Sampling interval in seconds
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Capacity in ampere-hours
    #[arg(long, default_value_t = 2.0)]
    q0: f64,
    #[arg(long, default_value_t = 0.05)]
    soc0: f64,
    /// Initial surface temperature, deg C
    #[arg(long, default_value_t = 25.0)]
    ts0: f64,
    /// Ambient temperature, deg C
    #[arg(long, default_value_t = 24.0)]
    ambient: f64,
    /// Canonical CSV output path
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating spec (with theta_true) as JSON
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

/// One reproducible experiment: dataset location, train/test split and
/// solver options.
///
/// Config file keys:
///
/// ```text
/// cycles_dir   = data/nb18      # canonical cycle files cycle_<N>.csv
/// output_dir   = out/nb18
/// base_cycle   = 15             # training cycle
/// eval_cycles  = 40,128         # prediction targets (may be empty)
/// degree       = 5              # heat-polynomial degree d (m = d + 4)
/// mode         = free_running   # or teacher_forced
/// q0_ah        = 2.0            # capacity; falls back to the column map
/// soc0         = 0.0            # initial SOC; falls back to the column map
/// column_map   = nb18.map       # needed when raw_files is set
/// raw_files    = 15=raw/c15.csv,40=raw/c40.csv   # optional pre-ingest
/// resample_dt  = 1.0            # optional resampling interval
/// box_lower    = -1,-1,...      # optional, m values; -inf/inf allowed
/// box_upper    = 1,1,...
/// ```
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub cycles_dir: PathBuf,
    pub output_dir: PathBuf,
    pub base_cycle: u32,
    pub eval_cycles: Vec<u32>,
    pub degree: usize,
    pub mode: PredictionMode,
    pub q0_ah: f64,
    pub soc0: f64,
    pub column_map: Option<ColumnMap>,
    pub raw_files: Vec<(u32, PathBuf)>,
    pub resample_dt: Option<f64>,
    pub bounds: Option<BoxConstraints>,
}

fn parse_index_path(raw: &str) -> Result<(u32, PathBuf)> {
    let (index, path) = raw.split_once('=').ok_or_else(|| {
        Error::Config(format!("expected INDEX=PATH, got {raw:?}"))
    })?;
    let index = index.trim().parse().map_err(|_| {
        Error::Config(format!("invalid cycle index {index:?} in {raw:?}"))
    })?;
    Ok((index, PathBuf::from(path.trim())))
}

fn parse_f64_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid number {part:?} in {what}")))
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let kv = KeyValueFile::load(path)?;
        let config = Self::from_kv(&kv)?;
        kv.reject_unknown()?;
        Ok(config)
    }

    fn from_kv(kv: &KeyValueFile) -> Result<Self> {
        let cycles_dir = PathBuf::from(kv.require("cycles_dir")?);
        let output_dir = PathBuf::from(kv.require("output_dir")?);
        let base_cycle: u32 = kv.require_parsed("base_cycle")?;
        let eval_cycles: Vec<u32> = match kv.get("eval_cycles") {
            None | Some("") => Vec::new(),
            Some(raw) => raw
                .split(',')
                .map(|part| {
                    part.trim().parse().map_err(|_| {
                        Error::Config(format!("invalid cycle index {part:?} in eval_cycles"))
                    })
                })
                .collect::<Result<_>>()?,
        };
        if eval_cycles.contains(&base_cycle) {
            return Err(Error::Config(format!(
                "base_cycle {base_cycle} must not appear in eval_cycles (train/test separation)"
            )));
        }
        let degree: usize = kv.get_parsed("degree")?.unwrap_or(5);
        let mode: PredictionMode = kv.get_parsed("mode")?.unwrap_or(PredictionMode::FreeRunning);

        let column_map = match kv.get("column_map") {
            Some(path) => Some(ColumnMap::from_file(path)?),
            None => None,
        };
        let q0_ah = match kv.get_parsed::<f64>("q0_ah")? {
            Some(q0) => q0,
            None => match &column_map {
                Some(map) => map.q0_ah,
                None => {
                    return Err(Error::Config(
                        "q0_ah is required (directly or via column_map)".into(),
                    ))
                }
            },
        };
        if !(q0_ah > 0.0) {
            return Err(Error::InvalidCapacity(q0_ah));
        }
        let soc0 = match kv.get_parsed::<f64>("soc0")? {
            Some(soc0) => soc0,
            None => column_map.as_ref().map(|m| m.soc0).unwrap_or(0.0),
        };
        if !(0.0..=1.0).contains(&soc0) {
            return Err(Error::InvalidSoc(soc0));
        }

        let raw_files = match kv.get("raw_files") {
            None | Some("") => Vec::new(),
            Some(raw) => raw
                .split(',')
                .map(|pair| parse_index_path(pair.trim()))
                .collect::<Result<_>>()?,
        };
        if !raw_files.is_empty() && column_map.is_none() {
            return Err(Error::Config(
                "raw_files requires column_map for ingestion".into(),
            ));
        }

        let bounds = match (kv.get("box_lower"), kv.get("box_upper")) {
            (None, None) => None,
            (Some(lo), Some(up)) => {
                let lower = parse_f64_list(lo, "box_lower")?;
                let upper = parse_f64_list(up, "box_upper")?;
                let m = degree + 4;
                if lower.len() != m || upper.len() != m {
                    return Err(Error::Config(format!(
                        "box_lower/box_upper need {m} values for degree {degree}, got {}/{}",
                        lower.len(),
                        upper.len()
                    )));
                }
                Some(BoxConstraints::new(lower, upper)?)
            }
            _ => {
                return Err(Error::Config(
                    "box_lower and box_upper must be given together".into(),
                ))
            }
        };

        Ok(RunConfig {
            cycles_dir,
            output_dir,
            base_cycle,
            eval_cycles,
            degree,
            mode,
            q0_ah,
            soc0,
            column_map,
            raw_files,
            resample_dt: kv.get_parsed("resample_dt")?,
            bounds,
        })
    }

    /// Canonical file of one cycle inside `cycles_dir`.
    pub fn cycle_path(&self, index: u32) -> PathBuf {
        self.cycles_dir.join(format!("cycle_{index}.csv"))
    }

    fn load_cycle(&self, index: u32) -> Result<CycleData> {
        read_canonical_csv(self.cycle_path(index), self.q0_ah, self.soc0, index)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn format_ingest_report(
    source: &Path,
    cycle_index: u32,
    out: &Path,
    report: &IngestReport,
) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "file={}", source.display());
    let _ = writeln!(text, "cycle_index={cycle_index}");
    let _ = writeln!(text, "rows_read={}", report.rows_read);
    let _ = writeln!(text, "rows_dropped={}", report.rows_dropped);
    let _ = writeln!(text, "clamp_events={}", report.clamp_events);
    let _ = writeln!(text, "dt_nominal={}", report.dt_nominal);
    let _ = writeln!(text, "dt_jitter_max={}", report.dt_jitter_max);
    for warning in &report.warnings {
        let _ = writeln!(text, "warning={warning}");
    }
    let _ = writeln!(text, "out={}", out.display());
    text
}

/// Key-value rendering of a fit report (the human-readable half of the
/// identify output).
pub fn format_fit_report(report: &FitReport) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "base_cycle={}", report.base_cycle);
    let _ = writeln!(text, "solver={}", report.solver);
    let _ = writeln!(text, "m={}", report.m());
    for (j, value) in report.theta.iter().enumerate() {
        let _ = writeln!(text, "theta_{}={}", j + 1, value);
    }
    let _ = writeln!(text, "rmse_train={}", report.rmse_train);
    let _ = writeln!(text, "condition_number={}", report.condition_number);
    let _ = writeln!(text, "residual_norm={}", report.residual_norm);
    let _ = writeln!(text, "consistency={}", report.consistency);
    let _ = writeln!(
        text,
        "active_constraints={}",
        report
            .active_constraints
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    text
}

fn write_json(value: &impl serde::Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Schema(format!("JSON encoding failed: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_fit_report(path: &Path) -> Result<FitReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: not a fit report: {e}", path.display())))
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let map = ColumnMap::from_file(&args.map)?;
    ensure_dir(&args.out_dir)?;
    for raw in &args.files {
        let (index, path) = parse_index_path(raw)?;
        let (cycle, report) = ingest_csv_with(&path, &map, index, args.resample_dt)?;
        let out = args.out_dir.join(format!("cycle_{index}.csv"));
        write_canonical_csv(&cycle, &out)?;
        print!("{}", format_ingest_report(&path, index, &out, &report));
        println!();
    }
    Ok(())
}

/// Fit the base cycle and persist the report; shared by identify and run.
fn identify_stage(config: &RunConfig) -> Result<(CycleData, FitReport)> {
    let base = config.load_cycle(config.base_cycle)?;
    let report = fit_one_shot(&base, config.degree, config.bounds.as_ref())?;
    ensure_dir(&config.output_dir)?;
    write_json(&report, &config.output_dir.join("fit_report.json"))?;
    Ok((base, report))
}

fn cmd_identify(args: &IdentifyArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut config)?;
    let (_, report) = identify_stage(&config)?;
    print!("{}", format_fit_report(&report));
    Ok(())
}

fn eval_table(results: &[EvalResult]) -> String {
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:>11}  {:>12}  {:>14}  {:>10}  mode",
        "cycle_index", "rmse_c", "max_abs_err_c", "pearson_r"
    );
    for r in results {
        let _ = writeln!(
            text,
            "{:>11}  {:>12.6}  {:>14.6}  {:>10.6}  {}",
            r.cycle_index, r.rmse, r.max_abs_err, r.pearson_r, r.mode
        );
    }
    text
}

fn write_eval_csv(results: &[EvalResult], path: &Path) -> Result<()> {
    let mut out = String::from("cycle_index,rmse_c,max_abs_err_c,pearson_r,mode\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.cycle_index, r.rmse, r.max_abs_err, r.pearson_r, r.mode
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Evaluate targets and export per-cycle profiles; returns results plus the
/// file names written.
fn predict_stage(
    config: &RunConfig,
    theta: &LinearParams,
    targets: &[(u32, PathBuf)],
) -> Result<(Vec<EvalResult>, Vec<String>)> {
    ensure_dir(&config.output_dir)?;
    let mut results = Vec::new();
    let mut written = Vec::new();
    for (index, path) in targets {
        let cycle = read_canonical_csv(path, config.q0_ah, config.soc0, *index)?;
        let result = evaluate_cycle(&cycle, theta, config.mode)?;
        let pred = simulate_cycle(&cycle, theta, config.mode)?;
        let name = format!("profile_cycle_{index}.csv");
        export_profiles(&[(&cycle, pred)], config.output_dir.join(&name))?;
        written.push(name);
        results.push(result);
    }
    let csv_name = "eval_results.csv".to_string();
    write_eval_csv(&results, &config.output_dir.join(&csv_name))?;
    written.push(csv_name);
    Ok((results, written))
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut config)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| config.output_dir.join("fit_report.json"));
    let report = read_fit_report(&report_path)?;
    if report.m() != config.degree + 4 {
        return Err(Error::ModelMismatch {
            model: report.m(),
            cycle: config.degree + 4,
        });
    }
    let targets: Vec<(u32, PathBuf)> = if args.files.is_empty() {
        config
            .eval_cycles
            .iter()
            .map(|&i| (i, config.cycle_path(i)))
            .collect()
    } else {
        args.files
            .iter()
            .map(|raw| parse_index_path(raw))
            .collect::<Result<_>>()?
    };
    if targets.is_empty() {
        return Err(Error::Config(
            "nothing to predict: eval_cycles is empty and no INDEX=PATH given".into(),
        ));
    }
    let theta = report.linear_params()?;
    let (results, _) = predict_stage(&config, &theta, &targets)?;
    print!("{}", eval_table(&results));
    Ok(())
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut config)?;

    // Ingest raw exports first when the config carries them.
    if !config.raw_files.is_empty() {
        let map = config
            .column_map
            .as_ref()
            .expect("validated at load time");
        ensure_dir(&config.cycles_dir)?;
        for (index, path) in &config.raw_files {
            let (cycle, report) =
                ingest_csv_with(path, map, *index, config.resample_dt)?;
            let out = config.cycles_dir.join(format!("cycle_{index}.csv"));
            write_canonical_csv(&cycle, &out)?;
            print!("{}", format_ingest_report(path, *index, &out, &report));
            println!();
        }
    }

    let (base, report) = identify_stage(&config)?;
    print!("{}", format_fit_report(&report));
    println!();

    let theta = report.linear_params()?;
    let mut written = vec!["fit_report.json".to_string()];

    // Profile of the training cycle itself, simulated in the configured mode.
    let base_pred = simulate_cycle(&base, &theta, config.mode)?;
    let base_profile = format!("profile_cycle_{}.csv", config.base_cycle);
    export_profiles(
        &[(&base, base_pred)],
        config.output_dir.join(&base_profile),
    )?;
    written.push(base_profile);

    if !config.eval_cycles.is_empty() {
        let targets: Vec<(u32, PathBuf)> = config
            .eval_cycles
            .iter()
            .map(|&i| (i, config.cycle_path(i)))
            .collect();
        let (results, more) = predict_stage(&config, &theta, &targets)?;
        print!("{}", eval_table(&results));
        written.extend(more);
    }

    // Manifest of everything produced, with content hashes.
    written.sort();
    let mut manifest = String::new();
    for name in &written {
        let hex = sha256_hex(&config.output_dir.join(name))?;
        let _ = writeln!(manifest, "{hex}  {name}");
    }
    let manifest_path = config.output_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    println!("manifest={}", manifest_path.display());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let theta = match (&args.theta, args.r_t, args.c_t, &args.eta) {
        (Some(values), None, None, None) => LinearParams::new(values.clone())?,
        (None, Some(r_t), Some(c_t), Some(eta)) => {
            let p = PhysicalParams::new(r_t, c_t, Polynomial::new(eta.clone())?)?;
            params_to_linear(&p, args.dt)?
        }
        _ => {
            return Err(Error::Config(
                "give either --theta or all of --r-t, --c-t and --eta".into(),
            ))
        }
    };
    let spec = SynthSpec {
        theta_true: theta,
        input_profile: args.profile.parse::<InputProfile>()?,
        noise_sigma: args.noise_sigma,
        length: args.length,
        seed: args.seed,
        dt: args.dt,
        q0_ah: args.q0,
        soc0: args.soc0,
        ts0: args.ts0,
        ambient: args.ambient,
    };
    let cycle = synth_generate(&spec)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_canonical_csv(&cycle, &args.out)?;
    if let Some(truth_out) = &args.truth_out {
        write_json(&spec, truth_out)?;
    }
    println!("out={}", args.out.display());
    println!("samples={}", cycle.len());
    if let Some(warning) = cycle.meta().get("warning") {
        println!("warning={warning}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Identify(args) => cmd_identify(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

/// Entry point used by the `ectm` binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_cover_documented_failures() {
        assert_eq!(
            exit_code(&Error::IllConditioned {
                condition: 1e15,
                threshold: 1e12,
                columns: vec![]
            }),
            4
        );
        assert_eq!(
            exit_code(&Error::NonConvergence {
                max_iter: 1,
                kkt_residual: 1.0,
                last_iterate: vec![]
            }),
            6
        );
        assert_eq!(
            exit_code(&Error::ModelMismatch { model: 9, cycle: 7 }),
            5
        );
        assert_eq!(
            exit_code(&Error::io("x".to_string(), std::io::Error::other("nope"))),
            3
        );
        assert_eq!(exit_code(&Error::Config("bad".into())), 2);
        assert_eq!(
            exit_code(&Error::MissingColumn {
                column: "V".into(),
                mapped_by: "voltage_col".into(),
                path: "f.csv".into()
            }),
            2
        );
    }

    #[test]
    fn run_config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.conf");
        std::fs::write(
            &config_path,
            "cycles_dir = data\noutput_dir = out\nbase_cycle = 15\neval_cycles = 40,128\n\
             degree = 5\nmode = free_running\nq0_ah = 2.0\nsoc0 = 0.0\n",
        )
        .unwrap();
        let config = RunConfig::load(&config_path).unwrap();
        assert_eq!(config.base_cycle, 15);
        assert_eq!(config.eval_cycles, vec![40, 128]);
        assert_eq!(config.degree, 5);
        assert_eq!(config.mode, PredictionMode::FreeRunning);
        assert_eq!(config.cycle_path(40), PathBuf::from("data/cycle_40.csv"));
    }

    #[test]
    fn run_config_rejects_train_test_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.conf");
        std::fs::write(
            &config_path,
            "cycles_dir = data\noutput_dir = out\nbase_cycle = 15\neval_cycles = 15,40\nq0_ah = 2\n",
        )
        .unwrap();
        let err = RunConfig::load(&config_path).unwrap_err();
        assert!(err.to_string().contains("train/test"));
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.conf");
        std::fs::write(
            &config_path,
            "cycles_dir = d\noutput_dir = o\nbase_cycle = 1\nq0_ah = 2\nbananas = 3\n",
        )
        .unwrap();
        let err = RunConfig::load(&config_path).unwrap_err();
        assert!(err.to_string().contains("bananas"));
    }

    #[test]
    fn run_config_box_requires_matching_length() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.conf");
        std::fs::write(
            &config_path,
            "cycles_dir = d\noutput_dir = o\nbase_cycle = 1\nq0_ah = 2\ndegree = 1\n\
             box_lower = 0,0\nbox_upper = 1,1\n",
        )
        .unwrap();
        let err = RunConfig::load(&config_path).unwrap_err();
        assert!(err.to_string().contains("5 values"), "{err}");
    }

    #[test]
    fn index_path_pairs_parse() {
        let (index, path) = parse_index_path("15=data/raw 15.csv").unwrap();
        assert_eq!(index, 15);
        assert_eq!(path, PathBuf::from("data/raw 15.csv"));
        assert!(parse_index_path("no-equals").is_err());
        assert!(parse_index_path("x=path").is_err());
    }

    #[test]
    fn fit_report_rendering_is_stable() {
        let report = FitReport {
            theta: vec![0.5, 0.5, 0.25, -0.75],
            rmse_train: 0.125,
            condition_number: 32.0,
            residual_norm: 1.5,
            active_constraints: vec![0, 3],
            consistency: 0.0,
            base_cycle: 15,
            solver: crate::identify::SolverKind::BoxConstrained,
        };
        let text = format_fit_report(&report);
        assert_eq!(
            text,
            "base_cycle=15\nsolver=box_constrained\nm=4\ntheta_1=0.5\ntheta_2=0.5\n\
             theta_3=0.25\ntheta_4=-0.75\nrmse_train=0.125\ncondition_number=32\n\
             residual_norm=1.5\nconsistency=0\nactive_constraints=0,3\n"
        );
    }
}
