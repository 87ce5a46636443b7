use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mglrt_core::montecarlo::{family_key, point_stream, run_sweep, CurveRecord, Knobs, SweepSpec, ThresholdTable};
use mglrt_core::rng::{derive_seed, trial_rng};
use mglrt_core::scenario::{Hypothesis, Scenario, ScenarioConfig};

use crate::config::ExperimentConfig;
use crate::output::{self, CsvRow, CsvSink, JsonlSink, StructuredRecord};
use crate::parallel::RayonExecutor;
use crate::selftest::{self, Faults};
use crate::{presets, CliError};

#[derive(Debug, Parser)]
#[command(name = "mglrt", version, about = "Blind new-user detection experiments for DS/CDMA over fading channels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment file (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in experiment: fig1, fig2, fig3 or fig4.
    #[arg(long, global = true, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the oracle checks and print a pass/fail table.
    Selftest {
        #[arg(long, hide = true)]
        corrupt_geometry: bool,
    },
    /// Calibrate the H0 thresholds every grid point needs.
    Calibrate,
    /// Measure detection rates over the grid using calibrated thresholds.
    Sweep,
    /// Calibrate if needed and measure a single grid point.
    Run,
}

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli) -> Result<u8, CliError> {
    let executor = RayonExecutor::new(cli.threads)?;
    match &cli.command {
        Command::Selftest { corrupt_geometry } => {
            let start = Instant::now();
            let checks = selftest::run_suite(Faults { corrupt_geometry: *corrupt_geometry }, &executor);
            for c in &checks {
                println!("{c}");
            }
            println!("{} checks in {:.1} s", checks.len(), start.elapsed().as_secs_f64());
            match checks.iter().find(|c| !c.passed) {
                Some(failed) => {
                    eprintln!("invariant violated: {}", failed.name);
                    Ok(1)
                }
                None => Ok(0),
            }
        }
        Command::Calibrate => {
            let config = load_config(cli)?;
            let spec = config.spec();
            let path = config.output.thresholds_path();
            let mut table = output::read_thresholds(&path)?.unwrap_or_default();
            let before = table.entries.len();
            for knobs in spec.grid() {
                spec.thresholds(&knobs.apply(&spec.base), &mut table, &executor)?;
            }
            output::write_thresholds(&path, &table)?;
            println!("{}: {} thresholds ({} new)", path.display(), table.entries.len(), table.entries.len() - before);
            for e in &table.entries {
                println!("{:<13} eta = {:>12.6}  pfa = {}  trials = {}  {}", e.detector, e.threshold, e.target_pfa, e.calibration_trials, e.family);
            }
            Ok(0)
        }
        Command::Sweep => {
            let config = load_config(cli)?;
            let spec = config.spec();
            let path = config.output.thresholds_path();
            let mut table = output::read_thresholds(&path)?.ok_or_else(|| {
                CliError::Config(format!("no threshold table at {}; run `mglrt calibrate` first", path.display()))
            })?;
            require_thresholds(&spec, &table)?;
            let done = finished_points(&config, &spec)?;
            let skipped = spec.grid().iter().filter(|k| done.contains(&knob_key(k))).count();
            let records = measure(&config, &spec, &mut table, &executor, &done, None)?;
            print_summary(&records);
            if skipped > 0 {
                println!("{skipped} grid points already present in {} were skipped", config.output.csv_path().display());
            }
            Ok(0)
        }
        Command::Run => {
            let config = load_config(cli)?;
            let spec = config.spec();
            let grid = spec.grid();
            if grid.len() != 1 {
                return Err(CliError::Config(format!("`run` takes a single point but the grid has {}", grid.len())));
            }
            let path = config.output.thresholds_path();
            let mut table = output::read_thresholds(&path)?.unwrap_or_default();
            let before = table.clone();
            let params = grid[0].apply(&spec.base);
            spec.thresholds(&params, &mut table, &executor)?;
            if table != before {
                output::write_thresholds(&path, &table)?;
            }
            let snapshot = write_snapshot(&config, &spec, &grid[0])?;
            let records = measure(&config, &spec, &mut table, &executor, &HashSet::new(), Some(snapshot))?;
            print_summary(&records);
            Ok(0)
        }
    }
}

/// Configuration from `--config`, `--preset` or the defaults, with the
/// flag overrides applied.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => presets::preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out {
        config.output.dir = dir.clone();
    }
    config.validate().map_err(|(_, msg)| CliError::Config(msg))?;
    Ok(config)
}

fn require_thresholds(spec: &SweepSpec, table: &ThresholdTable) -> Result<(), CliError> {
    for knobs in spec.grid() {
        let params = knobs.apply(&spec.base);
        for det in &spec.detectors {
            let family = family_key(*det, &params, spec.mode);
            if table.get(*det, &family, spec.target_pfa).is_none() {
                return Err(CliError::Config(format!(
                    "no threshold for detector {det} in family {family} at target {}; run `mglrt calibrate` first",
                    spec.target_pfa
                )));
            }
        }
    }
    Ok(())
}

fn knob_key(k: &Knobs) -> String {
    format!("{:?}", k)
}

/// Grid points whose every detector already has a row with this seed and
/// trial count.
fn finished_points(config: &ExperimentConfig, spec: &SweepSpec) -> Result<HashSet<String>, CliError> {
    let rows = output::read_csv(&config.output.csv_path())?;
    let mut done = HashSet::new();
    for knobs in spec.grid() {
        let complete = spec.detectors.iter().all(|det| {
            rows.iter().any(|r| {
                r.detector == *det && r.knobs() == knobs && r.seed == spec.master_seed && r.trials == spec.trials
            })
        });
        if complete {
            done.insert(knob_key(&knobs));
        }
    }
    Ok(done)
}

fn measure(
    config: &ExperimentConfig,
    spec: &SweepSpec,
    table: &mut ThresholdTable,
    executor: &RayonExecutor,
    done: &HashSet<String>,
    snapshot: Option<String>,
) -> Result<Vec<CurveRecord>, CliError> {
    let mut csv = CsvSink::open(&config.output.csv_path())?;
    let mut jsonl = config.output.jsonl_path().map(|p| JsonlSink::open(&p)).transpose()?;
    let mut sink_error = None;
    let records = run_sweep(
        spec,
        table,
        executor,
        |rec| {
            let result = write_record(rec, spec, &mut csv, jsonl.as_mut(), snapshot.clone());
            if let Err(e) = result {
                let msg = e.to_string();
                sink_error = Some(e);
                return Err(mglrt_core::Error::NumericalDomain(msg));
            }
            Ok(())
        },
        |k| done.contains(&knob_key(k)),
    );
    match (records, sink_error) {
        (_, Some(e)) => Err(e),
        (r, None) => Ok(r?),
    }
}

fn write_record(
    rec: &CurveRecord,
    spec: &SweepSpec,
    csv: &mut CsvSink,
    jsonl: Option<&mut JsonlSink>,
    snapshot: Option<String>,
) -> Result<(), CliError> {
    csv.write(&CsvRow::from(rec))?;
    if let Some(sink) = jsonl {
        let params = rec.knobs().apply(&spec.base);
        sink.write(&StructuredRecord {
            record: rec.clone(),
            family: family_key(rec.detector, &params, spec.mode),
            stream: point_stream(&params, spec.mode, Hypothesis::H1),
            snapshot,
        })?;
    }
    Ok(())
}

/// Writes the draws of the first H1 trial of a point and returns the
/// file path.
fn write_snapshot(config: &ExperimentConfig, spec: &SweepSpec, knobs: &Knobs) -> Result<String, CliError> {
    let params = knobs.apply(&spec.base);
    let codes = spec.codes.codes(params.n, params.k_users, spec.master_seed)?;
    let scenario = Scenario::new(ScenarioConfig::new(params, Hypothesis::H1, spec.mode, codes.clone()))?;
    let stream = point_stream(&params, spec.mode, Hypothesis::H1);
    let mut rng = trial_rng(spec.master_seed, stream, 0);
    let draw = scenario.draw(&mut rng)?;
    let snapshot = draw.snapshot(derive_seed(spec.master_seed, stream, 0), Hypothesis::H1, &codes);
    let path = config.output.snapshot_path();
    output::write_snapshot(&path, &snapshot)?;
    Ok(path.display().to_string())
}

fn print_summary(records: &[CurveRecord]) {
    if records.is_empty() {
        println!("nothing to do");
        return;
    }
    println!(
        "{:<13} {:>7} {:>7} {:>6} {:>5} {:>2} {:>8} {:>7}  {:<15} {:>7}",
        "detector", "snr_db", "sir_db", "fd", "alpha", "K", "q_active", "Pd", "95% CI", "trials"
    );
    for r in records {
        println!(
            "{:<13} {:>7.2} {:>7.2} {:>6} {:>5} {:>2} {:>8} {:>7.4}  [{:.4}, {:.4}] {:>7}",
            r.detector.as_str(),
            r.snr_db,
            r.sir_db,
            r.fd,
            r.alpha,
            r.k_users,
            r.q_active,
            r.rate,
            r.ci_lo,
            r.ci_hi,
            r.trials
        );
    }
}
