//! Command-line interface.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use commitgap_core::faultproc::KillSchedule;
use commitgap_core::formats::{Table, TableFormat};
use commitgap_core::harness::{
    execute_run, plan_runs, DesignFilter, ExperimentDesign, ExperimentSpec, KillPhase,
    MatrixOptions, MatrixOutput, Part, RunExecution, RunInput, Scale, Scenario,
    DEFAULT_CHECKPOINT_BUCKET, DEFAULT_NOISE_CV,
};
use commitgap_core::safewriter::{read_checkpoint, recover, RecoveryKind, SafeWriterConfig};
use commitgap_core::store::ObjectStore;
use commitgap_core::time::Millis;
use rayon::prelude::*;

use crate::env::EnvOverrides;
use crate::jsonl::{read_records, JsonlWriter};
use crate::report::{build, ReportOptions};
use crate::{dataset_csv, store_dir};

pub const DEFAULT_SEED: u64 = 20_260_322;

#[derive(Debug, Parser)]
#[command(name = "commitgap", version, about = "Commit-gap simulator for object-store table formats")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment matrix or a slice of it.
    Run(RunArgs),
    /// Run a single job and print its trace.
    Replay(ReplayArgs),
    /// Resolve checkpoints left in progress in a dumped store.
    Recover(RecoverArgs),
    /// Print tables and estimates from a results file.
    Report(ReportArgs),
    /// List or delete orphaned data files in a dumped store.
    Vacuum(VacuumArgs),
    /// Write the synthetic dataset as semicolon-delimited CSV.
    Dataset(DatasetArgs),
}

#[derive(Debug, Args)]
pub struct SafeWriterArgs {
    /// Platform timeout (ms).
    #[arg(long, default_value_t = commitgap_core::safewriter::DEFAULT_TIMEOUT_MS)]
    pub timeout_ms: Millis,
    /// Watchdog lead before the timeout (ms).
    #[arg(long, default_value_t = commitgap_core::safewriter::DEFAULT_WARN_BEFORE_MS)]
    pub warn_before_ms: Millis,
    #[arg(long, default_value = DEFAULT_CHECKPOINT_BUCKET)]
    pub checkpoint_bucket: String,
    /// Ignore environment overrides; flags win.
    #[arg(long)]
    pub ignore_env: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run the full design (the default when no selector is given).
    #[arg(long, conflicts_with_all = ["part", "format", "scenario", "scale"])]
    pub all: bool,
    #[arg(long)]
    pub part: Option<Part>,
    #[arg(long)]
    pub format: Option<TableFormat>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub scale: Option<Scale>,
    /// Override the run count of every selected cell.
    #[arg(long)]
    pub runs: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = "results.jsonl")]
    pub out: PathBuf,
    /// Summary document path; defaults to the output path with a
    /// `.summary.json` extension.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NOISE_CV)]
    pub noise_cv: f64,
    /// Worker threads; runs are isolated and records keep design order.
    #[arg(long)]
    pub parallel: Option<usize>,
    #[command(flatten)]
    pub sw: SafeWriterArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, default_value = "delta")]
    pub format: TableFormat,
    #[arg(long, default_value = "22k")]
    pub scale: Scale,
    #[arg(long, default_value = "baseline")]
    pub scenario: Scenario,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub index: u32,
    #[arg(long, default_value_t = DEFAULT_NOISE_CV)]
    pub noise_cv: f64,
    /// Dump the final store here.
    #[arg(long)]
    pub store_dir: Option<PathBuf>,
    #[command(flatten)]
    pub sw: SafeWriterArgs,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long)]
    pub store_dir: PathBuf,
    #[arg(long)]
    pub table_path: String,
    #[arg(long)]
    pub format: TableFormat,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[command(flatten)]
    pub table: TableArgs,
    #[arg(long, default_value = DEFAULT_CHECKPOINT_BUCKET)]
    pub checkpoint_bucket: String,
    #[arg(long)]
    pub ignore_env: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub input: PathBuf,
    /// Include exposure probabilities for the final window `--delta`.
    #[arg(long)]
    pub exposure: bool,
    #[arg(long, default_value_t = 10_000)]
    pub delta: Millis,
    #[arg(long, default_value_t = crate::report::DEFAULT_EVENTS_PER_MONTH)]
    pub events_per_month: f64,
    #[arg(long, default_value_t = commitgap_core::stats::DEFAULT_RETRIES)]
    pub retries: u32,
    /// Write the machine-readable summary here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the part A outcome distribution as CSV here.
    #[arg(long)]
    pub figure_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VacuumArgs {
    #[command(flatten)]
    pub table: TableArgs,
    /// Only list what would be deleted.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long, default_value = "22k")]
    pub scale: Scale,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one parsed command. `env` supplies environment overrides.
pub fn execute(cli: Cli, env: &EnvOverrides, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(a, env, out),
        Command::Replay(a) => cmd_replay(a, env, out),
        Command::Recover(a) => cmd_recover(a, env, out),
        Command::Report(a) => cmd_report(a, out),
        Command::Vacuum(a) => cmd_vacuum(a, out),
        Command::Dataset(a) => cmd_dataset(a, out),
    }
}

fn matrix_options(sw: &SafeWriterArgs, noise_cv: f64, env: &EnvOverrides) -> Result<MatrixOptions> {
    if !(noise_cv.is_finite() && noise_cv >= 0.0) {
        bail!("--noise-cv must be a non-negative number");
    }
    let mut cfg = SafeWriterConfig::new(sw.checkpoint_bucket.clone())
        .with_watchdog(commitgap_core::safewriter::WatchdogConfig::new(
            sw.timeout_ms,
            sw.warn_before_ms,
        )?);
    let mut timeout_ms = sw.timeout_ms;
    if !sw.ignore_env {
        env.apply(&mut cfg, &mut timeout_ms)?;
    }
    cfg.validate()?;
    Ok(MatrixOptions {
        noise_cv,
        safewriter: cfg,
        timeout_ms,
    })
}

fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

fn cmd_run(a: RunArgs, env: &EnvOverrides, out: &mut dyn Write) -> Result<()> {
    let options = matrix_options(&a.sw, a.noise_cv, env)?;
    let mut design = ExperimentDesign::default_table().filtered(&DesignFilter {
        part: a.part,
        format: a.format,
        scenario: a.scenario,
        scale: a.scale,
    });
    if let Some(n) = a.runs {
        design = design.with_runs(n);
    }
    let inputs = plan_runs(&design, a.seed);
    let runs: Vec<RunExecution> = match a.parallel {
        Some(n) if n > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(|| inputs.par_iter().map(|i| execute_run(i, &options)).collect()),
        _ => inputs.iter().map(|i| execute_run(i, &options)).collect(),
    };
    let output = MatrixOutput::from_executions(runs);
    for id in &output.oracle_mismatches {
        log::warn!("{id}: exit status disagrees with the store");
    }

    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = JsonlWriter::new(file);
    for r in &output.records {
        w.write_record(r)?;
    }
    let report = build(&output.records, &ReportOptions::default());
    let summary = a.summary.unwrap_or_else(|| summary_path(&a.out));
    fs::write(&summary, report.to_json())
        .with_context(|| format!("writing {}", summary.display()))?;

    write!(out, "{}", report.render_text())?;
    writeln!(
        out,
        "wrote {} records to {} (summary {}); {} orphaned files, {} bytes",
        output.records.len(),
        a.out.display(),
        summary.display(),
        output.orphan_files,
        output.orphan_bytes
    )?;
    Ok(())
}

fn replay_scenario(a: &ReplayArgs, env: &EnvOverrides) -> Scenario {
    if a.sw.ignore_env {
        return a.scenario;
    }
    let kill = match env.kill {
        Some(KillSchedule::AfterPhase { phase }) => KillPhase::from(Some(phase)),
        Some(_) => KillPhase::None,
        None => KillPhase::from(a.scenario.kill_phase()),
    };
    let sw = env.use_safe_writer.unwrap_or(a.scenario.safewriter());
    Scenario::from_parts(kill, sw)
}

fn cmd_replay(a: ReplayArgs, env: &EnvOverrides, out: &mut dyn Write) -> Result<()> {
    let options = matrix_options(&a.sw, a.noise_cv, env)?;
    let scenario = replay_scenario(&a, env);
    let input = RunInput {
        spec: ExperimentSpec {
            part: Part::A,
            format: a.format,
            scale: a.scale,
            scenario,
            runs: 1,
        },
        index: a.index,
        sequence: u64::from(a.index),
        seed: a.seed,
    };
    let run = execute_run(&input, &options);
    print_trace(&run, &options, out)?;
    if let Some(dir) = &a.store_dir {
        let n = store_dir::dump(&run.store, dir)?;
        writeln!(out, "store: {n} objects dumped to {}", dir.display())?;
    }
    Ok(())
}

fn opt(t: Option<Millis>) -> String {
    t.map_or("-".into(), |t| t.to_string())
}

fn print_trace(run: &RunExecution, options: &MatrixOptions, out: &mut dyn Write) -> Result<()> {
    let r = &run.record;
    let t = &run.result.trace;
    writeln!(out, "run      {}", r.run_id)?;
    writeln!(
        out,
        "config   {} {} {} safewriter={}",
        r.table_format.tag(),
        r.dataset,
        r.scenario(),
        r.use_safe_writer
    )?;
    writeln!(out, "table    {}", run.table.path)?;
    writeln!(out, "{:>8}  {:>8}  step", "start", "end")?;
    let mut events: Vec<(Millis, bool, &commitgap_core::faultproc::StepRecord)> = t
        .steps
        .iter()
        .map(|s| (s.start, false, s))
        .chain(t.background.iter().map(|s| (s.start, true, s)))
        .collect();
    events.sort_by_key(|(start, main, _)| (*start, *main));
    for (_, background, s) in events {
        writeln!(
            out,
            "{:>8}  {:>8}  {}{}{}",
            s.start,
            s.end,
            if background { "[watchdog] " } else { "" },
            s.name,
            if s.completed { "" } else { "  (interrupted)" }
        )?;
    }
    writeln!(out, "t_d      {}", opt(t.t_d))?;
    writeln!(out, "t_c      {}", opt(t.t_c))?;
    if let Some(fired) = t.watchdog_fired_at {
        writeln!(out, "watchdog fired {fired}, rollback done {}", opt(t.watchdog_finished_at))?;
    }
    match (t.killed_at, t.kill_cause) {
        (Some(at), Some(cause)) => writeln!(out, "killed   {at} ({cause:?})")?,
        _ => writeln!(out, "killed   -")?,
    }
    let after = run
        .table
        .read_version(&run.store)
        .map_or("unreadable".into(), |v| v.value.to_string());
    writeln!(out, "version  {} -> {after}", run.version_before.value)?;
    writeln!(out, "rows     {} -> {}", run.monitor_before.row_count, run.monitor_after.row_count)?;
    writeln!(out, "orphans  {}", run.orphans.len())?;
    for k in &run.orphans {
        writeln!(out, "  {k}")?;
    }
    let ckpt = read_checkpoint(&run.store, &options.safewriter.checkpoint_bucket, &r.run_id)
        .map_or("none".to_string(), |d| format!("{:?}", d.status).to_lowercase());
    writeln!(out, "checkpoint {ckpt}")?;
    for line in &t.audit {
        writeln!(out, "audit    {line}")?;
    }
    writeln!(out, "returncode {}", r.returncode)?;
    writeln!(out, "outcome  {} (store: {:?})", r.outcome, run.oracle)?;
    Ok(())
}

fn latest_instant(store: &ObjectStore) -> Millis {
    store.objects().map(|o| o.put_completed_at).max().unwrap_or(0) + 1
}

fn cmd_recover(a: RecoverArgs, env: &EnvOverrides, out: &mut dyn Write) -> Result<()> {
    let bucket = match (&env.checkpoint_bucket, a.ignore_env) {
        (Some(b), false) => b.clone(),
        _ => a.checkpoint_bucket.clone(),
    };
    let dir = &a.table.store_dir;
    let mut store = store_dir::load(dir)?;
    let table = Table::new(a.table.table_path.clone(), a.table.format);
    if !table.exists(&store) {
        bail!("no {} table at {}", a.table.format.tag(), a.table.table_path);
    }
    let now = latest_instant(&store);
    let report = recover(&mut store, &bucket, &table, now);
    if report.is_empty() {
        writeln!(out, "no action")?;
        return Ok(());
    }
    for act in &report.actions {
        let what = match act.action {
            RecoveryKind::CompletedRollback => "completed rollback",
            RecoveryKind::MarkedRolledBack => "marked rolled back",
            RecoveryKind::Skipped => "skipped (other format)",
        };
        writeln!(
            out,
            "{}: {what} (version before {}, found {})",
            act.run_id,
            act.version_before,
            act.version_found.map_or("-".into(), |v| v.to_string())
        )?;
    }
    for m in &report.malformed {
        writeln!(out, "{}: malformed checkpoint ({})", m.key, m.reason)?;
    }
    store_dir::dump(&store, dir)?;
    Ok(())
}

fn cmd_vacuum(a: VacuumArgs, out: &mut dyn Write) -> Result<()> {
    let dir = &a.table.store_dir;
    let mut store = store_dir::load(dir)?;
    let table = Table::new(a.table.table_path.clone(), a.table.format);
    let orphans = table.find_orphans(&store)?;
    let bytes: u64 = orphans.iter().filter_map(|k| store.get(k)).map(|p| p.len()).sum();
    for k in &orphans {
        writeln!(out, "{k}")?;
    }
    if a.dry_run {
        writeln!(out, "{} orphaned files, {bytes} bytes (dry run)", orphans.len())?;
        return Ok(());
    }
    let now = latest_instant(&store);
    let removed = table.vacuum(&mut store, now)?;
    // Rewrite the directory from scratch so deleted objects disappear.
    fs::remove_dir_all(dir)?;
    store_dir::dump(&store, dir)?;
    writeln!(out, "removed {removed} orphaned files, {bytes} bytes")?;
    Ok(())
}

fn cmd_report(a: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let read = read_records(BufReader::new(file))?;
    let opts = ReportOptions {
        delta_ms: a.exposure.then_some(a.delta),
        events_per_month: a.events_per_month,
        retries: a.retries,
        ..ReportOptions::default()
    };
    let report = build(&read.records, &opts);
    if read.dropped_tail.is_some() {
        writeln!(out, "warning: skipped a corrupt trailing line")?;
    }
    write!(out, "{}", report.render_text())?;
    if let Some(p) = &a.json {
        fs::write(p, report.to_json())?;
    }
    if let Some(p) = &a.figure_csv {
        fs::write(p, report.figure_csv())?;
    }
    Ok(())
}

fn cmd_dataset(a: DatasetArgs, out: &mut dyn Write) -> Result<()> {
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let n = dataset_csv::write_csv(a.scale, a.seed, std::io::BufWriter::new(file))?;
    writeln!(out, "wrote {n} rows to {}", a.out.display())?;
    Ok(())
}
