//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//!
//! Two criteria cannot be met by a faithful implementation and are expected
//! to print FAIL: the (25, 25) Wilson figure and the rounded orphan cost. The
//! test fails if any other criterion fails, or if either of those starts
//! passing.

use std::collections::BTreeSet;
use std::time::Instant;

use commitgap_core::faultproc::{
    default_timing_profile, run_job, JobResult, JobSpec, KillSchedule, StallPoint, TimingProfile,
};
use commitgap_core::formats::{Table, TableFormat, WritePlan};
use commitgap_core::harness::{
    execute_run, monitor_view, run_matrix, DesignFilter, ExperimentDesign, ExperimentSpec,
    MatrixOptions, Outcome, Part, RunExecution, RunInput, Scale, Scenario, DEFAULT_NOISE_CV,
    JOB_START_MS,
};
use commitgap_core::safewriter::{
    read_checkpoint, recover, rollback_window_probability, CheckpointStatus, RecoveryKind,
    SafeWriterConfig, WatchdogConfig,
};
use commitgap_core::stats::{
    estimate_gap, exposure_probability, monte_carlo_exposure, orphan_cost, wilson_lower, Z95,
};
use commitgap_core::store::ObjectStore;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

const SEED: u64 = 20_260_322;
const KNOWN_FAILURES: [u32; 2] = [5, 7];
const GIB: f64 = 1_073_741_824.0;

struct Report {
    results: Vec<(u32, bool)>,
}

impl Report {
    fn record(&mut self, id: u32, title: &str, ok: bool, detail: String) {
        println!(
            "{} criterion {id:>2}: {title} ({detail})",
            if ok { "PASS" } else { "FAIL" }
        );
        self.results.push((id, ok));
    }
}

fn slice(part: Part, format: TableFormat, scenario: Scenario) -> ExperimentDesign {
    ExperimentDesign::default_table().filtered(&DesignFilter {
        part: Some(part),
        format: Some(format),
        scenario: Some(scenario),
        scale: None,
    })
}

fn runs_of(design: &ExperimentDesign, options: &MatrixOptions) -> Vec<RunExecution> {
    commitgap_core::harness::plan_runs(design, SEED)
        .iter()
        .map(|i| execute_run(i, options))
        .collect()
}

fn c1_baseline(r: &mut Report) {
    let started = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for format in TableFormat::ALL {
        let design = slice(Part::A, format, Scenario::Baseline);
        let expected = default_timing_profile(format, Scale::Small).total_ms();

        let quiet = run_matrix(&design, SEED, &MatrixOptions::noiseless());
        let row = &quiet.summary.rows[0];
        ok &= row.runs == 50 && row.success == 50;
        ok &= quiet.records.iter().all(|x| x.duration_ms == expected);

        let noisy = run_matrix(&design, SEED, &MatrixOptions::default());
        let row = &noisy.summary.rows[0];
        let sigma_mean = DEFAULT_NOISE_CV * expected as f64 / (row.runs as f64).sqrt();
        let off = (row.duration_mean_ms - expected as f64).abs();
        ok &= row.success == 50 && off <= 3.0 * sigma_mean;
        detail.push(format!(
            "{}: {}/50, mean {:.0} vs {expected}",
            format.tag(),
            row.success,
            row.duration_mean_ms
        ));
    }
    let secs = started.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    detail.push(format!("{secs:.2}s"));
    r.record(1, "baseline runs all succeed", ok, detail.join("; "));
}

fn c2_unprotected(r: &mut Report) {
    let mut ok = true;
    let mut detail = Vec::new();
    for format in TableFormat::ALL {
        for scenario in [Scenario::KillData, Scenario::KillCommit] {
            let runs = runs_of(&slice(Part::A, format, scenario), &MatrixOptions::default());
            let lost = runs
                .iter()
                .filter(|x| x.record.outcome == Outcome::SilentDataLoss)
                .count();
            ok &= runs.len() == 75 && lost == 75;
            for run in &runs {
                let after = run.table.read_version(&run.store).unwrap();
                ok &= after == run.version_before;
                ok &= run.monitor_after.row_count == run.monitor_before.row_count;
                ok &= !run.orphans.is_empty();
            }
            detail.push(format!("{} {}: {lost}/75", format.tag(), scenario));
        }
    }
    r.record(2, "unprotected gap kills are silent losses", ok, detail.join("; "));
}

fn c3_safewriter(r: &mut Report) {
    let options = MatrixOptions::default();
    let bucket = options.safewriter.checkpoint_bucket.clone();
    let mut ok = true;
    let mut detail = Vec::new();
    for format in TableFormat::ALL {
        for scenario in [Scenario::SwKillData, Scenario::SwKillCommit] {
            let runs = runs_of(&slice(Part::A, format, scenario), &options);
            let rolled = runs
                .iter()
                .filter(|x| x.record.outcome == Outcome::RollbackSuccess)
                .count();
            ok &= runs.len() == 25 && rolled == 25;
            for run in &runs {
                let doc = read_checkpoint(&run.store, &bucket, &run.record.run_id);
                ok &= doc.is_ok_and(|d| d.status == CheckpointStatus::RolledBack);
                ok &= run.monitor_after.row_count == run.monitor_before.row_count;
            }
            detail.push(format!("{} {}: {rolled}/25", format.tag(), scenario));
        }
    }
    r.record(3, "SafeWriter rolls back every gap kill", ok, detail.join("; "));
}

fn c4_scale(r: &mut Report) {
    let design = ExperimentDesign::default_table().filtered(&DesignFilter {
        part: Some(Part::B),
        ..Default::default()
    });
    let out = run_matrix(&design, SEED, &MatrixOptions::noiseless());
    let mut ok = true;
    for row in out.summary.rows.iter().filter(|x| x.scenario == Scenario::KillData) {
        ok &= row.silent_data_loss == row.runs;
    }
    let gap = |scale| {
        let f = |s| {
            out.summary
                .find(Some(Part::B), TableFormat::LogAppend, s, scale)
                .unwrap()
                .duration_mean_ms as u64
        };
        estimate_gap(f(Scenario::Baseline), f(Scenario::KillData)).unwrap()
    };
    let (small, large) = (gap(Scale::Small), gap(Scale::Large));
    ok &= small == 3_520 && large == 4_552;
    r.record(
        4,
        "silent loss at every scale, gap grows",
        ok,
        format!("gap 22k {small} ms, 500k {large} ms"),
    );
}

fn c5_wilson(r: &mut Report) {
    let cases = [(75, 0.952), (25, 0.869), (50, 0.929)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (n, want) in cases {
        let got = wilson_lower(n, n, Z95).unwrap();
        let hit = (got - want).abs() <= 0.001;
        ok &= hit;
        detail.push(format!(
            "({n},{n}) {got:.4} vs {want}{}",
            if hit { "" } else { " MISS" }
        ));
    }
    r.record(5, "Wilson lower bounds", ok, detail.join("; "));
}

fn c6_exposure(r: &mut Report) {
    let started = Instant::now();
    let closed = exposure_probability(3_500, 10_000).unwrap();
    let mc = monte_carlo_exposure(TableFormat::LogAppend, Scale::Small, 10_000, 100_000, SEED)
        .unwrap();
    let secs = started.elapsed().as_secs_f64();
    let ok = closed == 0.35 && (mc - 0.352).abs() <= 0.01 && secs < 30.0;
    r.record(
        6,
        "exposure model",
        ok,
        format!("closed form {closed}, Monte Carlo {mc:.4}, {secs:.1}s"),
    );
}

fn c7_orphans(r: &mut Report) {
    let mut inputs = Vec::new();
    for (i, format) in TableFormat::ALL.into_iter().cycle().take(300).enumerate() {
        inputs.push(RunInput {
            spec: ExperimentSpec {
                part: Part::A,
                format,
                scale: Scale::Small,
                scenario: Scenario::KillData,
                runs: 1,
            },
            index: i as u32,
            sequence: i as u64,
            seed: SEED,
        });
    }
    let bytes: u64 = inputs
        .iter()
        .map(|i| execute_run(i, &MatrixOptions::default()).orphan_bytes)
        .sum();
    let gib = bytes as f64 / GIB;
    let bytes_ok = ((gib - 1.1) / 1.1).abs() <= 0.02;
    let cost = orphan_cost(2.0, 3, 0.0479, 0.023).unwrap();
    let rounded = (cost * 1000.0).round() / 1000.0;
    let cost_ok = rounded == 0.006;
    r.record(
        7,
        "orphan accounting",
        bytes_ok && cost_ok,
        format!(
            "orphans {gib:.3} GiB{}; cost {cost:.7} rounds to ${rounded:.3}{}",
            if bytes_ok { "" } else { " MISS" },
            if cost_ok { "" } else { " MISS, expected $0.006" }
        ),
    );
}

fn fresh(format: TableFormat, scale: Scale) -> (ObjectStore, Table) {
    let table = Table::new("warehouse/t", format);
    let mut store = ObjectStore::new();
    table.create(&mut store, 0).unwrap();
    let instant = TimingProfile::from_run_means(0, 0);
    let seed = WritePlan::new(&table, "seed", scale.rows(), scale.csv_bytes(), scale.file_count(), instant);
    run_job(&mut store, &JobSpec::new(seed)).unwrap();
    (store, table)
}

fn c8_undetectable(r: &mut Report) {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 100,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = (0usize..2, 0usize..3, 0.0f64..1.0);
    let result = runner.run(&strategy, |(f, s, u)| {
        let (format, scale) = (TableFormat::ALL[f], Scale::ALL[s]);
        let p = default_timing_profile(format, scale);
        let (mut store, table) = fresh(format, scale);
        let plan = WritePlan::new(&table, "victim", scale.rows(), scale.csv_bytes(), scale.file_count(), p);
        let t_kill = p.data_durable_ms() + (u * p.gap_ms() as f64) as u64;
        let mut spec = JobSpec::new(plan);
        spec.start_at = JOB_START_MS;
        spec.kill = KillSchedule::AtTime { t_kill };
        let before = store.clone();
        let res = run_job(&mut store, &spec).unwrap();
        let pre = serde_json::to_vec(&monitor_view(&before, &table, res.returncode)).unwrap();
        let post = serde_json::to_vec(&monitor_view(&store, &table, res.returncode)).unwrap();
        if pre != post || res.returncode != -9 || table.find_orphans(&store).unwrap().is_empty() {
            return Err(TestCaseError::fail(format!(
                "{format:?} {scale:?} kill at {t_kill}: rc {} pre {} post {} orphans {:?} trace {:?}",
                res.returncode,
                String::from_utf8_lossy(&pre),
                String::from_utf8_lossy(&post),
                table.find_orphans(&store),
                res.trace.steps
            )));
        }
        Ok(())
    });
    let ok = result.is_ok();
    let detail = match result {
        Ok(()) => "100 random gap kills, monitor view unchanged".to_string(),
        Err(e) => format!("{e}"),
    };
    r.record(8, "gap kills are monitor-invisible", ok, detail);
}

/// What the edge case leaves behind.
struct EdgeResult {
    lost: bool,
    detectable: bool,
    orphans: usize,
}

const BUCKET: &str = "checkpoints";

fn sw() -> SafeWriterConfig {
    SafeWriterConfig::new(BUCKET).with_watchdog(WatchdogConfig::new(20_000, 2_000).unwrap())
}

fn edge_spec(table: &Table, sw_on: bool) -> JobSpec {
    let p = default_timing_profile(table.format, Scale::Small);
    let plan = WritePlan::new(table, "edge", 1_000, 4_000_000, 2, p);
    let mut spec = JobSpec::new(plan);
    spec.start_at = JOB_START_MS;
    spec.timeout_ms = 20_000;
    if sw_on {
        spec = spec.with_safewriter(sw());
    }
    spec
}

fn step_span(res: &JobResult, name: &str) -> (u64, u64) {
    let s = res.trace.steps.iter().find(|s| s.name == name).unwrap();
    (s.start, s.end)
}

/// Lost: the write's data is durable, unreachable and nobody was told.
/// Detectable: the caller saw an exception, or a checkpoint records that
/// the run did not commit.
fn judge(store: &ObjectStore, table: &Table, spec: &JobSpec, res: &JobResult) -> EdgeResult {
    let orphans = table.find_orphans(store).unwrap().len();
    let raised = res.error.is_some();
    let ckpt = read_checkpoint(store, BUCKET, &spec.plan.run_id).ok();
    let flagged = ckpt.is_some_and(|d| d.status != CheckpointStatus::Committed);
    let rolled_back = read_checkpoint(store, BUCKET, &spec.plan.run_id)
        .is_ok_and(|d| d.status == CheckpointStatus::RolledBack);
    EdgeResult {
        lost: orphans > 0 && !raised && !rolled_back && !flagged,
        detectable: raised || flagged,
        orphans,
    }
}

fn c9_edge_cases(r: &mut Report) {
    let mut rows: Vec<(String, bool)> = Vec::new();
    for format in TableFormat::ALL {
        let tag = format.tag();

        // Probe the step layout with a clean SafeWriter run.
        let (store0, table) = fresh(format, Scale::Small);
        let probe = run_job(&mut store0.clone(), &edge_spec(&table, true)).unwrap();
        let (ck_start, ck_end) = step_span(&probe, "sw:put_checkpoint");
        let (ck_start, ck_end) = (ck_start - JOB_START_MS, ck_end - JOB_START_MS);

        // Kill before phase 1: checkpoint saved, nothing written yet.
        let mut store = store0.clone();
        let spec = edge_spec(&table, true).with_kill(KillSchedule::AtTime { t_kill: ck_end });
        let res = run_job(&mut store, &spec).unwrap();
        let e = judge(&store, &table, &spec, &res);
        let report = recover(&mut store, BUCKET, &table, 100_000);
        let ok = !e.lost
            && e.detectable
            && e.orphans == 0
            && report.actions.len() == 1
            && report.actions[0].action == RecoveryKind::MarkedRolledBack;
        rows.push((format!("{tag} kill before phase 1: lost no, detectable yes"), ok));

        // Phase 2 kill without SafeWriter.
        let mut store = store0.clone();
        let spec = edge_spec(&table, false)
            .with_kill(KillSchedule::AfterPhase { phase: commitgap_core::faultproc::Phase::Commit });
        let res = run_job(&mut store, &spec).unwrap();
        let e = judge(&store, &table, &spec, &res);
        let unchanged = monitor_view(&store, &table, res.returncode)
            == monitor_view(&store0, &table, res.returncode);
        rows.push((
            format!("{tag} phase 2 kill, no SafeWriter: lost yes, detectable no"),
            e.lost && !e.detectable && unchanged,
        ));

        // Phase 2 kill with SafeWriter.
        let mut store = store0.clone();
        let spec = edge_spec(&table, true)
            .with_kill(KillSchedule::AfterPhase { phase: commitgap_core::faultproc::Phase::Commit });
        let res = run_job(&mut store, &spec).unwrap();
        let e = judge(&store, &table, &spec, &res);
        rows.push((
            format!("{tag} phase 2 kill, SafeWriter: lost no, detectable yes"),
            !e.lost && e.detectable && res.returncode == -9,
        ));

        // Kill during rollback, then recover.
        let mut store = store0.clone();
        let mut spec = edge_spec(&table, true);
        spec.stall = Some(StallPoint::AfterCommit);
        let fire = sw().watchdog.fire_offset();
        spec.kill = KillSchedule::AtTime { t_kill: fire + 60 };
        let res = run_job(&mut store, &spec).unwrap();
        let e = judge(&store, &table, &spec, &res);
        let stale = read_checkpoint(&store, BUCKET, "edge").unwrap();
        let report = recover(&mut store, BUCKET, &table, 100_000);
        let done = read_checkpoint(&store, BUCKET, "edge").unwrap();
        let restored = table
            .is_equivalent_to(&store, stale.version_before())
            .unwrap();
        let unlikely = rollback_window_probability(180, sw().watchdog.timeout_ms) < 0.01;
        rows.push((
            format!("{tag} kill during rollback: lost unlikely, detectable yes"),
            !e.lost
                && e.detectable
                && stale.status == CheckpointStatus::InProgress
                && report.actions[0].action == RecoveryKind::CompletedRollback
                && done.status == CheckpointStatus::RolledBack
                && restored
                && unlikely,
        ));

        // Kill during the checkpoint write.
        let mut store = store0.clone();
        let spec = edge_spec(&table, true)
            .with_kill(KillSchedule::AtTime { t_kill: (ck_start + ck_end) / 2 });
        let res = run_job(&mut store, &spec).unwrap();
        let e = judge(&store, &table, &spec, &res);
        rows.push((
            format!("{tag} kill during checkpoint write: lost no, detectable no"),
            !e.lost && !e.detectable && e.orphans == 0 && store.snapshot() == store0.snapshot(),
        ));

        // Concurrent writer commits first; this job's base is stale.
        let table_cc = table.clone().with_conflict_check(true);
        let mut store = store0.clone();
        let base = table_cc.read_version(&store).unwrap();
        let rival = WritePlan::new(&table_cc, "rival", 10, 100, 1, default_timing_profile(format, Scale::Small));
        run_job(&mut store, &JobSpec::new(rival)).unwrap();
        let mut spec = edge_spec(&table_cc, true);
        spec.start_at = 100_000;
        spec.base_version = Some(base);
        let res = run_job(&mut store, &spec).unwrap();
        let e = judge(&store, &table_cc, &spec, &res);
        rows.push((
            format!("{tag} concurrent write conflict: lost no, detectable yes"),
            !e.lost
                && e.detectable
                && commitgap_core::harness::classify(res.returncode, true) == Outcome::VisibleError,
        ));
    }
    for (name, ok) in &rows {
        println!("    {} {name}", if *ok { "ok  " } else { "BAD " });
    }
    let passed = rows.iter().filter(|x| x.1).count();
    r.record(
        9,
        "edge-case matrix",
        passed == rows.len(),
        format!("{passed}/{} rows", rows.len()),
    );
}

fn c10_determinism(r: &mut Report) {
    let started = Instant::now();
    let design = ExperimentDesign::default_table();
    let lines = |seed| {
        run_matrix(&design, seed, &MatrixOptions::default())
            .records
            .iter()
            .map(|x| serde_json::to_string(x).unwrap() + "\n")
            .collect::<String>()
    };
    let a = lines(SEED);
    let b = lines(SEED);
    let secs = started.elapsed().as_secs_f64();
    let n = a.lines().count();
    let ok = a == b && n == 860 && secs / 2.0 < 10.0;
    r.record(
        10,
        "full matrix is deterministic",
        ok,
        format!("{n} records, identical: {}, {secs:.1}s for two passes", a == b),
    );
}

fn c11_virtual_time(r: &mut Report) {
    // Durations are virtual: the same profile always yields the same
    // duration, and the reported real-cluster figure (7,779 ms) is not
    // something the simulator reproduces.
    let p = default_timing_profile(TableFormat::LogAppend, Scale::Small);
    let ids: BTreeSet<u64> = (0..3)
        .map(|_| {
            let (mut store, table) = fresh(TableFormat::LogAppend, Scale::Small);
            let plan = WritePlan::new(&table, "v", 1, 1, 1, p);
            run_job(&mut store, &JobSpec::new(plan)).unwrap().duration_ms
        })
        .collect();
    let ok = ids.len() == 1 && ids.contains(&7_644) && !ids.contains(&7_779);
    r.record(
        11,
        "wall-clock durations replaced by virtual profiles",
        ok,
        format!("virtual baseline {:?} ms", ids),
    );
}

#[test]
fn acceptance() {
    let mut r = Report {
        results: Vec::new(),
    };
    c1_baseline(&mut r);
    c2_unprotected(&mut r);
    c3_safewriter(&mut r);
    c4_scale(&mut r);
    c5_wilson(&mut r);
    c6_exposure(&mut r);
    c7_orphans(&mut r);
    c8_undetectable(&mut r);
    c9_edge_cases(&mut r);
    c10_determinism(&mut r);
    c11_virtual_time(&mut r);

    let failed: Vec<u32> = r.results.iter().filter(|x| !x.1).map(|x| x.0).collect();
    println!("failed criteria: {failed:?}; known divergences: {KNOWN_FAILURES:?}");
    assert_eq!(failed, KNOWN_FAILURES);
}
