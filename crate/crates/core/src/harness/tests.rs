use super::*;
use crate::faultproc::{default_timing_profile, run_job, JobSpec, KillSchedule};
use crate::formats::{Table, WritePlan};
use crate::store::ObjectStore;
use alloc::collections::BTreeSet;
use alloc::format;
use proptest::prelude::*;

#[test]
fn classify_examples() {
    assert_eq!(classify(0, false), Outcome::Success);
    assert_eq!(classify(0, true), Outcome::Success);
    assert_eq!(classify(-9, false), Outcome::SilentDataLoss);
    assert_eq!(classify(137, false), Outcome::SilentDataLoss);
    assert_eq!(classify(-9, true), Outcome::RollbackSuccess);
    assert_eq!(classify(1, false), Outcome::VisibleError);
    assert_eq!(classify(1, true), Outcome::VisibleError);
    assert_eq!(classify(2, false), Outcome::VisibleError);
}

#[test]
fn scale_sizes() {
    assert_eq!(Scale::Small.csv_bytes(), 3_984_589);
    assert_eq!(Scale::Medium.csv_bytes(), 9_856_614);
    assert_eq!(Scale::Large.csv_bytes(), 50_226_790);
    assert_eq!(Scale::ALL.map(Scale::file_count), [2, 5, 24]);
    assert_eq!("500K".parse::<Scale>(), Ok(Scale::Large));
    assert!("1m".parse::<Scale>().is_err());
}

#[test]
fn design_totals() {
    let d = ExperimentDesign::default_table();
    assert_eq!(d.total_runs(), 860);
    let a = d.filtered(&DesignFilter {
        part: Some(Part::A),
        ..Default::default()
    });
    assert_eq!(a.total_runs(), 500);
    let cell = d.filtered(&DesignFilter {
        part: Some(Part::A),
        format: Some(TableFormat::LogAppend),
        scenario: Some(Scenario::KillData),
        scale: None,
    });
    assert_eq!(cell.total_runs(), 75);
    let b = d.filtered(&DesignFilter {
        part: Some(Part::B),
        ..Default::default()
    });
    assert_eq!(b.specs.len(), 12);
    assert!(b.specs.iter().all(|s| s.runs == 30));
    assert_eq!(d.clone().with_runs(1).total_runs(), d.specs.len() as u64);
}

#[test]
fn scenario_round_trip() {
    for s in Scenario::ALL {
        let kill = KillPhase::from(s.kill_phase());
        assert_eq!(Scenario::from_parts(kill, s.safewriter()), s);
        assert_eq!(s.as_str().parse::<Scenario>(), Ok(s));
    }
}

fn one(part: Part, format: TableFormat, scale: Scale, scenario: Scenario) -> RunInput {
    RunInput {
        spec: ExperimentSpec {
            part,
            format,
            scale,
            scenario,
            runs: 1,
        },
        index: 7,
        sequence: 3,
        seed: 42,
    }
}

#[test]
fn run_id_shape() {
    let run = execute_run(
        &one(Part::A, TableFormat::LogAppend, Scale::Small, Scenario::KillData),
        &MatrixOptions::default(),
    );
    let id = &run.record.run_id;
    let parts: alloc::vec::Vec<&str> = id.split('-').collect();
    assert_eq!(parts.len(), 4, "{id}");
    assert_eq!(parts[0], "a");
    assert_eq!(parts[1], "kill_data");
    assert_eq!(parts[2], "0007");
    assert_eq!(parts[3].len(), 8);
    assert!(parts[3].chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(run.record.part(), Some(Part::A));
}

#[test]
fn record_has_exactly_nine_fields() {
    let out = run_matrix(
        &ExperimentDesign::default_table()
            .filtered(&DesignFilter {
                part: Some(Part::A),
                format: Some(TableFormat::SnapshotPointer),
                scenario: Some(Scenario::SwKillCommit),
                scale: None,
            })
            .with_runs(2),
        1,
        &MatrixOptions::default(),
    );
    let v = serde_json::to_value(&out.records[1]).unwrap();
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    let want: BTreeSet<&str> = [
        "run_id",
        "table_format",
        "dataset",
        "kill_phase",
        "use_safe_writer",
        "outcome",
        "duration_ms",
        "returncode",
        "timestamp",
    ]
    .into_iter()
    .collect();
    assert_eq!(keys, want);
    assert_eq!(v["table_format"], "iceberg");
    assert_eq!(v["kill_phase"], "commit");
    assert_eq!(v["dataset"], "22k");
    let t0 = &out.records[0].timestamp;
    assert!(t0.starts_with("2026-03-22T") && t0.ends_with('Z'));
    assert!(out.records[0].timestamp < out.records[1].timestamp);

    let mut extra = v.clone();
    extra["note"] = serde_json::Value::from("x");
    assert!(serde_json::from_value::<RunRecord>(extra).is_err());
}

#[test]
fn noiseless_matrix_slices() {
    let design = ExperimentDesign::default_table()
        .filtered(&DesignFilter {
            part: Some(Part::A),
            ..Default::default()
        })
        .with_runs(3);
    let out = run_matrix(&design, 9, &MatrixOptions::noiseless());
    assert!(out.oracle_mismatches.is_empty(), "{:?}", out.oracle_mismatches);
    for row in &out.summary.rows {
        let want = match row.scenario {
            Scenario::Baseline => Outcome::Success,
            Scenario::KillData | Scenario::KillCommit => Outcome::SilentDataLoss,
            Scenario::SwKillData | Scenario::SwKillCommit => Outcome::RollbackSuccess,
        };
        assert_eq!(row.dominant_outcome, want, "{row:?}");
        assert_eq!(row.dominant_pct, 100.0);
        assert_eq!(row.duration_std_ms, 0.0);
    }
    let base = out
        .summary
        .find(Some(Part::A), TableFormat::LogAppend, Scenario::Baseline, Scale::Small)
        .unwrap();
    let kill = out
        .summary
        .find(Some(Part::A), TableFormat::LogAppend, Scenario::KillData, Scale::Small)
        .unwrap();
    assert_eq!(base.duration_mean_ms, 7_644.0);
    assert_eq!(kill.duration_mean_ms, 4_124.0);
}

#[test]
fn silent_loss_runs_leave_orphans_and_agree_with_oracle() {
    for format in TableFormat::ALL {
        for scenario in [Scenario::KillData, Scenario::KillCommit] {
            let run = execute_run(
                &one(Part::A, format, Scale::Small, scenario),
                &MatrixOptions::default(),
            );
            assert_eq!(run.record.outcome, Outcome::SilentDataLoss);
            assert!(run.oracle.is_gap_loss(), "{format:?} {scenario:?} {:?}", run.oracle);
            assert!(run.oracle_agrees());
            assert_eq!(run.orphans.len(), Scale::Small.file_count());
            assert_eq!(run.orphan_bytes, Scale::Small.csv_bytes());
            assert_eq!(run.monitor_after.row_count, run.monitor_before.row_count);
        }
    }
}

#[test]
fn safewriter_runs_agree_with_oracle() {
    for format in TableFormat::ALL {
        for scenario in [Scenario::SwKillData, Scenario::SwKillCommit] {
            let run = execute_run(
                &one(Part::A, format, Scale::Small, scenario),
                &MatrixOptions::default(),
            );
            assert_eq!(run.record.outcome, Outcome::RollbackSuccess);
            assert_eq!(run.oracle, OracleOutcome::RolledBack);
            assert_eq!(run.monitor_after.row_count, run.monitor_before.row_count);
        }
    }
}

#[test]
fn retries_multiply_orphans() {
    for format in TableFormat::ALL {
        let table = Table::new("w/t", format);
        let mut store = ObjectStore::new();
        table.create(&mut store, 0).unwrap();
        let p = default_timing_profile(format, Scale::Small);
        let mut sets = alloc::vec::Vec::new();
        for attempt in 0..3u64 {
            let plan = WritePlan::new(&table, format!("attempt{attempt}"), 100, 4_000, 2, p);
            let mut spec = JobSpec::new(plan.clone()).with_kill(KillSchedule::AfterPhase {
                phase: crate::faultproc::Phase::Data,
            });
            spec.start_at = 1_000 + attempt * 100_000;
            assert_eq!(run_job(&mut store, &spec).unwrap().returncode, -9);
            sets.push(plan.keys().cloned().collect::<BTreeSet<_>>());
        }
        let orphans: BTreeSet<_> = table.find_orphans(&store).unwrap().into_iter().collect();
        assert_eq!(orphans.len(), 6);
        for (i, a) in sets.iter().enumerate() {
            assert!(a.is_subset(&orphans));
            for b in &sets[i + 1..] {
                assert!(a.is_disjoint(b));
            }
        }
        assert_eq!(table.visible_row_count(&store).unwrap(), 0);
    }
}

#[test]
fn gap_kill_is_invisible_to_monitor() {
    for format in TableFormat::ALL {
        let gap = execute_run(
            &one(Part::A, format, Scale::Small, Scenario::KillData),
            &MatrixOptions::default(),
        );
        // Same job killed before it wrote anything, and an out-of-memory
        // exit: the monitor cannot tell them apart.
        let table = gap.table.clone();
        let mut early_store = ObjectStore::new();
        seed_table(&mut early_store, &table, &gap.input.spec);
        let mut spec = JobSpec::new(gap.plan.clone());
        spec.start_at = JOB_START_MS;
        spec.kill = KillSchedule::AtTime { t_kill: JOB_START_MS + 10 };
        let early = run_job(&mut early_store, &spec).unwrap();
        let early_view = monitor_view(&early_store, &table, early.returncode);
        let oom_view = monitor_view(&early_store, &table, RC_KILLED_137);
        assert_eq!(gap.monitor_after, early_view);
        assert_eq!(gap.monitor_after, oom_view);
        assert_eq!(gap.monitor_after.exit_class, ExitClass::RuntimeExitError);
        assert!(table.find_orphans(&early_store).unwrap().is_empty());
        assert!(!gap.orphans.is_empty());
    }
}

#[test]
fn exit_classes() {
    assert_eq!(ExitClass::of(0), ExitClass::Success);
    assert_eq!(ExitClass::of(-9), ExitClass::RuntimeExitError);
    assert_eq!(ExitClass::of(137), ExitClass::RuntimeExitError);
    assert_eq!(ExitClass::of(1), ExitClass::HandledException);
}

#[test]
fn missing_table_reads_as_zero_rows() {
    let t = Table::new("nowhere", TableFormat::SnapshotPointer);
    assert_eq!(monitor_view(&ObjectStore::new(), &t, 0).row_count, 0);
}

#[test]
fn dataset_is_deterministic() {
    let d = DatasetSpec::new(Scale::Small);
    let a: alloc::vec::Vec<_> = d.rows(5).take(20).collect();
    let b: alloc::vec::Vec<_> = d.rows(5).take(20).collect();
    assert_eq!(a, b);
    assert_eq!(d.rows(5).len() as u64, Scale::Small.rows());
}

#[test]
fn timestamps_are_cumulative() {
    let mut rs = alloc::vec![
        RunRecord {
            run_id: "a-baseline-0000-00000000".into(),
            table_format: TableFormat::LogAppend,
            dataset: Scale::Small,
            kill_phase: KillPhase::None,
            use_safe_writer: false,
            outcome: Outcome::Success,
            duration_ms: 1_500,
            returncode: 0,
            timestamp: String::new(),
        };
        2
    ];
    assign_timestamps(&mut rs);
    assert_eq!(rs[0].timestamp, "2026-03-22T00:00:01Z");
    assert_eq!(rs[1].timestamp, "2026-03-22T00:00:03Z");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_agrees_under_noise(seed in any::<u64>(), which in 0usize..10) {
        let format = TableFormat::ALL[which % 2];
        let scenario = Scenario::ALL[which / 2];
        let mut input = one(Part::A, format, Scale::Small, scenario);
        input.seed = seed;
        let run = execute_run(&input, &MatrixOptions::default());
        prop_assert!(run.oracle_agrees(), "{:?} vs {:?}", run.oracle, run.record.outcome);
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), seq in 0u64..1_000) {
        let mut input = one(Part::B, TableFormat::SnapshotPointer, Scale::Small, Scenario::Baseline);
        input.seed = seed;
        input.sequence = seq;
        let a = execute_run(&input, &MatrixOptions::default());
        let b = execute_run(&input, &MatrixOptions::default());
        prop_assert_eq!(a.record, b.record);
    }
}
