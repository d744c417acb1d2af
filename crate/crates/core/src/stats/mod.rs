//! Closed-form models and run summaries.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faultproc::{default_timing_profile, run_job, JobSpec, KillSchedule, TimingProfile};
use crate::formats::{Table, TableFormat, WritePlan};
use crate::harness::{
    reconstruct, ExperimentSpec, Outcome, Part, RunRecord, Scale, Scenario, JOB_START_MS,
};
use crate::store::ObjectStore;
use crate::time::Millis;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

pub const DEFAULT_RETRIES: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need 0 <= k <= n and n >= 1, got n={n}, k={k}")]
    Counts { n: u64, k: u64 },
    #[error("z must be positive and finite, got {0}")]
    Quantile(f64),
    #[error("need 0 <= gap <= delta and delta > 0, got gap={gap_ms}, delta={delta_ms}")]
    Exposure { gap_ms: Millis, delta_ms: Millis },
    #[error("baseline mean {baseline_ms} is below kill mean {kill_ms}")]
    GapOrder { baseline_ms: Millis, kill_ms: Millis },
    #[error("cost inputs must be finite and non-negative")]
    CostInput,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("window [{start}, {start}+{len}) must be non-empty")]
    EmptyWindow { start: Millis, len: Millis },
}

/// Lower end of the Wilson score interval for `k` successes in `n` trials.
pub fn wilson_lower(n: u64, k: u64, z: f64) -> Result<f64, StatsError> {
    if n == 0 || k > n {
        return Err(StatsError::Counts { n, k });
    }
    if !(z.is_finite() && z > 0.0) {
        return Err(StatsError::Quantile(z));
    }
    let (nf, kf, z2) = (n as f64, k as f64, z * z);
    let spread = z * libm::sqrt(kf * (nf - kf) / nf + z2 / 4.0);
    let p = (kf + z2 / 2.0 - spread) / (nf + z2);
    Ok(p.clamp(0.0, 1.0))
}

/// Chance that a kill placed uniformly over the last `delta_ms` of a job
/// lands in a gap of `gap_ms`.
pub fn exposure_probability(gap_ms: Millis, delta_ms: Millis) -> Result<f64, StatsError> {
    if delta_ms == 0 || gap_ms > delta_ms {
        return Err(StatsError::Exposure { gap_ms, delta_ms });
    }
    Ok(gap_ms as f64 / delta_ms as f64)
}

/// Gap width as the difference between clean-run and data-kill durations.
pub fn estimate_gap(baseline_mean_ms: Millis, kill_mean_ms: Millis) -> Result<Millis, StatsError> {
    baseline_mean_ms
        .checked_sub(kill_mean_ms)
        .ok_or(StatsError::GapOrder {
            baseline_ms: baseline_mean_ms,
            kill_ms: kill_mean_ms,
        })
}

/// Monthly storage cost of orphans: `events * retries * size_gb * price`.
pub fn orphan_cost(
    events_per_month: f64,
    retries: u32,
    size_gb: f64,
    price_per_gb_month: f64,
) -> Result<f64, StatsError> {
    let inputs = [events_per_month, size_gb, price_per_gb_month];
    if inputs.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(StatsError::CostInput);
    }
    Ok(events_per_month * f64::from(retries) * size_gb * price_per_gb_month)
}

/// Orphaned volume left by one near-timeout event.
pub fn orphan_gb_per_event(retries: u32, size_gb: f64) -> f64 {
    f64::from(retries) * size_gb
}

/// Kill window for a Monte Carlo estimate, relative to job start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillWindow {
    pub lead_in_ms: Millis,
    pub start: Millis,
    pub len: Millis,
}

impl KillWindow {
    /// The final `delta_ms` of a job of profile `p`. Jobs shorter than the
    /// window are preceded by idle lead-in so the window fits.
    pub fn final_window(p: &TimingProfile, delta_ms: Millis) -> Self {
        let total = p.total_ms();
        let lead_in_ms = delta_ms.saturating_sub(total);
        Self {
            lead_in_ms,
            start: lead_in_ms + total - delta_ms,
            len: delta_ms,
        }
    }
}

/// Fraction of uniformly placed kills in `window` that leave every data
/// file durable and the commit absent, judged from the store.
pub fn monte_carlo_exposure_window(
    format: TableFormat,
    scale: Scale,
    profile: TimingProfile,
    window: KillWindow,
    trials: u64,
    seed: u64,
) -> Result<f64, StatsError> {
    if trials == 0 {
        return Err(StatsError::NoTrials);
    }
    if window.len == 0 {
        return Err(StatsError::EmptyWindow {
            start: window.start,
            len: window.len,
        });
    }
    let spec = ExperimentSpec {
        part: Part::A,
        format,
        scale,
        scenario: Scenario::KillData,
        runs: 1,
    };
    let table = Table::new("warehouse/exposure", format);
    let mut template = ObjectStore::new();
    crate::harness::seed_table(&mut template, &table, &spec);
    let before = table.read_version(&template).expect("seeded");
    let plan = WritePlan::new(
        &table,
        "exposure",
        scale.rows(),
        scale.csv_bytes(),
        scale.file_count(),
        profile,
    );
    let mut job = JobSpec::new(plan.clone());
    job.start_at = JOB_START_MS;
    job.lead_in_ms = window.lead_in_ms;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lost = 0u64;
    for _ in 0..trials {
        let mut store = template.clone();
        let t_kill = window.start + rng.random_range(0..window.len);
        job.kill = KillSchedule::AtTime { t_kill };
        let result = run_job(&mut store, &job).expect("valid job");
        let oracle = reconstruct(&store, &table, &plan, before, result.error.is_some(), None);
        if oracle.is_gap_loss() {
            lost += 1;
        }
    }
    Ok(lost as f64 / trials as f64)
}

/// Monte Carlo estimate of the exposure probability at the configured
/// (noise-free) profile for `format` and `scale`.
pub fn monte_carlo_exposure(
    format: TableFormat,
    scale: Scale,
    delta_ms: Millis,
    trials: u64,
    seed: u64,
) -> Result<f64, StatsError> {
    let profile = default_timing_profile(format, scale);
    let window = KillWindow::final_window(&profile, delta_ms);
    monte_carlo_exposure_window(format, scale, profile, window, trials, seed)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

/// Aggregate of one (part, format, scenario, scale) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub part: Option<Part>,
    pub table_format: TableFormat,
    pub scenario: Scenario,
    pub dataset: Scale,
    pub runs: u64,
    pub success: u64,
    pub rollback_success: u64,
    pub silent_data_loss: u64,
    pub visible_error: u64,
    pub dominant_outcome: Outcome,
    pub dominant_pct: f64,
    pub wilson_lower: f64,
    pub duration_mean_ms: f64,
    pub duration_std_ms: f64,
}

impl SummaryRow {
    pub fn count(&self, o: Outcome) -> u64 {
        match o {
            Outcome::Success => self.success,
            Outcome::RollbackSuccess => self.rollback_success,
            Outcome::SilentDataLoss => self.silent_data_loss,
            Outcome::VisibleError => self.visible_error,
        }
    }

    pub fn pct(&self, o: Outcome) -> f64 {
        100.0 * self.count(o) as f64 / self.runs as f64
    }

    pub fn duration_cv(&self) -> f64 {
        if self.duration_mean_ms == 0.0 {
            0.0
        } else {
            self.duration_std_ms / self.duration_mean_ms
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn total_runs(&self) -> u64 {
        self.rows.iter().map(|r| r.runs).sum()
    }

    pub fn find(
        &self,
        part: Option<Part>,
        format: TableFormat,
        scenario: Scenario,
        scale: Scale,
    ) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| {
            r.part == part && r.table_format == format && r.scenario == scenario && r.dataset == scale
        })
    }
}

type CellKey = (Option<Part>, TableFormat, Scenario, Scale);

/// Groups records by (part, format, scenario, scale), in that order.
pub fn summarize(records: &[RunRecord]) -> Summary {
    let mut cells: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.part(), r.table_format, r.scenario(), r.dataset))
            .or_default()
            .push(r);
    }
    let rows = cells
        .into_iter()
        .map(|((part, table_format, scenario, dataset), rs)| {
            let n = rs.len() as u64;
            let count = |o: Outcome| rs.iter().filter(|r| r.outcome == o).count() as u64;
            let dominant_outcome = Outcome::ALL
                .into_iter()
                .max_by_key(|o| (count(*o), core::cmp::Reverse(*o)))
                .expect("non-empty");
            let k = count(dominant_outcome);
            let durations: Vec<f64> = rs.iter().map(|r| r.duration_ms as f64).collect();
            let (mean, std) = mean_std(&durations);
            SummaryRow {
                part,
                table_format,
                scenario,
                dataset,
                runs: n,
                success: count(Outcome::Success),
                rollback_success: count(Outcome::RollbackSuccess),
                silent_data_loss: count(Outcome::SilentDataLoss),
                visible_error: count(Outcome::VisibleError),
                dominant_outcome,
                dominant_pct: 100.0 * k as f64 / n as f64,
                wilson_lower: wilson_lower(n, k, Z95).expect("k <= n, n >= 1"),
                duration_mean_ms: mean,
                duration_std_ms: std,
            }
        })
        .collect();
    Summary { rows }
}
