use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::formats::TableFormat;
use crate::harness::Scale;
use crate::time::Millis;

/// Phase durations of one write job.
///
/// ```text
/// start ── startup ── data puts ──┬── commit steps ──┬── shutdown ── end
///                                t_d               t_c
/// ```
///
/// A kill hook that fires at `t_d` sleeps `log_flush_ms` before the signal,
/// and a clean run spends `shutdown_ms` flushing and stopping after `t_c`.
/// With both set to the same value, "baseline duration minus kill duration"
/// equals `t_c - t_d` exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingProfile {
    pub startup_ms: Millis,
    pub data_write_ms: Millis,
    pub commit_ms: Millis,
    pub log_flush_ms: Millis,
    pub shutdown_ms: Millis,
}

pub const DEFAULT_STARTUP_MS: Millis = 3_000;
pub const LOG_FLUSH_MS: Millis = 100;

/// Mean durations of baseline runs and data-phase kill runs, per format and
/// scale. Snapshot-pointer baselines above 22k were never observed, so they
/// are extrapolated from the 22k gap scaled by the log-append gap growth.
const MEASURED: [(TableFormat, Scale, Millis, Millis); 6] = [
    (TableFormat::LogAppend, Scale::Small, 7_644, 4_124),
    (TableFormat::LogAppend, Scale::Medium, 7_638, 4_108),
    (TableFormat::LogAppend, Scale::Large, 9_020, 4_468),
    (TableFormat::SnapshotPointer, Scale::Small, 5_477, 4_090),
    (TableFormat::SnapshotPointer, Scale::Medium, 5_523, 4_132),
    (TableFormat::SnapshotPointer, Scale::Large, 6_230, 4_436),
];

impl TimingProfile {
    /// Builds a profile whose clean run lasts `baseline_ms` and whose
    /// data-phase kill run lasts `kill_ms`.
    pub fn from_run_means(baseline_ms: Millis, kill_ms: Millis) -> Self {
        let t_d = kill_ms.saturating_sub(LOG_FLUSH_MS);
        let startup = DEFAULT_STARTUP_MS.min(t_d);
        Self {
            startup_ms: startup,
            data_write_ms: t_d - startup,
            commit_ms: baseline_ms.saturating_sub(kill_ms),
            log_flush_ms: LOG_FLUSH_MS,
            shutdown_ms: LOG_FLUSH_MS,
        }
    }

    /// Offset of `t_d` from job start.
    pub fn data_durable_ms(&self) -> Millis {
        self.startup_ms + self.data_write_ms
    }

    /// Offset of `t_c` from job start.
    pub fn commit_done_ms(&self) -> Millis {
        self.data_durable_ms() + self.commit_ms
    }

    /// Duration of an uninterrupted run.
    pub fn total_ms(&self) -> Millis {
        self.commit_done_ms() + self.shutdown_ms
    }

    /// Duration of a run killed by the data-phase hook.
    pub fn phase1_ms(&self) -> Millis {
        self.data_durable_ms() + self.log_flush_ms
    }

    pub fn gap_ms(&self) -> Millis {
        self.commit_ms
    }

    /// Sequential per-file put durations; the remainder goes to the last file.
    pub fn data_put_durations(&self, files: usize) -> Vec<Millis> {
        split(self.data_write_ms, files)
    }

    /// Durations of the metadata steps. Log-append: conflict check, then the
    /// log entry put. Snapshot-pointer: manifest, manifest list, metadata and
    /// version hint puts.
    pub fn commit_step_durations(&self, format: TableFormat) -> Vec<Millis> {
        match format {
            TableFormat::LogAppend => split(self.commit_ms, 2),
            TableFormat::SnapshotPointer => split(self.commit_ms, 4),
        }
    }

    /// Scales every phase by one factor drawn from N(1, cv), clamped to
    /// [0.5, 1.5]. The kill hook's flush sleep is a fixed constant.
    pub fn jittered<R: Rng + ?Sized>(&self, rng: &mut R, cv: f64) -> Self {
        if cv <= 0.0 {
            return *self;
        }
        let normal = Normal::new(1.0, cv).expect("cv is finite and positive");
        let factor = normal.sample(rng).clamp(0.5, 1.5);
        let scale = |ms: Millis| libm::round(ms as f64 * factor) as Millis;
        Self {
            startup_ms: scale(self.startup_ms),
            data_write_ms: scale(self.data_write_ms),
            commit_ms: scale(self.commit_ms),
            log_flush_ms: self.log_flush_ms,
            shutdown_ms: scale(self.shutdown_ms),
        }
    }
}

fn split(total: Millis, parts: usize) -> Vec<Millis> {
    if parts == 0 {
        return Vec::new();
    }
    let each = total / parts as Millis;
    let mut out = vec![each; parts];
    out[parts - 1] = total - each * (parts as Millis - 1);
    out
}

pub fn default_timing_profile(format: TableFormat, scale: Scale) -> TimingProfile {
    let (_, _, baseline, kill) = MEASURED
        .iter()
        .copied()
        .find(|(f, s, _, _)| *f == format && *s == scale)
        .expect("every format/scale pair is tabulated");
    TimingProfile::from_run_means(baseline, kill)
}
