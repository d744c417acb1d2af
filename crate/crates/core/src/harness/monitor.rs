use serde::{Deserialize, Serialize};

use crate::faultproc::RC_SUCCESS;
use crate::formats::Table;
use crate::store::ObjectStore;

/// What a platform monitor can tell about an exit. Every kill, whatever
/// its cause, surfaces as the same runtime exit error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitClass {
    Success,
    RuntimeExitError,
    HandledException,
}

impl ExitClass {
    pub fn of(returncode: i32) -> Self {
        match returncode {
            RC_SUCCESS => ExitClass::Success,
            rc if rc < 0 || rc > 128 => ExitClass::RuntimeExitError,
            _ => ExitClass::HandledException,
        }
    }
}

/// Everything an external observer sees: the exit class and the row count
/// a reader gets from the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorView {
    pub exit_class: ExitClass,
    pub row_count: u64,
}

/// A missing or unreadable table reads as zero rows.
pub fn monitor_view(store: &ObjectStore, table: &Table, returncode: i32) -> MonitorView {
    MonitorView {
        exit_class: ExitClass::of(returncode),
        row_count: table.visible_row_count(store).unwrap_or(0),
    }
}
