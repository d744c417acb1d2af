//! Files, reports and the command line around the simulator core.

pub mod cli;
pub mod dataset_csv;
pub mod env;
pub mod jsonl;
pub mod report;
pub mod store_dir;
