//! Deterministic simulator of table writes over an object store under hard
//! process kills, with a checkpoint/watchdog/rollback guard and the
//! experiment harness and statistics around it.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod faultproc;
pub mod formats;
pub mod harness;
pub mod safewriter;
pub mod stats;
pub mod store;
pub mod time;
