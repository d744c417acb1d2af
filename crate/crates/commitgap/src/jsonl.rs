//! Line-delimited JSON run records.
//!
//! Each record is serialized in full and handed to the sink in one `write`
//! call, so a crash leaves at most one partial line at the end of the file.
//! The reader drops such a tail with a warning.

use std::io::{self, BufRead, Write};

use commitgap_core::harness::RunRecord;
use log::warn;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("short write: {written} of {expected} bytes")]
    ShortWrite { written: usize, expected: usize },
}

pub struct JsonlWriter<W: Write> {
    inner: W,
    written: usize,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    pub fn write_record(&mut self, record: &RunRecord) -> Result<(), JsonlError> {
        let mut line = serde_json::to_vec(record).expect("records always serialize");
        line.push(b'\n');
        let n = self.inner.write(&line)?;
        if n != line.len() {
            return Err(JsonlError::ShortWrite {
                written: n,
                expected: line.len(),
            });
        }
        self.written += 1;
        Ok(())
    }

    pub fn records_written(&self) -> usize {
        self.written
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Records read from a file, plus what had to be skipped.
#[derive(Debug, Default)]
pub struct ReadOutcome {
    pub records: Vec<RunRecord>,
    /// A trailing line that did not parse (a torn final write).
    pub dropped_tail: Option<String>,
}

/// Reads every record. A malformed line is only tolerated at the end of the
/// input; anywhere else it is an error.
pub fn read_records<R: BufRead>(reader: R) -> Result<ReadOutcome, JsonlError> {
    let mut out = ReadOutcome::default();
    let mut pending: Option<(usize, String, serde_json::Error)> = None;
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        if let Some((n, _, e)) = pending.take() {
            return Err(JsonlError::Parse { line: n, source: e });
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<RunRecord>(&line) {
            Ok(r) => out.records.push(r),
            Err(e) => {
                pending = Some((i + 1, String::from_utf8_lossy(&line).into_owned(), e));
            }
        }
    }
    if let Some((n, text, e)) = pending {
        warn!("skipping corrupt trailing line {n}: {e}");
        out.dropped_tail = Some(text);
    }
    Ok(out)
}
