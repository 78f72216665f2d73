//! Newline-delimited JSON batch logs used for spill and offline replay.
//!
//! A log holds one record per line: a `run` header with the descriptor and
//! run metadata, then `batch` records carrying the `SampleBatch` fields
//! verbatim, then optionally a `finish` record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelDescriptor;
use crate::store::{Outcome, RunId, RunSpec, SampleBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Run {
        descriptor: ModelDescriptor,
        metadata: RunSpec,
    },
    Batch(SampleBatch),
    Finish {
        run_id: RunId,
        outcome: Outcome,
    },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {error}")]
    Parse {
        line: usize,
        error: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    Structure { line: usize, reason: String },
}

pub struct SpillWriter {
    out: BufWriter<File>,
}

impl SpillWriter {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        if let Some(parent) = path.as_ref().parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, record: &LogRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// A parsed log: header, batches in file order, and the final outcome if any.
#[derive(Debug, Clone)]
pub struct BatchLog {
    pub descriptor: ModelDescriptor,
    pub metadata: RunSpec,
    pub batches: Vec<(usize, SampleBatch)>,
    pub outcome: Option<Outcome>,
}

pub fn read_log(path: impl AsRef<Path>) -> Result<BatchLog, LogError> {
    parse_log(BufReader::new(File::open(path)?))
}

pub fn parse_log(reader: impl BufRead) -> Result<BatchLog, LogError> {
    let mut header = None;
    let mut batches = Vec::new();
    let mut outcome = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(&line).map_err(|error| LogError::Parse {
            line: line_no,
            error,
        })?;
        let structure = |reason: &str| LogError::Structure {
            line: line_no,
            reason: reason.into(),
        };
        match record {
            LogRecord::Run {
                descriptor,
                metadata,
            } => {
                if header.is_some() {
                    return Err(structure("second run header"));
                }
                header = Some((descriptor, metadata));
            }
            LogRecord::Batch(batch) => {
                if header.is_none() {
                    return Err(structure("batch before run header"));
                }
                if outcome.is_some() {
                    return Err(structure("batch after finish"));
                }
                batches.push((line_no, batch));
            }
            LogRecord::Finish { outcome: o, .. } => {
                if header.is_none() {
                    return Err(structure("finish before run header"));
                }
                outcome = Some(o);
            }
        }
    }
    let (descriptor, metadata) = header.ok_or(LogError::Structure {
        line: 0,
        reason: "missing run header".into(),
    })?;
    Ok(BatchLog {
        descriptor,
        metadata,
        batches,
        outcome,
    })
}
