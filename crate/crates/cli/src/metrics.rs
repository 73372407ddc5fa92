//! Append-only CSV logs. Each row goes to the file in a single write, so a
//! killed process leaves only whole rows behind.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

pub const METRICS_HEADER: &str =
    "epoch,phase_index,objective,step,lr,loss,perplexity,tokens_per_sec,wall_ms";
pub const EVAL_LOG_HEADER: &str =
    "epoch,phase_index,objective,scoring,phenomenon,correct,total,accuracy";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub phase_index: usize,
    /// `CLM`/`MLM` for step rows, `CLM_epoch`, `CLM_end` and `CLM_abort`
    /// for epoch summaries, phase boundaries and aborted runs.
    pub objective: String,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub tokens_per_sec: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}\n",
            self.epoch,
            self.phase_index,
            self.objective,
            self.step,
            self.lr,
            self.loss,
            self.loss.exp(),
            self.tokens_per_sec,
            self.wall_ms
        )
    }
}

pub struct CsvLog {
    path: PathBuf,
    file: File,
    len: u64,
}

impl CsvLog {
    /// Starts a fresh file holding only `header`.
    pub fn create(path: &Path, header: &str) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            file,
            len: 0,
        };
        log.append(&format!("{header}\n"))?;
        Ok(log)
    }

    /// Reopens a file and drops anything past `len`, the length recorded
    /// alongside the checkpoint being resumed.
    pub fn resume(path: &Path, len: u64) -> Result<Self, CliError> {
        let mut file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        let actual = file.metadata().map_err(|e| CliError::io(path, e))?.len();
        if actual < len {
            return Err(CliError::Runtime(format!(
                "{} is shorter ({actual} bytes) than its checkpoint expects ({len})",
                path.display()
            )));
        }
        file.set_len(len).map_err(|e| CliError::io(path, e))?;
        file.seek(SeekFrom::Start(len))
            .map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            len,
        })
    }

    pub fn append(&mut self, row: &str) -> Result<(), CliError> {
        self.file
            .write_all(row.as_bytes())
            .map_err(|e| CliError::io(&self.path, e))?;
        self.file.flush().map_err(|e| CliError::io(&self.path, e))?;
        self.len += row.len() as u64;
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resume_truncates_to_recorded_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut log = CsvLog::create(&path, "a,b").unwrap();
        log.append("1,2\n").unwrap();
        let keep = log.len();
        log.append("3,4\n").unwrap();
        drop(log);
        let mut log = CsvLog::resume(&path, keep).unwrap();
        log.append("5,6\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n5,6\n");
        assert!(CsvLog::resume(&path, 1000).is_err());
    }

    #[test]
    fn row_has_every_column() {
        let row = MetricsRow {
            epoch: 1,
            phase_index: 0,
            objective: "CLM_end".into(),
            step: 9,
            lr: 0.5,
            loss: 0.0,
            tokens_per_sec: 0.0,
            wall_ms: 0,
        };
        assert_eq!(row.to_csv(), "1,0,CLM_end,9,0.5,0,1,0,0\n");
        assert_eq!(
            row.to_csv().split(',').count(),
            METRICS_HEADER.split(',').count()
        );
    }
}
