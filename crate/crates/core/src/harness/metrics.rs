use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,epoch_time_s,effective_lr,eve_d";

/// One line of metrics.csv. Floats are written with Rust's shortest
/// round-trip formatting, so parsing a row gives back the same values.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Blank in the file when timing is disabled.
    pub epoch_time_s: Option<f64>,
    pub effective_lr: f64,
    /// Blank unless the optimizer is EVE.
    pub eve_d: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.val_loss,
            self.val_acc,
            opt(self.epoch_time_s),
            self.effective_lr,
            opt(self.eve_d)
        )
    }

    pub fn parse(line: &str) -> Result<MetricsRow> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 8 {
            return Err(Error::Format(format!("metrics row has {} fields: {line:?}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?} in metrics row")));
        let maybe = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(MetricsRow {
            epoch: f[0].parse().map_err(|_| Error::Format(format!("bad epoch {:?}", f[0])))?,
            train_loss: num(f[1])?,
            train_acc: num(f[2])?,
            val_loss: num(f[3])?,
            val_acc: num(f[4])?,
            epoch_time_s: maybe(f[5])?,
            effective_lr: num(f[6])?,
            eve_d: maybe(f[7])?,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == METRICS_HEADER => {}
        _ => return Err(Error::Format(format!("{}: missing metrics header", path.display()))),
    }
    lines
        .map(|l| l.map_err(|e| Error::io(path, e)).and_then(|l| MetricsRow::parse(&l)))
        .collect()
}

/// Append-only metrics.csv writer; every row is flushed as it is written.
#[derive(Debug)]
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    last_epoch: usize,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        file.flush().map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { path: path.to_path_buf(), file, last_epoch: 0 })
    }

    /// Reopens an existing file keeping only the first `epochs` rows, so a
    /// resumed run continues exactly where its checkpoint left off.
    pub fn resume(path: &Path, epochs: usize) -> Result<Self> {
        let rows = read_metrics(path)?;
        if rows.len() < epochs {
            return Err(Error::Format(format!(
                "{} has {} rows but the checkpoint is at epoch {epochs}",
                path.display(),
                rows.len()
            )));
        }
        let mut w = Self::create(path)?;
        for r in &rows[..epochs] {
            w.append(r)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        if row.epoch <= self.last_epoch {
            return Err(Error::Internal(format!("metrics epoch {} after {}", row.epoch, self.last_epoch)));
        }
        writeln!(self.file, "{}", row.to_csv()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.last_epoch = row.epoch;
        Ok(())
    }
}
