use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc,lr,wall_seconds";
pub const GRAD_NORMS_HEADER: &str = "epoch,step,pre_clip_norm,post_clip_norm";

/// One line of `metrics.csv`. Epochs are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.train_loss, self.train_acc, self.test_loss, self.test_acc, self.lr, self.wall_seconds
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::Format(format!("metrics row needs 7 fields: {line:?}")));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| Error::Format(format!("bad metrics field {:?}", f[i])))
        };
        Ok(Self {
            epoch: f[0].parse().map_err(|_| Error::Format(format!("bad epoch {:?}", f[0])))?,
            train_loss: num(1)?,
            train_acc: num(2)?,
            test_loss: num(3)?,
            test_acc: num(4)?,
            lr: num(5)?,
            wall_seconds: num(6)?,
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
        .map(|l| MetricsRow::parse_csv(&l.map_err(|e| Error::io(path, e))?))
        .collect()
}

/// Append-only CSV writer that flushes after every line.
pub struct CsvLog {
    path: PathBuf,
    file: File,
}

impl CsvLog {
    /// Starts a file with `header`, first writing `keep` (earlier rows carried
    /// over from a resumed run).
    pub fn create(path: &Path, header: &str, keep: &[String]) -> Result<Self> {
        let mut text = format!("{header}\n");
        for line in keep {
            text.push_str(line);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
