use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use padrec::pipeline::EpochMetrics;
use padrec::{PadError, Result};

pub const LOCK_FILE: &str = "padrec.lock";

/// Exclusive claim on a run directory, released on drop.
pub struct RunDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn claim(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| PadError::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    PadError::Data(format!(
                        "{} is locked by another run ({}); delete the lock file if no run is active",
                        path.display(),
                        lock.display()
                    ))
                } else {
                    PadError::io(&lock, e)
                }
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(RunDir {
            path: path.to_path_buf(),
            lock,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let p = self.file(name);
        std::fs::write(&p, contents).map_err(|e| PadError::io(&p, e))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}

/// Appends one JSON object per epoch to `metrics.jsonl` and echoes progress to stderr.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
    error: Option<std::io::Error>,
}

impl MetricsLog {
    pub fn open(path: PathBuf, truncate: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(!truncate)
            .write(true)
            .truncate(truncate)
            .open(&path)
            .map_err(|e| PadError::io(&path, e))?;
        Ok(MetricsLog {
            path,
            file,
            error: None,
        })
    }

    pub fn record(&mut self, m: &EpochMetrics) {
        eprintln!(
            "[{}] epoch {:>3}  loss {:.5}  val HR@10 {:.2}  nDCG@10 {:.2}  {:.1}s",
            m.phase, m.epoch, m.loss, m.val_hr10, m.val_ndcg10, m.wall_seconds
        );
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(self.file, "{line}").and_then(|_| self.file.flush()) {
            self.error = Some(e);
        }
    }

    pub fn finish(self) -> Result<()> {
        match self.error {
            Some(e) => Err(PadError::io(self.path, e)),
            None => Ok(()),
        }
    }
}
