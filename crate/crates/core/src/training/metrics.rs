use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{param_err, Result, SmtError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Running accuracy of the epoch's training passes.
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

/// Per-step and per-epoch training records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn push_step(&mut self, rec: StepRecord) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if rec.step <= last.step {
                return param_err(format!("step {} does not follow step {}", rec.step, last.step));
            }
        }
        self.steps.push(rec);
        Ok(())
    }

    pub fn push_epoch(&mut self, rec: EpochRecord) {
        self.epochs.push(rec);
    }

    /// `step,lr,loss` with full round-trip precision.
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{:?},{:?}", r.step, r.lr, r.loss);
        }
        s
    }

    /// `epoch,train_acc,eval_acc`; the last field is empty without an eval set.
    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,train_acc,eval_acc\n");
        for r in &self.epochs {
            let eval = r.eval_acc.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:?},{}", r.epoch, r.train_acc, eval);
        }
        s
    }

    /// Writes `metrics.csv` (steps) and `epochs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, body) in [("metrics.csv", self.steps_csv()), ("epochs.csv", self.epochs_csv())] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| SmtError::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut log = MetricsLog::default();
        log.push_step(StepRecord { step: 1, lr: 0.5, loss: 1.25 }).unwrap();
        log.push_step(StepRecord { step: 2, lr: 0.25, loss: 1.0 }).unwrap();
        log.push_epoch(EpochRecord { epoch: 1, train_acc: 0.5, eval_acc: None });
        log.push_epoch(EpochRecord { epoch: 2, train_acc: 0.75, eval_acc: Some(1.0) });
        assert_eq!(log.steps_csv(), "step,lr,loss\n1,0.5,1.25\n2,0.25,1.0\n");
        assert_eq!(log.epochs_csv(), "epoch,train_acc,eval_acc\n1,0.5,\n2,0.75,1.0\n");
    }

    #[test]
    fn steps_must_increase() {
        let mut log = MetricsLog::default();
        log.push_step(StepRecord { step: 3, lr: 0.0, loss: 0.0 }).unwrap();
        assert!(log.push_step(StepRecord { step: 3, lr: 0.0, loss: 0.0 }).is_err());
        assert!(log.push_step(StepRecord { step: 2, lr: 0.0, loss: 0.0 }).is_err());
    }

    #[test]
    fn write_creates_both_files() {
        let dir = tempfile::tempdir().unwrap();
        MetricsLog::default().write(dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("metrics.csv")).unwrap(), "step,lr,loss\n");
        assert!(dir.path().join("epochs.csv").exists());
    }
}
