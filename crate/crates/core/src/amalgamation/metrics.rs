use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossBreakdown;

/// One epoch's record. Loss values are means over the epoch's batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub acc_union: Option<f64>,
    pub acc_tasks: Vec<f64>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub teacher_fingerprints_before: Vec<u64>,
    pub teacher_fingerprints_after: Vec<u64>,
}

/// Everything in [`RunMetrics`] that is a pure function of the inputs and
/// seeds; wall-clock time is left out so reruns compare byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: LossBreakdown,
    pub acc_union: Option<f64>,
    pub acc_tasks: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub teacher_fingerprints: Vec<u64>,
    pub teachers_unchanged: bool,
    pub student_fingerprint: u64,
}

impl RunMetrics {
    pub fn teachers_unchanged(&self) -> bool {
        self.teacher_fingerprints_before == self.teacher_fingerprints_after
    }

    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for e in &self.epochs {
            serde_json::to_writer(&mut f, e)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn summary(&self, method: &str, seed: u64, student_fingerprint: u64) -> RunSummary {
        let last = self.last();
        RunSummary {
            method: method.to_string(),
            seed,
            epochs: self.epochs.len(),
            final_loss: last.map(|e| e.loss).unwrap_or_default(),
            acc_union: last.and_then(|e| e.acc_union),
            acc_tasks: last.map(|e| e.acc_tasks.clone()).unwrap_or_default(),
            loss_trace: self.epochs.iter().map(|e| e.loss.total).collect(),
            teacher_fingerprints: self.teacher_fingerprints_after.clone(),
            teachers_unchanged: self.teachers_unchanged(),
            student_fingerprint,
        }
    }
}

impl RunSummary {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
