//! Training regimes: joint pre-training, fine-tuning, domain multi-task.

mod finetune;
mod optimizer;
mod pretrain;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use crate::model::{AdamState, Checkpoint, EvalRecord};
pub use finetune::{domain_multitask, finetune, rank_examples, FinetuneRun};
pub use optimizer::{clip_global_norm, lr_at, optimizer_step, ADAM_EPS, BETA1, BETA2, CLIP_NORM};
pub use pretrain::{pretrain, PretrainRun, TaskSets};

/// Which loss terms participate; the reselect flag only matters to the
/// fine-tuning regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFlags {
    pub insertion: bool,
    pub deletion: bool,
    pub replacement: bool,
    pub reselect: bool,
}

impl TaskFlags {
    pub fn all() -> TaskFlags {
        TaskFlags {
            insertion: true,
            deletion: true,
            replacement: true,
            reselect: true,
        }
    }

    pub fn any(&self) -> bool {
        self.insertion || self.deletion || self.replacement || self.reselect
    }
}

/// Numeric precision of the kernel. Only f64 is implemented; the field
/// exists so configs state it explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    #[serde(rename = "f64")]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_proportion: f64,
    /// Batch size per task stream.
    pub batch_size: usize,
    pub epochs: usize,
    /// Validation cadence, in optimizer steps (pre-training only; the
    /// fine-tuning regimes evaluate per epoch).
    pub eval_every: usize,
    pub tasks: TaskFlags,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Assembled-sequence cap in tokens; longer samples are skipped
    /// (pre-training) or context-truncated (response selection).
    pub max_len: usize,
    /// Stop pre-training early once every enabled task reaches this
    /// validation accuracy (None trains the full schedule).
    #[serde(default)]
    pub target_accuracy: Option<f64>,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            warmup_proportion: 0.1,
            batch_size: 8,
            epochs: 3,
            eval_every: 50,
            tasks: TaskFlags::all(),
            seed,
            precision: Precision::F64,
            max_len: 128,
            target_accuracy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_proportion) {
            return Err(Error::Config(format!(
                "warmup proportion must be in [0,1), got {}",
                self.warmup_proportion
            )));
        }
        if !self.tasks.any() {
            return Err(Error::Config("all tasks disabled".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, epochs, and eval_every must be positive".into(),
            ));
        }
        if self.max_len < 4 {
            return Err(Error::Config(format!(
                "max_len {} cannot fit any assembled sequence",
                self.max_len
            )));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!(
                    "target accuracy must be in [0,1], got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// One optimizer step of the loss trace; disabled tasks are None.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub insertion: Option<f64>,
    pub deletion: Option<f64>,
    pub replacement: Option<f64>,
    pub reselect: Option<f64>,
    /// L_gen (pre-training) or L_final (fine-tuning regimes).
    pub total: f64,
    pub lr: f64,
}

/// CSV loss curve: step, per-task losses, total, lr.
pub fn loss_trace_csv(trace: &[StepRecord]) -> String {
    let mut out = String::from("step,insertion,deletion,replacement,reselect,total,lr\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.12}")).unwrap_or_default();
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.12},{:.12}",
            r.step,
            cell(r.insertion),
            cell(r.deletion),
            cell(r.replacement),
            cell(r.reselect),
            r.total,
            r.lr
        );
    }
    out
}

pub fn write_loss_csv(path: &Path, trace: &[StepRecord]) -> Result<()> {
    std::fs::write(path, loss_trace_csv(trace)).map_err(|e| Error::io(path, e))
}

/// Evaluation history as a JSON array of {step, scores} records.
pub fn write_history_json(path: &Path, history: &[EvalRecord]) -> Result<()> {
    let json = serde_json::to_string_pretty(history)
        .map_err(|e| Error::Config(format!("history serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
