//! Joint multi-task pre-training over the three sample streams.

use std::collections::BTreeMap;

use ndiff::{Tape, Var};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::evaluation::task_accuracy;
use crate::model::{
    deletion_scores, encode, gather_sot, insertion_scores, l_gen, replacement_scores,
    task_loss, Bound, Checkpoint, Dropout, EncoderConfig, EvalRecord,
};
use crate::samplegen::PretrainSample;
use crate::seeding::scoped_rng;
use crate::tokenizer::{
    assemble_deletion, assemble_insertion, assemble_replacement, TokenSequence, Vocab,
};
use crate::{Error, Result};

use super::{clip_global_norm, lr_at, optimizer_step, StepRecord, TrainConfig, CLIP_NORM};

/// The three pre-training streams; leave a disabled task's set empty.
#[derive(Debug, Clone, Default)]
pub struct TaskSets {
    pub insertion: Vec<PretrainSample>,
    pub deletion: Vec<PretrainSample>,
    pub replacement: Vec<PretrainSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskId {
    Insertion,
    Deletion,
    Replacement,
}

impl TaskId {
    const ALL: [TaskId; 3] = [TaskId::Insertion, TaskId::Deletion, TaskId::Replacement];

    fn name(self) -> &'static str {
        match self {
            TaskId::Insertion => "insertion",
            TaskId::Deletion => "deletion",
            TaskId::Replacement => "replacement",
        }
    }
}

#[derive(Debug)]
struct Assembled {
    seq: TokenSequence,
    label: usize,
}

/// Tokenize a task's stream once up front; over-long samples are skipped.
fn assemble_stream(
    task: TaskId,
    samples: &[PretrainSample],
    vocab: &Vocab,
    max_len: usize,
    skipped: &mut usize,
) -> Result<Vec<Assembled>> {
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        let seq = match (task, sample) {
            (TaskId::Insertion, PretrainSample::Insertion(s)) => {
                assemble_insertion(s, vocab, max_len)
            }
            (TaskId::Deletion, PretrainSample::Deletion(s)) => {
                assemble_deletion(s, vocab, max_len)
            }
            (TaskId::Replacement, PretrainSample::Replacement(s)) => {
                assemble_replacement(s, vocab, max_len)
            }
            (task, sample) => {
                return Err(Error::Config(format!(
                    "{} sample found in the {} stream",
                    sample.task_name(),
                    task.name()
                )))
            }
        };
        if seq.truncated {
            *skipped += 1;
            continue;
        }
        out.push(Assembled {
            seq,
            label: sample.label(),
        });
    }
    Ok(out)
}

/// Cycles shuffled passes over one task's samples, reshuffling per pass.
struct Stream {
    items: Vec<Assembled>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Stream {
    fn new(items: Vec<Assembled>, mut rng: ChaCha8Rng) -> Stream {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        Stream {
            items,
            order,
            pos: 0,
            rng,
        }
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

fn sample_scores(
    tape: &Tape,
    bound: &Bound,
    enc_cfg: &EncoderConfig,
    task: TaskId,
    item: &Assembled,
    dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let encoded = encode(tape, bound, enc_cfg, &item.seq, dropout)?;
    let e = gather_sot(tape, encoded, &item.seq.sot_positions)?;
    match task {
        TaskId::Insertion => insertion_scores(tape, e),
        TaskId::Deletion => deletion_scores(tape, e),
        TaskId::Replacement => replacement_scores(tape, bound, e),
    }
}

/// Mean task loss of a batch, built on the shared step tape.
fn batch_loss(
    tape: &Tape,
    bound: &Bound,
    enc_cfg: &EncoderConfig,
    task: TaskId,
    items: &[&Assembled],
    dropout: &mut Dropout,
) -> Result<Var> {
    let mut losses = Vec::with_capacity(items.len());
    for item in items {
        let drop = (dropout.rate > 0.0).then_some(&mut *dropout);
        let scores = sample_scores(tape, bound, enc_cfg, task, item, drop)?;
        losses.push(task_loss(tape, scores, item.label)?);
    }
    Ok(tape.mean(tape.concat(&losses, 0)?)?)
}

fn accuracy(
    params: &crate::model::ModelParams,
    enc_cfg: &EncoderConfig,
    task: TaskId,
    items: &[Assembled],
) -> Result<f64> {
    let mut predictions = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for item in items {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let scores = sample_scores(&tape, &bound, enc_cfg, task, item, None)?;
        let values = tape.value(scores);
        let argmax = values
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
            .map(|(i, _)| i)
            .expect("non-empty scores");
        predictions.push(argmax);
        labels.push(item.label);
    }
    task_accuracy(&predictions, &labels)
}

#[derive(Debug)]
pub struct PretrainRun {
    /// Snapshot with the best mean validation accuracy (earliest on ties).
    pub best: Checkpoint,
    pub trace: Vec<StepRecord>,
    pub history: Vec<EvalRecord>,
    /// Over-long samples dropped during assembly.
    pub skipped: usize,
    pub steps_run: u64,
}

pub fn pretrain(
    train: &TaskSets,
    valid: &TaskSets,
    vocab: &Vocab,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<PretrainRun> {
    cfg.validate()?;
    enc_cfg.validate()?;
    let enabled: Vec<TaskId> = TaskId::ALL
        .into_iter()
        .filter(|t| match t {
            TaskId::Insertion => cfg.tasks.insertion,
            TaskId::Deletion => cfg.tasks.deletion,
            TaskId::Replacement => cfg.tasks.replacement,
        })
        .collect();
    if enabled.is_empty() {
        return Err(Error::Config(
            "pre-training requires an enabled generation task".into(),
        ));
    }
    let max_len = cfg.max_len.min(enc_cfg.max_positions);

    let mut skipped = 0;
    let pick = |sets: &TaskSets, task: TaskId| -> Vec<PretrainSample> {
        match task {
            TaskId::Insertion => sets.insertion.clone(),
            TaskId::Deletion => sets.deletion.clone(),
            TaskId::Replacement => sets.replacement.clone(),
        }
    };
    let mut streams: Vec<(TaskId, Stream)> = Vec::new();
    let mut valid_sets: Vec<(TaskId, Vec<Assembled>)> = Vec::new();
    for &task in &enabled {
        let items = assemble_stream(task, &pick(train, task), vocab, max_len, &mut skipped)?;
        if items.is_empty() {
            return Err(Error::Config(format!(
                "{} train stream is empty after assembly",
                task.name()
            )));
        }
        let vitems = assemble_stream(task, &pick(valid, task), vocab, max_len, &mut skipped)?;
        if vitems.is_empty() {
            return Err(Error::Config(format!(
                "{} valid stream is empty after assembly",
                task.name()
            )));
        }
        let rng = scoped_rng(cfg.seed, &format!("stream:{}", task.name()));
        streams.push((task, Stream::new(items, rng)));
        valid_sets.push((task, vitems));
    }

    let largest = streams
        .iter()
        .map(|(_, s)| s.items.len())
        .max()
        .expect("at least one stream");
    let steps_per_epoch = largest.div_ceil(cfg.batch_size).max(1);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;

    let mut ckpt = Checkpoint::fresh(enc_cfg.clone())?;
    let mut trace = Vec::with_capacity(total_steps as usize);
    let mut history: Vec<EvalRecord> = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;

    let mut steps_run = 0;
    'training: for step in 0..total_steps {
        let tape = Tape::new();
        let bound = ckpt.params.bind(&tape);
        let mut per_task: [Option<Var>; 3] = [None, None, None];
        for (task, stream) in streams.iter_mut() {
            let batch = stream.next_batch(cfg.batch_size);
            let items: Vec<&Assembled> = batch.iter().map(|&i| &stream.items[i]).collect();
            let mut dropout = Dropout {
                rate: enc_cfg.dropout,
                rng: scoped_rng(cfg.seed, &format!("dropout:{step}:{}", task.name())),
            };
            let loss = batch_loss(&tape, &bound, enc_cfg, *task, &items, &mut dropout)?;
            per_task[*task as usize] = Some(loss);
        }
        let loss_vars: Vec<Var> = per_task.iter().flatten().copied().collect();
        let total = match loss_vars.as_slice() {
            [a] => *a,
            [a, b] => tape.add(*a, *b)?,
            [a, b, c] => l_gen(&tape, *a, *b, *c)?,
            _ => unreachable!("1..=3 enabled tasks"),
        };
        tape.backward(total)?;
        let mut grads = bound.grads(&tape);
        clip_global_norm(&mut grads, CLIP_NORM);
        let lr = lr_at(step, total_steps, cfg.lr, cfg.warmup_proportion);
        optimizer_step(&mut ckpt.params, &grads, &mut ckpt.adam, lr)?;
        ckpt.step = step + 1;
        steps_run = step + 1;

        let value = |v: Option<Var>| v.map(|v| tape.value(v).data()[0]);
        trace.push(StepRecord {
            step: step + 1,
            insertion: value(per_task[0]),
            deletion: value(per_task[1]),
            replacement: value(per_task[2]),
            reselect: None,
            total: tape.value(total).data()[0],
            lr,
        });

        let due = (step + 1) % cfg.eval_every as u64 == 0 || step + 1 == total_steps;
        if !due {
            continue;
        }
        let mut scores = BTreeMap::new();
        for (task, items) in &valid_sets {
            scores.insert(
                task.name().to_string(),
                accuracy(&ckpt.params, enc_cfg, *task, items)?,
            );
        }
        let mean = scores.values().sum::<f64>() / scores.len() as f64;
        let reached = cfg
            .target_accuracy
            .is_some_and(|t| scores.values().all(|&a| a >= t));
        history.push(EvalRecord {
            step: step + 1,
            scores,
        });
        if best.as_ref().is_none_or(|(b, _)| mean > *b) {
            let mut snap = ckpt.clone();
            snap.best_step = Some(step + 1);
            best = Some((mean, snap));
        }
        if reached {
            break 'training;
        }
    }

    let (_, mut best) = best.expect("at least one evaluation ran");
    best.history = history.clone();
    Ok(PretrainRun {
        best,
        trace,
        history,
        skipped,
        steps_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplegen::{InsertionProvenance, InsertionSample, Scope};

    fn insertion_sample(anchor: &str, tail: [&str; 3], label: usize) -> PretrainSample {
        PretrainSample::Insertion(InsertionSample {
            scope: Scope::Domain,
            anchor: anchor.into(),
            tail: tail.iter().map(|s| s.to_string()).collect(),
            label,
            provenance: InsertionProvenance::Domain {
                source_id: "t".into(),
                window_start: 0,
                insert_pos: label,
            },
        })
    }

    #[test]
    fn wrong_variant_in_stream_is_a_config_error() {
        let vocab = Vocab::build(["a b c d"], 32, 1).unwrap();
        let mut skipped = 0;
        let err = assemble_stream(
            TaskId::Deletion,
            &[insertion_sample("a", ["b", "c", "d"], 0)],
            &vocab,
            64,
            &mut skipped,
        )
        .unwrap_err();
        assert!(err.to_string().contains("insertion sample"));
    }

    #[test]
    fn stream_cycles_cover_every_item_each_pass() {
        let vocab = Vocab::build(["a b c d e f"], 32, 1).unwrap();
        let mut skipped = 0;
        let items = assemble_stream(
            TaskId::Insertion,
            &(0..5)
                .map(|i| insertion_sample("a", ["b", "c", "d"], i % 3))
                .collect::<Vec<_>>(),
            &vocab,
            64,
            &mut skipped,
        )
        .unwrap();
        let mut stream = Stream::new(items, scoped_rng(7, "stream:test"));
        let first: Vec<usize> = stream.next_batch(5);
        let mut sorted = first.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        let second = stream.next_batch(5);
        let mut sorted2 = second.clone();
        sorted2.sort_unstable();
        assert_eq!(sorted2, vec![0, 1, 2, 3, 4]);
    }
}
