//! Fine-tuning and domain multi-task learning for response selection.

use std::collections::BTreeMap;
use std::collections::HashSet;

use ndiff::{Tape, Var};
use rand::seq::SliceRandom;

use crate::evaluation::{group_examples, metric_report, DialogueExample, MetricReport, RankedGroup};
use crate::model::{
    deletion_scores, encode, gather_sot, insertion_scores, l_final, match_loss, match_score,
    replacement_scores, task_loss, AdamState, Bound, Checkpoint, Dropout, EncoderConfig,
    EvalRecord, ModelParams,
};
use crate::samplegen::{
    gen_deletion_domain, gen_insertion_domain, gen_replacement_domain, GenerationConfig,
    PretrainSample,
};
use crate::seeding::scoped_rng;
use crate::tokenizer::{
    assemble_deletion, assemble_insertion, assemble_replacement, assemble_response_selection,
    TokenSequence, Vocab,
};
use crate::{Error, Result};

use super::{clip_global_norm, lr_at, optimizer_step, StepRecord, TrainConfig, CLIP_NORM};

struct Assembled {
    seq: TokenSequence,
    positive: bool,
}

#[derive(Debug)]
pub struct FinetuneRun {
    /// Snapshot with the best validation R_n@1 (MAP tiebreak, earliest wins).
    pub best: Checkpoint,
    pub trace: Vec<StepRecord>,
    pub history: Vec<EvalRecord>,
    /// One ranking report per epoch, in order.
    pub reports: Vec<MetricReport>,
}

/// Response selection only: domain multi-task learning with every
/// auxiliary task disabled.
pub fn finetune(
    train: &[DialogueExample],
    valid: &[DialogueExample],
    init: Checkpoint,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<FinetuneRun> {
    let mut cfg = cfg.clone();
    cfg.tasks.insertion = false;
    cfg.tasks.deletion = false;
    cfg.tasks.replacement = false;
    domain_multitask(train, valid, init, vocab, &cfg)
}

/// Per step: L_final = enabled auxiliary losses (built from the batch's
/// dialogue contexts) + the response-selection loss.
pub fn domain_multitask(
    train: &[DialogueExample],
    valid: &[DialogueExample],
    init: Checkpoint,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<FinetuneRun> {
    cfg.validate()?;
    if !cfg.tasks.reselect {
        return Err(Error::Config(
            "response selection must stay enabled for fine-tuning".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    // Validation must form rankable groups; fail at load time.
    group_examples(valid)?;

    let enc_cfg = init.config.clone();
    let max_len = cfg.max_len.min(enc_cfg.max_positions);
    let assemble = |examples: &[DialogueExample]| -> Result<Vec<Assembled>> {
        examples
            .iter()
            .map(|ex| {
                Ok(Assembled {
                    seq: assemble_response_selection(ex, vocab, max_len)?,
                    positive: ex.label == 1,
                })
            })
            .collect()
    };
    let train_seqs = assemble(train)?;
    let valid_seqs = assemble(valid)?;

    let gen_cfg = GenerationConfig {
        seed: cfg.seed,
        ..GenerationConfig::default()
    };

    let mut ckpt = Checkpoint {
        config: enc_cfg.clone(),
        adam: AdamState::zeros_like(&init.params),
        params: init.params,
        step: 0,
        history: Vec::new(),
        best_step: None,
    };

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size).max(1);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stream_rng = scoped_rng(cfg.seed, "stream:reselect");

    let mut trace = Vec::with_capacity(total_steps as usize);
    let mut history = Vec::new();
    let mut reports = Vec::new();
    let mut best: Option<((f64, f64), Checkpoint)> = None;
    let mut step: u64 = 0;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let bound = ckpt.params.bind(&tape);

            let mut dropout = Dropout {
                rate: enc_cfg.dropout,
                rng: scoped_rng(cfg.seed, &format!("dropout:{step}:reselect")),
            };
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let item = &train_seqs[i];
                let drop = (dropout.rate > 0.0).then_some(&mut dropout);
                let encoded = encode(&tape, &bound, &enc_cfg, &item.seq, drop)?;
                let e = gather_sot(&tape, encoded, &item.seq.sot_positions)?;
                let s = match_score(&tape, &bound, e)?;
                losses.push(match_loss(&tape, s, item.positive)?);
            }
            let reselect = tape.mean(tape.concat(&losses, 0)?)?;

            let aux = auxiliary_losses(
                &tape, &bound, &enc_cfg, vocab, &gen_cfg, cfg, train, chunk, step, max_len,
            )?;
            let total = l_final(&tape, [aux[0], aux[1], aux[2], Some(reselect)])?;

            tape.backward(total)?;
            let mut grads = bound.grads(&tape);
            clip_global_norm(&mut grads, CLIP_NORM);
            let lr = lr_at(step, total_steps, cfg.lr, cfg.warmup_proportion);
            optimizer_step(&mut ckpt.params, &grads, &mut ckpt.adam, lr)?;
            step += 1;
            ckpt.step = step;

            let value = |v: Option<Var>| v.map(|v| tape.value(v).data()[0]);
            trace.push(StepRecord {
                step,
                insertion: value(aux[0]),
                deletion: value(aux[1]),
                replacement: value(aux[2]),
                reselect: value(Some(reselect)),
                total: tape.value(total).data()[0],
                lr,
            });
        }

        let report = rank_validation(&ckpt.params, &enc_cfg, valid, &valid_seqs)?;
        let mut scores = BTreeMap::new();
        scores.insert("R_n@1".to_string(), report.r_at_1);
        scores.insert("R_n@2".to_string(), report.r_at_2);
        scores.insert("R_n@5".to_string(), report.r_at_5);
        scores.insert("MAP".to_string(), report.map);
        scores.insert("MRR".to_string(), report.mrr);
        scores.insert("P@1".to_string(), report.p_at_1);
        history.push(EvalRecord { step, scores });
        let key = (report.r_at_1, report.map);
        reports.push(report);
        if best.as_ref().is_none_or(|(b, _)| key > *b) {
            let mut snap = ckpt.clone();
            snap.best_step = Some(step);
            best = Some((key, snap));
        }
    }

    let (_, mut best) = best.expect("epochs >= 1 guarantees one evaluation");
    best.history = history.clone();
    Ok(FinetuneRun {
        best,
        trace,
        history,
        reports,
    })
}

/// Build per-task domain auxiliary batch losses from the unique dialogue
/// contexts in this batch; a task with no usable sample contributes None.
#[allow(clippy::too_many_arguments)]
fn auxiliary_losses(
    tape: &Tape,
    bound: &Bound,
    enc_cfg: &EncoderConfig,
    vocab: &Vocab,
    gen_cfg: &GenerationConfig,
    cfg: &TrainConfig,
    train: &[DialogueExample],
    chunk: &[usize],
    step: u64,
    max_len: usize,
) -> Result<[Option<Var>; 3]> {
    let mut out = [None, None, None];
    let wanted = cfg.tasks.insertion || cfg.tasks.deletion || cfg.tasks.replacement;
    if !wanted {
        return Ok(out);
    }

    let mut seen = HashSet::new();
    let mut contexts: Vec<(&str, &[String])> = Vec::new();
    for &i in chunk {
        let ex = &train[i];
        if seen.insert(ex.group_id.as_str()) {
            contexts.push((ex.group_id.as_str(), ex.context.as_slice()));
        }
    }

    for (slot, task) in ["insertion", "deletion", "replacement"].iter().enumerate() {
        let enabled = match slot {
            0 => cfg.tasks.insertion,
            1 => cfg.tasks.deletion,
            _ => cfg.tasks.replacement,
        };
        if !enabled {
            continue;
        }
        let mut rng = scoped_rng(cfg.seed, &format!("aux:{task}:{step}"));
        let mut samples: Vec<PretrainSample> = Vec::new();
        for (ci, (id, context)) in contexts.iter().enumerate() {
            let sample = match slot {
                0 => gen_insertion_domain(id, context, gen_cfg, &mut rng)
                    .map(PretrainSample::Insertion),
                1 => gen_deletion_domain(id, context, gen_cfg, &mut rng)
                    .map(PretrainSample::Deletion),
                _ => {
                    let others: Vec<(&str, &[String])> = contexts
                        .iter()
                        .enumerate()
                        .filter(|(cj, _)| *cj != ci)
                        .map(|(_, c)| *c)
                        .collect();
                    gen_replacement_domain(id, context, &others, gen_cfg, &mut rng)
                        .map(PretrainSample::Replacement)
                }
            };
            samples.extend(sample);
        }
        if samples.is_empty() {
            continue;
        }
        let mut dropout = Dropout {
            rate: enc_cfg.dropout,
            rng: scoped_rng(cfg.seed, &format!("dropout:{step}:{task}")),
        };
        let mut losses = Vec::with_capacity(samples.len());
        for sample in &samples {
            let seq = match sample {
                PretrainSample::Insertion(s) => assemble_insertion(s, vocab, max_len),
                PretrainSample::Deletion(s) => assemble_deletion(s, vocab, max_len),
                PretrainSample::Replacement(s) => assemble_replacement(s, vocab, max_len),
            };
            if seq.truncated {
                continue;
            }
            let drop = (dropout.rate > 0.0).then_some(&mut dropout);
            let encoded = encode(tape, bound, enc_cfg, &seq, drop)?;
            let e = gather_sot(tape, encoded, &seq.sot_positions)?;
            let scores = match sample {
                PretrainSample::Insertion(_) => insertion_scores(tape, e)?,
                PretrainSample::Deletion(_) => deletion_scores(tape, e)?,
                PretrainSample::Replacement(_) => replacement_scores(tape, bound, e)?,
            };
            losses.push(task_loss(tape, scores, sample.label())?);
        }
        if !losses.is_empty() {
            out[slot] = Some(tape.mean(tape.concat(&losses, 0)?)?);
        }
    }
    Ok(out)
}

/// Score every validation example and compute the ranking metrics.
/// Rank a labelled example set with fixed parameters (no training).
pub fn rank_examples(
    params: &ModelParams,
    enc_cfg: &EncoderConfig,
    vocab: &Vocab,
    examples: &[DialogueExample],
    max_len: usize,
) -> Result<MetricReport> {
    let seqs = examples
        .iter()
        .map(|ex| {
            Ok(Assembled {
                seq: assemble_response_selection(ex, vocab, max_len)?,
                positive: ex.label == 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank_validation(params, enc_cfg, examples, &seqs)
}

fn rank_validation(
    params: &ModelParams,
    enc_cfg: &EncoderConfig,
    valid: &[DialogueExample],
    valid_seqs: &[Assembled],
) -> Result<MetricReport> {
    let mut scores = Vec::with_capacity(valid_seqs.len());
    for item in valid_seqs {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let encoded = encode(&tape, &bound, enc_cfg, &item.seq, None)?;
        let e = gather_sot(&tape, encoded, &item.seq.sot_positions)?;
        let s = match_score(&tape, &bound, e)?;
        scores.push(tape.value(s).data()[0]);
    }
    let groups: Vec<RankedGroup> = group_examples(valid)?
        .into_iter()
        .map(|(group_id, members)| {
            RankedGroup::new(
                group_id,
                members
                    .into_iter()
                    .map(|i| (scores[i], valid[i].label == 1))
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    metric_report(&groups)
}
