//! End-to-end finite-difference checks for every model loss.

use ndiff::{finite_diff_check, Array, Tape};
use serde::{Deserialize, Serialize};

use crate::evaluation::DialogueExample;
use crate::samplegen::{
    DeletionProvenance, DeletionSample, InsertionProvenance, InsertionSample,
    ReplacementProvenance, ReplacementSample, Scope,
};
use crate::tokenizer::{
    assemble_deletion, assemble_insertion, assemble_replacement,
    assemble_response_selection, TokenSequence, Vocab,
};
use crate::{Error, Result};

use super::encoder::{encode, gather_sot};
use super::heads::{deletion_scores, insertion_scores, replacement_scores, task_loss};
use super::matcher::{match_loss, match_score};
use super::{Bound, EncoderConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Insertion,
    Deletion,
    Replacement,
    Match,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Insertion,
        LossKind::Deletion,
        LossKind::Replacement,
        LossKind::Match,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Insertion => "insertion",
            LossKind::Deletion => "deletion",
            LossKind::Replacement => "replacement",
            LossKind::Match => "match",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub kind: LossKind,
    pub loss: f64,
    pub eps: f64,
    pub max_rel_err: f64,
    pub per_param: Vec<ParamCheck>,
    /// `name[coordinate]` of the worst coordinate.
    pub worst: Option<String>,
}

fn probe_vocab() -> Vocab {
    Vocab::build(
        ["alpha beta gamma delta epsilon zeta eta theta iota kappa well sure"],
        64,
        1,
    )
    .expect("fixed probe vocabulary builds")
}

fn probe_sequence(kind: LossKind, vocab: &Vocab, max_len: usize) -> Result<(TokenSequence, usize)> {
    match kind {
        LossKind::Insertion => {
            let sample = InsertionSample {
                scope: Scope::Domain,
                anchor: "alpha beta gamma".into(),
                tail: vec![
                    "delta epsilon".into(),
                    "zeta eta theta".into(),
                    "iota kappa".into(),
                ],
                label: 1,
                provenance: InsertionProvenance::Domain {
                    source_id: "probe".into(),
                    window_start: 0,
                    insert_pos: 1,
                },
            };
            Ok((assemble_insertion(&sample, vocab, max_len), 1))
        }
        LossKind::Deletion => {
            let sample = DeletionSample {
                scope: Scope::Domain,
                remaining: vec![
                    "alpha beta".into(),
                    "gamma delta epsilon".into(),
                    "zeta eta".into(),
                    "theta iota".into(),
                ],
                deleted: "kappa well sure".into(),
                label: 2,
                provenance: DeletionProvenance {
                    source_id: "probe".into(),
                    paragraph: 0,
                    window_start: 0,
                    deleted_index: 2,
                },
            };
            Ok((assemble_deletion(&sample, vocab, max_len), 2))
        }
        LossKind::Replacement => {
            let sample = ReplacementSample {
                scope: Scope::Domain,
                utterances: vec![
                    "alpha beta gamma".into(),
                    "delta epsilon".into(),
                    "zeta eta".into(),
                    "theta iota kappa".into(),
                ],
                label: 3,
                provenance: ReplacementProvenance {
                    source_id: "probe".into(),
                    paragraph: 0,
                    window_start: 0,
                    replaced_index: 3,
                    donor_id: "other".into(),
                    donor_paragraph: 0,
                    donor_sentence: 0,
                },
            };
            Ok((assemble_replacement(&sample, vocab, max_len), 3))
        }
        LossKind::Match => {
            let example = DialogueExample {
                context: vec!["alpha beta gamma".into(), "delta epsilon zeta".into()],
                response: "eta theta iota".into(),
                label: 1,
                group_id: "probe".into(),
            };
            Ok((assemble_response_selection(&example, vocab, max_len)?, 0))
        }
    }
}

fn loss_on_tape(
    tape: &Tape,
    bound: &Bound,
    cfg: &EncoderConfig,
    kind: LossKind,
    seq: &TokenSequence,
    label: usize,
) -> Result<ndiff::Var> {
    let encoded = encode(tape, bound, cfg, seq, None)?;
    let e = gather_sot(tape, encoded, &seq.sot_positions)?;
    match kind {
        LossKind::Insertion => task_loss(tape, insertion_scores(tape, e)?, label),
        LossKind::Deletion => task_loss(tape, deletion_scores(tape, e)?, label),
        LossKind::Replacement => {
            task_loss(tape, replacement_scores(tape, bound, e)?, label)
        }
        LossKind::Match => {
            // Average both labels so each branch of the likelihood is checked.
            let s = match_score(tape, bound, e)?;
            let pos = match_loss(tape, s, true)?;
            let neg = match_loss(tape, s, false)?;
            Ok(tape.affine(tape.add(pos, neg)?, 0.5, 0.0)?)
        }
    }
}

/// Compare analytic gradients of `kind`'s loss against central finite
/// differences over every model parameter, on a small fixed probe input.
pub fn check_loss_gradients(
    cfg: &EncoderConfig,
    kind: LossKind,
    eps: f64,
) -> Result<GradCheckReport> {
    let vocab = probe_vocab();
    if vocab.size() > cfg.vocab_size {
        return Err(Error::Config(format!(
            "gradcheck probe vocabulary ({} tokens) exceeds vocab_size {}",
            vocab.size(),
            cfg.vocab_size
        )));
    }
    let (seq, label) = probe_sequence(kind, &vocab, cfg.max_positions)?;
    let params = ModelParams::init(cfg)?;
    let names = params.names().to_vec();

    // Surface real input/config errors once before the sweep; inside the
    // sweep the forward is total, so failures there are bugs.
    let run = |arrays: &[Array]| -> Result<(f64, Vec<Array>)> {
        let probe = params.with_arrays(arrays.to_vec());
        let tape = Tape::new();
        let bound = probe.bind(&tape);
        let loss = loss_on_tape(&tape, &bound, cfg, kind, &seq, label)?;
        tape.backward(loss)?;
        let value = tape.value(loss).data()[0];
        Ok((value, bound.grads(&tape)))
    };
    let (loss, _) = run(params.arrays())?;

    let check = finite_diff_check(
        |arrays| {
            run(arrays).map_err(|e| match e {
                Error::Autodiff(inner) => inner,
                other => panic!("gradcheck forward failed mid-sweep: {other}"),
            })
        },
        params.arrays(),
        eps,
    )?;

    let per_param = names
        .iter()
        .zip(&check.per_param)
        .map(|(name, &max_rel_err)| ParamCheck {
            name: name.clone(),
            max_rel_err,
        })
        .collect();
    Ok(GradCheckReport {
        kind,
        loss,
        eps,
        max_rel_err: check.max_rel_err,
        per_param,
        worst: check.worst.map(|(pi, j)| format!("{}[{j}]", names[pi])),
    })
}
