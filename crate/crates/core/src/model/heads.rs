//! Pre-training heads over [SOT] embeddings and their joint loss.

use ndiff::{Tape, Var};

use crate::{Error, Result};

use super::encoder::{encode, gather_sot};
use super::{Bound, EncoderConfig};
use crate::evaluation::DialogueExample;
use crate::tokenizer::{assemble_response_selection, Vocab};

fn rows(tape: &Tape, e: Var) -> Result<usize> {
    let shape = tape.shape(e);
    if shape.len() != 2 {
        return Err(Error::Config(format!(
            "expected [rows, d_model] embeddings, got shape {shape:?}"
        )));
    }
    Ok(shape[0])
}

/// Cosine of one row of `e` against each row in `others`, as a flat vector.
fn cosine_row_scores(tape: &Tape, e: Var, pivot: usize, others: &[usize]) -> Result<Var> {
    let anchor = tape.gather_rows(e, &[pivot])?;
    let mut scores = Vec::with_capacity(others.len());
    for &j in others {
        let row = tape.gather_rows(e, &[j])?;
        scores.push(tape.cosine_similarity(anchor, row)?);
    }
    Ok(tape.concat(&scores, 0)?)
}

/// scores[j] = cosine(E[0], E[j+1]); row 0 is the anchor utterance.
pub fn insertion_scores(tape: &Tape, e: Var) -> Result<Var> {
    let m = rows(tape, e)?;
    if m < 2 {
        return Err(Error::Config(format!(
            "insertion_scores needs >= 2 utterance rows, got {m}"
        )));
    }
    let others: Vec<usize> = (1..m).collect();
    cosine_row_scores(tape, e, 0, &others)
}

/// scores[j] = cosine(E[last], E[j]); the last row is the deleted-utterance
/// query appended after [SEP].
pub fn deletion_scores(tape: &Tape, e: Var) -> Result<Var> {
    let m = rows(tape, e)?;
    if m < 2 {
        return Err(Error::Config(format!(
            "deletion_scores needs >= 2 utterance rows, got {m}"
        )));
    }
    let others: Vec<usize> = (0..m - 1).collect();
    cosine_row_scores(tape, e, m - 1, &others)
}

/// scores[j] = W_r . E[j] + b_r over every utterance row.
pub fn replacement_scores(tape: &Tape, bound: &Bound, e: Var) -> Result<Var> {
    let m = rows(tape, e)?;
    let scored = tape.add(
        tape.matmul(e, bound.get("head.replace.w"))?,
        bound.get("head.replace.b"),
    )?;
    Ok(tape.reshape(scored, &[m])?)
}

/// Cross entropy of softmax(scores) at `label`; instantiates L_ins, L_del,
/// and L_rep alike.
pub fn task_loss(tape: &Tape, scores: Var, label: usize) -> Result<Var> {
    Ok(tape.cross_entropy(scores, label)?)
}

/// L_gen = L_ins + L_del + L_rep, in that order, unweighted.
pub fn l_gen(tape: &Tape, l_ins: Var, l_del: Var, l_rep: Var) -> Result<Var> {
    Ok(tape.add(tape.add(l_ins, l_del)?, l_rep)?)
}

/// Assemble the response-selection layout for (context, response), encode,
/// and report cosine(E_response, E_{U_i}) per context utterance.
pub fn inspect_similarity(
    cfg: &EncoderConfig,
    bound: &Bound,
    tape: &Tape,
    vocab: &Vocab,
    context: &[String],
    response: &str,
    max_len: usize,
) -> Result<Vec<f64>> {
    let example = DialogueExample {
        context: context.to_vec(),
        response: response.to_string(),
        label: 1,
        group_id: String::new(),
    };
    let seq = assemble_response_selection(&example, vocab, max_len)?;
    let encoded = encode(tape, bound, cfg, &seq, None)?;
    let e = gather_sot(tape, encoded, &seq.sot_positions)?;
    let m = tape.shape(e)[0];
    let others: Vec<usize> = (0..m - 1).collect();
    let scores = cosine_row_scores(tape, e, m - 1, &others)?;
    Ok(tape.value(scores).data().to_vec())
}

/// `inspect_similarity` on a fresh tape, binding `params` internally.
pub fn inspect_example(
    cfg: &EncoderConfig,
    params: &super::ModelParams,
    vocab: &Vocab,
    context: &[String],
    response: &str,
    max_len: usize,
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    inspect_similarity(cfg, &bound, &tape, vocab, context, response, max_len)
}
