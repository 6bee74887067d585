//! Transformer encoder forward pass on a tape.

use ndiff::{Array, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tokenizer::{TokenSequence, PAD};
use crate::{Error, Result};

use super::{Bound, EncoderConfig, LN_EPS};

/// Inverted-dropout mask source; used during training only.
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    fn mask(&mut self, tape: &Tape, shape: &[usize]) -> Result<Var> {
        let keep = 1.0 - self.rate;
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        Ok(tape.leaf(Array::new(shape.to_vec(), data)?))
    }
}

fn apply_dropout(
    tape: &Tape,
    x: Var,
    dropout: &mut Option<&mut Dropout>,
) -> Result<Var> {
    match dropout {
        Some(d) if d.rate > 0.0 => {
            let mask = d.mask(tape, &tape.shape(x))?;
            Ok(tape.mul(x, mask)?)
        }
        _ => Ok(x),
    }
}

/// Additive attention mask: -1e30 on columns whose token is [PAD], which
/// zeroes their softmax weight exactly.
fn attention_mask(tape: &Tape, ids: &[usize]) -> Result<Var> {
    let len = ids.len();
    let mut data = vec![0.0; len * len];
    for (col, &id) in ids.iter().enumerate() {
        if id == PAD {
            for row in 0..len {
                data[row * len + col] = -1e30;
            }
        }
    }
    Ok(tape.leaf(Array::new(vec![len, len], data)?))
}

/// Encode one assembled sequence to last-layer states, shape [L, d_model].
pub fn encode(
    tape: &Tape,
    bound: &Bound,
    cfg: &EncoderConfig,
    seq: &TokenSequence,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let len = seq.ids.len();
    if len > cfg.max_positions {
        return Err(Error::SequenceTooLong {
            needed: len,
            max: cfg.max_positions,
        });
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            size: cfg.vocab_size,
        });
    }

    let token = tape.embedding_lookup(bound.get("emb.token"), &seq.ids)?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = tape.embedding_lookup(bound.get("emb.pos"), &positions)?;
    let segments: Vec<usize> = seq.segments.iter().map(|&s| s as usize).collect();
    let seg = tape.embedding_lookup(bound.get("emb.seg"), &segments)?;
    let mut x = tape.add(tape.add(token, pos)?, seg)?;
    x = tape.layer_norm(x, bound.get("emb.ln.gain"), bound.get("emb.ln.bias"), LN_EPS)?;
    x = apply_dropout(tape, x, &mut dropout)?;

    let mask = attention_mask(tape, &seq.ids)?;
    let d_head = cfg.d_model / cfg.heads;
    let scale = 1.0 / (d_head as f64).sqrt();

    for l in 0..cfg.layers {
        let p = |suffix: &str| bound.get(&format!("layer{l}.{suffix}"));

        let q = tape.add(tape.matmul(x, p("attn.wq"))?, p("attn.bq"))?;
        let k = tape.add(tape.matmul(x, p("attn.wk"))?, p("attn.bk"))?;
        let v = tape.add(tape.matmul(x, p("attn.wv"))?, p("attn.bv"))?;

        let mut head_outputs = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (lo, hi) = (h * d_head, (h + 1) * d_head);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let scores = tape.affine(tape.matmul(qh, tape.transpose(kh)?)?, scale, 0.0)?;
            let weights = tape.softmax(tape.add(scores, mask)?)?;
            head_outputs.push(tape.matmul(weights, vh)?);
        }
        let attn = tape.concat(&head_outputs, 1)?;
        let attn = tape.add(tape.matmul(attn, p("attn.wo"))?, p("attn.bo"))?;
        let attn = apply_dropout(tape, attn, &mut dropout)?;
        x = tape.layer_norm(
            tape.add(x, attn)?,
            p("ln1.gain"),
            p("ln1.bias"),
            LN_EPS,
        )?;

        let ff = tape.tanh(tape.add(tape.matmul(x, p("ff.w1"))?, p("ff.b1"))?)?;
        let ff = tape.add(tape.matmul(ff, p("ff.w2"))?, p("ff.b2"))?;
        let ff = apply_dropout(tape, ff, &mut dropout)?;
        x = tape.layer_norm(
            tape.add(x, ff)?,
            p("ln2.gain"),
            p("ln2.bias"),
            LN_EPS,
        )?;
    }
    Ok(x)
}

/// Rows of the encoded sequence at the [SOT] positions, in order.
pub fn gather_sot(tape: &Tape, embeddings: Var, sot_positions: &[usize]) -> Result<Var> {
    Ok(tape.gather_rows(embeddings, sot_positions)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::tokenizer::{CLS, SEP, SOT};

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            heads: 2,
            d_model: 16,
            d_ff: 24,
            max_positions: 32,
            vocab_size: 12,
            dropout: 0.0,
            seed: 5,
        }
    }

    fn seq(ids: Vec<usize>) -> TokenSequence {
        let sot_positions = ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == SOT)
            .map(|(i, _)| i)
            .collect();
        let segments = vec![0; ids.len()];
        TokenSequence {
            ids,
            segments,
            sot_positions,
            truncated: false,
        }
    }

    #[test]
    fn output_shape_is_len_by_d_model() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let s = seq(vec![CLS, SOT, 7, 8, SOT, 9, SEP]);
        let out = encode(&tape, &bound, &cfg, &s, None).unwrap();
        assert_eq!(tape.shape(out), vec![7, 16]);
        let e = gather_sot(&tape, out, &s.sot_positions).unwrap();
        assert_eq!(tape.shape(e), vec![2, 16]);
        // Row j of the gather equals the row at the [SOT] position.
        let full = tape.value(out);
        let sot_rows = tape.value(e);
        assert_eq!(sot_rows.row(0), full.row(1));
        assert_eq!(sot_rows.row(1), full.row(4));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let s = seq(vec![CLS, SOT, 7, 8, SEP]);
        let run = || {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let out = encode(&tape, &bound, &cfg, &s, None).unwrap();
            tape.value(out).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn padding_does_not_leak_into_real_positions() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let clean = seq(vec![CLS, SOT, 7, 8, SEP]);
        let mut padded = clean.clone();
        padded.ids.extend([PAD, PAD, PAD]);
        padded.segments.extend([0, 0, 0]);

        let tape = Tape::new();
        let bound = params.bind(&tape);
        let a = tape.value(encode(&tape, &bound, &cfg, &clean, None).unwrap());
        let b = tape.value(encode(&tape, &bound, &cfg, &padded, None).unwrap());
        for row in 0..clean.ids.len() {
            for (x, y) in a.row(row).iter().zip(b.row(row)) {
                assert!(
                    (x - y).abs() == 0.0,
                    "row {row} differs under padding: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn out_of_range_inputs_error() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let bad = seq(vec![CLS, SOT, 99, SEP]);
        assert!(matches!(
            encode(&tape, &bound, &cfg, &bad, None),
            Err(Error::TokenOutOfRange { id: 99, .. })
        ));
        let long = seq(vec![5; 40]);
        assert!(matches!(
            encode(&tape, &bound, &cfg, &long, None),
            Err(Error::SequenceTooLong { .. })
        ));
    }
}
