//! Response-selection matcher: GRU over [SOT] embeddings, sigmoid readout.

use ndiff::{Array, Tape, Var};

use crate::{Error, Result};

use super::Bound;

/// Run the GRU over the rows of `e` (context utterances then response) from
/// a zero initial hidden state and return s = sigmoid(W.H + b), shape [1].
pub fn match_score(tape: &Tape, bound: &Bound, e: Var) -> Result<Var> {
    let shape = tape.shape(e);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Config(format!(
            "match_score needs a non-empty [rows, d_model] input, got {shape:?}"
        )));
    }
    let (rows, d) = (shape[0], shape[1]);

    let mut h = tape.leaf(Array::new(vec![1, d], vec![0.0; d])?);
    for t in 0..rows {
        let x = tape.gather_rows(e, &[t])?;
        let z = gate(tape, bound, x, h, "z")?;
        let z = tape.sigmoid(z)?;
        let r = gate(tape, bound, x, h, "r")?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h)?;
        let cand = tape.add(
            tape.add(
                tape.matmul(x, bound.get("gru.wh"))?,
                tape.matmul(rh, bound.get("gru.uh"))?,
            )?,
            bound.get("gru.bh"),
        )?;
        let cand = tape.tanh(cand)?;
        let keep = tape.affine(z, -1.0, 1.0)?; // 1 - z
        h = tape.add(tape.mul(keep, h)?, tape.mul(z, cand)?)?;
    }

    let logit = tape.add(tape.matmul(h, bound.get("match.w"))?, bound.get("match.b"))?;
    let logit = tape.reshape(logit, &[1])?;
    Ok(tape.sigmoid(logit)?)
}

fn gate(tape: &Tape, bound: &Bound, x: Var, h: Var, name: &str) -> Result<Var> {
    Ok(tape.add(
        tape.add(
            tape.matmul(x, bound.get(&format!("gru.w{name}")))?,
            tape.matmul(h, bound.get(&format!("gru.u{name}")))?,
        )?,
        bound.get(&format!("gru.b{name}")),
    )?)
}

/// -log(sY + (1-s)(1-Y)) for a single example.
pub fn match_loss(tape: &Tape, s: Var, label: bool) -> Result<Var> {
    let p = if label { s } else { tape.affine(s, -1.0, 1.0)? };
    Ok(tape.affine(tape.log(p)?, -1.0, 0.0)?)
}

/// L_final = l'_ins + l'_del + l'_rep + l'_reselect in that fixed order;
/// disabled (None) terms are skipped.
pub fn l_final(tape: &Tape, terms: [Option<Var>; 4]) -> Result<Var> {
    let mut total = None;
    for term in terms.into_iter().flatten() {
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    total.ok_or_else(|| Error::Config("l_final requires at least one enabled term".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderConfig, ModelParams};

    fn cfg(d: usize) -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            heads: 1,
            d_model: d,
            d_ff: d,
            max_positions: 8,
            vocab_size: 8,
            dropout: 0.0,
            seed: 11,
        }
    }

    fn embed(tape: &Tape, rows: &[Vec<f64>]) -> Var {
        let d = rows[0].len();
        let data = rows.iter().flatten().copied().collect();
        tape.leaf(Array::new(vec![rows.len(), d], data).unwrap())
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Plain-f64 GRU + readout, recomputed outside the tape.
    fn reference_score(params: &ModelParams, rows: &[Vec<f64>]) -> f64 {
        let d = rows[0].len();
        let mat = |name: &str| params.get(name).data().to_vec();
        let (wz, uz, bz) = (mat("gru.wz"), mat("gru.uz"), mat("gru.bz"));
        let (wr, ur, br) = (mat("gru.wr"), mat("gru.ur"), mat("gru.br"));
        let (wh, uh, bh) = (mat("gru.wh"), mat("gru.uh"), mat("gru.bh"));
        let mv = |m: &[f64], v: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|j| (0..d).map(|i| v[i] * m[i * d + j]).sum())
                .collect()
        };
        let mut h = vec![0.0; d];
        for x in rows {
            let (xz, hz) = (mv(&wz, x), mv(&uz, &h));
            let (xr, hr) = (mv(&wr, x), mv(&ur, &h));
            let z: Vec<f64> = (0..d).map(|j| sig(xz[j] + hz[j] + bz[j])).collect();
            let r: Vec<f64> = (0..d).map(|j| sig(xr[j] + hr[j] + br[j])).collect();
            let rh: Vec<f64> = (0..d).map(|j| r[j] * h[j]).collect();
            let (xh, hh) = (mv(&wh, x), mv(&uh, &rh));
            let cand: Vec<f64> = (0..d).map(|j| (xh[j] + hh[j] + bh[j]).tanh()).collect();
            h = (0..d)
                .map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j])
                .collect();
        }
        let w = params.get("match.w").data();
        let b = params.get("match.b").data()[0];
        sig((0..d).map(|j| h[j] * w[j]).sum::<f64>() + b)
    }

    #[test]
    fn score_matches_reference_gru() {
        let params = ModelParams::init(&cfg(4)).unwrap();
        let rows = vec![
            vec![0.3, -0.8, 1.2, 0.1],
            vec![-1.0, 0.4, 0.0, 2.0],
            vec![0.5, 0.5, -0.5, 0.9],
        ];
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let e = embed(&tape, &rows);
        let s = tape
            .value(match_score(&tape, &bound, e).unwrap())
            .data()[0];
        let expect = reference_score(&params, &rows);
        assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn match_loss_formula() {
        let tape = Tape::new();
        let s = tape.leaf(Array::scalar(0.5));
        for label in [true, false] {
            let loss = tape.value(match_loss(&tape, s, label).unwrap()).data()[0];
            assert!((loss - 2f64.ln()).abs() < 1e-12);
        }
        let s9 = tape.leaf(Array::scalar(0.9));
        let pos = tape.value(match_loss(&tape, s9, true).unwrap()).data()[0];
        let neg = tape.value(match_loss(&tape, s9, false).unwrap()).data()[0];
        assert!((pos - (-(0.9f64).ln())).abs() < 1e-12);
        assert!((neg - (-(0.1f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn l_final_skips_disabled_terms() {
        let tape = Tape::new();
        let x = tape.leaf(Array::scalar(0.75));
        let one = tape.leaf(Array::scalar(1.0));
        let only = l_final(&tape, [None, None, None, Some(x)]).unwrap();
        assert_eq!(tape.value(only).data()[0], 0.75);
        let all = l_final(&tape, [Some(one), Some(one), Some(one), Some(one)]).unwrap();
        assert_eq!(tape.value(all).data()[0], 4.0);
        assert!(l_final(&tape, [None, None, None, None]).is_err());
    }

    #[test]
    fn empty_input_errors() {
        let params = ModelParams::init(&cfg(4)).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let e = tape.leaf(Array::new(vec![0, 4], vec![]).unwrap());
        assert!(match_score(&tape, &bound, e).is_err());
    }
}
