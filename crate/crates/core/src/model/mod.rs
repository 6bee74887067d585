//! Desk-scale transformer encoder, the three pre-training heads, and the
//! GRU response matcher.

pub mod checkpoint;
mod encoder;
mod gradcheck;
mod heads;
mod matcher;

pub use checkpoint::{load_checkpoint, save_checkpoint, AdamState, Checkpoint, EvalRecord};
pub use encoder::{encode, gather_sot, Dropout};
pub use gradcheck::{check_loss_gradients, GradCheckReport, LossKind, ParamCheck};
pub use heads::{
    deletion_scores, insertion_scores, inspect_example, inspect_similarity, l_gen,
    replacement_scores, task_loss,
};
pub use matcher::{l_final, match_loss, match_score};

use std::collections::HashMap;

use ndiff::{Array, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::scoped_rng;
use crate::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults; vocab_size is filled in from the built vocab.
    pub fn desk(vocab_size: usize, seed: u64) -> Self {
        EncoderConfig {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            max_positions: 512,
            vocab_size,
            dropout: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 || self.d_ff == 0 || self.max_positions == 0 {
            return Err(Error::Config("layers, d_ff, max_positions must be positive".into()));
        }
        if self.vocab_size <= 5 {
            return Err(Error::Config("vocab_size must exceed the 5 specials".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// All learnable tensors in a fixed, named order. The order defines the
/// flat layout used by the optimizer and the checkpoint payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    arrays: Vec<Array>,
    index: HashMap<String, usize>,
}

fn param_shapes(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut shapes = vec![
        ("emb.token".into(), vec![cfg.vocab_size, d]),
        ("emb.pos".into(), vec![cfg.max_positions, d]),
        ("emb.seg".into(), vec![2, d]),
        ("emb.ln.gain".into(), vec![d]),
        ("emb.ln.bias".into(), vec![d]),
    ];
    for l in 0..cfg.layers {
        for mat in ["wq", "wk", "wv", "wo"] {
            shapes.push((format!("layer{l}.attn.{mat}"), vec![d, d]));
            shapes.push((format!("layer{l}.attn.{}", mat.replace('w', "b")), vec![d]));
        }
        shapes.push((format!("layer{l}.ln1.gain"), vec![d]));
        shapes.push((format!("layer{l}.ln1.bias"), vec![d]));
        shapes.push((format!("layer{l}.ff.w1"), vec![d, cfg.d_ff]));
        shapes.push((format!("layer{l}.ff.b1"), vec![cfg.d_ff]));
        shapes.push((format!("layer{l}.ff.w2"), vec![cfg.d_ff, d]));
        shapes.push((format!("layer{l}.ff.b2"), vec![d]));
        shapes.push((format!("layer{l}.ln2.gain"), vec![d]));
        shapes.push((format!("layer{l}.ln2.bias"), vec![d]));
    }
    shapes.push(("head.replace.w".into(), vec![d, 1]));
    shapes.push(("head.replace.b".into(), vec![1]));
    for gate in ["z", "r", "h"] {
        shapes.push((format!("gru.w{gate}"), vec![d, d]));
        shapes.push((format!("gru.u{gate}"), vec![d, d]));
        shapes.push((format!("gru.b{gate}"), vec![d]));
    }
    shapes.push(("match.w".into(), vec![d, 1]));
    shapes.push(("match.b".into(), vec![1]));
    shapes
}

impl ModelParams {
    /// Fan-in-scaled uniform init for matrices and embeddings, zeros for
    /// biases, ones for layer-norm gains; fully determined by cfg.seed.
    pub fn init(cfg: &EncoderConfig) -> Result<ModelParams> {
        cfg.validate()?;
        let mut rng = scoped_rng(cfg.seed, "init");
        let mut names = Vec::new();
        let mut arrays = Vec::new();
        for (name, shape) in param_shapes(cfg) {
            let len: usize = shape.iter().product();
            let array = if name.ends_with(".gain") {
                Array::new(shape, vec![1.0; len])?
            } else if shape.len() == 1 {
                // Every remaining vector is a bias.
                Array::new(shape, vec![0.0; len])?
            } else {
                let limit = (3.0 / shape[0] as f64).sqrt();
                let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
                Array::new(shape, data)?
            };
            names.push(name);
            arrays.push(array);
        }
        Ok(ModelParams::from_parts(names, arrays))
    }

    pub fn from_parts(names: Vec<String>, arrays: Vec<Array>) -> ModelParams {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        ModelParams {
            names,
            arrays,
            index,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> &Array {
        &self.arrays[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.index.get(name).map(|&i| &mut self.arrays[i])
    }

    /// Same names and order with new values (used by finite-difference
    /// closures and the optimizer).
    pub fn with_arrays(&self, arrays: Vec<Array>) -> ModelParams {
        debug_assert_eq!(arrays.len(), self.arrays.len());
        ModelParams {
            names: self.names.clone(),
            arrays,
            index: self.index.clone(),
        }
    }

    /// Insert every tensor as a tape leaf, preserving order.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self.arrays.iter().map(|a| tape.leaf(a.clone())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Tape handles for one forward/backward pass over a ModelParams snapshot.
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }

    /// Accumulated gradients in parameter order.
    pub fn grads(&self, tape: &Tape) -> Vec<Array> {
        self.vars.iter().map(|&v| tape.grad(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = EncoderConfig {
            layers: 2,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            max_positions: 64,
            vocab_size: 20,
            dropout: 0.0,
            seed: 9,
        };
        let a = ModelParams::init(&cfg).unwrap();
        let b = ModelParams::init(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get("emb.token").shape(), &[20, 16]);
        assert_eq!(a.get("layer1.ff.w1").shape(), &[16, 32]);
        assert_eq!(a.get("gru.uh").shape(), &[16, 16]);
        assert_eq!(a.get("head.replace.w").shape(), &[16, 1]);
        assert!(a.get("emb.ln.gain").data().iter().all(|&x| x == 1.0));
        assert!(a.get("layer0.attn.bq").data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut cfg = EncoderConfig::desk(100, 0);
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::desk(100, 0);
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        assert!(EncoderConfig::desk(5, 0).validate().is_err());
    }
}
