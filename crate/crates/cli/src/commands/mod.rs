//! Command implementations.

mod data;
mod train;

pub use data::{gen, ingest, partition, stats, validate, vocab, TaskChoice};
pub use train::{eval, finetune, gradcheck, inspect, multitask, pretrain};

use std::fs;

use anyhow::{Context, Result};

use turnwise::corpus::{ingest_jsonl, Article, CorpusPartition};
use turnwise::tokenizer::Vocab;

use crate::artifacts::Artifacts;
use crate::config::Resolved;
use crate::manifest::Manifest;

pub(crate) const TASKS: [&str; 3] = ["insertion", "deletion", "replacement"];
pub(crate) const SPLITS: [&str; 2] = ["train", "valid"];

pub(crate) fn manifest_for(command: impl Into<String>, cfg: &Resolved) -> Manifest {
    Manifest::new(command, cfg.profile.name(), cfg.seed, &cfg.config_hash)
}

pub(crate) fn load_articles(art: &Artifacts) -> Result<Vec<Article>> {
    let path = art.articles();
    art.require(&path, "ingest")?;
    Ok(ingest_jsonl(&path)?)
}

pub(crate) fn load_partition(art: &Artifacts) -> Result<CorpusPartition> {
    let path = art.partition();
    art.require(&path, "partition")?;
    let text =
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(CorpusPartition::from_json(&text)?)
}

pub(crate) fn load_vocab(art: &Artifacts) -> Result<Vocab> {
    let path = art.vocab();
    art.require(&path, "vocab")?;
    let text =
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Vocab::from_json(&text)?)
}

/// Deterministic train/valid split. The partition order is already a
/// seeded shuffle, so the validation set is simply the tail; both sides
/// keep at least one article once the set has two.
pub(crate) fn split_ids(ids: &[String], valid_fraction: f64) -> (Vec<String>, Vec<String>) {
    if ids.len() < 2 {
        return (ids.to_vec(), Vec::new());
    }
    let valid_n = ((ids.len() as f64) * valid_fraction).round() as usize;
    let valid_n = valid_n.clamp(1, ids.len() - 1);
    let cut = ids.len() - valid_n;
    (ids[..cut].to_vec(), ids[cut..].to_vec())
}
