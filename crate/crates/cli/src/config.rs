//! Run configuration: one JSON file selecting a profile ("desk" or
//! "paper-settings") plus per-section overrides, resolved into concrete
//! settings for every command.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use turnwise::corpus::SplitConfig;
use turnwise::model::EncoderConfig;
use turnwise::samplegen::GenerationConfig;
use turnwise::training::{Precision, TaskFlags, TrainConfig};

use crate::manifest::sha256_bytes;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    PaperSettings,
}

impl Profile {
    fn parse(name: &str) -> Result<Profile> {
        match name {
            "desk" => Ok(Profile::Desk),
            "paper-settings" => Ok(Profile::PaperSettings),
            other => bail!("unknown profile {other:?}; expected \"desk\" or \"paper-settings\""),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::PaperSettings => "paper-settings",
        }
    }

    fn encoder(self, seed: u64) -> EncoderConfig {
        match self {
            // vocab_size 0 is a placeholder filled from the built vocabulary.
            Profile::Desk => EncoderConfig::desk(0, seed),
            Profile::PaperSettings => EncoderConfig {
                layers: 12,
                heads: 12,
                d_model: 768,
                d_ff: 3072,
                max_positions: 512,
                vocab_size: 0,
                dropout: 0.1,
                seed,
            },
        }
    }

    fn pretrain(self, seed: u64) -> TrainConfig {
        match self {
            Profile::Desk => TrainConfig::desk(seed),
            Profile::PaperSettings => TrainConfig {
                lr: 2e-5,
                warmup_proportion: 0.1,
                batch_size: 8,
                epochs: 1,
                eval_every: 10_000,
                tasks: TaskFlags::all(),
                seed,
                precision: Precision::F64,
                max_len: 512,
                target_accuracy: None,
            },
        }
    }

    fn finetune(self, seed: u64) -> TrainConfig {
        let mut cfg = self.pretrain(seed);
        match self {
            Profile::Desk => cfg.epochs = 5,
            Profile::PaperSettings => cfg.max_len = 350,
        }
        cfg
    }

    fn vocab(self) -> (usize, usize) {
        match self {
            Profile::Desk => (8_192, 1),
            Profile::PaperSettings => (30_000, 5),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
    Raw,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub source: PathBuf,
    #[serde(default)]
    pub format: CorpusFormat,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueSection {
    pub train: PathBuf,
    pub valid: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabSection {
    max_size: Option<usize>,
    min_freq: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitSection {
    article_delimiter: Option<String>,
    heading_blacklist: Option<Vec<String>>,
    abbreviations: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerationSection {
    k: Option<usize>,
    max_words: Option<usize>,
    min_para_sentences_insertion: Option<usize>,
    dense_windows: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderSection {
    layers: Option<usize>,
    heads: Option<usize>,
    d_model: Option<usize>,
    d_ff: Option<usize>,
    max_positions: Option<usize>,
    vocab_size: Option<usize>,
    dropout: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    lr: Option<f64>,
    warmup_proportion: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    eval_every: Option<usize>,
    max_len: Option<usize>,
    target_accuracy: Option<f64>,
    tasks: Option<TaskFlags>,
}

impl TrainSection {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.warmup_proportion {
            cfg.warmup_proportion = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.max_len {
            cfg.max_len = v;
        }
        if let Some(v) = self.target_accuracy {
            cfg.target_accuracy = Some(v);
        }
        if let Some(v) = self.tasks {
            cfg.tasks = v;
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    schema_version: u32,
    profile: Option<String>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    corpus: Option<CorpusSection>,
    dialogues: Option<DialogueSection>,
    valid_fraction: Option<f64>,
    vocab: Option<VocabSection>,
    split: Option<SplitSection>,
    generation: Option<GenerationSection>,
    encoder: Option<EncoderSection>,
    pretrain: Option<TrainSection>,
    finetune: Option<TrainSection>,
}

/// Fully resolved settings; every knob has a concrete value.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub profile: Profile,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: Option<CorpusSection>,
    pub dialogues: Option<DialogueSection>,
    /// Fraction of each task's articles held out for validation (at least
    /// one article on each side once a set has two or more).
    pub valid_fraction: f64,
    pub vocab_max_size: usize,
    pub vocab_min_freq: usize,
    pub split: SplitConfig,
    pub generation: GenerationConfig,
    /// `vocab_size` 0 means "fill from the built vocabulary".
    pub encoder: EncoderConfig,
    pub pretrain: TrainConfig,
    /// Shared by `finetune` (auxiliaries forced off) and `multitask`
    /// (task flags honored).
    pub finetune: TrainConfig,
    /// Hex SHA-256 of the config file bytes, recorded in manifests.
    pub config_hash: String,
}

pub fn load(path: &Path) -> Result<Resolved> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
    let file: FileConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if file.schema_version != CONFIG_SCHEMA_VERSION {
        bail!(
            "unsupported config schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
            file.schema_version
        );
    }
    let profile = Profile::parse(file.profile.as_deref().unwrap_or("desk"))?;
    let seed = file.seed.unwrap_or(7);

    // Relative paths resolve against the config file's directory.
    let base = path.parent().unwrap_or(Path::new("."));
    let anchor = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let out_dir = anchor(file.out_dir.unwrap_or_else(|| PathBuf::from("out")));
    let corpus = file.corpus.map(|c| CorpusSection {
        source: anchor(c.source),
        format: c.format,
    });
    let dialogues = file.dialogues.map(|d| DialogueSection {
        train: anchor(d.train),
        valid: anchor(d.valid),
        test: d.test.map(&anchor),
    });

    let valid_fraction = file.valid_fraction.unwrap_or(0.2);
    if !(0.0..1.0).contains(&valid_fraction) {
        bail!("valid_fraction must be in [0,1), got {valid_fraction}");
    }

    let (mut vocab_max_size, mut vocab_min_freq) = profile.vocab();
    if let Some(v) = file.vocab {
        if let Some(m) = v.max_size {
            vocab_max_size = m;
        }
        if let Some(f) = v.min_freq {
            vocab_min_freq = f;
        }
    }

    let mut split = SplitConfig::default();
    if let Some(s) = file.split {
        if let Some(d) = s.article_delimiter {
            split.article_delimiter = d;
        }
        if let Some(h) = s.heading_blacklist {
            split.heading_blacklist = h;
        }
        if let Some(a) = s.abbreviations {
            split.abbreviations = a;
        }
    }

    let mut generation = GenerationConfig {
        seed,
        ..GenerationConfig::default()
    };
    if let Some(g) = file.generation {
        if let Some(k) = g.k {
            generation.k = k;
        }
        if let Some(m) = g.max_words {
            generation.max_words = m;
        }
        if let Some(m) = g.min_para_sentences_insertion {
            generation.min_para_sentences_insertion = m;
        }
        if let Some(d) = g.dense_windows {
            generation.dense_windows = d;
        }
    }

    let mut encoder = profile.encoder(seed);
    if let Some(e) = file.encoder {
        if let Some(v) = e.layers {
            encoder.layers = v;
        }
        if let Some(v) = e.heads {
            encoder.heads = v;
        }
        if let Some(v) = e.d_model {
            encoder.d_model = v;
        }
        if let Some(v) = e.d_ff {
            encoder.d_ff = v;
        }
        if let Some(v) = e.max_positions {
            encoder.max_positions = v;
        }
        if let Some(v) = e.vocab_size {
            encoder.vocab_size = v;
        }
        if let Some(v) = e.dropout {
            encoder.dropout = v;
        }
    }

    let mut pretrain = profile.pretrain(seed);
    if let Some(section) = &file.pretrain {
        section.apply(&mut pretrain);
    }
    let mut finetune = profile.finetune(seed);
    if let Some(section) = &file.finetune {
        section.apply(&mut finetune);
    }

    Ok(Resolved {
        profile,
        seed,
        out_dir,
        corpus,
        dialogues,
        valid_fraction,
        vocab_max_size,
        vocab_min_freq,
        split,
        generation,
        encoder,
        pretrain,
        finetune,
        config_hash: sha256_bytes(&bytes),
    })
}
