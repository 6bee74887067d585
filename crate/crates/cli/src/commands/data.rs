//! Data commands: ingest, partition, gen, vocab, stats, validate.

use std::fs;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use turnwise::corpus::{
    corpus_stats, ingest_jsonl, ingest_raw_text, partition_articles, write_articles_jsonl,
    CorpusPartition, CorpusStats,
};
use turnwise::evaluation::read_examples;
use turnwise::samplegen::{
    format_sample_stats, generate_general, read_samples, validate_sample, write_samples,
    CorpusIndex, SampleStats,
};
use turnwise::tokenizer::Vocab;

use crate::artifacts::Artifacts;
use crate::config::{CorpusFormat, Resolved};

use super::{load_articles, load_partition, manifest_for, split_ids, SPLITS, TASKS};

pub fn ingest(cfg: &Resolved) -> Result<()> {
    let corpus = cfg
        .corpus
        .as_ref()
        .context("config has no \"corpus\" section; nothing to ingest")?;
    let articles = match corpus.format {
        CorpusFormat::Jsonl => ingest_jsonl(&corpus.source)?,
        CorpusFormat::Raw => ingest_raw_text(&corpus.source, &cfg.split)?,
    };
    if articles.is_empty() {
        bail!("{} contains no articles", corpus.source.display());
    }
    let art = Artifacts::new(&cfg.out_dir);
    fs::create_dir_all(art.out_dir())
        .with_context(|| format!("creating {}", art.out_dir().display()))?;
    write_articles_jsonl(&articles, &art.articles())?;

    let stats = corpus_stats(&articles);
    println!(
        "ingested {} articles ({} paragraphs, {} sentences) -> {}",
        stats.articles,
        stats.paragraphs,
        stats.sentences,
        art.articles().display()
    );

    let mut manifest = manifest_for("ingest", cfg);
    manifest.record_input(&corpus.source)?;
    manifest.record_output(&art.articles())?;
    manifest.write(art.out_dir())?;
    Ok(())
}

pub fn partition(cfg: &Resolved) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    let articles = load_articles(&art)?;
    let ids: Vec<String> = articles.iter().map(|a| a.id.clone()).collect();
    let part = partition_articles(&ids, cfg.seed)?;
    fs::write(art.partition(), part.to_json())
        .with_context(|| format!("writing {}", art.partition().display()))?;

    println!(
        "partitioned {} articles: insertion {}, deletion {}, replacement {} -> {}",
        ids.len(),
        part.insertion.len(),
        part.deletion.len(),
        part.replacement.len(),
        art.partition().display()
    );

    let mut manifest = manifest_for("partition", cfg);
    manifest.record_input(&art.articles())?;
    manifest.record_output(&art.partition())?;
    manifest.write(art.out_dir())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskChoice {
    Insertion,
    Deletion,
    Replacement,
    All,
}

impl TaskChoice {
    fn selected(self) -> Vec<&'static str> {
        match self {
            TaskChoice::Insertion => vec!["insertion"],
            TaskChoice::Deletion => vec!["deletion"],
            TaskChoice::Replacement => vec!["replacement"],
            TaskChoice::All => TASKS.to_vec(),
        }
    }

    fn arg_name(self) -> &'static str {
        match self {
            TaskChoice::Insertion => "insertion",
            TaskChoice::Deletion => "deletion",
            TaskChoice::Replacement => "replacement",
            TaskChoice::All => "all",
        }
    }
}

pub fn gen(cfg: &Resolved, task: TaskChoice) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    let articles = load_articles(&art)?;
    let part = load_partition(&art)?;
    let selected = task.selected();

    let mut manifest = manifest_for(format!("gen-{}", task.arg_name()), cfg);
    manifest.record_input(&art.articles())?;
    manifest.record_input(&art.partition())?;

    let samples_dir = cfg.out_dir.join("samples");
    fs::create_dir_all(&samples_dir)
        .with_context(|| format!("creating {}", samples_dir.display()))?;

    for split in SPLITS {
        // Unselected tasks get empty id sets: per-article seeding keeps the
        // selected tasks' output identical to a full `--task all` run.
        let pick = |name: &str, ids: &[String]| -> Vec<String> {
            if !selected.contains(&name) {
                return Vec::new();
            }
            let (train, valid) = split_ids(ids, cfg.valid_fraction);
            if split == "train" {
                train
            } else {
                valid
            }
        };
        let narrowed = CorpusPartition {
            seed: part.seed,
            insertion: pick("insertion", &part.insertion),
            deletion: pick("deletion", &part.deletion),
            replacement: pick("replacement", &part.replacement),
        };
        let sets = generate_general(&articles, &narrowed, &cfg.generation)?;
        for name in &selected {
            let samples = match *name {
                "insertion" => &sets.insertion,
                "deletion" => &sets.deletion,
                _ => &sets.replacement,
            };
            let path = art.samples(name, split);
            write_samples(samples, &path)?;
            manifest.record_output(&path)?;
            println!(
                "wrote {:>6} {name} {split} samples -> {}",
                samples.len(),
                path.display()
            );
        }
    }

    manifest.write(art.out_dir())?;
    Ok(())
}

pub fn vocab(cfg: &Resolved) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    let articles = load_articles(&art)?;

    let mut manifest = manifest_for("vocab", cfg);
    manifest.record_input(&art.articles())?;

    // Fine-tuning text participates when configured, so dialogue tokens
    // are not all [UNK] downstream.
    let dialogue_examples = match &cfg.dialogues {
        Some(d) => {
            manifest.record_input(&d.train)?;
            read_examples(&d.train)?
        }
        None => Vec::new(),
    };

    let mut texts: Vec<&str> = Vec::new();
    for article in &articles {
        for paragraph in &article.paragraphs {
            for sentence in paragraph {
                texts.push(sentence);
            }
        }
    }
    for example in &dialogue_examples {
        for turn in &example.context {
            texts.push(turn);
        }
        texts.push(&example.response);
    }

    let vocab = Vocab::build(texts, cfg.vocab_max_size, cfg.vocab_min_freq)?;
    fs::write(art.vocab(), vocab.to_json())
        .with_context(|| format!("writing {}", art.vocab().display()))?;
    manifest.record_output(&art.vocab())?;
    manifest.write(art.out_dir())?;

    println!(
        "vocabulary: {} entries (max {}, min freq {}) -> {}",
        vocab.size(),
        cfg.vocab_max_size,
        cfg.vocab_min_freq,
        art.vocab().display()
    );
    Ok(())
}

#[derive(Serialize)]
struct StatsFile<'a> {
    schema_version: u32,
    corpus: &'a CorpusStats,
    samples: &'a SampleStats,
}

pub fn stats(cfg: &Resolved) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    let articles = load_articles(&art)?;
    let part = load_partition(&art)?;

    let mut manifest = manifest_for("stats", cfg);
    manifest.record_input(&art.articles())?;
    manifest.record_input(&art.partition())?;

    let mut counts = SampleStats::default();
    for (i, ids) in part.sets().iter().enumerate() {
        let (train, valid) = split_ids(ids, cfg.valid_fraction);
        counts.train_articles[i] = train.len();
        counts.valid_articles[i] = valid.len();
    }
    for (i, task) in TASKS.iter().enumerate() {
        for split in SPLITS {
            let path = art.samples(task, split);
            art.require(&path, &format!("gen --task {task}"))?;
            manifest.record_input(&path)?;
            let n = read_samples(&path)?.len();
            if split == "train" {
                counts.train_samples[i] = n;
            } else {
                counts.valid_samples[i] = n;
            }
        }
    }

    print!("{}", format_sample_stats(&counts));

    let corpus = corpus_stats(&articles);
    let json = serde_json::to_string_pretty(&StatsFile {
        schema_version: 1,
        corpus: &corpus,
        samples: &counts,
    })
    .context("serializing stats")?;
    fs::write(art.stats(), json).with_context(|| format!("writing {}", art.stats().display()))?;
    manifest.record_output(&art.stats())?;
    manifest.write(art.out_dir())?;
    Ok(())
}

#[derive(Serialize)]
struct FileReport {
    path: String,
    samples: usize,
    failed: usize,
}

#[derive(Serialize)]
struct ValidationFile {
    schema_version: u32,
    files: Vec<FileReport>,
    samples: usize,
    failed: usize,
}

pub fn validate(cfg: &Resolved) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    let articles = load_articles(&art)?;
    let index = CorpusIndex::from_articles(&articles);

    let mut manifest = manifest_for("validate", cfg);
    manifest.record_input(&art.articles())?;

    let mut files = Vec::new();
    let mut total = 0usize;
    let mut total_failed = 0usize;
    let mut reasons: Vec<String> = Vec::new();
    for task in TASKS {
        for split in SPLITS {
            let path = art.samples(task, split);
            art.require(&path, &format!("gen --task {task}"))?;
            manifest.record_input(&path)?;
            let samples = read_samples(&path)?;
            let mut failed = 0usize;
            for (i, sample) in samples.iter().enumerate() {
                let verdict = match validate_sample(sample, &index) {
                    Ok(report) if report.pass => None,
                    Ok(report) => Some(report.reasons.join("; ")),
                    Err(err) => Some(err.to_string()),
                };
                if let Some(why) = verdict {
                    failed += 1;
                    if reasons.len() < 10 {
                        reasons.push(format!("{}:{}: {why}", path.display(), i + 1));
                    }
                }
            }
            println!(
                "{}: {} samples, {} failed",
                path.display(),
                samples.len(),
                failed
            );
            total += samples.len();
            total_failed += failed;
            files.push(FileReport {
                path: path.display().to_string(),
                samples: samples.len(),
                failed,
            });
        }
    }

    let json = serde_json::to_string_pretty(&ValidationFile {
        schema_version: 1,
        files,
        samples: total,
        failed: total_failed,
    })
    .context("serializing validation report")?;
    fs::write(art.validation(), json)
        .with_context(|| format!("writing {}", art.validation().display()))?;
    manifest.record_output(&art.validation())?;
    manifest.write(art.out_dir())?;

    if total_failed > 0 {
        for reason in &reasons {
            eprintln!("{reason}");
        }
        bail!("validation failed: {total_failed} of {total} samples");
    }
    println!("validation passed: {total} samples");
    Ok(())
}
