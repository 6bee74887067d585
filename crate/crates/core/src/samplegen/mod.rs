//! Insertion/Deletion/Replacement sample construction.
//!
//! General samples come from partitioned plain-text articles (sentences
//! standing in for utterances); domain samples come from multi-turn
//! dialogues. Every sample carries provenance sufficient for an independent
//! validator to re-derive its gold label from the source text.

mod domain;
mod general;
mod validate;

pub use domain::{gen_deletion_domain, gen_insertion_domain, gen_replacement_domain};
pub use general::{
    gen_deletion_general, gen_insertion_general, gen_replacement_general, generate_general,
    GeneratedSamples,
};
pub use validate::{validate_sample, CorpusIndex, ValidationReport};

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Knobs for both general and domain sample generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Window length k (utterances per deletion/replacement sample).
    pub k: usize,
    /// Samples with more whitespace-delimited words than this are dropped.
    pub max_words: usize,
    pub seed: u64,
    /// A paragraph qualifies for insertion sampling when it has at least
    /// this many sentences ("more than 4" -> 5).
    pub min_para_sentences_insertion: usize,
    /// Deletion/replacement windows: one random window per paragraph when
    /// false, all disjoint windows from the start when true.
    pub dense_windows: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            k: 5,
            max_words: 400,
            seed: 0,
            min_para_sentences_insertion: 5,
            dense_windows: false,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::Config(format!("k must be >= 3, got {}", self.k)));
        }
        if self.max_words == 0 {
            return Err(Error::Config("max_words must be positive".into()));
        }
        Ok(())
    }
}

/// Whether a sample was built from partitioned articles or from a target
/// dataset's own dialogues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    General,
    Domain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InsertionProvenance {
    General {
        source_id: String,
        /// u_A1 = paragraphs[paragraph_a][a_first], u_A2 the next sentence.
        paragraph_a: usize,
        a_first: usize,
        paragraph_b: usize,
        b_first: usize,
        /// Slot u_A2 was inserted into among {u_B1, u_B2}: 0, 1 or 2.
        insert_pos: usize,
    },
    Domain {
        source_id: String,
        window_start: usize,
        /// Gap index u_2 was moved to among the k'-2 utterances after it.
        insert_pos: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionSample {
    pub scope: Scope,
    /// u_A1 (general) or u_1 (domain).
    pub anchor: String,
    /// The candidate utterances after the anchor, length 3 (general) or
    /// k'-1 (domain).
    pub tail: Vec<String>,
    /// Index of the target utterance (u_A2 / u_2) within `tail`.
    pub label: usize,
    pub provenance: InsertionProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletionProvenance {
    pub source_id: String,
    pub paragraph: usize,
    pub window_start: usize,
    /// 1-based deleted position i within the window; never the last (k).
    pub deleted_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletionSample {
    pub scope: Scope,
    /// u_1..u_{i-1}, u_{i+1}..u_k in order.
    pub remaining: Vec<String>,
    /// u_i.
    pub deleted: String,
    /// Index of u_{i+1} within `remaining`; equals i-1.
    pub label: usize,
    pub provenance: DeletionProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementProvenance {
    pub source_id: String,
    pub paragraph: usize,
    pub window_start: usize,
    /// 1-based replaced position i within the window.
    pub replaced_index: usize,
    pub donor_id: String,
    pub donor_paragraph: usize,
    pub donor_sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementSample {
    pub scope: Scope,
    /// The window with position `label` holding the intruder u_r.
    pub utterances: Vec<String>,
    pub label: usize,
    pub provenance: ReplacementProvenance,
}

/// Any pre-training sample; the serialized tag names the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PretrainSample {
    Insertion(InsertionSample),
    Deletion(DeletionSample),
    Replacement(ReplacementSample),
}

impl PretrainSample {
    pub fn label(&self) -> usize {
        match self {
            PretrainSample::Insertion(s) => s.label,
            PretrainSample::Deletion(s) => s.label,
            PretrainSample::Replacement(s) => s.label,
        }
    }

    pub fn task_name(&self) -> &'static str {
        match self {
            PretrainSample::Insertion(_) => "insertion",
            PretrainSample::Deletion(_) => "deletion",
            PretrainSample::Replacement(_) => "replacement",
        }
    }

    /// Every utterance of the sample in its presented order.
    pub fn utterances(&self) -> Vec<&str> {
        match self {
            PretrainSample::Insertion(s) => std::iter::once(s.anchor.as_str())
                .chain(s.tail.iter().map(String::as_str))
                .collect(),
            PretrainSample::Deletion(s) => s
                .remaining
                .iter()
                .map(String::as_str)
                .chain(std::iter::once(s.deleted.as_str()))
                .collect(),
            PretrainSample::Replacement(s) => {
                s.utterances.iter().map(String::as_str).collect()
            }
        }
    }
}

pub(crate) fn word_count<'a>(utterances: impl IntoIterator<Item = &'a str>) -> usize {
    utterances
        .into_iter()
        .map(|u| u.split_whitespace().count())
        .sum()
}

pub fn write_samples(samples: &[PretrainSample], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for sample in samples {
        serde_json::to_writer(&mut w, sample).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<PretrainSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_samples(&text, &path.display().to_string())
}

pub fn parse_samples(text: &str, source_name: &str) -> Result<Vec<PretrainSample>> {
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: PretrainSample =
            serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: source_name.to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Per-task article and sample counts for the train/valid split report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    /// Articles per task set: [insertion, deletion, replacement].
    pub train_articles: [usize; 3],
    pub valid_articles: [usize; 3],
    pub train_samples: [usize; 3],
    pub valid_samples: [usize; 3],
}

pub fn count_by_task(samples: &[PretrainSample]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for sample in samples {
        match sample {
            PretrainSample::Insertion(_) => counts[0] += 1,
            PretrainSample::Deletion(_) => counts[1] += 1,
            PretrainSample::Replacement(_) => counts[2] += 1,
        }
    }
    counts
}

fn with_commas(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn articles_cell(per_task: [usize; 3]) -> String {
    if per_task[0] == per_task[1] && per_task[1] == per_task[2] {
        with_commas(per_task[0])
    } else {
        format!(
            "{}/{}/{}",
            with_commas(per_task[0]),
            with_commas(per_task[1]),
            with_commas(per_task[2])
        )
    }
}

/// Render per-task train/valid counts as a small table: one row for
/// articles per task, one per task, columns Train and Valid.
pub fn format_sample_stats(stats: &SampleStats) -> String {
    let rows = [
        (
            "#articles / task".to_string(),
            articles_cell(stats.train_articles),
            articles_cell(stats.valid_articles),
        ),
        (
            "Insertion".to_string(),
            with_commas(stats.train_samples[0]),
            with_commas(stats.valid_samples[0]),
        ),
        (
            "Deletion".to_string(),
            with_commas(stats.train_samples[1]),
            with_commas(stats.valid_samples[1]),
        ),
        (
            "Replacement".to_string(),
            with_commas(stats.train_samples[2]),
            with_commas(stats.valid_samples[2]),
        ),
    ];
    let name_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let train_w = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(5);
    let valid_w = rows.iter().map(|r| r.2.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:name_w$} | {:>train_w$} | {:>valid_w$}\n",
        "", "Train", "Valid"
    );
    for (name, train, valid) in rows {
        out.push_str(&format!(
            "{name:name_w$} | {train:>train_w$} | {valid:>valid_w$}\n"
        ));
    }
    out
}
