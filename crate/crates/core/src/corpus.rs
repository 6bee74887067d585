//! Corpus ingestion, sentence splitting, and article partitioning.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seeding::scoped_rng;
use crate::{Error, Result};

/// One source article: ordered paragraphs, each an ordered list of
/// sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub paragraphs: Vec<Vec<String>>,
}

/// Three disjoint article-id sets, one per pre-training task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPartition {
    pub seed: u64,
    pub insertion: Vec<String>,
    pub deletion: Vec<String>,
    pub replacement: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PartitionFile {
    schema_version: u32,
    seed: u64,
    sets: PartitionSets,
}

#[derive(Serialize, Deserialize)]
struct PartitionSets {
    insertion: Vec<String>,
    deletion: Vec<String>,
    replacement: Vec<String>,
}

impl CorpusPartition {
    pub fn to_json(&self) -> String {
        let file = PartitionFile {
            schema_version: 1,
            seed: self.seed,
            sets: PartitionSets {
                insertion: self.insertion.clone(),
                deletion: self.deletion.clone(),
                replacement: self.replacement.clone(),
            },
        };
        serde_json::to_string_pretty(&file).expect("partition serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PartitionFile = serde_json::from_str(text).map_err(|e| Error::Malformed {
            path: "<partition>".into(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if file.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported partition schema_version {}",
                file.schema_version
            )));
        }
        Ok(CorpusPartition {
            seed: file.seed,
            insertion: file.sets.insertion,
            deletion: file.sets.deletion,
            replacement: file.sets.replacement,
        })
    }

    pub fn sets(&self) -> [&[String]; 3] {
        [&self.insertion, &self.deletion, &self.replacement]
    }
}

/// Configuration for raw-text ingestion and sentence splitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    /// A line equal to this string (after trimming) separates articles.
    pub article_delimiter: String,
    /// Paragraphs whose first line matches one of these (case-insensitive)
    /// are dropped with their bodies.
    pub heading_blacklist: Vec<String>,
    /// Words (terminator included, e.g. "Dr.") that never end a sentence.
    pub abbreviations: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            article_delimiter: "===".into(),
            heading_blacklist: vec!["References".into(), "Literature".into()],
            abbreviations: Vec::new(),
        }
    }
}

/// Parse one article per line from `{"id","title","paragraphs"}` JSON.
pub fn ingest_jsonl(path: &Path) -> Result<Vec<Article>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_articles_jsonl(&text, &path.display().to_string())
}

pub fn parse_articles_jsonl(text: &str, source_name: &str) -> Result<Vec<Article>> {
    let mut articles = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let article: Article = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: source_name.to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        if let Some(&first) = seen.get(&article.id) {
            return Err(Error::DuplicateId {
                id: article.id,
                first,
                second: line_no,
            });
        }
        seen.insert(article.id.clone(), line_no);
        articles.push(article);
    }
    Ok(articles)
}

pub fn write_articles_jsonl(articles: &[Article], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for article in articles {
        serde_json::to_writer(&mut w, article).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ingest delimiter-separated plain text. Paragraphs are blank-line
/// separated blocks; blacklisted headings drop their paragraph.
pub fn ingest_raw_text(path: &Path, cfg: &SplitConfig) -> Result<Vec<Article>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Utf8 {
        path: path.display().to_string(),
        offset: e.valid_up_to(),
    })?;
    Ok(parse_raw_text(text, cfg))
}

pub fn parse_raw_text(text: &str, cfg: &SplitConfig) -> Vec<Article> {
    let mut segments: Vec<Vec<&str>> = vec![Vec::new()];
    for line in text.lines() {
        if line.trim() == cfg.article_delimiter {
            segments.push(Vec::new());
        } else {
            segments.last_mut().expect("non-empty").push(line);
        }
    }
    let mut articles = Vec::new();
    for lines in segments {
        if lines.iter().all(|l| l.trim().is_empty()) {
            continue;
        }
        let mut paragraphs = Vec::new();
        for block in split_blocks(&lines) {
            let first = block[0].trim();
            if cfg
                .heading_blacklist
                .iter()
                .any(|h| h.eq_ignore_ascii_case(first))
            {
                continue;
            }
            let joined = block.join(" ");
            let sentences = split_sentences(&joined, cfg);
            if !sentences.is_empty() {
                paragraphs.push(sentences);
            }
        }
        articles.push(Article {
            id: format!("raw-{:04}", articles.len() + 1),
            title: String::new(),
            paragraphs,
        });
    }
    articles
}

fn split_blocks<'a>(lines: &[&'a str]) -> Vec<Vec<&'a str>> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for &line in lines {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

/// Split after `.`, `!` or `?` followed by whitespace, unless the word
/// ending there is a configured abbreviation. The trailing fragment is kept
/// as the final sentence; joining the output with single spaces reproduces
/// the input modulo collapsed whitespace.
pub fn split_sentences(text: &str, cfg: &SplitConfig) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let is_terminator = matches!(chars[i], '.' | '!' | '?');
        let followed_by_space = chars.get(i + 1).is_some_and(|c| c.is_whitespace());
        if is_terminator && followed_by_space {
            let mut word_start = i;
            while word_start > start && !chars[word_start - 1].is_whitespace() {
                word_start -= 1;
            }
            let word: String = chars[word_start..=i].iter().collect();
            if cfg.abbreviations.iter().any(|a| a == &word) {
                continue;
            }
            let piece: String = chars[start..=i].iter().collect();
            let piece = piece.trim();
            if !piece.is_empty() {
                sentences.push(piece.to_string());
            }
            start = i + 1;
        }
    }
    if start < chars.len() {
        let piece: String = chars[start..].iter().collect();
        let piece = piece.trim();
        if !piece.is_empty() {
            sentences.push(piece.to_string());
        }
    }
    sentences
}

/// Seeded shuffle then round-robin over the three task sets, so set sizes
/// differ by at most one.
pub fn partition_articles(ids: &[String], seed: u64) -> Result<CorpusPartition> {
    if ids.is_empty() {
        return Err(Error::Config("cannot partition an empty id list".into()));
    }
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Config("article ids must be unique".into()));
    }
    let mut shuffled = ids.to_vec();
    let mut rng = scoped_rng(seed, "partition");
    shuffled.shuffle(&mut rng);
    let mut partition = CorpusPartition {
        seed,
        insertion: Vec::new(),
        deletion: Vec::new(),
        replacement: Vec::new(),
    };
    for (i, id) in shuffled.into_iter().enumerate() {
        match i % 3 {
            0 => partition.insertion.push(id),
            1 => partition.deletion.push(id),
            _ => partition.replacement.push(id),
        }
    }
    Ok(partition)
}

/// Aggregate counts over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub articles: usize,
    pub paragraphs: usize,
    pub sentences: usize,
    pub sentences_per_paragraph: BTreeMap<usize, usize>,
}

pub fn corpus_stats(articles: &[Article]) -> CorpusStats {
    let mut stats = CorpusStats {
        articles: articles.len(),
        paragraphs: 0,
        sentences: 0,
        sentences_per_paragraph: BTreeMap::new(),
    };
    for article in articles {
        stats.paragraphs += article.paragraphs.len();
        for paragraph in &article.paragraphs {
            stats.sentences += paragraph.len();
            *stats
                .sentences_per_paragraph
                .entry(paragraph.len())
                .or_insert(0) += 1;
        }
    }
    stats
}
