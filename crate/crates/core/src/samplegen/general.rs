//! Sample construction from partitioned plain-text articles.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Article, CorpusPartition};
use crate::seeding::scoped_rng;
use crate::{Error, Result};

use super::{
    word_count, DeletionProvenance, DeletionSample, GenerationConfig, InsertionProvenance,
    InsertionSample, PretrainSample, ReplacementProvenance, ReplacementSample, Scope,
};

/// Ordered pairs of adjacent-sentence starts that share no sentence:
/// starts i1, i2 in 0..len-1 with |i1 - i2| >= 2.
fn disjoint_adjacent_pairs(len: usize) -> Vec<(usize, usize)> {
    let starts = len.saturating_sub(1);
    let mut pairs = Vec::new();
    for i1 in 0..starts {
        for i2 in 0..starts {
            if i1.abs_diff(i2) >= 2 {
                pairs.push((i1, i2));
            }
        }
    }
    pairs
}

/// Tail arrangement for an insertion slot: u_A2 placed before, between, or
/// after {u_B1, u_B2}. The flattened speaker pattern (anchor included) is
/// AABB, ABAB or ABBA respectively.
pub(super) fn insertion_tail(
    a2: &str,
    b1: &str,
    b2: &str,
    slot: usize,
) -> Vec<String> {
    match slot {
        0 => vec![a2.into(), b1.into(), b2.into()],
        1 => vec![b1.into(), a2.into(), b2.into()],
        _ => vec![b1.into(), b2.into(), a2.into()],
    }
}

/// Two samples per (paragraph P, next qualifying paragraph Q) pair: two
/// disjoint adjacent A-pairs from P matched with two disjoint adjacent
/// B-pairs from Q, each with a uniformly placed u_A2.
pub fn gen_insertion_general(
    article: &Article,
    cfg: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<InsertionSample> {
    let qualifying: Vec<usize> = article
        .paragraphs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.len() >= cfg.min_para_sentences_insertion)
        .map(|(i, _)| i)
        .collect();
    let mut samples = Vec::new();
    for pair in qualifying.windows(2) {
        let (pi, qi) = (pair[0], pair[1]);
        let p = &article.paragraphs[pi];
        let q = &article.paragraphs[qi];
        let a_pairs = disjoint_adjacent_pairs(p.len());
        let b_pairs = disjoint_adjacent_pairs(q.len());
        if a_pairs.is_empty() || b_pairs.is_empty() {
            continue;
        }
        let (a1, a2) = a_pairs[rng.gen_range(0..a_pairs.len())];
        let (b1, b2) = b_pairs[rng.gen_range(0..b_pairs.len())];
        for (a_start, b_start) in [(a1, b1), (a2, b2)] {
            let slot = rng.gen_range(0..3);
            let anchor = p[a_start].clone();
            let tail = insertion_tail(&p[a_start + 1], &q[b_start], &q[b_start + 1], slot);
            if word_count(
                std::iter::once(anchor.as_str()).chain(tail.iter().map(String::as_str)),
            ) > cfg.max_words
            {
                continue;
            }
            samples.push(InsertionSample {
                scope: Scope::General,
                anchor,
                tail,
                label: slot,
                provenance: InsertionProvenance::General {
                    source_id: article.id.clone(),
                    paragraph_a: pi,
                    a_first: a_start,
                    paragraph_b: qi,
                    b_first: b_start,
                    insert_pos: slot,
                },
            });
        }
    }
    samples
}

/// Window starts within a paragraph of `len` sentences. Paragraphs need
/// strictly more than k sentences; dense mode packs disjoint windows from
/// the start, otherwise one window is placed uniformly at random.
fn window_starts(len: usize, k: usize, dense: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= k {
        return Vec::new();
    }
    if dense {
        (0..)
            .map(|w| w * k)
            .take_while(|start| start + k <= len)
            .collect()
    } else {
        vec![rng.gen_range(0..=len - k)]
    }
}

pub fn gen_deletion_general(
    article: &Article,
    cfg: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<DeletionSample> {
    let k = cfg.k;
    let mut samples = Vec::new();
    for (pi, paragraph) in article.paragraphs.iter().enumerate() {
        for start in window_starts(paragraph.len(), k, cfg.dense_windows, rng) {
            let window = &paragraph[start..start + k];
            if word_count(window.iter().map(String::as_str)) > cfg.max_words {
                continue;
            }
            let i = rng.gen_range(1..k); // 1-based; u_k is never deleted
            let mut remaining: Vec<String> = window.to_vec();
            let deleted = remaining.remove(i - 1);
            samples.push(DeletionSample {
                scope: Scope::General,
                remaining,
                deleted,
                label: i - 1,
                provenance: DeletionProvenance {
                    source_id: article.id.clone(),
                    paragraph: pi,
                    window_start: start,
                    deleted_index: i,
                },
            });
        }
    }
    samples
}

/// Every sentence position of a donor article, flattened in reading order.
fn sentence_positions(article: &Article) -> Vec<(usize, usize)> {
    article
        .paragraphs
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |si| (pi, si)))
        .collect()
}

pub fn gen_replacement_general(
    article: &Article,
    donors: &[&Article],
    cfg: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ReplacementSample>> {
    let usable: Vec<&Article> = donors
        .iter()
        .copied()
        .filter(|d| d.id != article.id && d.paragraphs.iter().any(|p| !p.is_empty()))
        .collect();
    let k = cfg.k;
    let mut samples = Vec::new();
    for (pi, paragraph) in article.paragraphs.iter().enumerate() {
        for start in window_starts(paragraph.len(), k, cfg.dense_windows, rng) {
            if usable.is_empty() {
                return Err(Error::EmptyDonorPool {
                    id: article.id.clone(),
                });
            }
            let i = rng.gen_range(1..=k); // 1-based replaced position
            let donor = usable[rng.gen_range(0..usable.len())];
            let positions = sentence_positions(donor);
            let (dp, ds) = positions[rng.gen_range(0..positions.len())];
            let mut utterances: Vec<String> = paragraph[start..start + k].to_vec();
            utterances[i - 1] = donor.paragraphs[dp][ds].clone();
            if word_count(utterances.iter().map(String::as_str)) > cfg.max_words {
                continue;
            }
            samples.push(ReplacementSample {
                scope: Scope::General,
                utterances,
                label: i - 1,
                provenance: ReplacementProvenance {
                    source_id: article.id.clone(),
                    paragraph: pi,
                    window_start: start,
                    replaced_index: i,
                    donor_id: donor.id.clone(),
                    donor_paragraph: dp,
                    donor_sentence: ds,
                },
            });
        }
    }
    Ok(samples)
}

/// All three tasks' samples for a partitioned corpus, in partition order,
/// each article under its own seeded stream.
#[derive(Debug, Clone, Default)]
pub struct GeneratedSamples {
    pub insertion: Vec<PretrainSample>,
    pub deletion: Vec<PretrainSample>,
    pub replacement: Vec<PretrainSample>,
}

pub fn generate_general(
    articles: &[Article],
    partition: &CorpusPartition,
    cfg: &GenerationConfig,
) -> Result<GeneratedSamples> {
    cfg.validate()?;
    let by_id: HashMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let lookup = |id: &String| -> Result<&Article> {
        by_id
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::Config(format!("partition references unknown article {id:?}")))
    };

    let mut out = GeneratedSamples::default();
    for id in &partition.insertion {
        let article = lookup(id)?;
        let mut rng = scoped_rng(cfg.seed, &format!("insertion:{id}"));
        out.insertion.extend(
            gen_insertion_general(article, cfg, &mut rng)
                .into_iter()
                .map(PretrainSample::Insertion),
        );
    }
    for id in &partition.deletion {
        let article = lookup(id)?;
        let mut rng = scoped_rng(cfg.seed, &format!("deletion:{id}"));
        out.deletion.extend(
            gen_deletion_general(article, cfg, &mut rng)
                .into_iter()
                .map(PretrainSample::Deletion),
        );
    }
    let donor_pool: Vec<&Article> = partition
        .replacement
        .iter()
        .map(lookup)
        .collect::<Result<_>>()?;
    for id in &partition.replacement {
        let article = lookup(id)?;
        let mut rng = scoped_rng(cfg.seed, &format!("replacement:{id}"));
        out.replacement.extend(
            gen_replacement_general(article, &donor_pool, cfg, &mut rng)?
                .into_iter()
                .map(PretrainSample::Replacement),
        );
    }
    Ok(out)
}
