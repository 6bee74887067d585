//! Ranking metrics for response selection and accuracy for the
//! pre-training tasks.
//!
//! All metrics rank candidates by descending score with stable ties (first
//! occurrence wins) and exclude groups that have no positive candidate,
//! reporting how many were excluded.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One (context, candidate response, relevance) triple; candidates sharing
/// a group_id form one ranking query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueExample {
    pub context: Vec<String>,
    pub response: String,
    /// Y: 1 when the response is the true one.
    pub label: u8,
    pub group_id: String,
}

/// A scored ranking query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedGroup {
    pub group_id: String,
    /// (score, is-positive) per candidate, in input order.
    pub candidates: Vec<(f64, bool)>,
}

impl RankedGroup {
    pub fn new(group_id: String, candidates: Vec<(f64, bool)>) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(Error::Evaluation(format!(
                "group {group_id:?} has {} candidate(s); need at least 2",
                candidates.len()
            )));
        }
        if candidates.iter().any(|(s, _)| !s.is_finite()) {
            return Err(Error::Evaluation(format!(
                "group {group_id:?} has a non-finite score"
            )));
        }
        Ok(RankedGroup {
            group_id,
            candidates,
        })
    }

    fn has_positive(&self) -> bool {
        self.candidates.iter().any(|&(_, positive)| positive)
    }

    /// Candidate indices by descending score; equal scores keep input order.
    fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            self.candidates[b]
                .0
                .partial_cmp(&self.candidates[a].0)
                .expect("scores are finite")
        });
        order
    }
}

fn mean_over_groups<F>(groups: &[RankedGroup], per_group: F) -> Result<(f64, usize)>
where
    F: Fn(&RankedGroup) -> f64,
{
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut excluded = 0usize;
    for group in groups {
        if !group.has_positive() {
            excluded += 1;
            continue;
        }
        total += per_group(group);
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Evaluation(
            "no group has a positive candidate".into(),
        ));
    }
    Ok((total / counted as f64, excluded))
}

/// R_n@k: mean fraction of a group's positives found in the top k.
pub fn recall_n_k(groups: &[RankedGroup], k: usize) -> Result<(f64, usize)> {
    mean_over_groups(groups, |group| {
        let order = group.ranking();
        let positives = group.candidates.iter().filter(|c| c.1).count();
        let hit = order
            .iter()
            .take(k)
            .filter(|&&i| group.candidates[i].1)
            .count();
        hit as f64 / positives as f64
    })
}

/// MAP: per group, mean over positive ranks r of (positives at rank <= r)/r.
pub fn mean_average_precision(groups: &[RankedGroup]) -> Result<(f64, usize)> {
    mean_over_groups(groups, |group| {
        let order = group.ranking();
        let mut positives_seen = 0usize;
        let mut sum = 0.0;
        for (rank0, &i) in order.iter().enumerate() {
            if group.candidates[i].1 {
                positives_seen += 1;
                sum += positives_seen as f64 / (rank0 + 1) as f64;
            }
        }
        sum / positives_seen as f64
    })
}

/// MRR: mean of 1/(rank of the first positive).
pub fn mean_reciprocal_rank(groups: &[RankedGroup]) -> Result<(f64, usize)> {
    mean_over_groups(groups, |group| {
        let order = group.ranking();
        let first = order
            .iter()
            .position(|&i| group.candidates[i].1)
            .expect("group has a positive");
        1.0 / (first + 1) as f64
    })
}

/// P@1: fraction of groups whose top-ranked candidate is positive.
pub fn precision_at_1(groups: &[RankedGroup]) -> Result<(f64, usize)> {
    mean_over_groups(groups, |group| {
        let order = group.ranking();
        f64::from(group.candidates[order[0]].1)
    })
}

/// Fraction of argmax predictions equal to the gold label.
pub fn task_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Evaluation("no predictions to score".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// The Table-3 column set for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    #[serde(rename = "R_n@1")]
    pub r_at_1: f64,
    #[serde(rename = "R_n@2")]
    pub r_at_2: f64,
    #[serde(rename = "R_n@5")]
    pub r_at_5: f64,
    #[serde(rename = "MAP")]
    pub map: f64,
    #[serde(rename = "MRR")]
    pub mrr: f64,
    #[serde(rename = "P@1")]
    pub p_at_1: f64,
    pub n_groups: usize,
    pub n_excluded: usize,
}

pub fn metric_report(groups: &[RankedGroup]) -> Result<MetricReport> {
    let (r_at_1, excluded) = recall_n_k(groups, 1)?;
    let (r_at_2, _) = recall_n_k(groups, 2)?;
    let (r_at_5, _) = recall_n_k(groups, 5)?;
    let (map, _) = mean_average_precision(groups)?;
    let (mrr, _) = mean_reciprocal_rank(groups)?;
    let (p_at_1, _) = precision_at_1(groups)?;
    Ok(MetricReport {
        schema_version: 1,
        r_at_1,
        r_at_2,
        r_at_5,
        map,
        mrr,
        p_at_1,
        n_groups: groups.len() - excluded,
        n_excluded: excluded,
    })
}

/// Group examples by group_id, preserving first-occurrence order, and check
/// that all candidates of a group share the same context.
pub fn group_examples(examples: &[DialogueExample]) -> Result<Vec<(String, Vec<usize>)>> {
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    for (i, example) in examples.iter().enumerate() {
        match by_id.get(example.group_id.as_str()) {
            Some(&slot) => {
                let first = order[slot].1[0];
                if examples[first].context != example.context {
                    return Err(Error::Evaluation(format!(
                        "group {:?} mixes different contexts",
                        example.group_id
                    )));
                }
                order[slot].1.push(i);
            }
            None => {
                by_id.insert(example.group_id.as_str(), order.len());
                order.push((example.group_id.clone(), vec![i]));
            }
        }
    }
    for (group_id, members) in &order {
        if members.len() < 2 {
            return Err(Error::Evaluation(format!(
                "group {group_id:?} has fewer than 2 candidates"
            )));
        }
    }
    Ok(order)
}

pub fn read_examples(path: &Path) -> Result<Vec<DialogueExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_examples(&text, &path.display().to_string())
}

pub fn parse_examples(text: &str, source_name: &str) -> Result<Vec<DialogueExample>> {
    let mut examples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let example: DialogueExample =
            serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: source_name.to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        examples.push(example);
    }
    Ok(examples)
}

pub fn write_examples(examples: &[DialogueExample], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for example in examples {
        serde_json::to_writer(&mut w, example).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
