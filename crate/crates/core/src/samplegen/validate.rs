//! Independent sample validation: re-derives the gold label from provenance
//! plus source text and checks every structural invariant.

use std::collections::HashMap;

use crate::corpus::Article;
use crate::{Error, Result};

use super::{
    DeletionSample, InsertionProvenance, InsertionSample, PretrainSample, ReplacementSample,
    Scope,
};

use super::general::insertion_tail;

/// Source text lookup for the validator. Dialogues are stored as
/// single-paragraph entries.
#[derive(Debug, Default, Clone)]
pub struct CorpusIndex {
    texts: HashMap<String, Vec<Vec<String>>>,
}

impl CorpusIndex {
    pub fn from_articles(articles: &[Article]) -> Self {
        let mut index = CorpusIndex::default();
        for article in articles {
            index
                .texts
                .insert(article.id.clone(), article.paragraphs.clone());
        }
        index
    }

    pub fn insert_dialogue(&mut self, id: &str, utterances: &[String]) {
        self.texts.insert(id.to_string(), vec![utterances.to_vec()]);
    }

    fn paragraph(&self, id: &str, paragraph: usize) -> Result<&[String]> {
        let paragraphs = self
            .texts
            .get(id)
            .ok_or_else(|| Error::Validation(format!("provenance names unknown source {id:?}")))?;
        paragraphs
            .get(paragraph)
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Validation(format!("source {id:?} has no paragraph {paragraph}"))
            })
    }
}

/// Outcome of validating one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub pass: bool,
    pub reasons: Vec<String>,
}

impl ValidationReport {
    fn ok() -> Self {
        ValidationReport {
            pass: true,
            reasons: Vec::new(),
        }
    }

    fn fail(&mut self, reason: impl Into<String>) {
        self.pass = false;
        self.reasons.push(reason.into());
    }
}

pub fn validate_sample(sample: &PretrainSample, index: &CorpusIndex) -> Result<ValidationReport> {
    match sample {
        PretrainSample::Insertion(s) => validate_insertion(s, index),
        PretrainSample::Deletion(s) => validate_deletion(s, index),
        PretrainSample::Replacement(s) => validate_replacement(s, index),
    }
}

fn validate_insertion(s: &InsertionSample, index: &CorpusIndex) -> Result<ValidationReport> {
    let mut report = ValidationReport::ok();
    match &s.provenance {
        InsertionProvenance::General {
            source_id,
            paragraph_a,
            a_first,
            paragraph_b,
            b_first,
            insert_pos,
        } => {
            if s.scope != Scope::General {
                report.fail("scope/provenance mismatch");
            }
            let p = index.paragraph(source_id, *paragraph_a)?;
            let q = index.paragraph(source_id, *paragraph_b)?;
            if paragraph_b <= paragraph_a {
                report.fail("order violation: B's paragraph does not follow A's");
            }
            if a_first + 1 >= p.len() || b_first + 1 >= q.len() {
                return Err(Error::Validation(
                    "provenance indexes past paragraph end".into(),
                ));
            }
            if *insert_pos > 2 {
                report.fail(format!("insert_pos {insert_pos} out of range"));
            }
            if s.tail.len() != 3 {
                report.fail(format!("general tail must have 3 utterances, has {}", s.tail.len()));
            }
            if s.anchor != p[*a_first] {
                report.fail("anchor text mismatch");
            }
            if s.label != *insert_pos {
                report.fail("label mismatch");
            }
            let expected = insertion_tail(
                &p[a_first + 1],
                &q[*b_first],
                &q[b_first + 1],
                *insert_pos,
            );
            if s.tail != expected {
                let swapped = insertion_tail(
                    &p[a_first + 1],
                    &q[b_first + 1],
                    &q[*b_first],
                    *insert_pos,
                );
                if s.tail == swapped {
                    report.fail("order violation: B-internal order swapped");
                } else {
                    report.fail("tail text mismatch");
                }
            }
            // Flattened speaker pattern: anchor is A, tail[label] is A.
            if report.pass {
                let mut pattern = String::from("A");
                for (j, _) in s.tail.iter().enumerate() {
                    pattern.push(if j == s.label { 'A' } else { 'B' });
                }
                if !matches!(pattern.as_str(), "AABB" | "ABAB" | "ABBA") {
                    report.fail(format!("pattern {pattern} outside AABB/ABAB/ABBA"));
                }
            }
        }
        InsertionProvenance::Domain {
            source_id,
            window_start,
            insert_pos,
        } => {
            if s.scope != Scope::Domain {
                report.fail("scope/provenance mismatch");
            }
            let dialogue = index.paragraph(source_id, 0)?;
            let k = s.tail.len() + 1;
            if k < 3 {
                report.fail("domain window shorter than 3 utterances");
            }
            if window_start + k > dialogue.len() {
                return Err(Error::Validation(
                    "provenance window exceeds dialogue length".into(),
                ));
            }
            let window = &dialogue[*window_start..window_start + k];
            if s.anchor != window[0] {
                report.fail("anchor text mismatch");
            }
            if *insert_pos > k - 2 {
                report.fail(format!("insert_pos {insert_pos} out of range"));
            } else {
                let mut expected: Vec<String> = window[2..].to_vec();
                expected.insert(*insert_pos, window[1].clone());
                if s.tail != expected {
                    report.fail("tail text mismatch");
                }
            }
            if s.label != *insert_pos {
                report.fail("label mismatch");
            }
        }
    }
    Ok(report)
}

fn validate_deletion(s: &DeletionSample, index: &CorpusIndex) -> Result<ValidationReport> {
    let mut report = ValidationReport::ok();
    let p = &s.provenance;
    let paragraph = index.paragraph(&p.source_id, p.paragraph)?;
    let k = s.remaining.len() + 1;
    if p.window_start + k > paragraph.len() {
        return Err(Error::Validation(
            "provenance window exceeds paragraph length".into(),
        ));
    }
    let window = &paragraph[p.window_start..p.window_start + k];
    let i = p.deleted_index;
    if i == 0 || i >= k {
        report.fail(format!("deleted index {i} outside 1..{}", k - 1));
        return Ok(report);
    }
    if s.deleted != window[i - 1] {
        report.fail("deleted text mismatch");
    }
    let mut expected: Vec<String> = window.to_vec();
    expected.remove(i - 1);
    if s.remaining != expected {
        report.fail("remaining text mismatch");
    }
    if s.label != i - 1 {
        report.fail("label mismatch");
    }
    Ok(report)
}

fn validate_replacement(s: &ReplacementSample, index: &CorpusIndex) -> Result<ValidationReport> {
    let mut report = ValidationReport::ok();
    let p = &s.provenance;
    if p.donor_id == p.source_id {
        report.fail("donor matches source");
    }
    let paragraph = index.paragraph(&p.source_id, p.paragraph)?;
    let donor_paragraph = index.paragraph(&p.donor_id, p.donor_paragraph)?;
    let k = s.utterances.len();
    if p.window_start + k > paragraph.len() {
        return Err(Error::Validation(
            "provenance window exceeds paragraph length".into(),
        ));
    }
    if p.donor_sentence >= donor_paragraph.len() {
        return Err(Error::Validation(
            "donor sentence index out of range".into(),
        ));
    }
    let window = &paragraph[p.window_start..p.window_start + k];
    let i = p.replaced_index;
    if i == 0 || i > k {
        report.fail(format!("replaced index {i} outside 1..{k}"));
        return Ok(report);
    }
    for (j, utterance) in s.utterances.iter().enumerate() {
        if j == i - 1 {
            continue;
        }
        if *utterance != window[j] {
            report.fail(format!("window text mismatch at position {j}"));
        }
    }
    if s.utterances[i - 1] != donor_paragraph[p.donor_sentence] {
        report.fail("intruder text mismatch");
    }
    if s.label != i - 1 {
        report.fail("label mismatch");
    }
    Ok(report)
}
