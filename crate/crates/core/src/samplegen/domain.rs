//! Sample construction from a target dataset's own dialogues.
//!
//! Dialogues shorter than 3 utterances are skipped; otherwise a window of
//! k' = min(k, length) continuous utterances is drawn, so dialogues need
//! not reach k utterances. Insertion fixes u_1 and moves u_2 to a random
//! gap among the following utterances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    word_count, DeletionProvenance, DeletionSample, GenerationConfig, InsertionProvenance,
    InsertionSample, ReplacementProvenance, ReplacementSample, Scope,
};

const MIN_DIALOGUE_LEN: usize = 3;

fn pick_window<'a>(
    dialogue: &'a [String],
    cfg: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, &'a [String])> {
    if dialogue.len() < MIN_DIALOGUE_LEN {
        return None;
    }
    let k = cfg.k.min(dialogue.len());
    let start = rng.gen_range(0..=dialogue.len() - k);
    Some((start, &dialogue[start..start + k]))
}

pub fn gen_insertion_domain(
    dialogue_id: &str,
    dialogue: &[String],
    cfg: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Option<InsertionSample> {
    let (start, window) = pick_window(dialogue, cfg, rng)?;
    let k = window.len();
    let gap = rng.gen_range(0..k - 1);
    let mut tail: Vec<String> = window[2..].to_vec();
    tail.insert(gap, window[1].clone());
    let anchor = window[0].clone();
    if word_count(std::iter::once(anchor.as_str()).chain(tail.iter().map(String::as_str)))
        > cfg.max_words
    {
        return None;
    }
    Some(InsertionSample {
        scope: Scope::Domain,
        anchor,
        tail,
        label: gap,
        provenance: InsertionProvenance::Domain {
            source_id: dialogue_id.to_string(),
            window_start: start,
            insert_pos: gap,
        },
    })
}

pub fn gen_deletion_domain(
    dialogue_id: &str,
    dialogue: &[String],
    cfg: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Option<DeletionSample> {
    let (start, window) = pick_window(dialogue, cfg, rng)?;
    let k = window.len();
    if word_count(window.iter().map(String::as_str)) > cfg.max_words {
        return None;
    }
    let i = rng.gen_range(1..k);
    let mut remaining: Vec<String> = window.to_vec();
    let deleted = remaining.remove(i - 1);
    Some(DeletionSample {
        scope: Scope::Domain,
        remaining,
        deleted,
        label: i - 1,
        provenance: DeletionProvenance {
            source_id: dialogue_id.to_string(),
            paragraph: 0,
            window_start: start,
            deleted_index: i,
        },
    })
}

pub fn gen_replacement_domain(
    dialogue_id: &str,
    dialogue: &[String],
    others: &[(&str, &[String])],
    cfg: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Option<ReplacementSample> {
    let usable: Vec<&(&str, &[String])> = others
        .iter()
        .filter(|(id, utterances)| *id != dialogue_id && !utterances.is_empty())
        .collect();
    if usable.is_empty() {
        return None;
    }
    let (start, window) = pick_window(dialogue, cfg, rng)?;
    let k = window.len();
    let i = rng.gen_range(1..=k);
    let (donor_id, donor_utterances) = usable[rng.gen_range(0..usable.len())];
    let ds = rng.gen_range(0..donor_utterances.len());
    let mut utterances: Vec<String> = window.to_vec();
    utterances[i - 1] = donor_utterances[ds].clone();
    if word_count(utterances.iter().map(String::as_str)) > cfg.max_words {
        return None;
    }
    Some(ReplacementSample {
        scope: Scope::Domain,
        utterances,
        label: i - 1,
        provenance: ReplacementProvenance {
            source_id: dialogue_id.to_string(),
            paragraph: 0,
            window_start: start,
            replaced_index: i,
            donor_id: donor_id.to_string(),
            donor_paragraph: 0,
            donor_sentence: ds,
        },
    })
}
