//! Vocabulary and input-layout assembly.
//!
//! Four layouts, all bracketed by [CLS]...[SEP] with a [SOT] before every
//! utterance:
//!   insertion/replacement: [CLS] ([SOT] u)* [SEP], one segment;
//!   deletion:  [CLS] ([SOT] u)×(k-1) [SEP] [SOT] u_i [SEP], segment 1 after
//!              the first [SEP];
//!   response selection: [CLS] ([SOT] U)×n [SEP] [SOT] R [SEP], segment 1
//!              after the first [SEP], oldest context dropped whole on
//!              overflow.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::evaluation::DialogueExample;
use crate::samplegen::{DeletionSample, InsertionSample, ReplacementSample};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const SOT: usize = 4;

const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[SOT]"];

/// Frequency-ranked vocabulary with fixed special ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocab {
    /// Lowercased units split at whitespace and punctuation (punctuation
    /// characters become single-char tokens).
    pub fn tokenize(text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut current = String::new();
        for c in text.chars() {
            if c.is_whitespace() {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            } else if c.is_alphanumeric() {
                current.extend(c.to_lowercase());
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
    }

    /// Count tokens over the corpus, keep those with frequency >= min_freq,
    /// rank by descending frequency with lexicographic tie-break, and cap
    /// the total size (specials included) at max_size.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        max_size: usize,
        min_freq: usize,
    ) -> Result<Vocab> {
        if max_size <= SPECIALS.len() {
            return Err(Error::Config(format!(
                "max_size must exceed {}, got {max_size}",
                SPECIALS.len()
            )));
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for token in Self::tokenize(text) {
                *freq.entry(token).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = freq
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t));
        Ok(Vocab::from_tokens(id_to_token))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Vocab {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            id_to_token,
            token_to_id,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        Self::tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// JSON array of tokens in id order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.id_to_token).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Vocab> {
        let tokens: Vec<String> = serde_json::from_str(text).map_err(|e| Error::Malformed {
            path: "<vocab>".into(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if tokens.len() < SPECIALS.len()
            || SPECIALS
                .iter()
                .enumerate()
                .any(|(i, s)| tokens[i] != *s)
        {
            return Err(Error::Config(
                "vocab file must start with [PAD],[UNK],[CLS],[SEP],[SOT]".into(),
            ));
        }
        Ok(Vocab::from_tokens(tokens))
    }
}

/// An assembled model input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub segments: Vec<u8>,
    /// Indices of every [SOT] token, in order.
    pub sot_positions: Vec<usize>,
    /// True when the assembled layout exceeded max_len (callers skip such
    /// samples) or when context turns were dropped to fit.
    pub truncated: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn assert_invariants(&self) {
        debug_assert_eq!(self.ids.len(), self.segments.len());
        debug_assert_eq!(self.ids.first(), Some(&CLS));
        debug_assert_eq!(self.ids.last(), Some(&SEP));
        let sots: Vec<usize> = self
            .ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == SOT)
            .map(|(i, _)| i)
            .collect();
        debug_assert_eq!(sots, self.sot_positions);
    }
}

struct Builder {
    ids: Vec<usize>,
    segments: Vec<u8>,
    sot_positions: Vec<usize>,
    segment: u8,
}

impl Builder {
    fn new() -> Self {
        let mut b = Builder {
            ids: Vec::new(),
            segments: Vec::new(),
            sot_positions: Vec::new(),
            segment: 0,
        };
        b.push(CLS);
        b
    }

    fn push(&mut self, id: usize) {
        self.ids.push(id);
        self.segments.push(self.segment);
    }

    fn utterance(&mut self, vocab: &Vocab, text: &str) {
        self.sot_positions.push(self.ids.len());
        self.push(SOT);
        for id in vocab.encode_text(text) {
            self.push(id);
        }
    }

    fn finish(mut self, max_len: usize) -> TokenSequence {
        self.push(SEP);
        let truncated = self.ids.len() > max_len;
        let seq = TokenSequence {
            ids: self.ids,
            segments: self.segments,
            sot_positions: self.sot_positions,
            truncated,
        };
        seq.assert_invariants();
        seq
    }
}

/// `[CLS] ([SOT] u)×(1+|tail|) [SEP]`, single segment, anchor's [SOT] first.
pub fn assemble_insertion(
    sample: &InsertionSample,
    vocab: &Vocab,
    max_len: usize,
) -> TokenSequence {
    let mut b = Builder::new();
    b.utterance(vocab, &sample.anchor);
    for utterance in &sample.tail {
        b.utterance(vocab, utterance);
    }
    b.finish(max_len)
}

/// `[CLS] ([SOT] u)×(k-1) [SEP] [SOT] u_i [SEP]`; segment flips to 1 right
/// after the first [SEP]; the query [SOT] is last in sot_positions.
pub fn assemble_deletion(sample: &DeletionSample, vocab: &Vocab, max_len: usize) -> TokenSequence {
    let mut b = Builder::new();
    for utterance in &sample.remaining {
        b.utterance(vocab, utterance);
    }
    b.push(SEP);
    b.segment = 1;
    b.utterance(vocab, &sample.deleted);
    b.finish(max_len)
}

/// `[CLS] ([SOT] u)×k [SEP]`, single segment.
pub fn assemble_replacement(
    sample: &ReplacementSample,
    vocab: &Vocab,
    max_len: usize,
) -> TokenSequence {
    let mut b = Builder::new();
    for utterance in &sample.utterances {
        b.utterance(vocab, utterance);
    }
    b.finish(max_len)
}

/// `[CLS] ([SOT] U)×n [SEP] [SOT] R [SEP]`. When the layout exceeds
/// max_len, whole context utterances are dropped oldest-first; the response
/// and at least one context utterance are always kept.
pub fn assemble_response_selection(
    example: &DialogueExample,
    vocab: &Vocab,
    max_len: usize,
) -> Result<TokenSequence> {
    if example.context.is_empty() {
        return Err(Error::Config("dialogue example has empty context".into()));
    }
    let mut drop = 0;
    loop {
        let kept = &example.context[drop..];
        let mut b = Builder::new();
        for utterance in kept {
            b.utterance(vocab, utterance);
        }
        b.push(SEP);
        b.segment = 1;
        b.utterance(vocab, &example.response);
        let mut seq = b.finish(usize::MAX);
        if seq.len() <= max_len {
            seq.truncated = drop > 0;
            return Ok(seq);
        }
        if kept.len() == 1 {
            return Err(Error::SequenceTooLong {
                needed: seq.len(),
                max: max_len,
            });
        }
        drop += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplegen::{
        DeletionProvenance, InsertionProvenance, ReplacementProvenance, Scope,
    };

    fn vocab() -> Vocab {
        Vocab::build(["w x y z q r s t u v"], 100, 1).unwrap()
    }

    fn insertion_sample() -> InsertionSample {
        InsertionSample {
            scope: Scope::General,
            anchor: "w".into(),
            tail: vec!["x".into(), "y".into(), "z".into()],
            label: 0,
            provenance: InsertionProvenance::General {
                source_id: "a".into(),
                paragraph_a: 0,
                a_first: 0,
                paragraph_b: 1,
                b_first: 0,
                insert_pos: 0,
            },
        }
    }

    #[test]
    fn specials_have_fixed_ids() {
        let v = vocab();
        assert_eq!(v.id("[PAD]"), PAD);
        assert_eq!(v.id("[UNK]"), UNK);
        assert_eq!(v.id("[CLS]"), CLS);
        assert_eq!(v.id("[SEP]"), SEP);
        assert_eq!(v.id("[SOT]"), SOT);
    }

    #[test]
    fn empty_corpus_gives_specials_only() {
        let v = Vocab::build([], 100, 1).unwrap();
        assert_eq!(v.size(), 5);
    }

    #[test]
    fn min_freq_filters_tokens() {
        let v = Vocab::build(["a a b"], 100, 2).unwrap();
        assert_eq!(v.size(), 6);
        assert_ne!(v.id("a"), UNK);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn ranking_is_frequency_then_lexicographic() {
        let v = Vocab::build(["b b b a a c c z"], 100, 1).unwrap();
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("a"), 6);
        assert_eq!(v.id("c"), 7);
        assert_eq!(v.id("z"), 8);
    }

    #[test]
    fn tokenize_lowercases_and_splits_punctuation() {
        assert_eq!(
            Vocab::tokenize("Hello, world!"),
            vec!["hello", ",", "world", "!"]
        );
    }

    #[test]
    fn insertion_layout_ids_and_sots() {
        let seq = assemble_insertion(&insertion_sample(), &vocab(), 64);
        assert_eq!(seq.ids.len(), 10);
        assert_eq!(seq.sot_positions, vec![1, 3, 5, 7]);
        assert_eq!(seq.ids[0], CLS);
        assert_eq!(*seq.ids.last().unwrap(), SEP);
        assert!(seq.segments.iter().all(|&s| s == 0));
        assert!(!seq.truncated);
    }

    #[test]
    fn deletion_layout_flips_segment_after_first_sep() {
        let sample = DeletionSample {
            scope: Scope::General,
            remaining: vec!["w".into(), "x".into(), "y".into(), "z".into()],
            deleted: "q".into(),
            label: 1,
            provenance: DeletionProvenance {
                source_id: "a".into(),
                paragraph: 0,
                window_start: 0,
                deleted_index: 2,
            },
        };
        let seq = assemble_deletion(&sample, &vocab(), 64);
        assert_eq!(seq.sot_positions.len(), 5);
        let first_sep = seq.ids.iter().position(|&id| id == SEP).unwrap();
        for (i, &seg) in seq.segments.iter().enumerate() {
            assert_eq!(seg, u8::from(i > first_sep), "position {i}");
        }
        assert_eq!(*seq.sot_positions.last().unwrap(), first_sep + 1);
    }

    #[test]
    fn replacement_layout_round_trips_spans() {
        let sample = ReplacementSample {
            scope: Scope::General,
            utterances: vec!["w x".into(), "y".into(), "z q".into(), "r".into(), "s".into()],
            label: 2,
            provenance: ReplacementProvenance {
                source_id: "a".into(),
                paragraph: 0,
                window_start: 0,
                replaced_index: 3,
                donor_id: "b".into(),
                donor_paragraph: 0,
                donor_sentence: 0,
            },
        };
        let v = vocab();
        let seq = assemble_replacement(&sample, &v, 64);
        assert_eq!(seq.sot_positions.len(), 5);
        assert!(seq.segments.iter().all(|&s| s == 0));
        // Decode the utterance span after each [SOT] and compare.
        for (j, &p) in seq.sot_positions.iter().enumerate() {
            let end = seq
                .sot_positions
                .get(j + 1)
                .copied()
                .unwrap_or(seq.ids.len() - 1);
            let words: Vec<&str> = seq.ids[p + 1..end]
                .iter()
                .map(|&id| v.token(id).unwrap())
                .collect();
            assert_eq!(words.join(" "), sample.utterances[j]);
        }
    }

    #[test]
    fn over_length_pretrain_sample_is_flagged() {
        let seq = assemble_insertion(&insertion_sample(), &vocab(), 8);
        assert!(seq.truncated);
    }

    #[test]
    fn response_selection_drops_oldest_context_first() {
        let v = vocab();
        let example = DialogueExample {
            context: vec!["w x y".into(), "z q".into(), "r".into()],
            response: "s t".into(),
            label: 1,
            group_id: "g".into(),
        };
        let full = assemble_response_selection(&example, &v, 64).unwrap();
        assert_eq!(full.sot_positions.len(), 4);
        assert!(!full.truncated);
        let first_sep = full.ids.iter().position(|&id| id == SEP).unwrap();
        assert!(full
            .segments
            .iter()
            .enumerate()
            .all(|(i, &s)| s == u8::from(i > first_sep)));

        // Tight budget: [CLS] + 2 contexts + [SEP] + [SOT] response [SEP].
        let tight = assemble_response_selection(&example, &v, 12).unwrap();
        assert!(tight.truncated);
        assert_eq!(tight.sot_positions.len(), 3);
        let last_sot = *tight.sot_positions.last().unwrap();
        assert_eq!(tight.ids[last_sot + 1], v.id("s"));

        // Response that can never fit errors out.
        let impossible = assemble_response_selection(&example, &v, 6);
        assert!(matches!(impossible, Err(Error::SequenceTooLong { .. })));
    }
}
