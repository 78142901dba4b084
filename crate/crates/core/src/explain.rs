//! Explanation masks and the attention targets derived from them.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, EncodedSequence, NliExample, Segment};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskSource {
    Freetext,
    Highlight,
}

/// Binary relevance per sequence position (non-PAD positions only).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplanationMask {
    pub values: Vec<u8>,
    pub source: MaskSource,
}

impl ExplanationMask {
    pub fn support(&self) -> usize {
        self.values.iter().filter(|&&e| e == 1).count()
    }
}

/// Supervision target over the non-PAD positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    pub values: Vec<f64>,
    pub empty: bool,
}

impl TargetDistribution {
    pub fn empty(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            empty: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StopwordLexicon {
    words: HashSet<String>,
}

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

impl StopwordLexicon {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// One token per line; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Self {
        Self::from_words(text.lines().filter(|l| !l.trim_start().starts_with('#')))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lex = Self::parse(&text);
        if lex.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "stop-word file {} is empty",
                path.display()
            )));
        }
        Ok(lex)
    }

    /// Shipped English function words and punctuation.
    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    /// Sorted, one word per line. Stable across runs, so usable in hashes.
    pub fn to_text(&self) -> String {
        let mut words: Vec<&str> = self.words.iter().map(String::as_str).collect();
        words.sort_unstable();
        words.iter().map(|w| format!("{w}\n")).collect()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Marks word positions whose surface form occurs in any of the example's
/// free-text explanations and is not a stop-word.
pub fn extract_freetext_mask(
    example: &NliExample,
    seq: &EncodedSequence,
    stopwords: &StopwordLexicon,
) -> ExplanationMask {
    let vocab: HashSet<String> = example
        .freetext_explanations
        .iter()
        .flat_map(|e| tokenize(e))
        .filter(|w| !stopwords.contains(w))
        .collect();
    let values = seq.tokens[..seq.valid_length]
        .iter()
        .map(|t| u8::from(t.segment.is_word() && vocab.contains(&t.surface)))
        .collect();
    ExplanationMask {
        values,
        source: MaskSource::Freetext,
    }
}

/// Marks exactly the highlighted word positions; stop-words are kept.
pub fn extract_highlight_mask(
    example: &NliExample,
    seq: &EncodedSequence,
    example_index: usize,
) -> Result<ExplanationMask> {
    let mut values = vec![0u8; seq.valid_length];
    for (segment, set, words) in [
        (Segment::Premise, &example.premise_highlights, &example.premise_words),
        (Segment::Hypothesis, &example.hypothesis_highlights, &example.hypothesis_words),
    ] {
        for &i in set {
            if i >= words.len() {
                return Err(Error::Highlight {
                    example: example_index,
                    message: format!(
                        "{} highlight {i} out of range ({} words)",
                        segment.as_str().to_lowercase(),
                        words.len()
                    ),
                });
            }
            // Truncated words simply drop out of the mask.
            if let Some(p) = seq.word_position(segment, i) {
                values[p] = 1;
            }
        }
    }
    Ok(ExplanationMask {
        values,
        source: MaskSource::Highlight,
    })
}

pub fn normalize_mask(mask: &ExplanationMask) -> TargetDistribution {
    let total = mask.support();
    if total == 0 {
        return TargetDistribution::empty(mask.values.len());
    }
    let w = 1.0 / total as f64;
    TargetDistribution {
        values: mask.values.iter().map(|&e| if e == 1 { w } else { 0.0 }).collect(),
        empty: false,
    }
}

/// Averages free-text and highlight targets. When the highlights only touch
/// the hypothesis, the free-text target is used alone so the premise still
/// receives supervision.
pub fn combine_targets(
    d_free: &TargetDistribution,
    d_high: &TargetDistribution,
    seq: &EncodedSequence,
) -> Result<TargetDistribution> {
    if d_free.len() != d_high.len() || d_free.len() != seq.valid_length {
        return Err(Error::Shape {
            op: "combine_targets",
            detail: format!(
                "free {} / highlight {} / sequence {}",
                d_free.len(),
                d_high.len(),
                seq.valid_length
            ),
        });
    }
    match (d_free.empty, d_high.empty) {
        (true, true) => return Ok(TargetDistribution::empty(d_free.len())),
        (true, false) => return Ok(d_high.clone()),
        (false, true) => return Ok(d_free.clone()),
        (false, false) => {}
    }
    let hypothesis_only = d_high
        .values
        .iter()
        .enumerate()
        .all(|(p, &v)| v == 0.0 || seq.segment(p) == Segment::Hypothesis);
    if hypothesis_only {
        return Ok(d_free.clone());
    }
    Ok(TargetDistribution {
        values: d_free
            .values
            .iter()
            .zip(&d_high.values)
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
        empty: false,
    })
}

/// Permutes target values among premise positions and, separately, among
/// hypothesis positions. Specials keep their (zero) values.
pub fn shuffle_target(d: &TargetDistribution, seq: &EncodedSequence, rng_seed: u64) -> TargetDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut values = d.values.clone();
    for segment in [Segment::Premise, Segment::Hypothesis] {
        let positions: Vec<usize> = seq.positions_in(segment).filter(|&p| p < values.len()).collect();
        let mut seg_values: Vec<f64> = positions.iter().map(|&p| d.values[p]).collect();
        seg_values.shuffle(&mut rng);
        for (&p, v) in positions.iter().zip(seg_values) {
            values[p] = v;
        }
    }
    TargetDistribution {
        values,
        empty: d.empty,
    }
}

/// Every target mode's distribution for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub freetext: TargetDistribution,
    pub highlights: TargetDistribution,
    pub combined: TargetDistribution,
}

pub fn build_targets(
    example: &NliExample,
    seq: &EncodedSequence,
    stopwords: &StopwordLexicon,
    example_index: usize,
) -> Result<TargetSet> {
    let freetext = normalize_mask(&extract_freetext_mask(example, seq, stopwords));
    let highlights = normalize_mask(&extract_highlight_mask(example, seq, example_index)?);
    let combined = combine_targets(&freetext, &highlights, seq)?;
    Ok(TargetSet {
        freetext,
        highlights,
        combined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, encode_pair};
    use crate::testutil::figure_one;
    use proptest::prelude::*;

    fn fig1_seq() -> (NliExample, EncodedSequence) {
        let ex = figure_one();
        let v = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        let s = encode_pair(&ex, &v, 16).unwrap();
        (ex, s)
    }

    fn fig1_stopwords() -> StopwordLexicon {
        StopwordLexicon::from_words(["a", "is", "it", "while", "cannot"])
    }

    fn marked_words(seq: &EncodedSequence, mask: &ExplanationMask) -> Vec<String> {
        mask.values
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == 1)
            .map(|(p, _)| seq.tokens[p].surface.clone())
            .collect()
    }

    #[test]
    fn freetext_mask_figure_one() {
        let (ex, seq) = fig1_seq();
        let m = extract_freetext_mask(&ex, &seq, &fig1_stopwords());
        assert_eq!(m.values.len(), 10);
        // [CLS] a dog swims [SEP] a dog is sleeping [SEP]
        assert_eq!(m.values, vec![0, 0, 1, 1, 0, 0, 1, 0, 1, 0]);
        assert_eq!(marked_words(&seq, &m), ["dog", "swims", "dog", "sleeping"]);
    }

    #[test]
    fn freetext_mask_edge_cases() {
        let (mut ex, seq) = fig1_seq();
        ex.freetext_explanations.clear();
        assert_eq!(extract_freetext_mask(&ex, &seq, &fig1_stopwords()).support(), 0);
        ex.freetext_explanations = vec!["A cannot, while it is".into()];
        assert_eq!(extract_freetext_mask(&ex, &seq, &fig1_stopwords()).support(), 0);
    }

    #[test]
    fn shipped_stopwords_cover_function_words() {
        let sw = StopwordLexicon::english();
        for w in ["a", "the", "is", "it", ".", ","] {
            assert!(sw.contains(w), "{w}");
        }
        assert!(!sw.contains("dog"));
    }

    #[test]
    fn highlight_mask() {
        let (mut ex, seq) = fig1_seq();
        let m = extract_highlight_mask(&ex, &seq, 0).unwrap();
        assert_eq!(marked_words(&seq, &m), ["swims", "sleeping"]);
        assert_eq!(m.values[3], 1);
        assert_eq!(m.values[8], 1);

        ex.hypothesis_highlights = [2].into();
        let m = extract_highlight_mask(&ex, &seq, 0).unwrap();
        assert_eq!(marked_words(&seq, &m), ["swims", "is"]);

        ex.premise_highlights.clear();
        ex.hypothesis_highlights.clear();
        assert_eq!(extract_highlight_mask(&ex, &seq, 0).unwrap().support(), 0);

        ex.premise_highlights = [7].into();
        let err = extract_highlight_mask(&ex, &seq, 42).unwrap_err().to_string();
        assert!(err.contains("example 42"), "{err}");
    }

    fn mask(values: &[u8]) -> ExplanationMask {
        ExplanationMask {
            values: values.to_vec(),
            source: MaskSource::Highlight,
        }
    }

    #[test]
    fn normalize_examples() {
        let d = normalize_mask(&mask(&[0, 1, 0, 1, 0, 0]));
        assert_eq!(d.values, vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.0]);
        assert!(!d.empty);
        let z = normalize_mask(&mask(&[0, 0, 0]));
        assert!(z.empty);
        assert_eq!(z.values, vec![0.0; 3]);
        assert_eq!(normalize_mask(&mask(&[1, 1, 1, 1])).values, vec![0.25; 4]);
    }

    /// `[CLS] p p [SEP] h [SEP]`-shaped sequence of four positions used in
    /// the combine examples: positions 1 and 2 premise, 3 hypothesis.
    fn four_seq() -> EncodedSequence {
        let ex = NliExample::new("x y", "z", crate::corpus::Label::Neutral);
        let v = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        let mut s = encode_pair(&ex, &v, 6).unwrap();
        s.valid_length = 4;
        s.segment_map = vec![Segment::Cls, Segment::Premise, Segment::Premise, Segment::Hypothesis];
        s
    }

    fn td(v: &[f64]) -> TargetDistribution {
        TargetDistribution {
            values: v.to_vec(),
            empty: v.iter().all(|&x| x == 0.0),
        }
    }

    #[test]
    fn combine_examples() {
        let seq = four_seq();
        let free = td(&[0.0, 0.5, 0.0, 0.5]);
        let high = td(&[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(combine_targets(&free, &high, &seq).unwrap().values, vec![0.0, 0.25, 0.5, 0.25]);

        let hyp_only = td(&[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(combine_targets(&free, &hyp_only, &seq).unwrap(), free);

        let empty = TargetDistribution::empty(4);
        assert_eq!(combine_targets(&empty, &high, &seq).unwrap(), high);
        assert_eq!(combine_targets(&free, &empty, &seq).unwrap(), free);
        assert!(combine_targets(&empty, &empty, &seq).unwrap().empty);
        assert!(combine_targets(&free, &td(&[1.0]), &seq).is_err());
    }

    #[test]
    fn combine_symmetric_off_fallback() {
        let seq = four_seq();
        let a = td(&[0.0, 0.5, 0.0, 0.5]);
        let b = td(&[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            combine_targets(&a, &b, &seq).unwrap(),
            combine_targets(&b, &a, &seq).unwrap()
        );
    }

    #[test]
    fn shuffle_stays_in_segment() {
        let (ex, seq) = fig1_seq();
        let mut values = vec![0.0; seq.valid_length];
        values[2] = 1.0;
        let d = TargetDistribution { values, empty: false };
        for seed in 0..50 {
            let s = shuffle_target(&d, &seq, seed);
            let p = s.values.iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(seq.segment(p), Segment::Premise);
        }
        let t = build_targets(&ex, &seq, &fig1_stopwords(), 0).unwrap();
        assert_eq!(shuffle_target(&t.combined, &seq, 9), shuffle_target(&t.combined, &seq, 9));
    }

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    proptest! {
        #[test]
        fn shuffle_preserves_segment_multisets(
            p_mask in prop::collection::vec(0u8..2, 1..8),
            h_mask in prop::collection::vec(0u8..2, 1..8),
            seed in any::<u64>(),
        ) {
            let premise: Vec<String> = (0..p_mask.len()).map(|i| format!("p{i}")).collect();
            let hyp: Vec<String> = (0..h_mask.len()).map(|i| format!("h{i}")).collect();
            let ex = NliExample::new(&premise.join(" "), &hyp.join(" "), crate::corpus::Label::Neutral);
            let v = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
            let seq = encode_pair(&ex, &v, 20).unwrap();
            let mut e = vec![0u8; seq.valid_length];
            for (i, &m) in p_mask.iter().enumerate() { e[1 + i] = m; }
            for (i, &m) in h_mask.iter().enumerate() { e[2 + p_mask.len() + i] = m; }
            let d = normalize_mask(&mask(&e));
            let s = shuffle_target(&d, &seq, seed);
            for seg in [Segment::Premise, Segment::Hypothesis, Segment::Cls, Segment::Sep1, Segment::Sep2] {
                let before = sorted(seq.positions_in(seg).map(|p| d.values[p]).collect());
                let after = sorted(seq.positions_in(seg).map(|p| s.values[p]).collect());
                prop_assert_eq!(before, after);
            }
            if !d.empty {
                prop_assert!((s.sum() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn normalized_targets_are_distributions(e in prop::collection::vec(0u8..2, 1..40), k in 1u32..5) {
            let d = normalize_mask(&mask(&e));
            if d.empty {
                prop_assert!(d.values.iter().all(|&v| v == 0.0));
            } else {
                prop_assert!((d.sum() - 1.0).abs() < 1e-9);
                prop_assert!(d.values.iter().all(|&v| v >= 0.0));
                // Re-normalizing a rescaled distribution keeps support and ratios.
                let scaled: Vec<f64> = d.values.iter().map(|v| v * k as f64).collect();
                let total: f64 = scaled.iter().sum();
                let again: Vec<f64> = scaled.iter().map(|v| v / total).collect();
                for (a, b) in again.iter().zip(&d.values) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
