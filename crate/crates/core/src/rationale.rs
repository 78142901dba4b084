//! Token-level rationale prediction from supervised attention.
//!
//! A position's score is the mean `[CLS]` attention of the supervised heads;
//! a position is predicted to be part of the rationale when its score reaches
//! a single global threshold tuned on dev.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedSequence, Segment};
use crate::encoder::{forward, AttentionRecord, EncoderConfig, EncoderParams, Variant};
use crate::error::{Error, Result};
use crate::explain::extract_highlight_mask;
use crate::io::write_atomic;
use crate::scalar::Scalar;
use crate::supervise::{PreparedExample, SupervisionConfig};

/// Mean supervised-head attention per non-PAD position.
pub fn scores_from_record(record: &AttentionRecord, sup: &SupervisionConfig, enc: &EncoderConfig) -> Vec<f64> {
    match (enc.variant, &record.extra) {
        (Variant::ExtraLayer, Some(extra)) => extra.clone(),
        _ => record.mean_over(sup.layer_index(enc), &sup.heads),
    }
}

pub fn score_positions<T: Scalar>(
    params: &EncoderParams<T>,
    enc: &EncoderConfig,
    seq: &EncodedSequence,
    sup: &SupervisionConfig,
) -> Result<Vec<f64>> {
    let out = forward(seq, params, enc)?;
    Ok(scores_from_record(&out.attention, sup, enc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalePrediction {
    pub scores: Vec<f64>,
    pub predictions: Vec<u8>,
    pub threshold: f64,
}

/// `prediction_i = 1` iff `score_i ≥ threshold` on a word position.
pub fn predict(scores: &[f64], segments: &[Segment], threshold: f64) -> RationalePrediction {
    let predictions = scores
        .iter()
        .zip(segments)
        .map(|(&s, seg)| u8::from(seg.is_word() && s >= threshold))
        .collect();
    RationalePrediction {
        scores: scores.to_vec(),
        predictions,
        threshold,
    }
}

/// An example's scores next to its highlight gold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub tokens: Vec<String>,
    pub segments: Vec<Segment>,
    pub scores: Vec<f64>,
    pub gold: Vec<u8>,
}

impl ScoredExample {
    pub fn new(ex: &PreparedExample, scores: Vec<f64>) -> Result<Self> {
        let n = ex.seq.valid_length;
        if scores.len() != n {
            return Err(Error::Shape {
                op: "score_positions",
                detail: format!("{} scores for {} positions", scores.len(), n),
            });
        }
        Ok(Self {
            tokens: ex.seq.tokens[..n].iter().map(|t| t.surface.clone()).collect(),
            segments: ex.seq.segment_map[..n].to_vec(),
            scores,
            gold: extract_highlight_mask(&ex.example, &ex.seq, ex.index)?.values,
        })
    }
}

pub fn score_examples<T: Scalar>(
    params: &EncoderParams<T>,
    enc: &EncoderConfig,
    examples: &[PreparedExample],
    sup: &SupervisionConfig,
) -> Result<Vec<ScoredExample>> {
    examples
        .iter()
        .map(|ex| ScoredExample::new(ex, score_positions(params, enc, &ex.seq, sup)?))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Precision is 0 when nothing is predicted positive; F1 is 0 when both
    /// precision and recall are 0.
    pub fn from_counts(true_pos: usize, false_pos: usize, false_neg: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_pos, true_pos + false_pos);
        let recall = ratio(true_pos, true_pos + false_neg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_pos,
            false_pos,
            false_neg,
            precision,
            recall,
            f1,
        }
    }

    pub fn support(&self) -> usize {
        self.true_pos + self.false_neg
    }
}

/// Micro-averaged scores, separately over premise and hypothesis positions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenPrf {
    pub premise: Prf,
    pub hypothesis: Prf,
}

impl TokenPrf {
    pub fn mean_f1(&self) -> f64 {
        0.5 * (self.premise.f1 + self.hypothesis.f1)
    }
}

pub fn evaluate_rationales(scored: &[ScoredExample], threshold: f64) -> TokenPrf {
    let mut counts = [[0usize; 3]; 2];
    for ex in scored {
        let pred = predict(&ex.scores, &ex.segments, threshold);
        for ((&p, &g), seg) in pred.predictions.iter().zip(&ex.gold).zip(&ex.segments) {
            let c = match seg {
                Segment::Premise => &mut counts[0],
                Segment::Hypothesis => &mut counts[1],
                _ => continue,
            };
            match (p, g) {
                (1, 1) => c[0] += 1,
                (1, _) => c[1] += 1,
                (_, 1) => c[2] += 1,
                _ => {}
            }
        }
    }
    TokenPrf {
        premise: Prf::from_counts(counts[0][0], counts[0][1], counts[0][2]),
        hypothesis: Prf::from_counts(counts[1][0], counts[1][1], counts[1][2]),
    }
}

/// `{0.005·k : k = 1..40}`.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=40).map(|k| 0.005 * k as f64).collect()
}

/// Threshold maximizing the mean of premise and hypothesis F1; ties go to the
/// lower threshold.
pub fn tune_threshold(scored: &[ScoredExample], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    if !scored.iter().any(|ex| ex.gold.contains(&1)) {
        return Err(Error::InvalidArgument("no gold highlights in the tuning set".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best = (grid[0], evaluate_rationales(scored, grid[0]).mean_f1());
    for &t in &grid[1..] {
        let f = evaluate_rationales(scored, t).mean_f1();
        if f > best.1 {
            best = (t, f);
        }
    }
    Ok(best.0)
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    tokens: &'a [String],
    segments: Vec<&'static str>,
    scores: &'a [f64],
    predictions: Vec<u8>,
    gold: &'a [u8],
    threshold: f64,
}

/// One JSON line per example with tokens, scores, predictions and gold.
pub fn dump_jsonl(path: &Path, scored: &[ScoredExample], threshold: f64) -> Result<()> {
    let mut out = String::new();
    for ex in scored {
        let rec = DumpRecord {
            tokens: &ex.tokens,
            segments: ex.segments.iter().map(|s| s.as_str()).collect(),
            scores: &ex.scores,
            predictions: predict(&ex.scores, &ex.segments, threshold).predictions,
            gold: &ex.gold,
            threshold,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Segment::*;

    fn scored(scores: &[f64], segments: &[Segment], gold: &[u8]) -> ScoredExample {
        ScoredExample {
            tokens: (0..scores.len()).map(|i| format!("t{i}")).collect(),
            segments: segments.to_vec(),
            scores: scores.to_vec(),
            gold: gold.to_vec(),
        }
    }

    const SEGS: [Segment; 6] = [Cls, Premise, Premise, Sep1, Hypothesis, Sep2];

    #[test]
    fn perfect_predictions() {
        let ex = scored(&[0.3, 0.3, 0.0, 0.1, 0.3, 0.0], &SEGS, &[0, 1, 0, 0, 1, 0]);
        let r = evaluate_rationales(&[ex], 0.2);
        for p in [r.premise, r.hypothesis] {
            assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn specials_never_predicted() {
        let p = predict(&[0.9, 0.05, 0.05, 0.9, 0.0, 0.9], &SEGS, 0.01);
        assert_eq!(p.predictions, vec![0, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn threshold_above_max_gives_zero_recall() {
        let ex = scored(&[0.2, 0.3, 0.1, 0.1, 0.3, 0.0], &SEGS, &[0, 1, 0, 0, 1, 0]);
        let r = evaluate_rationales(&[ex], 0.5);
        assert_eq!((r.premise.recall, r.premise.precision, r.premise.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_value_grid() {
        let ex = scored(&[0.2, 0.3, 0.1, 0.1, 0.3, 0.0], &SEGS, &[0, 1, 0, 0, 1, 0]);
        assert_eq!(tune_threshold(&[ex], &[0.17]).unwrap(), 0.17);
    }

    #[test]
    fn no_gold_is_an_error() {
        let ex = scored(&[0.2, 0.3, 0.1, 0.1, 0.3, 0.0], &SEGS, &[0; 6]);
        assert!(tune_threshold(&[ex], &default_threshold_grid()).is_err());
    }

    #[test]
    fn top_one_gold_selects_threshold_between_first_and_second() {
        // Gold is the top-scored word of each segment; the best thresholds lie
        // in (second, first], and ties go to the lowest such grid point.
        let a = scored(&[0.2, 0.32, 0.08, 0.05, 0.3, 0.05], &SEGS, &[0, 1, 0, 0, 1, 0]);
        let b = scored(&[0.1, 0.12, 0.38, 0.02, 0.36, 0.02], &SEGS, &[0, 0, 1, 0, 1, 0]);
        let grid = default_threshold_grid();
        let t = tune_threshold(&[a.clone(), b.clone()], &grid).unwrap();
        let best = grid
            .iter()
            .map(|&g| evaluate_rationales(&[a.clone(), b.clone()], g).mean_f1())
            .fold(f64::MIN, f64::max);
        let first = grid
            .iter()
            .copied()
            .find(|&g| evaluate_rationales(&[a.clone(), b.clone()], g).mean_f1() == best)
            .unwrap();
        assert_eq!(t, first);
        assert_eq!(best, 1.0);
        assert!(t > 0.12 && t <= 0.30, "{t}");
    }

    proptest! {
        #[test]
        fn recall_and_positives_monotone_in_threshold(
            raw in prop::collection::vec((0.0f64..1.0, 0u8..2), 6),
            t1 in 0.0f64..0.3,
            dt in 0.0f64..0.3,
        ) {
            let total: f64 = raw.iter().map(|r| r.0).sum::<f64>() + 1e-9;
            let scores: Vec<f64> = raw.iter().map(|r| r.0 / total).collect();
            let gold: Vec<u8> = raw.iter().map(|r| r.1).collect();
            let ex = scored(&scores, &SEGS, &gold);
            let lo = evaluate_rationales(std::slice::from_ref(&ex), t1);
            let hi = evaluate_rationales(std::slice::from_ref(&ex), t1 + dt);
            let positives = |p: &Prf| p.true_pos + p.false_pos;
            for (l, h) in [(lo.premise, hi.premise), (lo.hypothesis, hi.hypothesis)] {
                prop_assert!(h.recall <= l.recall);
                prop_assert!(positives(&h) <= positives(&l));
            }
        }

        #[test]
        fn f1_matches_confusion_oracle(
            rows in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 6), prop::collection::vec(0u8..2, 6)), 1..6),
            t in 0.0f64..0.5,
        ) {
            let set: Vec<ScoredExample> = rows.iter().map(|(s, g)| scored(s, &SEGS, g)).collect();
            let r = evaluate_rationales(&set, t);
            for (seg, got) in [(Premise, r.premise), (Hypothesis, r.hypothesis)] {
                let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
                for ex in &set {
                    for i in 0..6 {
                        if ex.segments[i] != seg { continue; }
                        let p = ex.scores[i] >= t;
                        let g = ex.gold[i] == 1;
                        if p && g { tp += 1.0 } else if p { fp += 1.0 } else if g { fnn += 1.0 }
                    }
                }
                let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) };
                prop_assert!((got.f1 - f1).abs() < 1e-12);
            }
        }
    }
}
