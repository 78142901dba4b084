//! Planted-rationale NLI corpora.
//!
//! Each premise carries one marker word of class `c_p` and each hypothesis one
//! marker of class `c_h`; the label is `(c_p + c_h) mod 3`. Everything else is
//! filler. Gold highlights are the two marker positions and the free-text
//! explanation names both markers. The out-of-distribution split keeps the
//! markers but draws fillers from a disjoint vocabulary. An optional shortcut
//! plants a label-correlated cue word in the hypothesis of in-distribution
//! splits only.

use std::collections::BTreeSet;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, Label, NliExample};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::supervise::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Number of in-distribution filler words (the OOD split gets as many).
    pub filler_vocab: usize,
    /// Inclusive word-count ranges, marker included.
    pub premise_len: (usize, usize),
    pub hypothesis_len: (usize, usize),
    pub markers: [Vec<String>; 3],
    /// Probability that a label is replaced by a different random label.
    pub noise_rate: f64,
    /// Probability that an in-distribution hypothesis carries the cue word
    /// of its label.
    pub shortcut_rate: f64,
    /// Relative sampling weights of the hypothesis marker class.
    pub hypothesis_class_weights: [f64; 3],
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub ood_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let markers = |c: usize| (0..3).map(|i| format!("m{c}x{i}")).collect();
        Self {
            seed: 0,
            filler_vocab: 60,
            premise_len: (4, 7),
            hypothesis_len: (4, 7),
            markers: [markers(0), markers(1), markers(2)],
            noise_rate: 0.0,
            shortcut_rate: 0.0,
            hypothesis_class_weights: [1.0; 3],
            train_size: 2000,
            dev_size: 500,
            test_size: 500,
            ood_size: 500,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1)", self.noise_rate));
        }
        if !(0.0..=1.0).contains(&self.shortcut_rate) {
            return bad(format!("shortcut_rate {} outside [0, 1]", self.shortcut_rate));
        }
        for (lo, hi) in [self.premise_len, self.hypothesis_len] {
            if lo < 2 || lo > hi {
                return bad(format!("length range ({lo}, {hi}) must satisfy 2 <= lo <= hi"));
            }
        }
        let w = self.hypothesis_class_weights;
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return bad(format!("hypothesis_class_weights {w:?} must be non-negative with a positive sum"));
        }
        if self.filler_vocab == 0 {
            return bad("filler_vocab must be positive".into());
        }
        let mut seen = BTreeSet::new();
        for (c, set) in self.markers.iter().enumerate() {
            if set.is_empty() {
                return bad(format!("class {c} has no markers"));
            }
            for m in set {
                if !seen.insert(m) {
                    return bad(format!("marker {m:?} appears twice"));
                }
                if filler_pattern(m) || m.chars().any(|ch| !ch.is_ascii_alphanumeric()) {
                    return bad(format!("marker {m:?} must be alphanumeric and not look like a filler"));
                }
            }
        }
        Ok(())
    }
}

fn filler_pattern(w: &str) -> bool {
    let mut chars = w.chars();
    matches!(chars.next(), Some('f' | 'g'))
        && w.len() > 1
        && chars.all(|c| c.is_ascii_digit())
        || w.starts_with("cue") && w[3..].chars().all(|c| c.is_ascii_digit())
}

/// In-distribution filler `i`.
pub fn filler(i: usize) -> String {
    format!("f{i}")
}

/// Out-of-distribution filler `i`.
pub fn ood_filler(i: usize) -> String {
    format!("g{i}")
}

pub fn cue_word(label: Label) -> String {
    format!("cue{}", label.index())
}

/// Label of a marker pair.
pub fn label_for(premise_class: usize, hypothesis_class: usize) -> Label {
    Label::from_index((premise_class + hypothesis_class) % 3).expect("mod 3")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<NliExample>,
    pub dev: Vec<NliExample>,
    pub test: Vec<NliExample>,
    pub ood: Vec<NliExample>,
}

impl SyntheticCorpus {
    pub fn splits(&self) -> [(&'static str, &[NliExample]); 4] {
        [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
            ("ood", &self.ood),
        ]
    }

    /// Writes `<split>.jsonl` for every split plus `lexicon.tsv`.
    pub fn write(&self, dir: &Path, spec: &SyntheticSpec) -> Result<()> {
        for (name, examples) in self.splits() {
            write_jsonl(&dir.join(format!("{name}.jsonl")), examples)?;
        }
        write_atomic(&dir.join("lexicon.tsv"), lexicon_text(spec).as_bytes())
    }
}

/// Category lexicon for the generated vocabulary.
pub fn lexicon_text(spec: &SyntheticSpec) -> String {
    let mut out = String::new();
    for set in &spec.markers {
        for m in set {
            out.push_str(&format!("{m}\tNOUN\n"));
        }
    }
    for label in [Label::Entailment, Label::Neutral, Label::Contradiction] {
        out.push_str(&format!("{}\tADJ\n", cue_word(label)));
    }
    let cats = ["DET", "VERB", "OTHER"];
    for i in 0..spec.filler_vocab {
        out.push_str(&format!("{}\t{}\n", filler(i), cats[i % 3]));
        out.push_str(&format!("{}\t{}\n", ood_filler(i), cats[i % 3]));
    }
    out
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let split = |id: u64, n: usize, ood: bool| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, id));
        (0..n).map(|_| example(spec, &mut rng, ood)).collect()
    };
    Ok(SyntheticCorpus {
        train: split(1, spec.train_size, false),
        dev: split(2, spec.dev_size, false),
        test: split(3, spec.test_size, false),
        ood: split(4, spec.ood_size, true),
    })
}

fn example(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, ood: bool) -> NliExample {
    let cp = rng.gen_range(0..3);
    let ch = WeightedIndex::new(spec.hypothesis_class_weights)
        .expect("validated weights")
        .sample(rng);
    let mp = spec.markers[cp].choose(rng).expect("non-empty").clone();
    let mh = spec.markers[ch].choose(rng).expect("non-empty").clone();
    let mut label = label_for(cp, ch);
    if rng.gen::<f64>() < spec.noise_rate {
        let shift = rng.gen_range(1..3);
        label = Label::from_index((label.index() + shift) % 3).expect("mod 3");
    }
    let fill = |rng: &mut ChaCha8Rng| {
        let i = rng.gen_range(0..spec.filler_vocab);
        if ood {
            ood_filler(i)
        } else {
            filler(i)
        }
    };
    let sentence = |rng: &mut ChaCha8Rng, (lo, hi): (usize, usize), marker: &str| {
        let len = rng.gen_range(lo..=hi);
        let at = rng.gen_range(0..len);
        let words: Vec<String> = (0..len)
            .map(|i| if i == at { marker.to_string() } else { fill(rng) })
            .collect();
        (words, at)
    };
    let (premise, pi) = sentence(rng, spec.premise_len, &mp);
    let (mut hypothesis, hi) = sentence(rng, spec.hypothesis_len, &mh);
    if !ood && rng.gen::<f64>() < spec.shortcut_rate {
        let slots: Vec<usize> = (0..hypothesis.len()).filter(|&i| i != hi).collect();
        let slot = *slots.choose(rng).expect("hypothesis has a filler");
        hypothesis[slot] = cue_word(label);
    }
    NliExample {
        premise_words: premise,
        hypothesis_words: hypothesis,
        label,
        freetext_explanations: vec![format!("{mp} and {mh} decide the label")],
        premise_highlights: BTreeSet::from([pi]),
        hypothesis_highlights: BTreeSet::from([hi]),
    }
}
