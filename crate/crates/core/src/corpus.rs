//! NLI examples with explanation annotations: loading, vocabulary and the
//! `[CLS] premise [SEP] hypothesis [SEP] [PAD]…` sequence layout.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Neutral,
    Contradiction,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Neutral, Label::Contradiction];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Neutral => "neutral",
            Label::Contradiction => "contradiction",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" => Ok(Label::Entailment),
            "neutral" => Ok(Label::Neutral),
            "contradiction" => Ok(Label::Contradiction),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Segment {
    Cls,
    Premise,
    Sep1,
    Hypothesis,
    Sep2,
    Pad,
}

impl Segment {
    pub const ALL: [Segment; 6] = [
        Segment::Cls,
        Segment::Premise,
        Segment::Sep1,
        Segment::Hypothesis,
        Segment::Sep2,
        Segment::Pad,
    ];

    pub fn is_special(self) -> bool {
        matches!(self, Segment::Cls | Segment::Sep1 | Segment::Sep2 | Segment::Pad)
    }

    pub fn is_word(self) -> bool {
        matches!(self, Segment::Premise | Segment::Hypothesis)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Cls => "CLS",
            Segment::Premise => "PREMISE",
            Segment::Sep1 => "SEP1",
            Segment::Hypothesis => "HYPOTHESIS",
            Segment::Sep2 => "SEP2",
            Segment::Pad => "PAD",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliExample {
    pub premise_words: Vec<String>,
    pub hypothesis_words: Vec<String>,
    pub label: Label,
    pub freetext_explanations: Vec<String>,
    pub premise_highlights: BTreeSet<usize>,
    pub hypothesis_highlights: BTreeSet<usize>,
}

impl NliExample {
    pub fn new(premise: &str, hypothesis: &str, label: Label) -> Self {
        Self {
            premise_words: tokenize(premise),
            hypothesis_words: tokenize(hypothesis),
            label,
            freetext_explanations: Vec::new(),
            premise_highlights: BTreeSet::new(),
            hypothesis_highlights: BTreeSet::new(),
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.premise_words
            .iter()
            .chain(&self.hypothesis_words)
            .map(String::as_str)
    }
}

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if !ch.is_alphanumeric() && ch != '\'' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_lowercase().collect());
        } else {
            cur.extend(ch.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// On-disk record, canonical JSONL layout.
#[derive(Debug, Serialize, Deserialize)]
pub struct RawRecord {
    pub premise: String,
    pub hypothesis: String,
    pub label: String,
    #[serde(default)]
    pub explanations: Vec<String>,
    #[serde(default)]
    pub premise_highlights: Vec<usize>,
    #[serde(default)]
    pub hypothesis_highlights: Vec<usize>,
}

impl RawRecord {
    pub fn from_example(ex: &NliExample) -> Self {
        Self {
            premise: ex.premise_words.join(" "),
            hypothesis: ex.hypothesis_words.join(" "),
            label: ex.label.as_str().to_string(),
            explanations: ex.freetext_explanations.clone(),
            premise_highlights: ex.premise_highlights.iter().copied().collect(),
            hypothesis_highlights: ex.hypothesis_highlights.iter().copied().collect(),
        }
    }

    fn into_example(self, path: &str, line: usize) -> Result<NliExample> {
        let label = self.label.parse::<Label>().map_err(|message| Error::Schema {
            path: path.to_string(),
            line,
            field: "label".into(),
            message,
        })?;
        Ok(NliExample {
            premise_words: tokenize(&self.premise),
            hypothesis_words: tokenize(&self.hypothesis),
            label,
            freetext_explanations: self.explanations,
            premise_highlights: self.premise_highlights.into_iter().collect(),
            hypothesis_highlights: self.hypothesis_highlights.into_iter().collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataFormat {
    Jsonl,
    Tsv,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => DataFormat::Tsv,
            _ => DataFormat::Jsonl,
        }
    }
}

/// Separator between multiple explanations inside one TSV cell.
pub const TSV_EXPLANATION_SEP: &str = " ||| ";

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Vec<NliExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    match format {
        DataFormat::Jsonl => parse_jsonl(&text, &name),
        DataFormat::Tsv => parse_tsv(&text, &name),
    }
}

pub fn parse_jsonl(text: &str, source: &str) -> Result<Vec<NliExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Schema {
            path: source.to_string(),
            line: line_no,
            field: json_error_field(&e),
            message: e.to_string(),
        })?;
        out.push(raw.into_example(source, line_no)?);
    }
    Ok(out)
}

fn json_error_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "record".to_string())
}

/// TSV with a header row: premise, hypothesis, label, explanations
/// (joined by `" ||| "`), premise_highlights and hypothesis_highlights
/// (comma separated).
pub fn parse_tsv(text: &str, source: &str) -> Result<Vec<NliExample>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(false)
        .quoting(false)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            path: source.to_string(),
            line: 1,
            field: name.to_string(),
            message: "missing column".into(),
        })
    };
    let cols = [
        col("premise")?,
        col("hypothesis")?,
        col("label")?,
        col("explanations")?,
        col("premise_highlights")?,
        col("hypothesis_highlights")?,
    ];
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| rec.get(cols[i]).unwrap_or("");
        let ints = |i: usize, field: &str| -> Result<Vec<usize>> {
            get(i)
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<usize>().map_err(|e| Error::Schema {
                        path: source.to_string(),
                        line,
                        field: field.to_string(),
                        message: format!("{s:?}: {e}"),
                    })
                })
                .collect()
        };
        let explanations = get(3)
            .split(TSV_EXPLANATION_SEP)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let raw = RawRecord {
            premise: get(0).to_string(),
            hypothesis: get(1).to_string(),
            label: get(2).to_string(),
            explanations,
            premise_highlights: ints(4, "premise_highlights")?,
            hypothesis_highlights: ints(5, "hypothesis_highlights")?,
        };
        out.push(raw.into_example(source, line)?);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, examples: &[NliExample]) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, &RawRecord::from_example(ex))?;
        buf.push(b'\n');
    }
    crate::io::write_atomic(path, &buf)
}

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, usize>,
    id_to_word: Vec<String>,
    min_frequency: usize,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const CLS: usize = 2;
    pub const SEP: usize = 3;
    pub const NUM_RESERVED: usize = 4;

    fn with_words(words: impl IntoIterator<Item = String>, min_frequency: usize) -> Self {
        let mut id_to_word: Vec<String> = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        id_to_word.extend(words);
        let word_to_id = id_to_word
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self {
            word_to_id,
            id_to_word,
            min_frequency,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn id(&self, word: &str) -> usize {
        match self.word_to_id.get(word) {
            Some(&id) if id >= Self::NUM_RESERVED => id,
            _ => Self::UNK,
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.id(word) != Self::UNK
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.id_to_word.get(id).map(String::as_str)
    }

    /// `word<TAB>id` lines in id order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, w) in self.id_to_word.iter().enumerate() {
            s.push_str(w);
            s.push('\t');
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Schema {
                path: "vocabulary".into(),
                line: i + 1,
                field: "id".into(),
                message,
            };
            let (w, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad("expected word<TAB>id".into()))?;
            let id: usize = id.parse().map_err(|e| bad(format!("{e}")))?;
            if entries.insert(id, w.to_string()).is_some() {
                return Err(bad(format!("duplicate id {id}")));
            }
        }
        let ids: Vec<usize> = entries.keys().copied().collect();
        if ids.iter().enumerate().any(|(i, &id)| i != id) || ids.len() < Self::NUM_RESERVED {
            return Err(Error::Schema {
                path: "vocabulary".into(),
                line: 0,
                field: "id".into(),
                message: "ids must be dense from 0 with the 4 reserved tokens".into(),
            });
        }
        let words: Vec<String> = entries.into_values().collect();
        if words[..Self::NUM_RESERVED] != [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN] {
            return Err(Error::Schema {
                path: "vocabulary".into(),
                line: 1,
                field: "word".into(),
                message: "reserved tokens out of place".into(),
            });
        }
        Ok(Self::with_words(words.into_iter().skip(Self::NUM_RESERVED), 1))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Words with corpus frequency ≥ `min_freq`, ordered by frequency
/// (descending) then lexicographically.
pub fn build_vocab(examples: &[NliExample], min_freq: usize) -> Result<Vocabulary> {
    if min_freq == 0 {
        return Err(Error::InvalidArgument("min_freq must be >= 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ex in examples {
        for w in ex.words() {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::with_words(
        kept.into_iter().map(|(w, _)| w.to_string()),
        min_freq,
    ))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub position: usize,
    pub segment: Segment,
    /// Index into the premise or hypothesis word list for word positions.
    pub word_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub token_ids: Vec<usize>,
    pub tokens: Vec<Token>,
    pub valid_length: usize,
    pub segment_map: Vec<Segment>,
    /// Position of each premise word, `None` when truncated away.
    pub premise_positions: Vec<Option<usize>>,
    pub hypothesis_positions: Vec<Option<usize>>,
    pub truncated: bool,
}

impl EncodedSequence {
    pub fn n_max(&self) -> usize {
        self.token_ids.len()
    }

    pub fn valid_ids(&self) -> &[usize] {
        &self.token_ids[..self.valid_length]
    }

    pub fn segment(&self, pos: usize) -> Segment {
        self.segment_map[pos]
    }

    pub fn positions_in(&self, segment: Segment) -> impl Iterator<Item = usize> + '_ {
        (0..self.valid_length).filter(move |&p| self.segment_map[p] == segment)
    }

    /// Position holding word `index` of the given segment.
    pub fn word_position(&self, segment: Segment, index: usize) -> Option<usize> {
        let table = match segment {
            Segment::Premise => &self.premise_positions,
            Segment::Hypothesis => &self.hypothesis_positions,
            _ => return None,
        };
        table.get(index).copied().flatten()
    }

    /// Surface words per segment as seen through the vocabulary.
    pub fn decode(&self, vocab: &Vocabulary) -> (Vec<String>, Vec<String>) {
        let words = |seg: Segment| {
            self.positions_in(seg)
                .map(|p| vocab.word(self.token_ids[p]).unwrap_or(UNK_TOKEN).to_string())
                .collect()
        };
        (words(Segment::Premise), words(Segment::Hypothesis))
    }
}

/// Lays out `[CLS] p [SEP] h [SEP]` and pads to `n_max`. Over-long pairs lose
/// hypothesis words first, then premise words.
pub fn encode_pair(example: &NliExample, vocab: &Vocabulary, n_max: usize) -> Result<EncodedSequence> {
    if n_max < 3 {
        return Err(Error::InvalidArgument(format!("n_max {n_max} < 3")));
    }
    let budget = n_max - 3;
    let p_total = example.premise_words.len();
    let h_total = example.hypothesis_words.len();
    let h_keep = h_total.min(budget.saturating_sub(p_total));
    let p_keep = p_total.min(budget);
    let truncated = h_keep < h_total || p_keep < p_total;

    fn push(tokens: &mut Vec<Token>, surface: &str, segment: Segment, word_index: Option<usize>) -> usize {
        let position = tokens.len();
        tokens.push(Token {
            surface: surface.to_string(),
            position,
            segment,
            word_index,
        });
        position
    }
    let mut tokens = Vec::with_capacity(n_max);
    push(&mut tokens, CLS_TOKEN, Segment::Cls, None);
    let mut premise_positions = vec![None; p_total];
    for (i, w) in example.premise_words.iter().take(p_keep).enumerate() {
        premise_positions[i] = Some(push(&mut tokens, w, Segment::Premise, Some(i)));
    }
    push(&mut tokens, SEP_TOKEN, Segment::Sep1, None);
    let mut hypothesis_positions = vec![None; h_total];
    for (i, w) in example.hypothesis_words.iter().take(h_keep).enumerate() {
        hypothesis_positions[i] = Some(push(&mut tokens, w, Segment::Hypothesis, Some(i)));
    }
    push(&mut tokens, SEP_TOKEN, Segment::Sep2, None);
    let valid_length = tokens.len();
    while tokens.len() < n_max {
        push(&mut tokens, PAD_TOKEN, Segment::Pad, None);
    }

    let token_ids = tokens
        .iter()
        .map(|t| match t.segment {
            Segment::Cls => Vocabulary::CLS,
            Segment::Sep1 | Segment::Sep2 => Vocabulary::SEP,
            Segment::Pad => Vocabulary::PAD,
            _ => vocab.id(&t.surface),
        })
        .collect();
    let segment_map = tokens.iter().map(|t| t.segment).collect();
    Ok(EncodedSequence {
        token_ids,
        tokens,
        valid_length,
        segment_map,
        premise_positions,
        hypothesis_positions,
        truncated,
    })
}
