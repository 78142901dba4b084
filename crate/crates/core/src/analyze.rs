//! Where the `[CLS]` token looks: attention mass by segment and by word
//! category, most-attended words, and HTML heatmaps.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Segment;
use crate::encoder::{forward, AttentionRecord, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::scalar::Scalar;
use crate::supervise::PreparedExample;

pub const OTHER: &str = "OTHER";

/// Word → category map; unknown words fall into [`OTHER`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CategoryLexicon {
    map: HashMap<String, String>,
}

impl CategoryLexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, cat) = line.split_once('\t').ok_or_else(|| Error::Schema {
                path: "lexicon".into(),
                line: i + 1,
                field: "category".into(),
                message: "expected word<TAB>CATEGORY".into(),
            })?;
            map.insert(word.to_string(), cat.trim().to_string());
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Schema {
                line, field, message, ..
            } => Error::Schema {
                path: path.display().to_string(),
                line,
                field,
                message,
            },
            other => other,
        })
    }

    pub fn category(&self, word: &str) -> &str {
        self.map.get(word).map_or(OTHER, String::as_str)
    }

    pub fn insert(&mut self, word: &str, category: &str) {
        self.map.insert(word.to_string(), category.to_string());
    }
}

/// One forward pass per example.
pub fn attention_records<T: Scalar>(
    params: &EncoderParams<T>,
    enc: &EncoderConfig,
    examples: &[PreparedExample],
) -> Result<Vec<AttentionRecord>> {
    examples
        .iter()
        .map(|ex| Ok(forward(&ex.seq, params, enc)?.attention))
        .collect()
}

fn check_heads(enc: &EncoderConfig, layer: usize, heads: &[usize]) -> Result<()> {
    if layer >= enc.num_layers {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range ({} layers)",
            enc.num_layers
        )));
    }
    if heads.is_empty() {
        return Err(Error::InvalidArgument("empty head set".into()));
    }
    if let Some(h) = heads.iter().find(|&&h| h >= enc.num_heads) {
        return Err(Error::InvalidArgument(format!(
            "head {h} out of range ({} heads)",
            enc.num_heads
        )));
    }
    Ok(())
}

pub const SEGMENTS: [Segment; 5] = [
    Segment::Cls,
    Segment::Premise,
    Segment::Sep1,
    Segment::Hypothesis,
    Segment::Sep2,
];

/// Mean `[CLS]` attention mass per segment, in [`SEGMENTS`] order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMass {
    pub layer: usize,
    pub fractions: [f64; 5],
}

impl SegmentMass {
    pub fn get(&self, segment: Segment) -> f64 {
        SEGMENTS
            .iter()
            .position(|&s| s == segment)
            .map_or(0.0, |i| self.fractions[i])
    }
}

/// Averages over examples and over `heads` of the per-segment mass at `layer`.
pub fn segment_mass(
    records: &[AttentionRecord],
    examples: &[PreparedExample],
    enc: &EncoderConfig,
    layer: usize,
    heads: &[usize],
) -> Result<SegmentMass> {
    check_heads(enc, layer, heads)?;
    let mut fractions = [0.0; 5];
    for (rec, ex) in records.iter().zip(examples) {
        let row = rec.mean_over(layer, heads);
        for (a, seg) in row.iter().zip(&ex.seq.segment_map) {
            if let Some(i) = SEGMENTS.iter().position(|s| s == seg) {
                fractions[i] += a;
            }
        }
    }
    let n = records.len().max(1) as f64;
    fractions.iter_mut().for_each(|f| *f /= n);
    Ok(SegmentMass { layer, fractions })
}

fn special_category(seg: Segment) -> Option<&'static str> {
    match seg {
        Segment::Cls => Some("[CLS]"),
        Segment::Sep1 | Segment::Sep2 => Some("[SEP]"),
        _ => None,
    }
}

/// Attention mass pooled by the category of the attended word. Specials get
/// their own `[CLS]` and `[SEP]` categories.
pub fn category_mass(
    records: &[AttentionRecord],
    examples: &[PreparedExample],
    enc: &EncoderConfig,
    lexicon: &CategoryLexicon,
    layer: usize,
    heads: &[usize],
) -> Result<BTreeMap<String, f64>> {
    check_heads(enc, layer, heads)?;
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (rec, ex) in records.iter().zip(examples) {
        let row = rec.mean_over(layer, heads);
        for (a, tok) in row.iter().zip(&ex.seq.tokens) {
            let cat = special_category(tok.segment).unwrap_or_else(|| lexicon.category(&tok.surface));
            *out.entry(cat.to_string()).or_default() += a;
        }
    }
    let n = records.len().max(1) as f64;
    out.values_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Percentage of examples in which each word is the most-attended word
/// position (ties go to the earlier position). Sorted by share, then word.
pub fn most_attended(
    records: &[AttentionRecord],
    examples: &[PreparedExample],
    enc: &EncoderConfig,
    layer: usize,
    heads: &[usize],
) -> Result<Vec<(String, f64)>> {
    check_heads(enc, layer, heads)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for (rec, ex) in records.iter().zip(examples) {
        let row = rec.mean_over(layer, heads);
        let mut best: Option<usize> = None;
        for (p, tok) in ex.seq.tokens[..row.len()].iter().enumerate() {
            if tok.segment.is_word() && best.is_none_or(|b| row[p] > row[b]) {
                best = Some(p);
            }
        }
        if let Some(b) = best {
            *counts.entry(ex.seq.tokens[b].surface.clone()).or_default() += 1;
            total += 1;
        }
    }
    let mut table: Vec<(String, f64)> = counts
        .into_iter()
        .map(|(w, c)| (w, 100.0 * c as f64 / total as f64))
        .collect();
    table.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(table)
}

/// Segment masses for every layer, category masses and the most-attended
/// table, all over the same head set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionBreakdown {
    pub heads: Vec<usize>,
    pub layers: Vec<SegmentMass>,
    pub categories: BTreeMap<String, f64>,
    pub most_attended: Vec<(String, f64)>,
}

/// `heads` default to every head; category and argmax tables use `layer`.
pub fn breakdown<T: Scalar>(
    params: &EncoderParams<T>,
    enc: &EncoderConfig,
    examples: &[PreparedExample],
    lexicon: &CategoryLexicon,
    layer: usize,
    heads: Option<&[usize]>,
) -> Result<AttentionBreakdown> {
    let all: Vec<usize> = (0..enc.num_heads).collect();
    let heads = heads.unwrap_or(&all);
    let records = attention_records(params, enc, examples)?;
    let layers = (0..enc.num_layers)
        .map(|l| segment_mass(&records, examples, enc, l, heads))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttentionBreakdown {
        heads: heads.to_vec(),
        layers,
        categories: category_mass(&records, examples, enc, lexicon, layer, heads)?,
        most_attended: most_attended(&records, examples, enc, layer, heads)?,
    })
}

impl AttentionBreakdown {
    /// Rows `layer,segment,fraction`.
    pub fn segments_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "segment", "fraction"])?;
        for m in &self.layers {
            for (seg, f) in SEGMENTS.iter().zip(m.fractions) {
                w.write_record([m.layer.to_string(), seg.as_str().to_string(), format!("{f:.6}")])?;
            }
        }
        finish(w)
    }

    /// Rows `category,fraction`.
    pub fn categories_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category", "fraction"])?;
        for (c, f) in &self.categories {
            w.write_record([c.clone(), format!("{f:.6}")])?;
        }
        finish(w)
    }

    /// Rows `word,percent`.
    pub fn most_attended_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["word", "percent"])?;
        for (word, p) in &self.most_attended {
            w.write_record([word.clone(), format!("{p:.4}")])?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Self-contained HTML with one row of colored tokens per panel. Color
/// intensity is the score divided by the panel's maximum.
pub fn heatmap_html(tokens: &[String], panels: &[(String, Vec<f64>)]) -> Result<String> {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>[CLS] attention</title>\n<style>\n\
         body { font-family: sans-serif; }\n\
         .tok { display: inline-block; padding: 2px 4px; margin: 1px; border-radius: 3px; }\n\
         </style>\n</head>\n<body>\n",
    );
    for (name, scores) in panels {
        if scores.len() != tokens.len() {
            return Err(Error::Shape {
                op: "export_heatmap",
                detail: format!("panel {name}: {} scores for {} tokens", scores.len(), tokens.len()),
            });
        }
        let max = scores.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(html, "<div class=\"panel\">\n<h3>{}</h3>\n<p>", escape(name));
        for (tok, &s) in tokens.iter().zip(scores) {
            let alpha = if max > 0.0 { s / max } else { 0.0 };
            let _ = writeln!(
                html,
                "<span class=\"tok\" data-score=\"{s:.4}\" style=\"background: rgba(214, 39, 40, {alpha:.4})\" title=\"{s:.4}\">{}</span>",
                escape(tok)
            );
        }
        html.push_str("</p>\n</div>\n");
    }
    html.push_str("</body>\n</html>\n");
    Ok(html)
}

pub fn export_heatmap(path: &Path, tokens: &[String], panels: &[(String, Vec<f64>)]) -> Result<()> {
    write_atomic(path, heatmap_html(tokens, panels)?.as_bytes())
}
