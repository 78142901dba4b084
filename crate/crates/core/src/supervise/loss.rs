use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::corpus::Label;
use crate::encoder::{AttentionRecord, EncoderConfig, ForwardGraph, Variant};
use crate::error::{Error, Result};
use crate::explain::TargetDistribution;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Squared error between attention rows and the target.
    Mse,
    /// `KL(target ‖ attention)`.
    Kl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    Freetext,
    Highlights,
    Combined,
    Shuffled,
    None,
}

impl TargetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetMode::Freetext => "freetext",
            TargetMode::Highlights => "highlights",
            TargetMode::Combined => "combined",
            TargetMode::Shuffled => "shuffled",
            TargetMode::None => "none",
        }
    }
}

impl std::str::FromStr for TargetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "freetext" => TargetMode::Freetext,
            "highlights" => TargetMode::Highlights,
            "combined" => TargetMode::Combined,
            "shuffled" => TargetMode::Shuffled,
            "none" => TargetMode::None,
            other => return Err(format!("unknown target mode {other:?}")),
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "kl" => Ok(LossKind::Kl),
            other => Err(format!("unknown loss {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisionConfig {
    pub lambda: f64,
    /// Supervised heads within `layer`. Ignored by the extra-layer variant,
    /// which has a single pooling head.
    pub heads: Vec<usize>,
    pub loss_kind: LossKind,
    pub target_mode: TargetMode,
    /// Supervised layer; `None` means the last one.
    pub layer: Option<usize>,
    /// Seed for shuffled targets; `None` reuses the training seed.
    #[serde(default)]
    pub shuffle_seed: Option<u64>,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            heads: vec![0],
            loss_kind: LossKind::Mse,
            target_mode: TargetMode::Combined,
            layer: None,
            shuffle_seed: None,
        }
    }
}

impl SupervisionConfig {
    pub fn unsupervised() -> Self {
        Self {
            target_mode: TargetMode::None,
            ..Self::default()
        }
    }

    pub fn layer_index(&self, enc: &EncoderConfig) -> usize {
        self.layer.unwrap_or(enc.num_layers - 1)
    }

    /// Number of supervised attention rows (`H` in the loss).
    pub fn num_supervised(&self, enc: &EncoderConfig) -> usize {
        match enc.variant {
            Variant::ExtraLayer => 1,
            Variant::ExistingAttention => self.heads.len(),
        }
    }

    pub fn validate(&self, enc: &EncoderConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("supervision config: {m}")));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.layer_index(enc) >= enc.num_layers {
            return bad(format!("layer {} out of range", self.layer_index(enc)));
        }
        if enc.variant == Variant::ExistingAttention && self.target_mode != TargetMode::None {
            if self.heads.is_empty() {
                return bad("no supervised heads".into());
            }
            if let Some(h) = self.heads.iter().find(|&&h| h >= enc.num_heads) {
                return bad(format!("head {h} out of range (H_total = {})", enc.num_heads));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.target_mode != TargetMode::None
    }
}

/// Supervised attention rows on the tape.
pub fn supervised_rows(graph: &ForwardGraph, sup: &SupervisionConfig, enc: &EncoderConfig) -> Vec<Var> {
    match enc.variant {
        Variant::ExtraLayer => graph.extra_attention.into_iter().collect(),
        Variant::ExistingAttention => {
            let layer = &graph.cls_attention[sup.layer_index(enc)];
            sup.heads.iter().map(|&h| layer[h]).collect()
        }
    }
}

/// `(λ/H) Σ_h Σ_i (a_hi − d_i)²` (or the KL form) over the supervised rows.
/// Exactly zero for an empty target or when supervision is off.
pub fn attention_loss<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &ForwardGraph,
    target: Option<&TargetDistribution>,
    sup: &SupervisionConfig,
    enc: &EncoderConfig,
) -> Result<Var> {
    let target = match target {
        Some(d) if sup.is_active() && !d.empty => d,
        _ => return Ok(tape.constant(Matrix::scalar(T::zero()))),
    };
    let rows = supervised_rows(graph, sup, enc);
    let n = tape.shape(rows[0]).1;
    if target.len() != n {
        return Err(Error::Shape {
            op: "attention_loss",
            detail: format!("target length {} vs {} attended positions", target.len(), n),
        });
    }
    let d: Matrix<T> = Matrix::from_vec(1, n, target.values.iter().map(|&v| T::lit(v)).collect());
    let mut terms = Vec::with_capacity(rows.len());
    match sup.loss_kind {
        LossKind::Mse => {
            let dv = tape.constant(d);
            for &row in &rows {
                let diff = tape.sub(row, dv)?;
                let sq = tape.square(diff);
                terms.push(tape.sum(sq));
            }
        }
        LossKind::Kl => {
            for &row in &rows {
                terms.push(tape.kl_divergence_rows(&d, row)?);
            }
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let weight = T::lit(sup.lambda / rows.len() as f64);
    Ok(tape.scale(total, weight))
}

/// Same quantity as [`attention_loss`], evaluated on a recorded forward pass.
pub fn attention_loss_value(
    record: &AttentionRecord,
    target: Option<&TargetDistribution>,
    sup: &SupervisionConfig,
    enc: &EncoderConfig,
) -> Result<f64> {
    let target = match target {
        Some(d) if sup.is_active() && !d.empty => d,
        _ => return Ok(0.0),
    };
    let rows: Vec<&[f64]> = match enc.variant {
        Variant::ExtraLayer => record.extra.iter().map(Vec::as_slice).collect(),
        Variant::ExistingAttention => sup
            .heads
            .iter()
            .map(|&h| record.head(sup.layer_index(enc), h))
            .collect(),
    };
    if rows.is_empty() || rows.iter().any(|r| r.len() != target.len()) {
        return Err(Error::Shape {
            op: "attention_loss",
            detail: format!("target length {} vs attention rows", target.len()),
        });
    }
    let total: f64 = rows
        .iter()
        .map(|row| match sup.loss_kind {
            LossKind::Mse => row.iter().zip(&target.values).map(|(a, d)| (a - d).powi(2)).sum::<f64>(),
            LossKind::Kl => row
                .iter()
                .zip(&target.values)
                .filter(|(_, &d)| d > 0.0)
                .map(|(a, d)| d * (d / a).ln())
                .sum::<f64>(),
        })
        .sum();
    Ok(sup.lambda / rows.len() as f64 * total)
}

/// Handles for the two loss components and their sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub nli: Var,
    pub attention: Var,
}

/// `Loss_NLI + attention term`.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &ForwardGraph,
    gold: Label,
    target: Option<&TargetDistribution>,
    sup: &SupervisionConfig,
    enc: &EncoderConfig,
) -> Result<LossTerms> {
    let nli = tape.cross_entropy_with_logits(graph.logits, gold.index())?;
    let attention = attention_loss(tape, graph, target, sup, enc)?;
    let total = tape.add(nli, attention)?;
    Ok(LossTerms {
        total,
        nli,
        attention,
    })
}
