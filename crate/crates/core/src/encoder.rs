//! Small post-LN transformer encoder with per-head `[CLS]` attention
//! exposed, a linear classifier on the final `[CLS]` state, and an optional
//! additive attention pooling layer on top of the final hidden states.
//!
//! Only the first `valid_length` positions of a sequence enter the graph.
//! This is the same as masking PAD keys with −∞ before the softmax, and
//! PAD positions get exactly zero attention in the exported records.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::corpus::{EncodedSequence, Label};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Supervise `[CLS]` rows of an existing self-attention layer.
    ExistingAttention,
    /// Add a supervised attention-pooling layer over the final hidden states.
    ExtraLayer,
}

/// A `(layer, head)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadRef {
    pub layer: usize,
    pub head: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub n_max: usize,
    pub vocab_size: usize,
    pub variant: Variant,
    /// Hidden width of the pooling layer's scoring MLP.
    pub extra_hidden: usize,
    /// Heads whose value output is zeroed before the output projection.
    #[serde(default)]
    pub ablated_value_heads: Vec<HeadRef>,
}

impl EncoderConfig {
    /// L=2, H=4, d_model=64, ffn=128, n_max=32.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            d_model: 64,
            ffn_dim: 128,
            n_max: 32,
            vocab_size,
            variant: Variant::ExistingAttention,
            extra_hidden: 64,
            ablated_value_heads: Vec::new(),
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("encoder config: {m}")));
        if self.num_layers == 0 {
            return bad("num_layers must be >= 1".into());
        }
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.ffn_dim == 0 || self.vocab_size < crate::corpus::Vocabulary::NUM_RESERVED || self.n_max < 3 {
            return bad("ffn_dim, vocab_size and n_max must be positive (n_max >= 3)".into());
        }
        if self.variant == Variant::ExtraLayer && self.extra_hidden == 0 {
            return bad("extra_hidden must be >= 1".into());
        }
        if let Some(h) = self
            .ablated_value_heads
            .iter()
            .find(|h| h.layer >= self.num_layers || h.head >= self.num_heads)
        {
            return bad(format!("ablated head {h:?} out of range"));
        }
        Ok(())
    }

    fn is_ablated(&self, layer: usize, head: usize) -> bool {
        self.ablated_value_heads.contains(&HeadRef { layer, head })
    }
}

const LAYER_TENSORS: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "ffn_w1", "ffn_b1", "ffn_w2",
    "ffn_b2", "ln2_g", "ln2_b",
];

enum Init {
    Normal,
    Zeros,
    Ones,
}

fn init_kind(name: &str) -> Init {
    let base = name.rsplit('.').next().unwrap_or(name);
    match base {
        "ln1_g" | "ln2_g" => Init::Ones,
        "bq" | "bk" | "bv" | "bo" | "ln1_b" | "ln2_b" | "ffn_b1" | "ffn_b2" | "cls_b" | "extra_b_h1"
        | "extra_b_h2" => Init::Zeros,
        _ => Init::Normal,
    }
}

/// Index of every tensor in [`EncoderParams`], derived from the config.
#[derive(Clone, Debug)]
struct Layout {
    layers: usize,
    extra: bool,
}

impl Layout {
    fn new(cfg: &EncoderConfig) -> Self {
        Self {
            layers: cfg.num_layers,
            extra: cfg.variant == Variant::ExtraLayer,
        }
    }

    const TOK: usize = 0;
    const POS: usize = 1;

    fn layer(&self, l: usize, k: usize) -> usize {
        2 + l * LAYER_TENSORS.len() + k
    }

    fn cls_w(&self) -> usize {
        2 + self.layers * LAYER_TENSORS.len()
    }

    fn cls_b(&self) -> usize {
        self.cls_w() + 1
    }

    fn extra(&self, k: usize) -> usize {
        debug_assert!(self.extra);
        self.cls_b() + 1 + k
    }

    fn len(&self) -> usize {
        self.cls_b() + 1 + if self.extra { 4 } else { 0 }
    }

    fn specs(&self, cfg: &EncoderConfig) -> Vec<(String, (usize, usize))> {
        let d = cfg.d_model;
        let mut out = vec![
            ("tok_emb".to_string(), (cfg.vocab_size, d)),
            ("pos_emb".to_string(), (cfg.n_max, d)),
        ];
        for l in 0..cfg.num_layers {
            let shapes = [
                (d, d),
                (1, d),
                (d, d),
                (1, d),
                (d, d),
                (1, d),
                (d, d),
                (1, d),
                (1, d),
                (1, d),
                (d, cfg.ffn_dim),
                (1, cfg.ffn_dim),
                (cfg.ffn_dim, d),
                (1, d),
                (1, d),
                (1, d),
            ];
            for (name, shape) in LAYER_TENSORS.iter().zip(shapes) {
                out.push((format!("layer{l}.{name}"), shape));
            }
        }
        out.push(("cls_w".into(), (d, NUM_CLASSES)));
        out.push(("cls_b".into(), (1, NUM_CLASSES)));
        if self.extra {
            out.push(("extra_w_h1".into(), (d, cfg.extra_hidden)));
            out.push(("extra_b_h1".into(), (1, cfg.extra_hidden)));
            out.push(("extra_w_h2".into(), (cfg.extra_hidden, 1)));
            out.push(("extra_b_h2".into(), (1, 1)));
        }
        debug_assert_eq!(out.len(), self.len());
        out
    }
}

/// Named parameter tensors for one encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    names: Vec<String>,
    tensors: Vec<Matrix<T>>,
}

impl<T: Scalar> EncoderParams<T> {
    /// Random initialization: unit-normal embeddings, `N(0, 1/fan_in)`
    /// projections, zero biases, unit layer-norm gains.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, (r, c)) in layout.specs(cfg) {
            let m = match init_kind(&name) {
                Init::Ones => Matrix::filled(r, c, T::one()),
                Init::Zeros => Matrix::zeros(r, c),
                Init::Normal => {
                    let std = if name.ends_with("_emb") { 1.0 } else { (1.0 / r as f64).sqrt() };
                    let dist = Normal::new(0.0, std).expect("valid std");
                    Matrix::from_vec(r, c, (0..r * c).map(|_| T::lit(dist.sample(&mut rng))).collect())
                }
            };
            names.push(name);
            tensors.push(m);
        }
        Ok(Self { names, tensors })
    }

    pub fn from_named(cfg: &EncoderConfig, named: Vec<(String, Matrix<T>)>) -> Result<Self> {
        cfg.validate()?;
        let specs = Layout::new(cfg).specs(cfg);
        if specs.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        for ((name, shape), (got_name, m)) in specs.iter().zip(&named) {
            if name != got_name || *shape != m.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {got_name} {:?} does not match expected {name} {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("checkpoint tensor {name}"),
                });
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn named(&self) -> Vec<(String, Matrix<T>)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Puts every tensor on `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|m| tape.param(m.clone())).collect()
    }

    /// Puts every tensor on `tape` as a constant (inference only).
    pub fn register_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|m| tape.constant(m.clone())).collect()
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardGraph {
    pub logits: Var,
    /// `cls_attention[layer][head]` is a 1×n row.
    pub cls_attention: Vec<Vec<Var>>,
    /// Normalized pooling attention (1×n) for the extra-layer variant.
    pub extra_attention: Option<Var>,
    /// Pooled representation `c` (1×d) for the extra-layer variant.
    pub pooled: Option<Var>,
    /// Output of each layer, n×d.
    pub hidden: Vec<Var>,
}

/// Builds the forward graph over the valid positions of `seq`.
pub fn forward_graph<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &EncoderConfig,
    vars: &[Var],
    seq: &EncodedSequence,
) -> Result<ForwardGraph> {
    let layout = Layout::new(cfg);
    if vars.len() != layout.len() {
        return Err(Error::Shape {
            op: "forward",
            detail: format!("{} parameter tensors for a layout of {}", vars.len(), layout.len()),
        });
    }
    if seq.n_max() > cfg.n_max || seq.valid_length == 0 {
        return Err(Error::Shape {
            op: "forward",
            detail: format!(
                "sequence n_max {} (valid {}) vs config n_max {}",
                seq.n_max(),
                seq.valid_length,
                cfg.n_max
            ),
        });
    }
    let n = seq.valid_length;
    let d_k = cfg.d_k();
    let scale = T::one() / T::from_usize(d_k).unwrap().sqrt();

    let tok = tape.embedding_lookup(vars[Layout::TOK], seq.valid_ids())?;
    let pos = tape.slice_rows(vars[Layout::POS], 0, n)?;
    let mut x = tape.add(tok, pos)?;

    let mut cls_attention = Vec::with_capacity(cfg.num_layers);
    let mut hidden = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let p = |k: usize| vars[layout.layer(l, k)];
        let q = affine(tape, x, p(0), p(1))?;
        let k = affine(tape, x, p(2), p(3))?;
        let v = affine(tape, x, p(4), p(5))?;
        let mut rows = Vec::with_capacity(cfg.num_heads);
        let mut contexts = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = tape.slice_cols(q, h * d_k, d_k)?;
            let kh = tape.slice_cols(k, h * d_k, d_k)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.row_softmax(scores);
            rows.push(tape.slice_rows(attn, 0, 1)?);
            let ctx = if cfg.is_ablated(l, h) {
                tape.constant(Matrix::zeros(n, d_k))
            } else {
                let vh = tape.slice_cols(v, h * d_k, d_k)?;
                tape.matmul(attn, vh)?
            };
            contexts.push(ctx);
        }
        let ctx = tape.concat_cols(&contexts)?;
        let attn_out = affine(tape, ctx, p(6), p(7))?;
        let res = tape.add(x, attn_out)?;
        let h1 = norm(tape, res, p(8), p(9))?;
        let f = affine(tape, h1, p(10), p(11))?;
        let f = tape.relu(f);
        let f = affine(tape, f, p(12), p(13))?;
        let res2 = tape.add(h1, f)?;
        x = norm(tape, res2, p(14), p(15))?;
        cls_attention.push(rows);
        hidden.push(x);
    }

    let (logits, extra_attention, pooled) = match cfg.variant {
        Variant::ExistingAttention => {
            let cls = tape.slice_rows(x, 0, 1)?;
            (affine(tape, cls, vars[layout.cls_w()], vars[layout.cls_b()])?, None, None)
        }
        Variant::ExtraLayer => {
            let e = |k: usize| vars[layout.extra(k)];
            let u = affine(tape, x, e(0), e(1))?;
            let u = tape.tanh(u);
            let s = affine(tape, u, e(2), e(3))?;
            let unnorm = tape.sigmoid(s);
            let row = tape.transpose(unnorm);
            let a = tape.normalize_rows(row);
            let c = tape.matmul(a, x)?;
            let logits = affine(tape, c, vars[layout.cls_w()], vars[layout.cls_b()])?;
            (logits, Some(a), Some(c))
        }
    };
    Ok(ForwardGraph {
        logits,
        cls_attention,
        extra_attention,
        pooled,
        hidden,
    })
}

fn affine<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn norm<T: Scalar>(tape: &mut Tape<T>, x: Var, gain: Var, offset: Var) -> Result<Var> {
    let y = tape.layer_norm(x);
    let y = tape.mul_row(y, gain)?;
    tape.add_row(y, offset)
}

/// `[CLS]` attention rows of every layer and head, over non-PAD positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub valid_length: usize,
    pub n_max: usize,
    /// `layers[layer][head][position]`.
    pub layers: Vec<Vec<Vec<f64>>>,
    pub extra: Option<Vec<f64>>,
}

impl AttentionRecord {
    pub fn from_graph<T: Scalar>(tape: &Tape<T>, graph: &ForwardGraph, n_max: usize) -> Self {
        let row = |v: Var| tape.value(v).to_f64_vec();
        Self {
            valid_length: tape.shape(graph.cls_attention[0][0]).1,
            n_max,
            layers: graph
                .cls_attention
                .iter()
                .map(|heads| heads.iter().map(|&v| row(v)).collect())
                .collect(),
            extra: graph.extra_attention.map(row),
        }
    }

    pub fn head(&self, layer: usize, head: usize) -> &[f64] {
        &self.layers[layer][head]
    }

    /// Row zero-padded to `n_max`.
    pub fn padded(&self, layer: usize, head: usize) -> Vec<f64> {
        let mut v = self.layers[layer][head].clone();
        v.resize(self.n_max, 0.0);
        v
    }

    /// Elementwise mean of the listed heads in one layer.
    pub fn mean_over(&self, layer: usize, heads: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.valid_length];
        for &h in heads {
            for (o, &a) in out.iter_mut().zip(&self.layers[layer][h]) {
                *o += a;
            }
        }
        let k = heads.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }
}

/// Result of [`forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub hidden: Vec<Matrix<T>>,
    pub logits: [f64; NUM_CLASSES],
    pub attention: AttentionRecord,
}

pub fn forward<T: Scalar>(
    seq: &EncodedSequence,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
) -> Result<ForwardOutput<T>> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let g = forward_graph(&mut tape, cfg, &vars, seq)?;
    Ok(ForwardOutput {
        hidden: g.hidden.iter().map(|&h| tape.value(h).clone()).collect(),
        logits: logits_array(tape.value(g.logits)),
        attention: AttentionRecord::from_graph(&tape, &g, cfg.n_max),
    })
}

/// Output of the attention-pooling layer.
#[derive(Clone, Debug)]
pub struct ExtraLayerOutput<T> {
    pub attention: Vec<f64>,
    pub pooled: Matrix<T>,
    pub logits: [f64; NUM_CLASSES],
}

pub fn forward_extra_layer<T: Scalar>(
    seq: &EncodedSequence,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
) -> Result<ExtraLayerOutput<T>> {
    if cfg.variant != Variant::ExtraLayer {
        return Err(Error::InvalidArgument(
            "forward_extra_layer requires the extra_layer variant".into(),
        ));
    }
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let g = forward_graph(&mut tape, cfg, &vars, seq)?;
    Ok(ExtraLayerOutput {
        attention: tape.value(g.extra_attention.expect("extra variant")).to_f64_vec(),
        pooled: tape.value(g.pooled.expect("extra variant")).clone(),
        logits: logits_array(tape.value(g.logits)),
    })
}

fn logits_array<T: Scalar>(m: &Matrix<T>) -> [f64; NUM_CLASSES] {
    let mut out = [0.0; NUM_CLASSES];
    for (o, &v) in out.iter_mut().zip(m.as_slice()) {
        *o = v.as_f64();
    }
    out
}

/// Argmax with ties going to the lowest class index.
pub fn argmax_label(logits: &[f64; NUM_CLASSES]) -> Label {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    Label::from_index(best).expect("three classes")
}

pub fn predict<T: Scalar>(seq: &EncodedSequence, params: &EncoderParams<T>, cfg: &EncoderConfig) -> Result<Label> {
    Ok(argmax_label(&forward(seq, params, cfg)?.logits))
}

pub const CHECKPOINT_FORMAT: &str = "attn-supervise-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: EncoderConfig,
    tensors: Vec<CheckpointTensor>,
}

/// JSON checkpoint: format tag, version, config header and named tensors.
pub fn checkpoint_to_json<T: Scalar>(params: &EncoderParams<T>, cfg: &EncoderConfig) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(name, m)| CheckpointTensor {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
                data: m.to_f64_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn checkpoint_from_json<T: Scalar>(text: &str) -> Result<(EncoderParams<T>, EncoderConfig)> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    let mut named = Vec::with_capacity(file.tensors.len());
    for t in file.tensors {
        if t.data.len() != t.rows * t.cols {
            return Err(Error::Checkpoint(format!("tensor {} has wrong length", t.name)));
        }
        let data = t.data.into_iter().map(T::lit).collect();
        named.push((t.name, Matrix::from_vec(t.rows, t.cols, data)));
    }
    let params = EncoderParams::from_named(&file.config, named)?;
    Ok((params, file.config))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &EncoderParams<T>, cfg: &EncoderConfig) -> Result<()> {
    crate::io::write_atomic(path, checkpoint_to_json(params, cfg)?.as_bytes())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(EncoderParams<T>, EncoderConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text)
}
