//! Checks shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use attn_supervise::autodiff::{grad_check, Matrix, Tape, Var};
use attn_supervise::corpus::{build_vocab, encode_pair, Label, NliExample, Segment};
use attn_supervise::encoder::{forward, forward_graph, EncoderConfig, EncoderParams, HeadRef, Variant};
use attn_supervise::Result;
use attn_supervise::explain::{build_targets, shuffle_target, StopwordLexicon, TargetDistribution};
use attn_supervise::supervise::{total_loss, LossKind, SupervisionConfig, TargetMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Random values bounded away from zero, so `relu` stays off its kink.
fn off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// `Σ w ⊙ v` with fixed random weights, so every output entry matters.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c, -1.0, 1.0));
    let prod = tape.mul(v, w)?;
    Ok(tape.sum(prod))
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One case per tape primitive: name, parameters, loss builder.
fn primitive_cases() -> Vec<(&'static str, Vec<Matrix<f64>>, Build)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut r = |rows, cols| random(&mut rng, rows, cols, -1.0, 1.0);
    let (a23, b34, c23, row3) = (r(2, 3), r(3, 4), r(2, 3), r(1, 3));
    let mut rng2 = ChaCha8Rng::seed_from_u64(8);
    let relu_in = off_zero(&mut rng2, 3, 4);
    let positive = random(&mut rng2, 2, 4, 0.2, 1.5);
    let table = random(&mut rng2, 5, 3, -1.0, 1.0);
    let logits = random(&mut rng2, 1, 3, -1.0, 1.0);
    let kl_target = Matrix::from_vec(2, 4, vec![0.5, 0.0, 0.25, 0.25, 0.1, 0.2, 0.3, 0.4]);

    let cases: Vec<(&'static str, Vec<Matrix<f64>>, Build)> = vec![
        ("matmul", vec![a23.clone(), b34.clone()], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, 1)
        })),
        ("add", vec![a23.clone(), c23.clone()], Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 2)
        })),
        ("sub", vec![a23.clone(), c23.clone()], Box::new(|t, v| {
            let y = t.sub(v[0], v[1])?;
            project(t, y, 3)
        })),
        ("mul", vec![a23.clone(), c23.clone()], Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 4)
        })),
        ("add_row", vec![a23.clone(), row3.clone()], Box::new(|t, v| {
            let y = t.add_row(v[0], v[1])?;
            project(t, y, 5)
        })),
        ("mul_row", vec![a23.clone(), row3.clone()], Box::new(|t, v| {
            let y = t.mul_row(v[0], v[1])?;
            project(t, y, 6)
        })),
        ("scale", vec![a23.clone()], Box::new(|t, v| {
            let y = t.scale(v[0], -1.7);
            project(t, y, 7)
        })),
        ("transpose", vec![a23.clone()], Box::new(|t, v| {
            let y = t.transpose(v[0]);
            project(t, y, 8)
        })),
        ("row_softmax", vec![b34.clone()], Box::new(|t, v| {
            let y = t.row_softmax(v[0]);
            project(t, y, 9)
        })),
        ("tanh", vec![a23.clone()], Box::new(|t, v| {
            let y = t.tanh(v[0]);
            project(t, y, 10)
        })),
        ("sigmoid", vec![a23.clone()], Box::new(|t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, 11)
        })),
        ("relu", vec![relu_in], Box::new(|t, v| {
            let y = t.relu(v[0]);
            project(t, y, 12)
        })),
        ("layer_norm", vec![b34.clone()], Box::new(|t, v| {
            let y = t.layer_norm(v[0]);
            project(t, y, 13)
        })),
        ("embedding_lookup", vec![table], Box::new(|t, v| {
            let y = t.embedding_lookup(v[0], &[4, 0, 4, 2])?;
            project(t, y, 14)
        })),
        ("concat_rows", vec![a23.clone(), row3.clone()], Box::new(|t, v| {
            let y = t.concat_rows(&[v[0], v[1], v[0]])?;
            project(t, y, 15)
        })),
        ("concat_cols", vec![a23.clone(), c23.clone()], Box::new(|t, v| {
            let y = t.concat_cols(&[v[1], v[0]])?;
            project(t, y, 16)
        })),
        ("slice_rows", vec![b34.clone()], Box::new(|t, v| {
            let y = t.slice_rows(v[0], 1, 2)?;
            project(t, y, 17)
        })),
        ("slice_cols", vec![b34.clone()], Box::new(|t, v| {
            let y = t.slice_cols(v[0], 1, 2)?;
            project(t, y, 18)
        })),
        ("sum", vec![a23.clone()], Box::new(|t, v| {
            let y = t.square(v[0]);
            Ok(t.sum(y))
        })),
        ("mean", vec![a23.clone()], Box::new(|t, v| {
            let y = t.mul(v[0], v[0])?;
            let z = t.mul(y, v[0])?;
            Ok(t.mean(z))
        })),
        ("square", vec![a23.clone()], Box::new(|t, v| {
            let y = t.square(v[0]);
            project(t, y, 19)
        })),
        ("normalize_rows", vec![positive.clone()], Box::new(|t, v| {
            let y = t.normalize_rows(v[0]);
            project(t, y, 20)
        })),
        ("cross_entropy_with_logits", vec![logits], Box::new(|t, v| t.cross_entropy_with_logits(v[0], 2))),
        ("kl_divergence_rows", vec![positive], Box::new(move |t, v| {
            let q = t.normalize_rows(v[0]);
            t.kl_divergence_rows(&kl_target, q)
        })),
    ];
    cases
}

/// Worst relative error per primitive.
pub fn primitive_grad_checks() -> Vec<(String, f64)> {
    primitive_cases()
        .into_iter()
        .map(|(name, values, build)| {
            let named: Vec<(String, Matrix<f64>)> = values
                .into_iter()
                .enumerate()
                .map(|(i, m)| (format!("{name}.{i}"), m))
                .collect();
            let report = grad_check(&named, GRAD_EPS, |t, v| build(t, v)).expect("grad check runs");
            (name.to_string(), report.max_rel_error)
        })
        .collect()
}

pub fn toy_example() -> NliExample {
    let mut ex = NliExample::new("a small dog swims in the lake", "a dog is sleeping", Label::Contradiction);
    ex.freetext_explanations = vec!["a dog cannot be sleeping while it swims".into()];
    ex.premise_highlights = [3].into_iter().collect();
    ex.hypothesis_highlights = [3].into_iter().collect();
    ex
}

pub fn small_encoder(vocab_size: usize, variant: Variant) -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        d_model: 8,
        ffn_dim: 12,
        n_max: 16,
        vocab_size,
        variant,
        extra_hidden: 6,
        ablated_value_heads: Vec::new(),
    }
}

/// Full encoder plus total loss, every parameter entry checked.
pub fn encoder_grad_check(variant: Variant, loss_kind: LossKind) -> f64 {
    let ex = toy_example();
    let vocab = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
    let enc = small_encoder(vocab.len(), variant);
    let seq = encode_pair(&ex, &vocab, enc.n_max).unwrap();
    let targets = build_targets(&ex, &seq, &StopwordLexicon::english(), 0).unwrap();
    let sup = SupervisionConfig {
        lambda: 0.7,
        heads: vec![0, 1],
        loss_kind,
        target_mode: TargetMode::Combined,
        layer: None,
        shuffle_seed: None,
    };
    let params = EncoderParams::<f64>::init(&enc, 11).unwrap();
    let report = grad_check(&params.named(), GRAD_EPS, |tape, vars| {
        let graph = forward_graph(tape, &enc, vars, &seq)?;
        Ok(total_loss(tape, &graph, ex.label, Some(&targets.combined), &sup, &enc)?.total)
    })
    .unwrap();
    assert_eq!(report.entries_checked, params.num_scalars());
    report.max_rel_error
}

#[derive(Debug, Default)]
pub struct DistributionReport {
    pub passes: usize,
    pub rows: usize,
    pub targets: usize,
    pub max_row_error: f64,
    pub max_target_error: f64,
    pub min_entry: f64,
    pub nonzero_pad: usize,
}

impl DistributionReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.max_row_error <= tol && self.max_target_error <= tol && self.min_entry >= 0.0 && self.nonzero_pad == 0
    }
}

fn random_words(rng: &mut ChaCha8Rng, words: &[&str], n: usize) -> String {
    (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
}

/// Random models and random examples; checks every attention row and every
/// non-empty target for being a distribution and PAD positions for zero mass.
pub fn distribution_invariants(passes: usize, seed: u64) -> DistributionReport {
    const WORDS: [&str; 14] = [
        "the", "a", "dog", "cat", "runs", "sleeps", "in", "park", "red", "ball", "is", "not", "man", "sea",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stop = StopwordLexicon::english();
    let mut rep = DistributionReport {
        min_entry: f64::INFINITY,
        ..Default::default()
    };
    let check_row = |rep: &mut DistributionReport, row: &[f64], is_target: bool| {
        let err = (row.iter().sum::<f64>() - 1.0).abs();
        if is_target {
            rep.targets += 1;
            rep.max_target_error = rep.max_target_error.max(err);
        } else {
            rep.rows += 1;
            rep.max_row_error = rep.max_row_error.max(err);
        }
        rep.min_entry = row.iter().fold(rep.min_entry, |m, &v| m.min(v));
    };
    let mut examples = Vec::new();
    for _ in 0..40 {
        let p = rng.gen_range(1..12);
        let h = rng.gen_range(1..10);
        let mut ex = NliExample::new(&random_words(&mut rng, &WORDS, p), &random_words(&mut rng, &WORDS, h), Label::Neutral);
        let e = rng.gen_range(0..4);
        ex.freetext_explanations = (0..e).map(|_| random_words(&mut rng, &WORDS, 5)).collect();
        ex.premise_highlights = (0..p).filter(|_| rng.gen_bool(0.3)).collect();
        ex.hypothesis_highlights = (0..h).filter(|_| rng.gen_bool(0.3)).collect();
        examples.push(ex);
    }
    let vocab = build_vocab(&examples, 1).unwrap();
    for pass in 0..passes {
        let variant = if pass % 2 == 0 {
            Variant::ExistingAttention
        } else {
            Variant::ExtraLayer
        };
        let heads = [1, 2, 4][rng.gen_range(0..3)];
        let mut enc = EncoderConfig {
            num_layers: rng.gen_range(1..3),
            num_heads: heads,
            d_model: heads * rng.gen_range(2..6),
            ffn_dim: rng.gen_range(4..16),
            n_max: rng.gen_range(8..24),
            vocab_size: vocab.len(),
            variant,
            extra_hidden: 5,
            ablated_value_heads: Vec::new(),
        };
        if rng.gen_bool(0.3) {
            enc.ablated_value_heads.push(HeadRef { layer: 0, head: 0 });
        }
        let params = EncoderParams::<f64>::init(&enc, rng.gen()).unwrap();
        let ex = &examples[pass % examples.len()];
        let seq = encode_pair(ex, &vocab, enc.n_max).unwrap();
        let out = forward(&seq, &params, &enc).unwrap();
        rep.passes += 1;
        for l in 0..enc.num_layers {
            for h in 0..enc.num_heads {
                check_row(&mut rep, out.attention.head(l, h), false);
                let padded = out.attention.padded(l, h);
                rep.nonzero_pad += padded[seq.valid_length..].iter().filter(|&&v| v != 0.0).count();
                rep.nonzero_pad += (out.attention.head(l, h).len() != seq.valid_length) as usize;
            }
        }
        if let Some(extra) = &out.attention.extra {
            check_row(&mut rep, extra, false);
        }
        let t = build_targets(ex, &seq, &stop, pass).unwrap();
        let shuffled = shuffle_target(&t.combined, &seq, rng.gen());
        for d in [&t.freetext, &t.highlights, &t.combined, &shuffled] {
            if !d.is_empty() {
                check_row(&mut rep, &d.values, true);
            }
            if d.len() != seq.valid_length {
                rep.nonzero_pad += 1;
            }
        }
    }
    rep
}

/// Segment positions for test assertions.
pub fn premise_positions(seq: &attn_supervise::corpus::EncodedSequence) -> Vec<usize> {
    seq.positions_in(Segment::Premise).collect()
}

pub fn td(values: &[f64]) -> TargetDistribution {
    TargetDistribution {
        values: values.to_vec(),
        empty: false,
    }
}
