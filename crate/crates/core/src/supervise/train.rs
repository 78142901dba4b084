use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss, SupervisionConfig, TargetMode};
use crate::autodiff::{Matrix, Tape};
use crate::corpus::{encode_pair, EncodedSequence, Label, NliExample, Vocabulary};
use crate::encoder::{forward_graph, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::evalstats::evaluate_accuracy;
use crate::explain::{build_targets, shuffle_target, StopwordLexicon, TargetDistribution, TargetSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.patience > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("train config: invalid values in {self:?}")))
        }
    }
}

/// An example encoded once, with every target mode precomputed.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub index: usize,
    pub example: NliExample,
    pub seq: EncodedSequence,
    pub targets: TargetSet,
}

impl PreparedExample {
    pub fn label(&self) -> Label {
        self.example.label
    }

    /// Target for `mode`; `None` when supervision is off. Shuffled targets
    /// depend on `seed` and the example index only.
    pub fn target(&self, mode: TargetMode, seed: u64) -> Option<TargetDistribution> {
        match mode {
            TargetMode::Freetext => Some(self.targets.freetext.clone()),
            TargetMode::Highlights => Some(self.targets.highlights.clone()),
            TargetMode::Combined => Some(self.targets.combined.clone()),
            TargetMode::Shuffled => Some(shuffle_target(
                &self.targets.combined,
                &self.seq,
                mix_seed(seed, self.index as u64),
            )),
            TargetMode::None => None,
        }
    }
}

pub fn prepare(
    examples: &[NliExample],
    vocab: &Vocabulary,
    n_max: usize,
    stopwords: &StopwordLexicon,
) -> Result<Vec<PreparedExample>> {
    examples
        .iter()
        .enumerate()
        .map(|(index, ex)| {
            let seq = encode_pair(ex, vocab, n_max)?;
            let targets = build_targets(ex, &seq, stopwords, index)?;
            Ok(PreparedExample {
                index,
                example: ex.clone(),
                seq,
                targets,
            })
        })
        .collect()
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_nli: f64,
    pub loss_attention: f64,
    pub dev_accuracy: f64,
}

/// Everything needed to reproduce and judge one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub supervision: SupervisionConfig,
    pub training: TrainConfig,
    pub epochs: Vec<EpochMetrics>,
    /// 0 when no epoch was run.
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    /// Extra evaluations keyed by split name, filled in by callers.
    #[serde(default)]
    pub evaluations: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    pub rationale_threshold: Option<f64>,
    /// Kept out of the serialized report so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &EncoderParams<T>, cfg: &TrainConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams<T>, grads: &[Matrix<T>]) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.step));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (self.m[i].as_mut_slice(), self.v[i].as_mut_slice());
            for (j, (w, &g)) in p.as_mut_slice().iter_mut().zip(grads[i].as_slice()).enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Trained parameters and the run's report.
pub struct TrainOutcome<T> {
    pub params: EncoderParams<T>,
    pub report: RunReport,
}

/// Mini-batch Adam on the total loss with early stopping on dev accuracy.
///
/// Each example's loss enters the batch mean with weight `1/B`; examples
/// without a usable target contribute a zero attention term, so the attention
/// part is the mean over non-empty targets scaled by their in-batch fraction.
pub fn train<T: Scalar>(
    train_set: &[PreparedExample],
    dev_set: &[PreparedExample],
    enc: &EncoderConfig,
    sup: &SupervisionConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let start = Instant::now();
    enc.validate()?;
    sup.validate(enc)?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut params = EncoderParams::<T>::init(enc, cfg.seed)?;
    let mut best = params.clone();
    let mut best_dev = evaluate_accuracy(&params, enc, dev_set)?;
    let mut best_epoch = 0;
    let mut adam = Adam::new(&params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5eed));
    let shuffle_seed = sup.shuffle_seed.unwrap_or(cfg.seed);
    let targets: Vec<Option<TargetDistribution>> = train_set
        .iter()
        .map(|ex| ex.target(sup.target_mode, shuffle_seed))
        .collect();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: Vec<Matrix<T>> = params
                .tensors()
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect();
            let weight = T::lit(1.0 / batch.len() as f64);
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &train_set[i];
                let mut tape = Tape::new();
                let vars = params.register(&mut tape);
                let graph = forward_graph(&mut tape, enc, &vars, &ex.seq)?;
                let terms = total_loss(&mut tape, &graph, ex.label(), targets[i].as_ref(), sup, enc)?;
                let total = tape.value(terms.total).item().as_f64();
                batch_loss += total;
                sums[0] += total;
                sums[1] += tape.value(terms.nli).item().as_f64();
                sums[2] += tape.value(terms.attention).item().as_f64();
                let mut g = tape.backward(terms.total)?;
                for (acc, &v) in grads.iter_mut().zip(&vars) {
                    if let Some(gv) = g.take(v) {
                        acc.add_scaled(&gv, weight);
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss,
                });
            }
            adam.step(&mut params, &grads);
        }
        let n = train_set.len() as f64;
        let dev_accuracy = evaluate_accuracy(&params, enc, dev_set)?;
        epochs.push(EpochMetrics {
            epoch,
            loss_total: sums[0] / n,
            loss_nli: sums[1] / n,
            loss_attention: sums[2] / n,
            dev_accuracy,
        });
        if dev_accuracy > best_dev || best_epoch == 0 {
            best_dev = dev_accuracy;
            best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best,
        report: RunReport {
            seed: cfg.seed,
            encoder: enc.clone(),
            supervision: sup.clone(),
            training: cfg.clone(),
            epochs,
            best_epoch,
            best_dev_accuracy: best_dev,
            evaluations: Default::default(),
            rationale_threshold: None,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    })
}
