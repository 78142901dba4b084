//! Attention-supervision losses, the training loop, the λ sweep and greedy
//! head selection.

mod loss;
mod train;

pub use loss::{
    attention_loss, attention_loss_value, supervised_rows, total_loss, LossKind, LossTerms, SupervisionConfig,
    TargetMode,
};
pub use train::{mix_seed, prepare, train, Adam, EpochMetrics, PreparedExample, RunReport, TrainConfig, TrainOutcome};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};

/// Environment variable holding the worker count for sweeps and matrices.
pub const WORKERS_ENV: &str = "ATTN_SUPERVISE_WORKERS";

pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs independent jobs on a worker pool; results come back in input order.
pub fn run_parallel<J, R, F>(jobs: Vec<J>, f: F) -> Result<Vec<R>>
where
    J: Send,
    R: Send,
    F: Fn(J) -> Result<R> + Sync + Send,
{
    let workers = worker_count();
    if workers == 1 || jobs.len() <= 1 {
        return jobs.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| jobs.into_par_iter().map(f).collect())
}

/// Shared inputs of a sweep or selection: data plus base configs.
#[derive(Clone, Copy)]
pub struct Experiment<'a> {
    pub train: &'a [PreparedExample],
    pub dev: &'a [PreparedExample],
    pub encoder: &'a EncoderConfig,
    pub supervision: &'a SupervisionConfig,
    pub training: &'a TrainConfig,
}

impl Experiment<'_> {
    /// Dev accuracy of one run with the given overrides.
    pub fn dev_accuracy(&self, sup: &SupervisionConfig, seed: u64) -> Result<f64> {
        let cfg = TrainConfig {
            seed,
            ..self.training.clone()
        };
        Ok(train::<f64>(self.train, self.dev, self.encoder, sup, &cfg)?
            .report
            .best_dev_accuracy)
    }
}

/// One `(condition, seed)` cell of a sweep or selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub condition: String,
    pub seed: u64,
    pub dev_acc: f64,
}

/// RFC-4180 table with columns `condition,seed,dev_acc`.
pub fn cells_to_csv(cells: &[CellResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cells {
        w.serialize(c)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Index of the maximum; ties go to the earliest entry.
fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub cells: Vec<CellResult>,
    /// `(λ, mean dev accuracy)` in grid order.
    pub table: Vec<(f64, f64)>,
    pub best_lambda: f64,
}

/// `[0.2, 0.4, …, 1.8]`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 * 0.2).collect()
}

/// Trains one model per `(λ, seed)` and picks the λ with the best seed-mean
/// dev accuracy; ties go to the smaller λ.
pub fn sweep_lambda(exp: &Experiment<'_>, grid: &[f64], seeds: &[u64]) -> Result<LambdaSweep> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("lambda sweep needs a non-empty grid and seed list".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let jobs: Vec<(f64, u64)> = grid.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    let cells = run_parallel(jobs, |(lambda, seed)| {
        let sup = SupervisionConfig {
            lambda,
            ..exp.supervision.clone()
        };
        Ok(CellResult {
            condition: format!("lambda={lambda}"),
            seed,
            dev_acc: exp.dev_accuracy(&sup, seed)?,
        })
    })?;
    let table: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, mean(cells[i * seeds.len()..(i + 1) * seeds.len()].iter().map(|c| c.dev_acc))))
        .collect();
    let means: Vec<f64> = table.iter().map(|&(_, m)| m).collect();
    let best_lambda = table[argmax_first(&means)].0;
    Ok(LambdaSweep {
        cells,
        table,
        best_lambda,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSelectionResult {
    pub layer: usize,
    pub phase1: Vec<CellResult>,
    /// Mean dev accuracy of each head supervised alone, by head index.
    pub head_means: Vec<f64>,
    /// Head indices, best first; ties go to the lower index.
    pub ranking: Vec<usize>,
    pub phase2: Vec<CellResult>,
    /// `(K, mean dev accuracy)` in grid order.
    pub k_means: Vec<(usize, f64)>,
    pub chosen_k: usize,
    pub chosen_heads: Vec<usize>,
}

impl HeadSelectionResult {
    pub fn phase1_runs(&self) -> usize {
        self.phase1.len()
    }

    pub fn phase2_runs(&self) -> usize {
        self.phase2.len()
    }

    /// Best solo head for each seed (ties go to the lower index).
    pub fn per_seed_best(&self, num_heads: usize) -> Vec<(u64, usize)> {
        let seeds: Vec<u64> = {
            let mut s: Vec<u64> = self.phase1.iter().map(|c| c.seed).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        seeds
            .into_iter()
            .map(|seed| {
                let accs: Vec<f64> = (0..num_heads)
                    .map(|h| {
                        self.phase1
                            .iter()
                            .find(|c| c.seed == seed && c.condition == head_condition(h))
                            .map_or(f64::NEG_INFINITY, |c| c.dev_acc)
                    })
                    .collect();
                (seed, argmax_first(&accs))
            })
            .collect()
    }
}

fn head_condition(h: usize) -> String {
    format!("head={h}")
}

/// `{1, 3, 6, 9, 12} ∩ [1, H_total]`.
pub fn default_k_grid(num_heads: usize) -> Vec<usize> {
    [1, 3, 6, 9, 12].into_iter().filter(|&k| k <= num_heads).collect()
}

/// Phase 1 supervises each head of the supervised layer alone; phase 2
/// supervises the top-K heads for every K in the grid.
pub fn greedy_head_selection(exp: &Experiment<'_>, k_grid: &[usize], seeds: &[u64]) -> Result<HeadSelectionResult> {
    let h_total = exp.encoder.num_heads;
    if k_grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("head selection needs a K grid and seeds".into()));
    }
    if let Some(k) = k_grid.iter().find(|&&k| k == 0 || k > h_total) {
        return Err(Error::InvalidArgument(format!("K = {k} outside [1, {h_total}]")));
    }
    let layer = exp.supervision.layer_index(exp.encoder);
    let with_heads = |heads: Vec<usize>| SupervisionConfig {
        heads,
        layer: Some(layer),
        ..exp.supervision.clone()
    };

    let jobs: Vec<(usize, u64)> = (0..h_total).flat_map(|h| seeds.iter().map(move |&s| (h, s))).collect();
    let phase1 = run_parallel(jobs, |(h, seed)| {
        Ok(CellResult {
            condition: head_condition(h),
            seed,
            dev_acc: exp.dev_accuracy(&with_heads(vec![h]), seed)?,
        })
    })?;
    let n = seeds.len();
    let head_means: Vec<f64> = (0..h_total)
        .map(|h| mean(phase1[h * n..(h + 1) * n].iter().map(|c| c.dev_acc)))
        .collect();
    let mut ranking: Vec<usize> = (0..h_total).collect();
    // Stable sort keeps lower indices first among equal means.
    ranking.sort_by(|&a, &b| head_means[b].total_cmp(&head_means[a]));

    let mut ks = k_grid.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let jobs: Vec<(usize, u64)> = ks.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let phase2 = run_parallel(jobs, |(k, seed)| {
        let mut heads = ranking[..k].to_vec();
        heads.sort_unstable();
        Ok(CellResult {
            condition: format!("k={k}"),
            seed,
            dev_acc: exp.dev_accuracy(&with_heads(heads), seed)?,
        })
    })?;
    let k_means: Vec<(usize, f64)> = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, mean(phase2[i * n..(i + 1) * n].iter().map(|c| c.dev_acc))))
        .collect();
    let means: Vec<f64> = k_means.iter().map(|&(_, m)| m).collect();
    let chosen_k = k_means[argmax_first(&means)].0;
    let chosen_heads = ranking[..chosen_k].to_vec();
    Ok(HeadSelectionResult {
        layer,
        phase1,
        head_means,
        ranking,
        phase2,
        k_means,
        chosen_k,
        chosen_heads,
    })
}
