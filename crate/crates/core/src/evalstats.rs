//! Accuracy, paired/unpaired t-tests, Bonferroni flags and the cached
//! arm × seed experiment matrix.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{predict, save_checkpoint, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::io::{content_hash, read_json, write_atomic, write_json};
use crate::scalar::Scalar;
use crate::supervise::{run_parallel, train, PreparedExample, RunReport, SupervisionConfig, TrainConfig};

pub const ALPHA: f64 = 0.05;

/// Fraction of examples whose argmax prediction equals the gold label.
pub fn evaluate_accuracy<T: Scalar>(
    params: &EncoderParams<T>,
    enc: &EncoderConfig,
    examples: &[PreparedExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty example set".into()));
    }
    let mut correct = 0usize;
    for ex in examples {
        if predict(&ex.seq, params, enc)? == ex.label() {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    #[default]
    Paired,
    /// Student's two-sample test with pooled variance.
    Unpaired,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    /// `mean(a) − mean(b)`.
    pub mean_delta: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-tailed test of `a` against `b`. With zero variance the statistic is
/// degenerate: p = 1 when the mean difference is zero, p = 0 otherwise.
pub fn two_tailed_t_test(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("t-test needs at least two values per arm".into()));
    }
    let (t_num, se2, df) = match kind {
        TTestKind::Paired => {
            if a.len() != b.len() {
                return Err(Error::InvalidArgument(format!(
                    "paired t-test on {} vs {} values",
                    a.len(),
                    b.len()
                )));
            }
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let (m, v) = mean_var(&d);
            (m, v / d.len() as f64, d.len() as f64 - 1.0)
        }
        TTestKind::Unpaired => {
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let (ma, va) = mean_var(a);
            let (mb, vb) = mean_var(b);
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            (ma - mb, pooled * (1.0 / na + 1.0 / nb), df)
        }
    };
    let mean_delta = mean_var(a).0 - mean_var(b).0;
    if se2 == 0.0 {
        return Ok(if t_num == 0.0 {
            TTest { t: 0.0, p: 1.0, df, mean_delta }
        } else {
            TTest {
                t: f64::INFINITY.copysign(t_num),
                p: 0.0,
                df,
                mean_delta,
            }
        });
    }
    let t = t_num / se2.sqrt();
    let p = student_t_two_tailed(t, df).clamp(0.0, 1.0);
    Ok(TTest { t, p, df, mean_delta })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
}

/// `I_x(a, b)` via the Lentz continued fraction, relative tolerance 1e-10.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const TOL: f64 = 1e-10;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let num = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 / guard(1.0 + num * d);
        c = guard(1.0 + num / c);
        h *= d * c;
        let num = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 / guard(1.0 + num * d);
        c = guard(1.0 + num / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < TOL {
            break;
        }
    }
    h
}

/// `p < α/m` for each p-value.
pub fn bonferroni(p_values: &[f64], m: usize) -> Result<Vec<bool>> {
    if m == 0 {
        return Err(Error::InvalidArgument("Bonferroni factor must be >= 1".into()));
    }
    let bar = ALPHA / m as f64;
    Ok(p_values.iter().map(|&p| p < bar).collect())
}

/// A named model/supervision configuration compared in the matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub encoder: EncoderConfig,
    pub supervision: SupervisionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCell {
    pub arm: String,
    pub dataset: String,
    pub seed: u64,
    pub accuracy: f64,
}

/// Accuracy per `(arm, dataset, seed)`, sorted by arm order, dataset, seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedResults {
    pub arms: Vec<String>,
    pub datasets: Vec<String>,
    pub cells: Vec<SeedCell>,
}

impl SeedResults {
    pub fn accuracies(&self, arm: &str, dataset: &str) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.arm == arm && c.dataset == dataset)
            .map(|c| c.accuracy)
            .collect()
    }

    pub fn mean(&self, arm: &str, dataset: &str) -> f64 {
        let v = self.accuracies(arm, dataset);
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            w.serialize(c)?;
        }
        csv_string(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut out = SeedResults::default();
        for row in r.deserialize() {
            let c: SeedCell = row?;
            if !out.arms.contains(&c.arm) {
                out.arms.push(c.arm.clone());
            }
            if !out.datasets.contains(&c.dataset) {
                out.datasets.push(c.dataset.clone());
            }
            out.cells.push(c);
        }
        Ok(out)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub arm: String,
    pub baseline: String,
    pub dataset: String,
    pub mean_delta: f64,
    pub t: f64,
    pub p: f64,
    pub m: usize,
    pub significant: bool,
}

/// Tests every non-baseline arm against `baseline` on every dataset.
pub fn significance(results: &SeedResults, baseline: &str, m: usize, kind: TTestKind) -> Result<Vec<SignificanceRow>> {
    if !results.arms.iter().any(|a| a == baseline) {
        return Err(Error::InvalidArgument(format!("baseline arm {baseline:?} not in results")));
    }
    let mut rows = Vec::new();
    for arm in results.arms.iter().filter(|a| *a != baseline) {
        for ds in &results.datasets {
            let test = two_tailed_t_test(&results.accuracies(arm, ds), &results.accuracies(baseline, ds), kind)?;
            rows.push(SignificanceRow {
                arm: arm.clone(),
                baseline: baseline.to_string(),
                dataset: ds.clone(),
                mean_delta: test.mean_delta,
                t: test.t,
                p: test.p,
                m,
                significant: bonferroni(&[test.p], m)?[0],
            });
        }
    }
    Ok(rows)
}

pub fn significance_csv(rows: &[SignificanceRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    csv_string(w)
}

/// Arms × datasets table of mean accuracies followed by one delta row per
/// non-baseline arm. `†` marks p < 0.05, `‡` marks p < 0.05/m.
pub fn summary_csv(results: &SeedResults, rows: &[SignificanceRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    header.extend(results.datasets.iter().cloned());
    w.write_record(&header)?;
    for arm in &results.arms {
        let mut rec = vec![arm.clone()];
        rec.extend(results.datasets.iter().map(|d| format!("{:.4}", results.mean(arm, d))));
        w.write_record(&rec)?;
    }
    let mut arms: Vec<&str> = Vec::new();
    for r in rows {
        if !arms.contains(&r.arm.as_str()) {
            arms.push(&r.arm);
        }
    }
    for arm in arms {
        let mut rec = vec![format!("delta {arm}")];
        for d in &results.datasets {
            let cell = rows.iter().find(|r| r.arm == arm && &r.dataset == d).map_or(String::new(), |r| {
                let mark = if r.significant {
                    "‡"
                } else if r.p < ALPHA {
                    "†"
                } else {
                    ""
                };
                format!("{:+.4}{mark}", r.mean_delta)
            });
            rec.push(cell);
        }
        w.write_record(&rec)?;
    }
    csv_string(w)
}

/// Data and settings shared by every matrix cell.
pub struct MatrixInputs<'a> {
    pub train: &'a [PreparedExample],
    pub dev: &'a [PreparedExample],
    /// Evaluated splits, in column order.
    pub datasets: &'a [(String, Vec<PreparedExample>)],
    /// Content hash identifying the corpus.
    pub data_id: &'a str,
    pub training: &'a TrainConfig,
}

pub struct MatrixOptions<'a> {
    pub baseline: &'a str,
    pub m: usize,
    pub kind: TTestKind,
    pub cache_dir: Option<&'a Path>,
    /// Also store each cell's checkpoint next to its cache entry.
    pub keep_checkpoints: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CachedCell {
    arm: String,
    seed: u64,
    accuracies: BTreeMap<String, f64>,
    report: RunReport,
}

pub struct MatrixOutcome {
    pub results: SeedResults,
    pub significance: Vec<SignificanceRow>,
    pub reports: Vec<RunReport>,
    /// Cells trained in this call (cache misses).
    pub trained_runs: usize,
}

/// Content hash of one cell: arm config, corpus id, training config and seed.
pub fn cell_key(arm: &Arm, data_id: &str, training: &TrainConfig, seed: u64) -> String {
    let training = TrainConfig {
        seed,
        ..training.clone()
    };
    let key = serde_json::json!({
        "arm": arm,
        "data": data_id,
        "training": training,
    });
    content_hash(key.to_string().as_bytes())
}

pub fn checkpoint_path(cache_dir: &Path, key: &str) -> std::path::PathBuf {
    cache_dir.join(format!("{key}.ckpt.json"))
}

/// Trains and evaluates every `(arm, seed)`, reusing cached cells.
pub fn experiment_matrix(
    arms: &[Arm],
    inputs: &MatrixInputs<'_>,
    seeds: &[u64],
    options: &MatrixOptions<'_>,
) -> Result<MatrixOutcome> {
    if arms.is_empty() || seeds.is_empty() || inputs.datasets.is_empty() {
        return Err(Error::InvalidArgument("matrix needs arms, seeds and datasets".into()));
    }
    let jobs: Vec<(&Arm, u64)> = arms.iter().flat_map(|a| seeds.iter().map(move |&s| (a, s))).collect();
    let cells = run_parallel(jobs, |(arm, seed)| -> Result<(CachedCell, bool)> {
        let key = cell_key(arm, inputs.data_id, inputs.training, seed);
        let cache_file = options.cache_dir.map(|d| d.join(format!("{key}.json")));
        if let Some(path) = &cache_file {
            let ckpt_ok = !options.keep_checkpoints || checkpoint_path(options.cache_dir.unwrap(), &key).exists();
            if path.exists() && ckpt_ok {
                return Ok((read_json(path)?, false));
            }
        }
        let cfg = TrainConfig {
            seed,
            ..inputs.training.clone()
        };
        let out = train::<f64>(inputs.train, inputs.dev, &arm.encoder, &arm.supervision, &cfg)?;
        let mut accuracies = BTreeMap::new();
        for (name, set) in inputs.datasets {
            accuracies.insert(name.clone(), evaluate_accuracy(&out.params, &arm.encoder, set)?);
        }
        let mut report = out.report;
        report.evaluations = accuracies.clone();
        let cell = CachedCell {
            arm: arm.name.clone(),
            seed,
            accuracies,
            report,
        };
        if let (Some(dir), Some(path)) = (options.cache_dir, &cache_file) {
            if options.keep_checkpoints {
                save_checkpoint(&checkpoint_path(dir, &key), &out.params, &arm.encoder)?;
            }
            write_json(path, &cell)?;
        }
        Ok((cell, true))
    })?;

    let mut results = SeedResults {
        arms: arms.iter().map(|a| a.name.clone()).collect(),
        datasets: inputs.datasets.iter().map(|(n, _)| n.clone()).collect(),
        cells: Vec::new(),
    };
    for dataset in &results.datasets {
        for (cell, _) in &cells {
            results.cells.push(SeedCell {
                arm: cell.arm.clone(),
                dataset: dataset.clone(),
                seed: cell.seed,
                accuracy: cell.accuracies[dataset],
            });
        }
    }
    let order = |name: &str| results.arms.iter().position(|a| a == name).unwrap_or(usize::MAX);
    let datasets = results.datasets.clone();
    let dpos = |name: &str| datasets.iter().position(|d| d == name).unwrap_or(usize::MAX);
    results.cells.sort_by_key(|x| (order(&x.arm), dpos(&x.dataset), x.seed));
    let significance = significance(&results, options.baseline, options.m, options.kind)?;
    Ok(MatrixOutcome {
        trained_runs: cells.iter().filter(|(_, fresh)| *fresh).count(),
        reports: cells.into_iter().map(|(c, _)| c.report).collect(),
        results,
        significance,
    })
}

/// Writes `seed_results.csv`, `significance.csv` and `summary.csv` under `dir`.
pub fn write_matrix_tables(dir: &Path, results: &SeedResults, rows: &[SignificanceRow]) -> Result<()> {
    write_atomic(&dir.join("seed_results.csv"), results.to_csv()?.as_bytes())?;
    write_atomic(&dir.join("significance.csv"), significance_csv(rows)?.as_bytes())?;
    write_atomic(&dir.join("summary.csv"), summary_csv(results, rows)?.as_bytes())
}
