//! Command-line front end. Every command reads one config file, applies flag
//! overrides, writes its artifacts under `--out` and finishes with a
//! `manifest.json` recording the config hash and artifact digests.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analyze::{breakdown, export_heatmap, CategoryLexicon};
use crate::config::{arm, ExperimentConfig};
use crate::corpus::{build_vocab, load_dataset, DataFormat, Vocabulary};
use crate::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::evalstats::{
    evaluate_accuracy, experiment_matrix, significance, write_matrix_tables, MatrixInputs, MatrixOptions, SeedResults,
};
use crate::explain::StopwordLexicon;
use crate::io::{content_hash, read_json, write_atomic, write_json};
use crate::rationale::{dump_jsonl, evaluate_rationales, score_examples, tune_threshold, TokenPrf};
use crate::supervise::{
    cells_to_csv, default_k_grid, greedy_head_selection, prepare, sweep_lambda, train, Experiment, PreparedExample,
    RunReport,
};
use crate::synth::generate;

#[derive(Parser, Debug)]
#[command(name = "attn-supervise", version, about = "Explanation-supervised attention for NLI classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides shared by every command. Each maps onto a config key.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training seed (`synth`: corpus seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed list `a,b,c`, or a count `N` meaning `0..N`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma-separated arm names.
    #[arg(long)]
    pub arms: Option<String>,
    /// Supervision weight (`sweep-lambda`: comma-separated grid).
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    /// Supervised heads, comma-separated.
    #[arg(long)]
    pub heads: Option<String>,
    #[arg(long, value_parser = ["freetext", "highlights", "combined", "shuffled", "none"])]
    pub target_mode: Option<String>,
    #[arg(long, value_parser = ["mse", "kl"])]
    pub loss: Option<String>,
    /// Supervised layer index, or `last`.
    #[arg(long)]
    pub layer: Option<String>,
    /// Comma-separated rationale thresholds.
    #[arg(long)]
    pub threshold_grid: Option<String>,
    /// Seed for shuffled targets (default: the training seed).
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Any other config key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the planted-rationale corpus.
    Synth(Common),
    /// Train one model.
    Train(Common),
    /// Greedy head selection.
    SelectHeads(Common),
    /// Sweep the supervision weight.
    SweepLambda(Common),
    /// Accuracy of a checkpoint on every configured split.
    Eval(WithCheckpoint),
    /// Tune the rationale threshold on dev and score token-level P/R/F1.
    Rationale(WithCheckpoint),
    /// Attention mass tables and a heatmap.
    Analyze(AnalyzeArgs),
    /// Arms × seeds experiment with significance tests.
    Matrix(Common),
    /// Regenerate matrix tables from one or more output directories.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct WithCheckpoint {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train`; `vocab.tsv` is read from its directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Optional second checkpoint drawn next to the first in the heatmap.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Dev example rendered in the heatmap.
    #[arg(long, default_value_t = 0)]
    pub example: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Matrix output directories.
    #[arg(long = "from", required = true)]
    pub from: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command run. Timestamps live only here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<Artifact>,
    pub created_unix: u64,
    pub wall_clock_secs: f64,
}

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.cfg";

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        let path = self.dir.join(name);
        write_json(&path, value)?;
        self.written.push(path);
        Ok(())
    }

    fn record(&mut self, name: &str) {
        self.written.push(self.dir.join(name));
    }

    fn finish(self, command: &str, cfg: &ExperimentConfig, seeds: Vec<u64>, start: Instant) -> Result<()> {
        let mut artifacts = Vec::new();
        for p in &self.written {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            artifacts.push(Artifact {
                path: p
                    .strip_prefix(&self.dir)
                    .unwrap_or(p)
                    .display()
                    .to_string(),
                sha256: content_hash(&bytes),
            });
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: cfg.hash(),
            seeds,
            artifacts,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_secs: start.elapsed().as_secs_f64(),
        };
        write_json(&self.dir.join(MANIFEST), &manifest)
    }
}

fn load_config(common: &Common, command: &str) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        let key = if command == "synth" { "synth.seed" } else { "seed" };
        cfg.set(key, &s.to_string())?;
    }
    let sweep = command == "sweep-lambda";
    let pairs = [
        ("seeds", &common.seeds),
        ("arms", &common.arms),
        (if sweep { "lambda_grid" } else { "lambda" }, &common.lambda),
        ("heads", &common.heads),
        ("target_mode", &common.target_mode),
        ("loss", &common.loss),
        ("layer", &common.layer),
        ("threshold_grid", &common.threshold_grid),
        ("shuffle_seed", &common.shuffle_seed.map(|s| s.to_string())),
    ];
    for (key, value) in pairs {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
            key: kv.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

struct Data {
    vocab: Vocabulary,
    encoder: EncoderConfig,
    train: Vec<PreparedExample>,
    dev: Vec<PreparedExample>,
    evals: Vec<(String, Vec<PreparedExample>)>,
    id: String,
}

fn stopwords(cfg: &ExperimentConfig) -> Result<StopwordLexicon> {
    match &cfg.stopwords {
        Some(p) => StopwordLexicon::load(p),
        None => Ok(StopwordLexicon::english()),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads every configured split. The vocabulary is built from the training
/// split unless one is supplied (evaluation of a saved checkpoint).
fn load_data(cfg: &ExperimentConfig, vocab: Option<Vocabulary>, need_train: bool) -> Result<Data> {
    let mut required = vec!["dev"];
    if need_train || vocab.is_none() {
        required.push("train");
    }
    cfg.validate_paths(&required)?;
    let sw = stopwords(cfg)?;
    let load = |p: &PathBuf| load_dataset(p, DataFormat::from_path(p));
    let train_raw = match &cfg.train {
        Some(p) if need_train || vocab.is_none() => load(p)?,
        _ => Vec::new(),
    };
    let vocab = match vocab {
        Some(v) => v,
        None => build_vocab(&train_raw, cfg.min_freq)?,
    };
    let mut encoder = cfg.encoder.clone();
    encoder.vocab_size = vocab.len();
    let n = encoder.n_max;
    let mut id_src = format!("min_freq={}\nn_max={n}\n", cfg.min_freq).into_bytes();
    id_src.extend(sw.to_text().as_bytes());
    let mut hashed = |p: &Option<PathBuf>| -> Result<()> {
        if let Some(p) = p {
            id_src.extend(content_hash(&read(p)?).as_bytes());
        }
        id_src.push(b'\n');
        Ok(())
    };
    for p in [&cfg.train, &cfg.dev, &cfg.test, &cfg.ood] {
        hashed(p)?;
    }
    let train = prepare(&train_raw, &vocab, n, &sw)?;
    let dev = prepare(&load(cfg.dev.as_ref().expect("validated"))?, &vocab, n, &sw)?;
    let mut evals = vec![("dev".to_string(), dev.clone())];
    for (name, p) in [("test", &cfg.test), ("ood", &cfg.ood)] {
        if let Some(p) = p {
            evals.push((name.to_string(), prepare(&load(p)?, &vocab, n, &sw)?));
        }
    }
    Ok(Data {
        vocab,
        encoder,
        train,
        dev,
        evals,
        id: content_hash(&id_src),
    })
}

fn load_model(checkpoint: &Path) -> Result<(EncoderParams<f64>, EncoderConfig, Vocabulary)> {
    let (params, enc) = load_checkpoint::<f64>(checkpoint)?;
    let vocab_path = checkpoint.with_file_name("vocab.tsv");
    let vocab = Vocabulary::load(&vocab_path)?;
    if vocab.len() != enc.vocab_size {
        return Err(Error::Checkpoint(format!(
            "{} has {} entries but the checkpoint expects {}",
            vocab_path.display(),
            vocab.len(),
            enc.vocab_size
        )));
    }
    Ok((params, enc, vocab))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            std::process::exit(0)
        }
        _ => Error::InvalidArgument(e.to_string().trim_start_matches("error: ").trim_end().to_string()),
    })?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<()> {
    let start = Instant::now();
    match command {
        Command::Synth(c) => cmd_synth(&load_config(&c, "synth")?, start),
        Command::Train(c) => cmd_train(&load_config(&c, "train")?, start),
        Command::SelectHeads(c) => cmd_select_heads(&load_config(&c, "select-heads")?, start),
        Command::SweepLambda(c) => cmd_sweep(&load_config(&c, "sweep-lambda")?, start),
        Command::Eval(a) => cmd_eval(&load_config(&a.common, "eval")?, &a.checkpoint, start),
        Command::Rationale(a) => cmd_rationale(&load_config(&a.common, "rationale")?, &a.checkpoint, start),
        Command::Analyze(a) => cmd_analyze(&load_config(&a.common, "analyze")?, &a, start),
        Command::Matrix(c) => cmd_matrix(&load_config(&c, "matrix")?, start),
        Command::Report(a) => cmd_report(&a, start),
    }
}

fn cmd_synth(cfg: &ExperimentConfig, start: Instant) -> Result<()> {
    let corpus = generate(&cfg.synth)?;
    corpus.write(&cfg.out, &cfg.synth)?;
    let mut out = Outputs::new(&cfg.out);
    for name in ["train.jsonl", "dev.jsonl", "test.jsonl", "ood.jsonl", "lexicon.tsv"] {
        out.record(name);
    }
    out.bytes(CONFIG_COPY, cfg.canonical().as_bytes())?;
    out.finish("synth", cfg, vec![cfg.synth.seed], start)
}

fn cmd_train(cfg: &ExperimentConfig, start: Instant) -> Result<()> {
    let data = load_data(cfg, None, true)?;
    let outcome = train::<f64>(&data.train, &data.dev, &data.encoder, &cfg.supervision, &cfg.training)?;
    let mut report = outcome.report;
    for (name, set) in &data.evals {
        report
            .evaluations
            .insert(name.clone(), evaluate_accuracy(&outcome.params, &data.encoder, set)?);
    }
    let mut out = Outputs::new(&cfg.out);
    save_checkpoint(&cfg.out.join("checkpoint.json"), &outcome.params, &data.encoder)?;
    out.record("checkpoint.json");
    out.bytes("vocab.tsv", data.vocab.to_text().as_bytes())?;
    out.json("report.json", &report)?;
    out.bytes(CONFIG_COPY, cfg.canonical().as_bytes())?;
    println!(
        "best epoch {} dev accuracy {:.4}",
        report.best_epoch, report.best_dev_accuracy
    );
    out.finish("train", cfg, vec![cfg.training.seed], start)
}

fn experiment<'a>(cfg: &'a ExperimentConfig, data: &'a Data) -> Experiment<'a> {
    Experiment {
        train: &data.train,
        dev: &data.dev,
        encoder: &data.encoder,
        supervision: &cfg.supervision,
        training: &cfg.training,
    }
}

fn cmd_select_heads(cfg: &ExperimentConfig, start: Instant) -> Result<()> {
    let data = load_data(cfg, None, true)?;
    let k_grid = if cfg.k_grid.is_empty() {
        default_k_grid(data.encoder.num_heads)
    } else {
        cfg.k_grid.clone()
    };
    let result = greedy_head_selection(&experiment(cfg, &data), &k_grid, &cfg.seeds)?;
    let mut out = Outputs::new(&cfg.out);
    out.json("head_selection.json", &result)?;
    out.bytes("phase1.csv", cells_to_csv(&result.phase1)?.as_bytes())?;
    out.bytes("phase2.csv", cells_to_csv(&result.phase2)?.as_bytes())?;
    out.bytes(CONFIG_COPY, cfg.canonical().as_bytes())?;
    println!("ranking {:?}; chosen K = {} heads {:?}", result.ranking, result.chosen_k, result.chosen_heads);
    out.finish("select-heads", cfg, cfg.seeds.clone(), start)
}

fn cmd_sweep(cfg: &ExperimentConfig, start: Instant) -> Result<()> {
    let data = load_data(cfg, None, true)?;
    let sweep = sweep_lambda(&experiment(cfg, &data), &cfg.lambda_grid, &cfg.seeds)?;
    let mut out = Outputs::new(&cfg.out);
    out.json("lambda_sweep.json", &sweep)?;
    out.bytes("lambda_sweep.csv", cells_to_csv(&sweep.cells)?.as_bytes())?;
    out.bytes(CONFIG_COPY, cfg.canonical().as_bytes())?;
    println!("best lambda {}", sweep.best_lambda);
    out.finish("sweep-lambda", cfg, cfg.seeds.clone(), start)
}

fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, start: Instant) -> Result<()> {
    let (params, enc, vocab) = load_model(checkpoint)?;
    let cfg = ExperimentConfig {
        encoder: enc.clone(),
        ..cfg.clone()
    };
    let data = load_data(&cfg, Some(vocab), false)?;
    let mut acc = std::collections::BTreeMap::new();
    for (name, set) in &data.evals {
        acc.insert(name.clone(), evaluate_accuracy(&params, &enc, set)?);
    }
    let mut out = Outputs::new(&cfg.out);
    out.json("eval.json", &acc)?;
    out.bytes(CONFIG_COPY, cfg.canonical().as_bytes())?;
    for (k, v) in &acc {
        println!("{k}\t{v:.4}");
    }
    out.finish("eval", &cfg, vec![], start)
}

#[derive(Serialize)]
struct RationaleSummary {
    threshold: f64,
    dev: TokenPrf,
    evaluated_split: String,
    evaluated: TokenPrf,
}

fn cmd_rationale(cfg: &ExperimentConfig, checkpoint: &Path, start: Instant) -> Result<()> {
    let (params, enc, vocab) = load_model(checkpoint)?;
    let report_path = checkpoint.with_file_name("report.json");
    let mut report: Option<RunReport> = report_path.exists().then(|| read_json(&report_path)).transpose()?;
    let sup = report.as_ref().map_or(cfg.supervision.clone(), |r| r.supervision.clone());
    let cfg = ExperimentConfig {
        encoder: enc.clone(),
        ..cfg.clone()
    };
    let data = load_data(&cfg, Some(vocab), false)?;
    let dev_scored = score_examples(&params, &enc, &data.dev, &sup)?;
    let threshold = tune_threshold(&dev_scored, &cfg.threshold_grid)?;
    let (name, set) = data
        .evals
        .iter()
        .find(|(n, _)| n == "test")
        .unwrap_or(&data.evals[0]);
    let scored = score_examples(&params, &enc, set, &sup)?;
    let summary = RationaleSummary {
        threshold,
        dev: evaluate_rationales(&dev_scored, threshold),
        evaluated_split: name.clone(),
        evaluated: evaluate_rationales(&scored, threshold),
    };
    let mut out = Outputs::new(&cfg.out);
    dump_jsonl(&cfg.out.join("rationale_dump.jsonl"), &scored, threshold)?;
    out.record("rationale_dump.jsonl");
    out.json("rationale.json", &summary)?;
    if let Some(r) = report.as_mut() {
        r.rationale_threshold = Some(threshold);
        out.json("report.json", r)?;
    }
    out.bytes(CONFIG_COPY, cfg.canonical().as_bytes())?;
    println!(
        "threshold {threshold}: premise F1 {:.4}, hypothesis F1 {:.4} ({name})",
        summary.evaluated.premise.f1, summary.evaluated.hypothesis.f1
    );
    out.finish("rationale", &cfg, vec![], start)
}

fn cmd_analyze(cfg: &ExperimentConfig, args: &AnalyzeArgs, start: Instant) -> Result<()> {
    let (params, enc, vocab) = load_model(&args.checkpoint)?;
    let report_path = args.checkpoint.with_file_name("report.json");
    let sup = if report_path.exists() {
        read_json::<RunReport>(&report_path)?.supervision
    } else {
        cfg.supervision.clone()
    };
    let cfg = ExperimentConfig {
        encoder: enc.clone(),
        ..cfg.clone()
    };
    let data = load_data(&cfg, Some(vocab), false)?;
    let lexicon = match &cfg.lexicon {
        Some(p) => CategoryLexicon::load(p)?,
        None => CategoryLexicon::default(),
    };
    let layer = sup.layer_index(&enc);
    let b = breakdown(&params, &enc, &data.dev, &lexicon, layer, None)?;
    let mut out = Outputs::new(&cfg.out);
    out.json("breakdown.json", &b)?;
    out.bytes("segments.csv", b.segments_csv()?.as_bytes())?;
    out.bytes("categories.csv", b.categories_csv()?.as_bytes())?;
    out.bytes("most_attended.csv", b.most_attended_csv()?.as_bytes())?;

    let ex = data.dev.get(args.example).ok_or_else(|| {
        Error::InvalidArgument(format!("example {} out of range ({} dev examples)", args.example, data.dev.len()))
    })?;
    let tokens: Vec<String> = ex.seq.tokens[..ex.seq.valid_length]
        .iter()
        .map(|t| t.surface.clone())
        .collect();
    let mut panels = Vec::new();
    if let Some(base) = &args.baseline {
        let (bp, benc, _) = load_model(base)?;
        panels.push(("baseline".to_string(), crate::rationale::score_positions(&bp, &benc, &ex.seq, &sup)?));
    }
    panels.push(("model".to_string(), crate::rationale::score_positions(&params, &enc, &ex.seq, &sup)?));
    export_heatmap(&cfg.out.join("heatmap.html"), &tokens, &panels)?;
    out.record("heatmap.html");
    out.bytes(CONFIG_COPY, cfg.canonical().as_bytes())?;
    out.finish("analyze", &cfg, vec![], start)
}

fn cmd_matrix(cfg: &ExperimentConfig, start: Instant) -> Result<()> {
    let data = load_data(cfg, None, true)?;
    let arms = cfg
        .arms
        .iter()
        .map(|name| {
            let mut a = arm(name, cfg)?;
            a.encoder.vocab_size = data.vocab.len();
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;
    let cache = cfg.out.join("cache");
    let outcome = experiment_matrix(
        &arms,
        &MatrixInputs {
            train: &data.train,
            dev: &data.dev,
            datasets: &data.evals,
            data_id: &data.id,
            training: &cfg.training,
        },
        &cfg.seeds,
        &MatrixOptions {
            baseline: &cfg.baseline_arm,
            m: cfg.bonferroni_m,
            kind: cfg.ttest,
            cache_dir: Some(&cache),
            keep_checkpoints: cfg.keep_checkpoints,
        },
    )?;
    write_matrix_tables(&cfg.out, &outcome.results, &outcome.significance)?;
    let mut out = Outputs::new(&cfg.out);
    for name in ["seed_results.csv", "significance.csv", "summary.csv"] {
        out.record(name);
    }
    out.bytes(CONFIG_COPY, cfg.canonical().as_bytes())?;
    print!("{}", std::fs::read_to_string(cfg.out.join("summary.csv")).map_err(|e| Error::io(&cfg.out, e))?);
    println!("trained {} new runs", outcome.trained_runs);
    out.finish("matrix", cfg, cfg.seeds.clone(), start)
}

fn cmd_report(args: &ReportArgs, start: Instant) -> Result<()> {
    let mut hashes = BTreeSet::new();
    let mut merged = SeedResults::default();
    for dir in &args.from {
        let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
        if manifest.command != "matrix" {
            return Err(Error::InvalidArgument(format!(
                "{} holds `{}` output, not a matrix",
                dir.display(),
                manifest.command
            )));
        }
        hashes.insert(manifest.config_hash);
        let path = dir.join("seed_results.csv");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let part = SeedResults::from_csv(&text)?;
        for a in part.arms {
            if !merged.arms.contains(&a) {
                merged.arms.push(a);
            }
        }
        for d in part.datasets {
            if !merged.datasets.contains(&d) {
                merged.datasets.push(d);
            }
        }
        for c in part.cells {
            if !merged
                .cells
                .iter()
                .any(|m| m.arm == c.arm && m.dataset == c.dataset && m.seed == c.seed)
            {
                merged.cells.push(c);
            }
        }
    }
    if hashes.len() > 1 {
        return Err(Error::InvalidArgument(format!(
            "refusing to merge outputs of different configs: {}",
            hashes.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let cfg = ExperimentConfig::load(&args.from[0].join(CONFIG_COPY))?;
    let rows = significance(&merged, &cfg.baseline_arm, cfg.bonferroni_m, cfg.ttest)?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.from[0].join("report"));
    write_matrix_tables(&out_dir, &merged, &rows)?;
    let mut out = Outputs::new(&out_dir);
    for name in ["seed_results.csv", "significance.csv", "summary.csv"] {
        out.record(name);
    }
    out.bytes(CONFIG_COPY, cfg.canonical().as_bytes())?;
    out.finish("report", &cfg, cfg.seeds.clone(), start)
}
