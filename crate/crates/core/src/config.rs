//! Plain-text experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Command-line flags
//! are applied through [`ExperimentConfig::set`] after the file, so both paths
//! share the same validation and error messages.
//!
//! | key | value |
//! |-----|-------|
//! | `train`, `dev`, `test`, `ood` | dataset paths (JSONL or TSV) |
//! | `stopwords`, `lexicon` | optional word lists |
//! | `out` | output directory |
//! | `min_freq` | vocabulary frequency cut-off |
//! | `num_layers`, `num_heads`, `d_model`, `ffn_dim`, `n_max` | encoder shape |
//! | `variant` | `existing_attention` or `extra_layer` |
//! | `extra_hidden` | hidden width of the pooling layer |
//! | `ablate` | value paths to cut, `layer:head,...` |
//! | `lambda`, `heads`, `loss`, `target_mode`, `layer`, `shuffle_seed` | supervision |
//! | `epochs`, `batch_size`, `learning_rate`, `beta1`, `beta2`, `adam_eps`, `patience` | training |
//! | `seeds` | comma-separated list, or `N` for `0..N` |
//! | `arms` | comma-separated arm names (see [`arm`]) |
//! | `baseline_arm`, `bonferroni_m`, `ttest` | significance testing |
//! | `keep_checkpoints` | `true` keeps one checkpoint per matrix cell |
//! | `threshold_grid`, `lambda_grid`, `k_grid` | comma-separated grids |
//! | `synth.*` | fields of the synthetic corpus spec |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::encoder::{EncoderConfig, HeadRef, Variant};
use crate::error::{Error, Result};
use crate::evalstats::{Arm, TTestKind};
use crate::io::content_hash;
use crate::rationale::default_threshold_grid;
use crate::supervise::{default_lambda_grid, LossKind, SupervisionConfig, TargetMode, TrainConfig};
use crate::synth::SyntheticSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub ood: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub out: PathBuf,
    pub min_freq: usize,
    pub encoder: EncoderConfig,
    pub supervision: SupervisionConfig,
    pub training: TrainConfig,
    pub seeds: Vec<u64>,
    pub arms: Vec<String>,
    pub baseline_arm: String,
    pub bonferroni_m: usize,
    pub keep_checkpoints: bool,
    pub ttest: TTestKind,
    pub threshold_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    /// Empty means `{1,3,6,9,12} ∩ [1, H]`.
    pub k_grid: Vec<usize>,
    pub synth: SyntheticSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut encoder = EncoderConfig::desk(0);
        encoder.vocab_size = 0;
        Self {
            train: None,
            dev: None,
            test: None,
            ood: None,
            stopwords: None,
            lexicon: None,
            out: PathBuf::from("out"),
            min_freq: 1,
            encoder,
            supervision: SupervisionConfig {
                heads: (0..4).collect(),
                ..SupervisionConfig::default()
            },
            training: TrainConfig::default(),
            seeds: (0..10).collect(),
            arms: vec!["baseline".into(), "supervised".into()],
            baseline_arm: "baseline".into(),
            bonferroni_m: 1,
            keep_checkpoints: false,
            ttest: TTestKind::Paired,
            threshold_grid: default_threshold_grid(),
            lambda_grid: default_lambda_grid(),
            k_grid: Vec::new(),
            synth: SyntheticSpec::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config {
        key: key.to_string(),
        message: format!("cannot parse {value:?}"),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_enum<T: std::str::FromStr<Err = String>>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|message| Error::Config {
        key: key.to_string(),
        message,
    })
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    match parse_list::<usize>(key, value)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(Error::Config {
            key: key.into(),
            message: "expected `lo,hi`".into(),
        }),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or(String::new(), |p| p.display().to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                message: format!("line {}: expected `key = value`", i + 1),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative data paths are resolved against the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.train,
            &mut cfg.dev,
            &mut cfg.test,
            &mut cfg.ood,
            &mut cfg.stopwords,
            &mut cfg.lexicon,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "train" => self.train = path(),
            "dev" => self.dev = path(),
            "test" => self.test = path(),
            "ood" => self.ood = path(),
            "stopwords" => self.stopwords = path(),
            "lexicon" => self.lexicon = path(),
            "out" => self.out = PathBuf::from(value),
            "min_freq" => self.min_freq = parse_num(key, value)?,
            "num_layers" => self.encoder.num_layers = parse_num(key, value)?,
            "num_heads" => self.encoder.num_heads = parse_num(key, value)?,
            "d_model" => self.encoder.d_model = parse_num(key, value)?,
            "ffn_dim" => self.encoder.ffn_dim = parse_num(key, value)?,
            "n_max" => self.encoder.n_max = parse_num(key, value)?,
            "extra_hidden" => self.encoder.extra_hidden = parse_num(key, value)?,
            "variant" => {
                self.encoder.variant = match value {
                    "existing_attention" => Variant::ExistingAttention,
                    "extra_layer" => Variant::ExtraLayer,
                    _ => {
                        return Err(Error::Config {
                            key: key.into(),
                            message: format!("unknown variant {value:?}"),
                        })
                    }
                }
            }
            "ablate" => {
                self.encoder.ablated_value_heads = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        let (l, h) = s.split_once(':').ok_or_else(|| Error::Config {
                            key: key.into(),
                            message: format!("expected layer:head, got {s:?}"),
                        })?;
                        Ok(HeadRef {
                            layer: parse_num(key, l)?,
                            head: parse_num(key, h)?,
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "lambda" => self.supervision.lambda = parse_num(key, value)?,
            "heads" => self.supervision.heads = parse_list(key, value)?,
            "loss" => self.supervision.loss_kind = parse_enum::<LossKind>(key, value)?,
            "target_mode" => self.supervision.target_mode = parse_enum::<TargetMode>(key, value)?,
            "layer" => {
                self.supervision.layer = if value == "last" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "shuffle_seed" => {
                self.supervision.shuffle_seed = if value == "seed" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "epochs" => self.training.epochs = parse_num(key, value)?,
            "batch_size" => self.training.batch_size = parse_num(key, value)?,
            "learning_rate" => self.training.learning_rate = parse_num(key, value)?,
            "beta1" => self.training.beta1 = parse_num(key, value)?,
            "beta2" => self.training.beta2 = parse_num(key, value)?,
            "adam_eps" => self.training.adam_eps = parse_num(key, value)?,
            "patience" => self.training.patience = parse_num(key, value)?,
            "seed" => self.training.seed = parse_num(key, value)?,
            "seeds" => {
                self.seeds = if value.contains(',') {
                    parse_list(key, value)?
                } else {
                    (0..parse_num::<u64>(key, value)?).collect()
                }
            }
            "arms" => {
                self.arms = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "baseline_arm" => self.baseline_arm = value.to_string(),
            "bonferroni_m" => self.bonferroni_m = parse_num(key, value)?,
            "keep_checkpoints" => {
                self.keep_checkpoints = value.parse().map_err(|_| Error::Config {
                    key: key.into(),
                    message: format!("expected true or false, got {value:?}"),
                })?
            }
            "ttest" => {
                self.ttest = match value {
                    "paired" => TTestKind::Paired,
                    "unpaired" => TTestKind::Unpaired,
                    _ => {
                        return Err(Error::Config {
                            key: key.into(),
                            message: format!("unknown test {value:?}"),
                        })
                    }
                }
            }
            "threshold_grid" => self.threshold_grid = parse_list(key, value)?,
            "lambda_grid" => self.lambda_grid = parse_list(key, value)?,
            "k_grid" => self.k_grid = parse_list(key, value)?,
            "synth.seed" => self.synth.seed = parse_num(key, value)?,
            "synth.filler_vocab" => self.synth.filler_vocab = parse_num(key, value)?,
            "synth.premise_len" => self.synth.premise_len = parse_range(key, value)?,
            "synth.hypothesis_len" => self.synth.hypothesis_len = parse_range(key, value)?,
            "synth.noise_rate" => self.synth.noise_rate = parse_num(key, value)?,
            "synth.shortcut_rate" => self.synth.shortcut_rate = parse_num(key, value)?,
            "synth.hypothesis_class_weights" => match parse_list::<f64>(key, value)?.as_slice() {
                [a, b, c] => self.synth.hypothesis_class_weights = [*a, *b, *c],
                _ => {
                    return Err(Error::Config {
                        key: key.into(),
                        message: "expected three weights".into(),
                    })
                }
            },
            "synth.train_size" => self.synth.train_size = parse_num(key, value)?,
            "synth.dev_size" => self.synth.dev_size = parse_num(key, value)?,
            "synth.test_size" => self.synth.test_size = parse_num(key, value)?,
            "synth.ood_size" => self.synth.ood_size = parse_num(key, value)?,
            k if k.starts_with("synth.markers.") => {
                let c: usize = parse_num(key, &k["synth.markers.".len()..])?;
                if c >= 3 {
                    return Err(Error::Config {
                        key: key.into(),
                        message: "class index must be 0, 1 or 2".into(),
                    });
                }
                self.synth.markers[c] = value.split(',').map(|s| s.trim().to_string()).collect();
            }
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Every field as `key = value`, sorted by key.
    pub fn canonical(&self) -> String {
        let e = &self.encoder;
        let s = &self.supervision;
        let t = &self.training;
        let y = &self.synth;
        let mut m: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("train", path_str(&self.train));
        put("dev", path_str(&self.dev));
        put("test", path_str(&self.test));
        put("ood", path_str(&self.ood));
        put("stopwords", path_str(&self.stopwords));
        put("lexicon", path_str(&self.lexicon));
        put("min_freq", self.min_freq.to_string());
        put("num_layers", e.num_layers.to_string());
        put("num_heads", e.num_heads.to_string());
        put("d_model", e.d_model.to_string());
        put("ffn_dim", e.ffn_dim.to_string());
        put("n_max", e.n_max.to_string());
        put("extra_hidden", e.extra_hidden.to_string());
        put(
            "variant",
            match e.variant {
                Variant::ExistingAttention => "existing_attention",
                Variant::ExtraLayer => "extra_layer",
            }
            .into(),
        );
        put(
            "ablate",
            e.ablated_value_heads
                .iter()
                .map(|h| format!("{}:{}", h.layer, h.head))
                .collect::<Vec<_>>()
                .join(","),
        );
        put("lambda", s.lambda.to_string());
        put("heads", join(&s.heads));
        put(
            "loss",
            match s.loss_kind {
                LossKind::Mse => "mse",
                LossKind::Kl => "kl",
            }
            .into(),
        );
        put("target_mode", s.target_mode.as_str().into());
        put("layer", s.layer.map_or("last".into(), |l| l.to_string()));
        put("shuffle_seed", s.shuffle_seed.map_or("seed".into(), |v| v.to_string()));
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("beta1", t.beta1.to_string());
        put("beta2", t.beta2.to_string());
        put("adam_eps", t.adam_eps.to_string());
        put("patience", t.patience.to_string());
        put("seed", t.seed.to_string());
        put("seeds", join(&self.seeds));
        put("arms", self.arms.join(","));
        put("baseline_arm", self.baseline_arm.clone());
        put("bonferroni_m", self.bonferroni_m.to_string());
        put("keep_checkpoints", self.keep_checkpoints.to_string());
        put(
            "ttest",
            match self.ttest {
                TTestKind::Paired => "paired",
                TTestKind::Unpaired => "unpaired",
            }
            .into(),
        );
        put("threshold_grid", join(&self.threshold_grid));
        put("lambda_grid", join(&self.lambda_grid));
        put("k_grid", join(&self.k_grid));
        put("synth.seed", y.seed.to_string());
        put("synth.filler_vocab", y.filler_vocab.to_string());
        put("synth.premise_len", format!("{},{}", y.premise_len.0, y.premise_len.1));
        put("synth.hypothesis_len", format!("{},{}", y.hypothesis_len.0, y.hypothesis_len.1));
        put("synth.noise_rate", y.noise_rate.to_string());
        put("synth.shortcut_rate", y.shortcut_rate.to_string());
        put("synth.hypothesis_class_weights", join(&y.hypothesis_class_weights));
        put("synth.train_size", y.train_size.to_string());
        put("synth.dev_size", y.dev_size.to_string());
        put("synth.test_size", y.test_size.to_string());
        put("synth.ood_size", y.ood_size.to_string());
        for (c, set) in y.markers.iter().enumerate() {
            put(&format!("synth.markers.{c}"), set.join(","));
        }
        m.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Content hash of [`Self::canonical`]; the output directory is excluded.
    pub fn hash(&self) -> String {
        content_hash(self.canonical().as_bytes())
    }

    /// Checks that referenced files exist and the numeric settings are sane.
    pub fn validate_paths(&self, required: &[&str]) -> Result<()> {
        for &key in required {
            let p = match key {
                "train" => &self.train,
                "dev" => &self.dev,
                "test" => &self.test,
                "ood" => &self.ood,
                "lexicon" => &self.lexicon,
                _ => &None,
            };
            match p {
                None => {
                    return Err(Error::Config {
                        key: key.into(),
                        message: "required for this command".into(),
                    })
                }
                Some(p) if !p.exists() => {
                    return Err(Error::Config {
                        key: key.into(),
                        message: format!("{} does not exist", p.display()),
                    })
                }
                _ => {}
            }
        }
        for (key, p) in [("test", &self.test), ("ood", &self.ood), ("stopwords", &self.stopwords), ("lexicon", &self.lexicon)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config {
                        key: key.into(),
                        message: format!("{} does not exist", p.display()),
                    });
                }
            }
        }
        self.training.validate().map_err(|e| Error::Config {
            key: "training".into(),
            message: e.to_string(),
        })?;
        if self.seeds.is_empty() {
            return Err(Error::Config {
                key: "seeds".into(),
                message: "no seeds".into(),
            });
        }
        Ok(())
    }
}

/// Known arm names:
///
/// * `baseline`: no attention supervision
/// * `supervised`: the configured supervision
/// * `shuffled`, `freetext`, `highlights`, `combined`: the configured
///   supervision with that target mode
/// * `kl-variant`: the configured supervision with the KL loss
/// * `extra-layer`: the configured supervision on the extra pooling layer
pub fn arm(name: &str, cfg: &ExperimentConfig) -> Result<Arm> {
    let mut encoder = cfg.encoder.clone();
    let mut supervision = cfg.supervision.clone();
    match name {
        "baseline" => supervision.target_mode = TargetMode::None,
        "supervised" => {}
        "shuffled" => supervision.target_mode = TargetMode::Shuffled,
        "freetext" => supervision.target_mode = TargetMode::Freetext,
        "highlights" => supervision.target_mode = TargetMode::Highlights,
        "combined" => supervision.target_mode = TargetMode::Combined,
        "kl-variant" => supervision.loss_kind = LossKind::Kl,
        "extra-layer" => encoder.variant = Variant::ExtraLayer,
        _ => {
            return Err(Error::Config {
                key: "arms".into(),
                message: format!("unknown arm {name:?}"),
            })
        }
    }
    Ok(Arm {
        name: name.to_string(),
        encoder,
        supervision,
    })
}
