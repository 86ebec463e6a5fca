//! Flat `key = value` run configuration with dotted section prefixes.
//!
//! ```text
//! # comments and blank lines are ignored
//! data.items = items.csv
//! model.d_a = 16
//! train.epochs = 20
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use diadem::dataset::featurize::FeatureMode;
use diadem::dataset::split::{SplitMode, SplitSpec};
use diadem::dataset::Corpus;
use diadem::metrics::DEFAULT_BINS;
use diadem::network::{Activation, Fusion, ModelConfig};
use diadem::objective::LossWeights;
use diadem::training::{Optimizer, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("cannot read config {path}: {message}")]
    Unreadable { path: String, message: String },
}

impl ConfigError {
    fn field(path: &str, message: impl Into<String>) -> Self {
        ConfigError::Field {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturizerKind {
    Precomputed,
    HashedBow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub items: PathBuf,
    pub annotators: PathBuf,
    pub annotations: PathBuf,
    /// Class count; inferred from the labels when absent.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub d_a: usize,
    pub d_i: usize,
    pub d_int: usize,
    pub d_p: usize,
    pub activation: Activation,
    pub fusion: Fusion,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSection,
    pub out: PathBuf,
    pub featurizer: FeaturizerKind,
    pub featurizer_dim: usize,
    pub model: ModelSection,
    pub train: TrainConfig,
    /// `None` trains and evaluates on the whole corpus.
    pub split: Option<(SplitMode, f64)>,
    pub n_bins: usize,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "data.items",
    "data.annotators",
    "data.annotations",
    "data.k",
    "out",
    "featurizer.mode",
    "featurizer.dim",
    "model.d_a",
    "model.d_i",
    "model.d_int",
    "model.d_p",
    "model.activation",
    "model.fusion",
    "model.dropout",
    "train.epochs",
    "train.items_per_batch",
    "train.lr",
    "train.optimizer",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.gamma_i",
    "train.gamma_a",
    "train.lambda_dis",
    "train.l1",
    "train.l2",
    "train.grad_check",
    "train.dis_surrogate",
    "split.mode",
    "split.test_fraction",
    "metrics.n_bins",
    "seed",
];

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::field(key, "unknown key"));
        }
        if map
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(ConfigError::field(key, "set more than once"));
        }
    }
    Ok(map)
}

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| ConfigError::field(key, format!("cannot parse {v:?}: {e}"))),
        }
    }

    fn path(&self, key: &str, base: &Path) -> Result<PathBuf, ConfigError> {
        let v = self
            .map
            .get(key)
            .ok_or_else(|| ConfigError::field(key, "required"))?;
        Ok(resolve(base, v))
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates; every missing key takes its default.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let f = Fields {
            map: parse_pairs(text)?,
        };
        let data = DataSection {
            items: f.path("data.items", base)?,
            annotators: f.path("data.annotators", base)?,
            annotations: f.path("data.annotations", base)?,
            k: match f.map.get("data.k") {
                None => None,
                Some(_) => Some(f.get("data.k", 0usize)?),
            },
        };
        let out = resolve(base, f.map.get("out").map_or("out", String::as_str));
        let featurizer = match f.map.get("featurizer.mode").map(String::as_str) {
            None | Some("precomputed") => FeaturizerKind::Precomputed,
            Some("hashed_bow") => FeaturizerKind::HashedBow,
            Some(other) => {
                return Err(ConfigError::field(
                    "featurizer.mode",
                    format!("expected precomputed or hashed_bow, found {other:?}"),
                ))
            }
        };
        let model = ModelSection {
            d_a: f.get("model.d_a", 16)?,
            d_i: f.get("model.d_i", 16)?,
            d_int: f.get("model.d_int", 16)?,
            d_p: f.get("model.d_p", 32)?,
            activation: f.get("model.activation", Activation::Relu)?,
            fusion: f.get("model.fusion", Fusion::Concat)?,
            dropout: f.get("model.dropout", 0.0)?,
        };
        let defaults = TrainConfig::default();
        let w = LossWeights::default();
        let optimizer = match f.map.get("train.optimizer").map(String::as_str) {
            None | Some("adam") => Optimizer::Adam {
                beta1: f.get("train.beta1", 0.9)?,
                beta2: f.get("train.beta2", 0.999)?,
                eps: f.get("train.eps", 1e-8)?,
            },
            Some("sgd") => Optimizer::Sgd,
            Some(other) => {
                return Err(ConfigError::field(
                    "train.optimizer",
                    format!("expected adam or sgd, found {other:?}"),
                ))
            }
        };
        let seed = f.get("seed", 0u64)?;
        let train = TrainConfig {
            epochs: f.get("train.epochs", defaults.epochs)?,
            items_per_batch: f.get("train.items_per_batch", defaults.items_per_batch)?,
            learning_rate: f.get("train.lr", defaults.learning_rate)?,
            optimizer,
            seed,
            loss_weights: LossWeights {
                gamma_i: f.get("train.gamma_i", w.gamma_i)?,
                gamma_a: f.get("train.gamma_a", w.gamma_a)?,
                lambda_dis: f.get("train.lambda_dis", w.lambda_dis)?,
                l1_coeff: f.get("train.l1", w.l1_coeff)?,
                l2_coeff: f.get("train.l2", w.l2_coeff)?,
            },
            grad_check: f.get("train.grad_check", defaults.grad_check)?,
            dis_surrogate: f.get("train.dis_surrogate", defaults.dis_surrogate)?,
        };
        let split = match f.map.get("split.mode").map(String::as_str) {
            Some("none") => None,
            None | Some("by_annotator") => {
                Some((SplitMode::ByAnnotator, f.get("split.test_fraction", 0.25)?))
            }
            Some("by_item") => Some((SplitMode::ByItem, f.get("split.test_fraction", 0.25)?)),
            Some(other) => {
                return Err(ConfigError::field(
                    "split.mode",
                    format!("expected by_annotator, by_item or none, found {other:?}"),
                ))
            }
        };
        let config = RunConfig {
            data,
            out,
            featurizer,
            featurizer_dim: f.get("featurizer.dim", 1024)?,
            model,
            train,
            split,
            n_bins: f.get("metrics.n_bins", DEFAULT_BINS)?,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.fusion == Fusion::Sum && m.d_a != m.d_i {
            return Err(ConfigError::field(
                "model.d_a/model.d_i",
                format!(
                    "sum fusion requires model.d_a ({}) == model.d_i ({})",
                    m.d_a, m.d_i
                ),
            ));
        }
        for (key, v) in [
            ("model.d_a", m.d_a),
            ("model.d_i", m.d_i),
            ("model.d_int", m.d_int),
            ("model.d_p", m.d_p),
        ] {
            if v == 0 {
                return Err(ConfigError::field(key, "must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(ConfigError::field("model.dropout", "must be in [0, 1)"));
        }
        if self.featurizer == FeaturizerKind::HashedBow && self.featurizer_dim == 0 {
            return Err(ConfigError::field("featurizer.dim", "must be >= 1"));
        }
        if let Some(k) = self.data.k {
            if k < 2 {
                return Err(ConfigError::field("data.k", "must be >= 2"));
            }
        }
        let t = &self.train;
        if t.items_per_batch == 0 {
            return Err(ConfigError::field("train.items_per_batch", "must be >= 1"));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(ConfigError::field("train.lr", "must be finite and > 0"));
        }
        let lw = &t.loss_weights;
        for (key, v) in [
            ("train.gamma_i", lw.gamma_i),
            ("train.gamma_a", lw.gamma_a),
            ("train.lambda_dis", lw.lambda_dis),
            ("train.l1", lw.l1_coeff),
            ("train.l2", lw.l2_coeff),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::field(key, "must be finite and >= 0"));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = t.optimizer {
            for (key, v) in [("train.beta1", beta1), ("train.beta2", beta2)] {
                if !(0.0..1.0).contains(&v) {
                    return Err(ConfigError::field(key, "must be in [0, 1)"));
                }
            }
            if eps.is_nan() || eps <= 0.0 {
                return Err(ConfigError::field("train.eps", "must be > 0"));
            }
        }
        if let Some((_, frac)) = self.split {
            if !(frac > 0.0 && frac < 1.0) {
                return Err(ConfigError::field(
                    "split.test_fraction",
                    "must be in (0, 1)",
                ));
            }
        }
        if self.n_bins == 0 {
            return Err(ConfigError::field("metrics.n_bins", "must be >= 1"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn feature_mode(&self) -> FeatureMode {
        match self.featurizer {
            FeaturizerKind::Precomputed => FeatureMode::Precomputed,
            FeaturizerKind::HashedBow => FeatureMode::HashedBow {
                dim: self.featurizer_dim,
            },
        }
    }

    pub fn split_spec(&self) -> Option<SplitSpec> {
        self.split.map(|(mode, test_fraction)| SplitSpec {
            mode,
            test_fraction,
            seed: self.seed,
        })
    }

    pub fn model_config(&self, corpus: &Corpus) -> ModelConfig {
        ModelConfig {
            d_a: self.model.d_a,
            d_i: self.model.d_i,
            d_int: self.model.d_int,
            d_p: self.model.d_p,
            num_classes: corpus.num_classes(),
            feature_dim: corpus.feature_dim(),
            axis_sizes: corpus.schema().axis_sizes(),
            activation: self.model.activation,
            fusion: self.model.fusion,
            dropout_rate: self.model.dropout,
            n_annotators: corpus.annotators().len(),
        }
    }

    /// Every key with its effective value, paths absolute. Parsing the
    /// result yields an equal config.
    pub fn to_resolved_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("data.items", self.data.items.display().to_string());
        put(
            "data.annotators",
            self.data.annotators.display().to_string(),
        );
        put(
            "data.annotations",
            self.data.annotations.display().to_string(),
        );
        if let Some(k) = self.data.k {
            put("data.k", k.to_string());
        }
        put("out", self.out.display().to_string());
        put(
            "featurizer.mode",
            match self.featurizer {
                FeaturizerKind::Precomputed => "precomputed",
                FeaturizerKind::HashedBow => "hashed_bow",
            }
            .into(),
        );
        put("featurizer.dim", self.featurizer_dim.to_string());
        put("model.d_a", self.model.d_a.to_string());
        put("model.d_i", self.model.d_i.to_string());
        put("model.d_int", self.model.d_int.to_string());
        put("model.d_p", self.model.d_p.to_string());
        put("model.activation", self.model.activation.to_string());
        put("model.fusion", self.model.fusion.to_string());
        put("model.dropout", self.model.dropout.to_string());
        let t = &self.train;
        put("train.epochs", t.epochs.to_string());
        put("train.items_per_batch", t.items_per_batch.to_string());
        put("train.lr", t.learning_rate.to_string());
        match t.optimizer {
            Optimizer::Sgd => put("train.optimizer", "sgd".into()),
            Optimizer::Adam { beta1, beta2, eps } => {
                put("train.optimizer", "adam".into());
                put("train.beta1", beta1.to_string());
                put("train.beta2", beta2.to_string());
                put("train.eps", eps.to_string());
            }
        }
        put("train.gamma_i", t.loss_weights.gamma_i.to_string());
        put("train.gamma_a", t.loss_weights.gamma_a.to_string());
        put("train.lambda_dis", t.loss_weights.lambda_dis.to_string());
        put("train.l1", t.loss_weights.l1_coeff.to_string());
        put("train.l2", t.loss_weights.l2_coeff.to_string());
        put("train.grad_check", t.grad_check.to_string());
        put("train.dis_surrogate", t.dis_surrogate.to_string());
        match self.split {
            None => put("split.mode", "none".into()),
            Some((mode, frac)) => {
                let name = match mode {
                    SplitMode::ByAnnotator => "by_annotator",
                    SplitMode::ByItem => "by_item",
                };
                put("split.mode", name.into());
                put("split.test_fraction", frac.to_string());
            }
        }
        put("metrics.n_bins", self.n_bins.to_string());
        put("seed", self.seed.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "data.items = items.csv\ndata.annotators = annotators.csv\ndata.annotations = annotations.csv\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse(MINIMAL, Path::new("/data/run")).unwrap();
        assert_eq!(c.data.items, PathBuf::from("/data/run/items.csv"));
        assert_eq!(c.out, PathBuf::from("/data/run/out"));
        assert_eq!(c.model.fusion, Fusion::Concat);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.split, Some((SplitMode::ByAnnotator, 0.25)));
        assert_eq!(c.n_bins, 15);
    }

    #[test]
    fn resolved_text_roundtrips() {
        let text = format!(
            "{MINIMAL}# tuned\nmodel.fusion = sum\nmodel.d_a = 8\nmodel.d_i = 8\ntrain.optimizer = sgd\ntrain.lr = 0.05\nsplit.mode = by_item\nsplit.test_fraction = 0.3\nseed = 12\ndata.k = 3\n"
        );
        let c = RunConfig::parse(&text, Path::new("/x")).unwrap();
        let again = RunConfig::parse(&c.to_resolved_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.train.seed, 12);
    }

    #[test]
    fn sum_fusion_width_error_names_both_fields() {
        let text = format!("{MINIMAL}model.fusion = sum\nmodel.d_a = 8\nmodel.d_i = 4\n");
        let err = RunConfig::parse(&text, Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("model.d_a") && msg.contains("model.d_i"),
            "{msg}"
        );
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("model.d_p = abc\n", "model.d_p"),
            ("model.activation = swish\n", "model.activation"),
            ("train.bogus = 1\n", "train.bogus"),
            ("split.test_fraction = 1.5\n", "split.test_fraction"),
            ("train.lr = 0\n", "train.lr"),
            ("model.dropout = 1\n", "model.dropout"),
        ];
        for (extra, field) in cases {
            let err = RunConfig::parse(&format!("{MINIMAL}{extra}"), Path::new(".")).unwrap_err();
            match err {
                ConfigError::Field { path, .. } => assert_eq!(path, field),
                other => panic!("{other:?}"),
            }
        }
        let err = RunConfig::parse("data.items = a.csv\n", Path::new(".")).unwrap_err();
        assert_eq!(err, ConfigError::field("data.annotators", "required"));
        assert!(matches!(
            RunConfig::parse("nonsense line\n", Path::new(".")),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse(&format!("{MINIMAL}seed = 1\nseed = 2\n"), Path::new(".")),
            Err(ConfigError::Field { .. })
        ));
    }
}
