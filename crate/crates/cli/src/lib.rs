//! Experiment driver: `train`, `evaluate`, `report-alpha` and `synth`.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use diadem::dataset::featurize::featurize_items;
use diadem::dataset::io::{load_corpus, write_corpus, CorpusPaths};
use diadem::dataset::split::split_corpus;
use diadem::dataset::synth::{synth_generate, SynthConfig};
use diadem::dataset::{Corpus, DatasetError, DemographicSchema};
use diadem::metrics::{evaluate_predictions, EvalReport, MetricsError};
use diadem::network::{demographic_weights, Checkpoint, CheckpointError};
use diadem::training::{predict, train, TrainError, TrainReport};
use serde::Serialize;
use thiserror::Error;

pub use config::{ConfigError, RunConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.txt";
pub const EVAL_JSON_FILE: &str = "eval.json";
pub const EVAL_TABLE_FILE: &str = "eval.txt";
pub const DISAGREEMENT_FILE: &str = "disagreement.tsv";
pub const ALPHA_FILE: &str = "alpha.json";
pub const SYNTH_CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(#[from] DatasetError),
    #[error("schema mismatch: checkpoint axes {checkpoint:?}, data axes {data:?}")]
    SchemaMismatch {
        checkpoint: Vec<String>,
        data: Vec<String>,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not fit the data: {0}")]
    Incompatible(String),
    #[error("training failed: {0}")]
    Train(#[from] TrainError),
    #[error("evaluation failed: {0}")]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for runtime failures, 2 for bad input or validation failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Train(_) | CliError::Metrics(_) | CliError::Output { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

/// Loads and featurizes the corpus named by `config`.
pub fn load_data(config: &RunConfig) -> Result<Corpus> {
    let paths = CorpusPaths {
        items: config.data.items.clone(),
        annotators: config.data.annotators.clone(),
        annotations: config.data.annotations.clone(),
    };
    let raw = load_corpus(&paths, config.data.k)?;
    Ok(featurize_items(&raw, config.feature_mode())?)
}

/// `(train, test)` views; both are the whole corpus without a split.
fn views(config: &RunConfig, corpus: &Corpus) -> Result<(Corpus, Corpus)> {
    match config.split_spec() {
        Some(spec) => Ok(split_corpus(corpus, &spec)?),
        None => Ok((corpus.clone(), corpus.clone())),
    }
}

/// Trains on the training view and writes the checkpoint, the per-epoch
/// log and the resolved config into `config.out`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainReport> {
    let corpus = load_data(config)?;
    let (train_view, _) = views(config, &corpus)?;
    let model_config = config.model_config(&train_view);
    log::info!(
        "training on {} annotations ({} items, {} annotators)",
        train_view.annotations().len(),
        train_view.items().len(),
        train_view.annotators().len()
    );
    let report = train(&train_view, &config.train, &model_config)?;
    if let Some(check) = &report.grad_check {
        log::info!(
            "gradient check: max relative error {:.3e}",
            check.max_relative_error
        );
    }
    log::info!("trained in {:.2}s", report.wall_clock_seconds);

    ensure_dir(&config.out)?;
    let checkpoint = Checkpoint {
        model_config,
        schema: train_view.schema().clone(),
        params: report.final_params.clone(),
    };
    write_file(&config.out.join(CHECKPOINT_FILE), checkpoint.to_bytes())?;
    write_file(&config.out.join(TRAIN_LOG_FILE), report.to_json_lines())?;
    write_file(
        &config.out.join(RESOLVED_CONFIG_FILE),
        config.to_resolved_text(),
    )?;
    Ok(report)
}

fn axis_names(schema: &DemographicSchema) -> Vec<String> {
    schema.axes().iter().map(|a| a.name.clone()).collect()
}

/// Scores `checkpoint` on the test view of the configured data and writes
/// `eval.json`, `eval.txt` and the per-item disagreement TSV.
pub fn cmd_evaluate(config: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let corpus = load_data(config)?;
    if !ckpt.schema.same_axes(corpus.schema()) {
        return Err(CliError::SchemaMismatch {
            checkpoint: axis_names(&ckpt.schema),
            data: axis_names(corpus.schema()),
        });
    }
    let m = &ckpt.model_config;
    if corpus.feature_dim() != m.feature_dim {
        return Err(CliError::Incompatible(format!(
            "data features have width {}, checkpoint expects {}",
            corpus.feature_dim(),
            m.feature_dim
        )));
    }
    if corpus.num_classes() != m.num_classes {
        return Err(CliError::Incompatible(format!(
            "data has {} classes, checkpoint expects {}",
            corpus.num_classes(),
            m.num_classes
        )));
    }
    let projected = corpus.with_schema(&ckpt.schema)?;
    let (_, test_view) = views(config, &projected)?;
    let probs = predict(&test_view, &ckpt.params, m)?;
    let (report, items) = evaluate_predictions(&test_view, &probs, config.n_bins)?;

    ensure_dir(&config.out)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&config.out.join(EVAL_JSON_FILE), json)?;
    write_file(&config.out.join(EVAL_TABLE_FILE), report.to_table())?;
    let mut tsv = String::from("item_id\tactual_variance\tpredicted_variance\n");
    for it in &items {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}",
            it.item_id, it.actual_variance, it.predicted_variance
        );
    }
    write_file(&config.out.join(DISAGREEMENT_FILE), tsv)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisWeight {
    pub axis: String,
    pub alpha: f64,
}

/// Learned demographic weights, largest first (ties keep axis order).
pub fn alpha_table(checkpoint: &Checkpoint) -> Vec<AxisWeight> {
    let alpha = demographic_weights(&checkpoint.params.alpha_raw);
    let mut rows: Vec<AxisWeight> = checkpoint
        .schema
        .axes()
        .iter()
        .zip(alpha)
        .map(|(a, alpha)| AxisWeight {
            axis: a.name.clone(),
            alpha,
        })
        .collect();
    rows.sort_by(|a, b| b.alpha.total_cmp(&a.alpha));
    rows
}

pub fn render_alpha_table(rows: &[AxisWeight]) -> String {
    let width = rows.iter().map(|r| r.axis.len()).max().unwrap_or(0).max(4);
    let mut out = format!("{:<width$}  {:>6}\n", "axis", "alpha");
    for r in rows {
        let _ = writeln!(out, "{:<width$}  {:>6.4}", r.axis, r.alpha);
    }
    out
}

/// Reads the checkpoint, writes `alpha.json` into `out` and returns the
/// rendered table.
pub fn cmd_report_alpha(checkpoint: &Path, out: &Path) -> Result<(Vec<AxisWeight>, String)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let rows = alpha_table(&ckpt);
    ensure_dir(out)?;
    let json = serde_json::to_string_pretty(&rows).expect("alpha rows serialize") + "\n";
    write_file(&out.join(ALPHA_FILE), json)?;
    Ok((rows.clone(), render_alpha_table(&rows)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub n_items: usize,
    pub n_annotators: usize,
    pub n_axes: usize,
    pub categories_per_axis: usize,
    pub planted_axis: usize,
    pub noise: f64,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub annotators_per_item: Option<usize>,
}

impl Default for SynthArgs {
    fn default() -> Self {
        Self {
            n_items: 20,
            n_annotators: 10,
            n_axes: 3,
            categories_per_axis: 2,
            planted_axis: 0,
            noise: 0.0,
            num_classes: 2,
            feature_dim: 8,
            annotators_per_item: None,
        }
    }
}

/// Writes the three corpus CSVs and a starter `config.txt` into `out`.
pub fn cmd_synth(args: &SynthArgs, seed: u64, out: &Path) -> Result<Corpus> {
    let schema = DemographicSchema::uniform(args.n_axes, args.categories_per_axis)?;
    let cfg = SynthConfig {
        n_items: args.n_items,
        n_annotators: args.n_annotators,
        planted_axis: args.planted_axis,
        noise: args.noise,
        num_classes: args.num_classes,
        feature_dim: args.feature_dim,
        annotators_per_item: args.annotators_per_item,
        ..SynthConfig::new(schema, seed)
    };
    let corpus = synth_generate(&cfg)?;
    ensure_dir(out)?;
    write_corpus(&corpus, &CorpusPaths::in_dir(out))?;
    let starter = format!(
        "data.items = items.csv\n\
         data.annotators = annotators.csv\n\
         data.annotations = annotations.csv\n\
         data.k = {}\n\
         featurizer.mode = precomputed\n\
         seed = {seed}\n",
        args.num_classes
    );
    write_file(&out.join(SYNTH_CONFIG_FILE), starter)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use diadem::dataset::Axis;
    use diadem::network::{Activation, Fusion, ModelConfig, ModelParams};

    fn checkpoint(alpha_raw: Vec<f64>) -> Checkpoint {
        let names = ["age", "education", "gender", "locale", "race"];
        let schema = DemographicSchema::new(
            names
                .iter()
                .map(|n| Axis {
                    name: n.to_string(),
                    categories: vec!["x".into(), "y".into()],
                })
                .collect(),
        )
        .unwrap();
        let model_config = ModelConfig {
            d_a: 2,
            d_i: 2,
            d_int: 2,
            d_p: 2,
            num_classes: 3,
            feature_dim: 4,
            axis_sizes: schema.axis_sizes(),
            activation: Activation::Relu,
            fusion: Fusion::Concat,
            dropout_rate: 0.0,
            n_annotators: 1,
        };
        let mut params = ModelParams::zeros(&model_config);
        params.alpha_raw = alpha_raw;
        Checkpoint {
            model_config,
            schema,
            params,
        }
    }

    #[test]
    fn untrained_alpha_is_uniform() {
        let rows = alpha_table(&checkpoint(vec![0.0; 5]));
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| (r.alpha - 0.2).abs() < 1e-12));
        assert_eq!(rows[0].axis, "age");
        let table = render_alpha_table(&rows);
        assert_eq!(table.lines().count(), 6);
        assert!(table.contains("0.2000"));
    }

    #[test]
    fn alpha_rows_sorted_and_normalized() {
        let rows = alpha_table(&checkpoint(vec![0.1, -0.3, 0.0, 0.2, 0.4]));
        let names: Vec<&str> = rows.iter().map(|r| r.axis.as_str()).collect();
        assert_eq!(names, ["race", "locale", "age", "gender", "education"]);
        assert!((rows.iter().map(|r| r.alpha).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exit_codes() {
        let config = CliError::Config(ConfigError::Syntax {
            line: 1,
            text: String::new(),
        });
        assert_eq!(config.exit_code(), 2);
        let schema = CliError::SchemaMismatch {
            checkpoint: vec![],
            data: vec![],
        };
        assert_eq!(schema.exit_code(), 2);
        let corrupt = CliError::Checkpoint(CheckpointError::Corrupt("x".into()));
        assert_eq!(corrupt.exit_code(), 2);
        let runtime = CliError::Train(TrainError::NonFiniteLoss { epoch: 0, batch: 0 });
        assert_eq!(runtime.exit_code(), 1);
    }
}
