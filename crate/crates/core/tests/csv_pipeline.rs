use std::fs;

use diadem::dataset::featurize::{featurize_items, FeatureMode};
use diadem::dataset::io::{load_corpus, write_corpus, CorpusPaths};
use diadem::dataset::synth::{synth_generate, SynthConfig};
use diadem::dataset::DemographicSchema;
use diadem::metrics::evaluate_predictions;
use diadem::network::{Activation, Checkpoint, Fusion, ModelConfig};
use diadem::training::{predict, train, TrainConfig};

fn model_for(corpus: &diadem::dataset::Corpus) -> ModelConfig {
    ModelConfig {
        d_a: 4,
        d_i: 4,
        d_int: 4,
        d_p: 8,
        num_classes: corpus.num_classes(),
        feature_dim: corpus.feature_dim(),
        axis_sizes: corpus.schema().axis_sizes(),
        activation: Activation::Relu,
        fusion: Fusion::Sum,
        dropout_rate: 0.1,
        n_annotators: corpus.annotators().len(),
    }
}

#[test]
fn synthetic_corpus_survives_csv_and_checkpoint_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SynthConfig::new(DemographicSchema::uniform(3, 3).unwrap(), 4);
    cfg.num_classes = 3;
    let corpus = synth_generate(&cfg).unwrap();
    let paths = CorpusPaths::in_dir(dir.path());
    write_corpus(&corpus, &paths).unwrap();
    let loaded = load_corpus(&paths, Some(3)).unwrap();
    assert_eq!(loaded.annotations(), corpus.annotations());
    assert_eq!(loaded.schema().hash(), corpus.schema().hash());
    for (a, b) in loaded.items().iter().zip(corpus.items()) {
        assert_eq!(a.features, b.features);
    }

    let model = model_for(&loaded);
    let config = TrainConfig {
        epochs: 3,
        items_per_batch: 4,
        ..TrainConfig::default()
    };
    let report = train(&loaded, &config, &model).unwrap();
    let ckpt = Checkpoint {
        model_config: model.clone(),
        schema: loaded.schema().clone(),
        params: report.final_params,
    };
    let path = dir.path().join("checkpoint.bin");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(fs::read(&path).unwrap(), ckpt.to_bytes());

    let probs = predict(&loaded, &back.params, &back.model_config).unwrap();
    let (eval, _) = evaluate_predictions(&loaded, &probs, 15).unwrap();
    assert_eq!(eval.n_samples, loaded.annotations().len());
}

#[test]
fn text_corpus_trains_through_hashed_features() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("items.csv"),
        "item_id,text\nq1,the weather is nice\nq2,you are awful\nq3,what a lovely day\nq4,go away now\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("annotators.csv"),
        "annotator_id,gender,age\nr1,woman,young\nr2,man,old\nr3,woman,old\n",
    )
    .unwrap();
    let mut rows = String::from("item_id,annotator_id,label\n");
    for (q, base) in [("q1", 0), ("q2", 1), ("q3", 0), ("q4", 1)] {
        for (r, shift) in [("r1", 0), ("r2", 1), ("r3", 0)] {
            rows.push_str(&format!("{q},{r},{}\n", (base + shift) % 2));
        }
    }
    fs::write(dir.path().join("annotations.csv"), rows).unwrap();
    let raw = load_corpus(&CorpusPaths::in_dir(dir.path()), None).unwrap();
    let corpus = featurize_items(&raw, FeatureMode::HashedBow { dim: 32 }).unwrap();
    assert_eq!(corpus.feature_dim(), 32);
    let model = model_for(&corpus);
    let config = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let report = train(&corpus, &config, &model).unwrap();
    assert_eq!(report.epochs.len(), 5);
    assert!(report.epochs.iter().all(|e| e.losses.total.is_finite()));
}
