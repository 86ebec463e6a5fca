use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Disjoint annotator sets; items may appear on both sides.
    ByAnnotator,
    /// Disjoint item sets; annotators may appear on both sides.
    ByItem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub test_fraction: f64,
    pub seed: u64,
}

/// Partitions the split unit (annotators or items) and lets annotations
/// follow their unit. The test side gets `round(n * test_fraction)` units.
pub fn split_corpus(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(spec.test_fraction));
    }
    let n = match spec.mode {
        SplitMode::ByAnnotator => corpus.annotators().len(),
        SplitMode::ByItem => corpus.items().len(),
    };
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DatasetError::DegenerateSplit {
            train: n - n_test.min(n),
            test: n_test,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut is_test = vec![false; n];
    for &u in &order[..n_test] {
        is_test[u] = true;
    }
    let is_train: Vec<bool> = is_test.iter().map(|t| !t).collect();

    let degenerate = |_| DatasetError::DegenerateSplit {
        train: n - n_test,
        test: n_test,
    };
    match spec.mode {
        SplitMode::ByAnnotator => {
            let all = vec![true; corpus.items().len()];
            Ok((
                corpus.subset(&all, &is_train).map_err(degenerate)?,
                corpus.subset(&all, &is_test).map_err(degenerate)?,
            ))
        }
        SplitMode::ByItem => {
            let all = vec![true; corpus.annotators().len()];
            Ok((
                corpus.subset(&is_train, &all).map_err(degenerate)?,
                corpus.subset(&is_test, &all).map_err(degenerate)?,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, DemographicSchema, SynthConfig};
    use std::collections::HashSet;

    fn corpus(n_items: usize, n_annotators: usize) -> Corpus {
        synth_generate(&SynthConfig {
            n_items,
            n_annotators,
            ..SynthConfig::new(DemographicSchema::uniform(2, 2).unwrap(), 0)
        })
        .unwrap()
    }

    fn ids<'a>(it: impl Iterator<Item = &'a str>) -> HashSet<String> {
        it.map(str::to_string).collect()
    }

    #[test]
    fn by_annotator_partition() {
        let c = corpus(5, 10);
        let spec = SplitSpec {
            mode: SplitMode::ByAnnotator,
            test_fraction: 0.3,
            seed: 7,
        };
        let (train, test) = split_corpus(&c, &spec).unwrap();
        assert_eq!(train.annotators().len(), 7);
        assert_eq!(test.annotators().len(), 3);
        let a = ids(train.annotators().iter().map(|p| p.annotator_id.as_str()));
        let b = ids(test.annotators().iter().map(|p| p.annotator_id.as_str()));
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 10);
        assert_eq!(
            train.annotations().len() + test.annotations().len(),
            c.annotations().len()
        );

        let again = split_corpus(&c, &spec).unwrap();
        assert_eq!(again, (train, test));
    }

    #[test]
    fn by_item_partition() {
        let c = corpus(4, 3);
        let spec = SplitSpec {
            mode: SplitMode::ByItem,
            test_fraction: 0.5,
            seed: 1,
        };
        let (train, test) = split_corpus(&c, &spec).unwrap();
        assert_eq!(train.items().len(), 2);
        assert_eq!(test.items().len(), 2);
        let test_items = ids(test.items().iter().map(|i| i.item_id.as_str()));
        for a in train.annotations() {
            assert!(!test_items.contains(&train.items()[a.item].item_id));
        }
    }

    #[test]
    fn degenerate_splits_rejected() {
        let c = corpus(4, 3);
        let tiny = SplitSpec {
            mode: SplitMode::ByAnnotator,
            test_fraction: 0.1,
            seed: 0,
        };
        assert!(matches!(
            split_corpus(&c, &tiny),
            Err(DatasetError::DegenerateSplit { .. })
        ));
        let bad = SplitSpec {
            mode: SplitMode::ByItem,
            test_fraction: 1.0,
            seed: 0,
        };
        assert!(matches!(
            split_corpus(&c, &bad),
            Err(DatasetError::InvalidFraction(_))
        ));
    }
}
