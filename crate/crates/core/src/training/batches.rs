use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Corpus;

/// One (item, annotator, label) training sample. `group` is the corpus item
/// index, shared by every sample of the same item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub item: usize,
    pub annotator: usize,
    pub label: usize,
    pub group: usize,
}

/// Item-grouped batches for one epoch.
///
/// Annotated items are shuffled with a ChaCha8 stream keyed by `(seed,
/// epoch)` and chunked `items_per_batch` at a time; each batch holds every
/// annotation of its items, so no item is ever split across batches.
pub fn make_batches(
    corpus: &Corpus,
    items_per_batch: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<Sample>> {
    let by_item = corpus.annotations_by_item();
    let mut order: Vec<usize> = (0..by_item.len())
        .filter(|&m| !by_item[m].is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
        .chunks(items_per_batch.max(1))
        .map(|chunk| {
            chunk
                .iter()
                .flat_map(|&m| by_item[m].iter())
                .map(|&i| {
                    let a = corpus.annotations()[i];
                    Sample {
                        item: a.item,
                        annotator: a.annotator,
                        label: a.label,
                        group: a.item,
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Annotation, AnnotatorProfile, DemographicSchema, Item};
    use std::collections::HashSet;

    /// 3 items with 2, 3 and 1 annotations.
    fn corpus() -> Corpus {
        let schema = DemographicSchema::uniform(1, 2).unwrap();
        let items = (0..3)
            .map(|m| Item {
                item_id: format!("i{m}"),
                features: vec![0.0],
                raw_text: None,
            })
            .collect();
        let annotators = (0..3)
            .map(|n| AnnotatorProfile {
                annotator_id: format!("a{n}"),
                values: vec![n % 2],
            })
            .collect();
        let pairs = [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 2)];
        let annotations = pairs
            .iter()
            .map(|&(item, annotator)| Annotation {
                item,
                annotator,
                label: annotator % 2,
            })
            .collect();
        Corpus::new(schema, items, annotators, annotations, 2).unwrap()
    }

    #[test]
    fn single_batch_when_items_fit() {
        let c = corpus();
        let batches = make_batches(&c, 10, 1, 0);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 6);
    }

    #[test]
    fn sizes_follow_the_permutation() {
        let c = corpus();
        let sizes = [2usize, 3, 1];
        let mut seen = HashSet::new();
        for seed in 0..20 {
            for epoch in 0..5 {
                let batches = make_batches(&c, 2, seed, epoch);
                // Brute force: the first batch holds two whole items, so its
                // size is a sum of two distinct item sizes.
                let got: Vec<usize> = batches.iter().map(Vec::len).collect();
                assert_eq!(got.len(), 2);
                assert!(got == [5, 1] || got == [3, 3] || got == [4, 2], "{got:?}");
                let first_items: HashSet<usize> = batches[0].iter().map(|s| s.item).collect();
                assert_eq!(first_items.len(), 2);
                assert_eq!(first_items.iter().map(|&m| sizes[m]).sum::<usize>(), got[0]);
                seen.insert(got);
                for (b, batch) in batches.iter().enumerate() {
                    for other in &batches[b + 1..] {
                        let a: HashSet<_> = batch.iter().map(|s| s.group).collect();
                        assert!(other.iter().all(|s| !a.contains(&s.group)));
                    }
                }
            }
        }
        assert!(seen.len() >= 2);
        assert_eq!(make_batches(&c, 2, 3, 1), make_batches(&c, 2, 3, 1));
    }

    #[test]
    fn every_batch_has_a_group() {
        let c = corpus();
        let batches = make_batches(&c, 2, 0, 0);
        let total: usize = batches.iter().map(Vec::len).sum();
        assert_eq!(total, c.annotations().len());
    }
}
