//! Synthetic corpora with a planted demographic effect.
//!
//! Each item has a base label; an annotator's label is
//! `(base + offset(category on the planted axis)) mod K` with
//! `offset(c) = c mod K`, then flipped to a uniformly chosen other class with
//! probability `noise`. Item features are the one-hot of the base label in
//! the first K coordinates plus Gaussian jitter, so the base label is
//! linearly separable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Annotation, AnnotatorProfile, Corpus, DatasetError, DemographicSchema, Item, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_annotators: usize,
    pub schema: DemographicSchema,
    pub planted_axis: usize,
    pub noise: f64,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub seed: u64,
    /// Standard deviation of the feature jitter.
    pub jitter: f64,
    /// `None`: every annotator labels every item. `Some(r)`: each item gets
    /// `r` annotators drawn around a dominant planted-axis category with a
    /// per-item mixing rate, which makes disagreement vary across items.
    pub annotators_per_item: Option<usize>,
}

impl SynthConfig {
    pub fn new(schema: DemographicSchema, seed: u64) -> Self {
        Self {
            n_items: 20,
            n_annotators: 10,
            schema,
            planted_axis: 0,
            noise: 0.0,
            num_classes: 2,
            feature_dim: 8,
            seed,
            jitter: 0.1,
            annotators_per_item: None,
        }
    }

    pub fn offset(&self, category: usize) -> usize {
        category % self.num_classes
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Corpus> {
    let num_axes = cfg.schema.num_axes();
    if cfg.planted_axis >= num_axes {
        return Err(DatasetError::InvalidAxis {
            axis: cfg.planted_axis,
            num_axes,
        });
    }
    if !(0.0..0.5).contains(&cfg.noise) {
        return Err(DatasetError::InvalidNoise(cfg.noise));
    }
    if cfg.num_classes < 2 {
        return Err(DatasetError::InvalidSynth(
            "at least 2 classes required".into(),
        ));
    }
    if cfg.feature_dim < cfg.num_classes {
        return Err(DatasetError::InvalidSynth(format!(
            "feature_dim {} smaller than class count {}",
            cfg.feature_dim, cfg.num_classes
        )));
    }
    if cfg.n_items == 0 || cfg.n_annotators == 0 {
        return Err(DatasetError::EmptyCorpus(
            "generator asked for zero items or annotators",
        ));
    }
    if let Some(r) = cfg.annotators_per_item {
        if r == 0 || r > cfg.n_annotators {
            return Err(DatasetError::InvalidSynth(format!(
                "annotators_per_item {r} outside 1..={}",
                cfg.n_annotators
            )));
        }
    }
    let jitter = Normal::new(0.0, cfg.jitter)
        .map_err(|e| DatasetError::InvalidSynth(format!("jitter: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes = cfg.schema.axis_sizes();
    let planted_size = sizes[cfg.planted_axis];

    // Planted axis: evenly populated, shuffled. Other axes: uniform.
    let mut planted: Vec<usize> = (0..cfg.n_annotators).map(|i| i % planted_size).collect();
    planted.shuffle(&mut rng);
    let annotators: Vec<AnnotatorProfile> = (0..cfg.n_annotators)
        .map(|n| AnnotatorProfile {
            annotator_id: format!("a{n:04}"),
            values: (0..num_axes)
                .map(|d| {
                    if d == cfg.planted_axis {
                        planted[n]
                    } else {
                        rng.random_range(0..sizes[d])
                    }
                })
                .collect(),
        })
        .collect();

    let mut base = Vec::with_capacity(cfg.n_items);
    let items: Vec<Item> = (0..cfg.n_items)
        .map(|m| {
            let b = rng.random_range(0..cfg.num_classes);
            base.push(b);
            let features = (0..cfg.feature_dim)
                .map(|j| f64::from(u8::from(j == b)) + jitter.sample(&mut rng))
                .collect();
            Item {
                item_id: format!("i{m:04}"),
                features,
                raw_text: None,
            }
        })
        .collect();

    let mut annotations = Vec::new();
    for (m, &b) in base.iter().enumerate() {
        let raters = match cfg.annotators_per_item {
            None => (0..cfg.n_annotators).collect(),
            Some(r) => mixed_raters(&mut rng, &planted, planted_size, r),
        };
        for n in raters {
            let clean = (b + cfg.offset(planted[n])) % cfg.num_classes;
            let label = if rng.random::<f64>() < cfg.noise {
                let shift = rng.random_range(1..cfg.num_classes);
                (clean + shift) % cfg.num_classes
            } else {
                clean
            };
            annotations.push(Annotation {
                item: m,
                annotator: n,
                label,
            });
        }
    }
    Corpus::new(
        cfg.schema.clone(),
        items,
        annotators,
        annotations,
        cfg.num_classes,
    )
}

/// `r` distinct annotators: a share `1 - q` (q uniform per item) drawn from
/// one dominant planted category, the rest from the others. Sorted by index.
fn mixed_raters(
    rng: &mut ChaCha8Rng,
    planted: &[usize],
    planted_size: usize,
    r: usize,
) -> Vec<usize> {
    let dominant = rng.random_range(0..planted_size);
    let mix: f64 = rng.random();
    let (mut dom, mut other): (Vec<usize>, Vec<usize>) =
        (0..planted.len()).partition(|&n| planted[n] == dominant);
    dom.shuffle(rng);
    other.shuffle(rng);
    let want_other = ((mix * r as f64).round() as usize).min(other.len());
    let take_dom = (r - want_other).min(dom.len());
    let take_other = r - take_dom;
    let mut chosen: Vec<usize> = dom[..take_dom]
        .iter()
        .chain(&other[..take_other])
        .copied()
        .collect();
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(noise: f64, k: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_items: 30,
            n_annotators: 12,
            noise,
            num_classes: k,
            ..SynthConfig::new(DemographicSchema::uniform(3, 3).unwrap(), seed)
        }
    }

    #[test]
    fn noiseless_planted_category_agrees() {
        let c = cfg(0.0, 3, 5);
        let corpus = synth_generate(&c).unwrap();
        let mut labels = vec![vec![None; c.n_annotators]; c.n_items];
        for a in corpus.annotations() {
            labels[a.item][a.annotator] = Some(a.label);
        }
        for row in &labels {
            for i in 0..c.n_annotators {
                for j in 0..c.n_annotators {
                    let (pi, pj) = (&corpus.annotators()[i], &corpus.annotators()[j]);
                    if pi.values[c.planted_axis] == pj.values[c.planted_axis] {
                        assert_eq!(row[i], row[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_variance_matches_construction() {
        let c = cfg(0.0, 3, 9);
        let corpus = synth_generate(&c).unwrap();
        // 12 annotators over 3 categories: 4 each, offsets {0,1,2}.
        let offsets: Vec<usize> = (0..12).map(|i| c.offset(i % 3)).collect();
        let pop_var = |xs: &[f64]| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
        };
        for (m, group) in corpus.annotations_by_item().iter().enumerate() {
            let labels: Vec<f64> = group
                .iter()
                .map(|&i| corpus.annotations()[i].label as f64)
                .collect();
            // Recover the base label from any annotator in planted category 0.
            let b = group
                .iter()
                .map(|&i| corpus.annotations()[i])
                .find(|a| corpus.annotators()[a.annotator].values[0] == 0)
                .unwrap()
                .label;
            let expected: Vec<f64> = offsets.iter().map(|o| ((b + o) % 3) as f64).collect();
            assert!(
                (pop_var(&labels) - pop_var(&expected)).abs() < 1e-12,
                "item {m}"
            );
        }
    }

    #[test]
    fn high_noise_binary_agreement_near_half() {
        let mut c = cfg(0.499, 2, 3);
        c.n_items = 400;
        c.n_annotators = 20;
        let corpus = synth_generate(&c).unwrap();
        let (mut agree, mut total) = (0usize, 0usize);
        for group in corpus.annotations_by_item() {
            for (x, &i) in group.iter().enumerate() {
                for &j in &group[x + 1..] {
                    total += 1;
                    agree +=
                        usize::from(corpus.annotations()[i].label == corpus.annotations()[j].label);
                }
            }
        }
        let rate = agree as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.02, "agreement rate {rate}");
    }

    #[test]
    fn reproducible_and_validated() {
        let c = cfg(0.1, 2, 11);
        assert_eq!(synth_generate(&c).unwrap(), synth_generate(&c).unwrap());
        assert!(matches!(
            synth_generate(&SynthConfig {
                planted_axis: 3,
                ..c.clone()
            }),
            Err(DatasetError::InvalidAxis { .. })
        ));
        assert!(matches!(
            synth_generate(&SynthConfig {
                noise: 0.5,
                ..c.clone()
            }),
            Err(DatasetError::InvalidNoise(_))
        ));
    }

    #[test]
    fn mixed_raters_vary_disagreement() {
        let c = SynthConfig {
            n_items: 60,
            n_annotators: 30,
            annotators_per_item: Some(8),
            ..cfg(0.0, 2, 4)
        };
        let corpus = synth_generate(&c).unwrap();
        let groups = corpus.annotations_by_item();
        assert!(groups.iter().all(|g| g.len() == 8));
        let minority: Vec<usize> = (0..c.n_items)
            .map(|m| *corpus.item_histogram(m).iter().min().unwrap())
            .collect();
        assert!(minority.contains(&0));
        assert!(minority.iter().any(|&x| x >= 3));
    }
}
