//! Multi-annotator corpus model: items, annotator demographic profiles, sparse
//! annotation triples, and the histograms derived from them.
//!
//! Corpora are immutable once built. Ingestion lives in [`io`], item
//! featurization in [`featurize`], train/test splitting in [`split`] and the
//! planted-effect generator in [`synth`].

pub mod featurize;
pub mod io;
pub mod split;
pub mod synth;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use featurize::{featurize_items, hashed_bow, FeatureMode};
pub use io::{load_corpus, write_corpus, CorpusPaths};
pub use split::{split_corpus, SplitMode, SplitSpec};
pub use synth::{synth_generate, SynthConfig};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("row {row}: unknown category `{value}` on axis `{axis}`")]
    UnknownCategory {
        axis: String,
        value: String,
        row: u64,
    },
    #[error("row {row}: unknown annotator `{id}`")]
    UnknownAnnotator { id: String, row: u64 },
    #[error("row {row}: unknown item `{id}`")]
    UnknownItem { id: String, row: u64 },
    #[error("duplicate annotation for item `{item}` by annotator `{annotator}`")]
    DuplicateAnnotation { item: String, annotator: String },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("row {row}: label `{value}` is not a non-negative integer")]
    InvalidLabel { row: u64, value: String },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("row {row}: feature `{column}` has invalid value `{value}`")]
    InvalidFeature {
        row: u64,
        column: String,
        value: String,
    },
    #[error("item `{item}` has {found} features, expected {expected}")]
    InconsistentWidth {
        item: String,
        expected: usize,
        found: usize,
    },
    #[error("item `{item}` has no text to featurize")]
    NoTextAvailable { item: String },
    #[error("corpus is empty: {0}")]
    EmptyCorpus(&'static str),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("split leaves an empty side ({train} train / {test} test units)")]
    DegenerateSplit { train: usize, test: usize },
    #[error("test fraction {0} not in (0, 1)")]
    InvalidFraction(f64),
    #[error("axis {axis} out of range for {num_axes} axes")]
    InvalidAxis { axis: usize, num_axes: usize },
    #[error("noise {0} not in [0, 0.5)")]
    InvalidNoise(f64),
    #[error("invalid generator setting: {0}")]
    InvalidSynth(String),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// One categorical demographic attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub categories: Vec<String>,
}

/// Ordered demographic axes shared by every annotator of a corpus.
///
/// Each axis additionally owns a reserved UNK slot at index
/// `categories.len()`, used for categories never seen when a model was built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicSchema {
    axes: Vec<Axis>,
}

impl DemographicSchema {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(DatasetError::InvalidSchema(
                "at least one axis required".into(),
            ));
        }
        let mut names = HashSet::new();
        for axis in &axes {
            if !names.insert(axis.name.as_str()) {
                return Err(DatasetError::InvalidSchema(format!(
                    "duplicate axis `{}`",
                    axis.name
                )));
            }
            if axis.categories.is_empty() {
                return Err(DatasetError::InvalidSchema(format!(
                    "axis `{}` has no categories",
                    axis.name
                )));
            }
            let unique: HashSet<_> = axis.categories.iter().collect();
            if unique.len() != axis.categories.len() {
                return Err(DatasetError::InvalidSchema(format!(
                    "axis `{}` has duplicate categories",
                    axis.name
                )));
            }
        }
        Ok(Self { axes })
    }

    /// `num_axes` axes named `axis0..`, each with categories `c0..c{n-1}`.
    pub fn uniform(num_axes: usize, categories_per_axis: usize) -> Result<Self> {
        Self::new(
            (0..num_axes)
                .map(|d| Axis {
                    name: format!("axis{d}"),
                    categories: (0..categories_per_axis).map(|c| format!("c{c}")).collect(),
                })
                .collect(),
        )
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn num_axes(&self) -> usize {
        self.axes.len()
    }

    /// Category counts per axis, excluding the UNK slot.
    pub fn axis_sizes(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.categories.len()).collect()
    }

    pub fn category_index(&self, axis: usize, value: &str) -> Option<usize> {
        self.axes[axis].categories.iter().position(|c| c == value)
    }

    pub fn unk_index(&self, axis: usize) -> usize {
        self.axes[axis].categories.len()
    }

    /// Hex SHA-256 over the ordered axis names. Category lists are not
    /// hashed: categories unseen by a model map to UNK instead of failing.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for axis in &self.axes {
            hasher.update(axis.name.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }

    /// Re-express `profile` (built against `source`) in this schema's
    /// category indices; categories absent here map to UNK.
    pub fn project_profile(
        &self,
        source: &DemographicSchema,
        profile: &AnnotatorProfile,
    ) -> AnnotatorProfile {
        let values = profile
            .values
            .iter()
            .enumerate()
            .map(|(d, &v)| {
                source.axes[d]
                    .categories
                    .get(v)
                    .and_then(|name| self.category_index(d, name))
                    .unwrap_or_else(|| self.unk_index(d))
            })
            .collect();
        AnnotatorProfile {
            annotator_id: profile.annotator_id.clone(),
            values,
        }
    }

    pub fn same_axes(&self, other: &DemographicSchema) -> bool {
        self.axes.len() == other.axes.len()
            && self
                .axes
                .iter()
                .zip(&other.axes)
                .all(|(a, b)| a.name == b.name)
    }
}

/// An annotator's category index on every axis (the one-hot form is never
/// materialized).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    /// Empty until featurized when the item was loaded from text.
    pub features: Vec<f64>,
    pub raw_text: Option<String>,
}

/// A single label, referencing items and annotators by corpus index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub item: usize,
    pub annotator: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    schema: DemographicSchema,
    items: Vec<Item>,
    annotators: Vec<AnnotatorProfile>,
    annotations: Vec<Annotation>,
    num_classes: usize,
}

impl Corpus {
    /// Validates referential integrity, uniqueness and label range.
    pub fn new(
        schema: DemographicSchema,
        items: Vec<Item>,
        annotators: Vec<AnnotatorProfile>,
        annotations: Vec<Annotation>,
        num_classes: usize,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(DatasetError::EmptyCorpus("no items"));
        }
        if annotators.is_empty() {
            return Err(DatasetError::EmptyCorpus("no annotators"));
        }
        if annotations.is_empty() {
            return Err(DatasetError::EmptyCorpus("no annotations"));
        }
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.item_id.as_str()) {
                return Err(DatasetError::DuplicateId {
                    kind: "item",
                    id: item.item_id.clone(),
                });
            }
        }
        let width = items[0].features.len();
        for item in &items {
            if item.features.len() != width {
                return Err(DatasetError::InconsistentWidth {
                    item: item.item_id.clone(),
                    expected: width,
                    found: item.features.len(),
                });
            }
        }
        let mut seen = HashSet::new();
        let sizes = schema.axis_sizes();
        for profile in &annotators {
            if !seen.insert(profile.annotator_id.as_str()) {
                return Err(DatasetError::DuplicateId {
                    kind: "annotator",
                    id: profile.annotator_id.clone(),
                });
            }
            if profile.values.len() != sizes.len() {
                return Err(DatasetError::InvalidSchema(format!(
                    "annotator `{}` has {} values for {} axes",
                    profile.annotator_id,
                    profile.values.len(),
                    sizes.len()
                )));
            }
            // UNK (== size) is allowed.
            for (d, (&v, &size)) in profile.values.iter().zip(&sizes).enumerate() {
                if v > size {
                    return Err(DatasetError::InvalidSchema(format!(
                        "annotator `{}` category {} out of range on axis `{}`",
                        profile.annotator_id,
                        v,
                        schema.axes()[d].name
                    )));
                }
            }
        }
        let mut pairs = HashSet::new();
        for a in &annotations {
            if a.item >= items.len() || a.annotator >= annotators.len() {
                return Err(DatasetError::InvalidSchema(format!(
                    "annotation references item {} / annotator {} outside the corpus",
                    a.item, a.annotator
                )));
            }
            if a.label >= num_classes {
                return Err(DatasetError::LabelOutOfRange {
                    label: a.label,
                    num_classes,
                });
            }
            if !pairs.insert((a.item, a.annotator)) {
                return Err(DatasetError::DuplicateAnnotation {
                    item: items[a.item].item_id.clone(),
                    annotator: annotators[a.annotator].annotator_id.clone(),
                });
            }
        }
        Ok(Self {
            schema,
            items,
            annotators,
            annotations,
            num_classes,
        })
    }

    pub fn schema(&self) -> &DemographicSchema {
        &self.schema
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn annotators(&self) -> &[AnnotatorProfile] {
        &self.annotators
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Width J of item feature vectors (0 before featurization).
    pub fn feature_dim(&self) -> usize {
        self.items[0].features.len()
    }

    /// Label counts on item `m` (the per-item histogram).
    pub fn item_histogram(&self, item: usize) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for a in self.annotations.iter().filter(|a| a.item == item) {
            hist[a.label] += 1;
        }
        hist
    }

    /// Label counts by annotator `n` over all their items.
    pub fn annotator_histogram(&self, annotator: usize) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for a in self.annotations.iter().filter(|a| a.annotator == annotator) {
            hist[a.label] += 1;
        }
        hist
    }

    /// Every annotator histogram at once, normalized to probability vectors.
    /// Annotators without annotations get the uniform distribution.
    pub fn annotator_behaviors(&self) -> Vec<Vec<f64>> {
        let mut counts = vec![vec![0usize; self.num_classes]; self.annotators.len()];
        for a in &self.annotations {
            counts[a.annotator][a.label] += 1;
        }
        counts
            .into_iter()
            .map(|hist| {
                let total: usize = hist.iter().sum();
                if total == 0 {
                    vec![1.0 / self.num_classes as f64; self.num_classes]
                } else {
                    hist.iter().map(|&c| c as f64 / total as f64).collect()
                }
            })
            .collect()
    }

    /// Annotation indices grouped by item, in annotation order.
    pub fn annotations_by_item(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.items.len()];
        for (i, a) in self.annotations.iter().enumerate() {
            groups[a.item].push(i);
        }
        groups
    }

    pub fn item_index(&self) -> HashMap<&str, usize> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_id.as_str(), i))
            .collect()
    }

    pub fn annotator_index(&self) -> HashMap<&str, usize> {
        self.annotators
            .iter()
            .enumerate()
            .map(|(i, a)| (a.annotator_id.as_str(), i))
            .collect()
    }

    /// Sub-corpus keeping the flagged items and annotators and every
    /// annotation whose item and annotator are both kept.
    pub fn subset(&self, keep_items: &[bool], keep_annotators: &[bool]) -> Result<Corpus> {
        let remap = |keep: &[bool]| {
            let mut next = 0;
            keep.iter()
                .map(|&k| {
                    k.then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect::<Vec<Option<usize>>>()
        };
        let item_map = remap(keep_items);
        let annotator_map = remap(keep_annotators);
        let items = self
            .items
            .iter()
            .zip(keep_items)
            .filter(|(_, &k)| k)
            .map(|(it, _)| it.clone())
            .collect();
        let annotators = self
            .annotators
            .iter()
            .zip(keep_annotators)
            .filter(|(_, &k)| k)
            .map(|(a, _)| a.clone())
            .collect();
        let annotations = self
            .annotations
            .iter()
            .filter_map(|a| {
                Some(Annotation {
                    item: item_map[a.item]?,
                    annotator: annotator_map[a.annotator]?,
                    label: a.label,
                })
            })
            .collect();
        Corpus::new(
            self.schema.clone(),
            items,
            annotators,
            annotations,
            self.num_classes,
        )
    }

    /// Same corpus with every profile re-expressed in `schema` (unseen
    /// categories become UNK).
    pub fn with_schema(&self, schema: &DemographicSchema) -> Result<Corpus> {
        if !schema.same_axes(&self.schema) {
            return Err(DatasetError::InvalidSchema(
                "axis names differ between schemas".into(),
            ));
        }
        let annotators = self
            .annotators
            .iter()
            .map(|p| schema.project_profile(&self.schema, p))
            .collect();
        Corpus::new(
            schema.clone(),
            self.items.clone(),
            annotators,
            self.annotations.clone(),
            self.num_classes,
        )
    }

    pub(crate) fn with_items(&self, items: Vec<Item>) -> Result<Corpus> {
        Corpus::new(
            self.schema.clone(),
            items,
            self.annotators.clone(),
            self.annotations.clone(),
            self.num_classes,
        )
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn toy_corpus() -> Corpus {
        let schema = DemographicSchema::new(vec![
            Axis {
                name: "gender".into(),
                categories: vec!["f".into(), "m".into()],
            },
            Axis {
                name: "age".into(),
                categories: vec!["young".into(), "old".into(), "mid".into()],
            },
        ])
        .unwrap();
        let items = (0..3)
            .map(|i| Item {
                item_id: format!("i{i}"),
                features: vec![i as f64, 1.0],
                raw_text: None,
            })
            .collect();
        let annotators = vec![
            AnnotatorProfile {
                annotator_id: "a".into(),
                values: vec![0, 1],
            },
            AnnotatorProfile {
                annotator_id: "b".into(),
                values: vec![1, 2],
            },
        ];
        let annotations = vec![
            Annotation {
                item: 0,
                annotator: 0,
                label: 0,
            },
            Annotation {
                item: 0,
                annotator: 1,
                label: 2,
            },
            Annotation {
                item: 1,
                annotator: 0,
                label: 1,
            },
            Annotation {
                item: 2,
                annotator: 1,
                label: 2,
            },
        ];
        Corpus::new(schema, items, annotators, annotations, 3).unwrap()
    }

    #[test]
    fn histograms_sum_to_annotation_counts() {
        let c = toy_corpus();
        assert_eq!(c.item_histogram(0), vec![1, 0, 1]);
        assert_eq!(c.annotator_histogram(1), vec![0, 0, 2]);
        for m in 0..3 {
            let n = c.annotations().iter().filter(|a| a.item == m).count();
            assert_eq!(c.item_histogram(m).iter().sum::<usize>(), n);
        }
        assert_eq!(c.annotator_behaviors()[0], vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn rejects_duplicate_pairs_and_bad_labels() {
        let c = toy_corpus();
        let mut anns = c.annotations().to_vec();
        anns.push(Annotation {
            item: 0,
            annotator: 0,
            label: 1,
        });
        let err = Corpus::new(
            c.schema().clone(),
            c.items().to_vec(),
            c.annotators().to_vec(),
            anns,
            3,
        );
        assert!(matches!(err, Err(DatasetError::DuplicateAnnotation { .. })));

        let anns = vec![Annotation {
            item: 0,
            annotator: 0,
            label: 3,
        }];
        let err = Corpus::new(
            c.schema().clone(),
            c.items().to_vec(),
            c.annotators().to_vec(),
            anns,
            3,
        );
        assert!(matches!(
            err,
            Err(DatasetError::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn schema_validation() {
        assert!(DemographicSchema::new(vec![]).is_err());
        let dup = Axis {
            name: "x".into(),
            categories: vec!["a".into()],
        };
        assert!(DemographicSchema::new(vec![dup.clone(), dup]).is_err());
        let empty = Axis {
            name: "x".into(),
            categories: vec![],
        };
        assert!(DemographicSchema::new(vec![empty]).is_err());
    }

    #[test]
    fn projection_maps_unseen_categories_to_unk() {
        let c = toy_corpus();
        let narrow = DemographicSchema::new(vec![
            Axis {
                name: "gender".into(),
                categories: vec!["m".into()],
            },
            Axis {
                name: "age".into(),
                categories: vec!["mid".into(), "young".into()],
            },
        ])
        .unwrap();
        let projected = c.with_schema(&narrow).unwrap();
        assert_eq!(projected.annotators()[0].values, vec![1, 2]);
        assert_eq!(projected.annotators()[1].values, vec![0, 0]);
        assert_eq!(narrow.hash(), c.schema().hash());
    }

    #[test]
    fn subset_reindexes() {
        let c = toy_corpus();
        let sub = c.subset(&[false, true, true], &[true, true]).unwrap();
        assert_eq!(sub.items().len(), 2);
        assert_eq!(sub.annotations().len(), 2);
        assert_eq!(
            sub.annotations()[0],
            Annotation {
                item: 0,
                annotator: 0,
                label: 1
            }
        );
    }
}
