use std::hash::Hasher;

use fnv::FnvHasher;

use super::{Corpus, DatasetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Use the `f_*` columns already loaded.
    Precomputed,
    /// Signed hashed bag of words with `dim` buckets.
    HashedBow { dim: usize },
}

/// Lowercased tokens split on anything that is not alphanumeric.
fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashes each token with 64-bit FNV-1a into `dim` buckets: the bucket is
/// `h mod dim` and the top bit of `h` picks the sign. The count vector is
/// scaled to unit Euclidean norm; a zero vector stays zero.
pub fn hashed_bow(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if dim == 0 {
        return v;
    }
    for token in tokens(text) {
        let mut hasher = FnvHasher::default();
        hasher.write(token.as_bytes());
        let h = hasher.finish();
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Fills (or validates) item feature vectors.
pub fn featurize_items(corpus: &Corpus, mode: FeatureMode) -> Result<Corpus> {
    match mode {
        FeatureMode::Precomputed => {
            let items = corpus.items();
            let width = items[0].features.len();
            for it in items {
                if it.features.len() != width || width == 0 {
                    return Err(DatasetError::InconsistentWidth {
                        item: it.item_id.clone(),
                        expected: width.max(1),
                        found: it.features.len(),
                    });
                }
            }
            Ok(corpus.clone())
        }
        FeatureMode::HashedBow { dim } => {
            if dim == 0 {
                return Err(DatasetError::InconsistentWidth {
                    item: corpus.items()[0].item_id.clone(),
                    expected: 1,
                    found: 0,
                });
            }
            let items = corpus
                .items()
                .iter()
                .map(|it| {
                    let text =
                        it.raw_text
                            .as_deref()
                            .ok_or_else(|| DatasetError::NoTextAvailable {
                                item: it.item_id.clone(),
                            })?;
                    let mut out = it.clone();
                    out.features = hashed_bow(text, dim);
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            corpus.with_items(items)
        }
    }
}
