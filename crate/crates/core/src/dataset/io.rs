//! CSV ingestion and export.
//!
//! Three UTF-8 files with header rows:
//! `annotators.csv` (`annotator_id,<axis_1>,...`), `items.csv`
//! (`item_id,text` or `item_id,f_0,...,f_{J-1}`) and `annotations.csv`
//! (`item_id,annotator_id,label`). Row numbers in errors are file line
//! numbers, the header being line 1.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use super::{
    Annotation, AnnotatorProfile, Axis, Corpus, DatasetError, DemographicSchema, Item, Result,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub items: PathBuf,
    pub annotators: PathBuf,
    pub annotations: PathBuf,
}

impl CorpusPaths {
    /// The conventional file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            items: dir.join("items.csv"),
            annotators: dir.join("annotators.csv"),
            annotations: dir.join("annotations.csv"),
        }
    }
}

fn read_table(path: &Path) -> Result<(StringRecord, Vec<(u64, StringRecord)>)> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = ReaderBuilder::new()
        .has_headers(true)
        .trim(Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record));
    }
    Ok((header, rows))
}

fn column(header: &StringRecord, file: &Path, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DatasetError::MissingColumn {
            file: file.display().to_string(),
            column: name.to_string(),
        })
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

/// Reads and validates a corpus. The class count is `1 + max label` unless
/// `num_classes` overrides it.
pub fn load_corpus(paths: &CorpusPaths, num_classes: Option<usize>) -> Result<Corpus> {
    let (schema, annotators) = read_annotators(&paths.annotators)?;
    let items = read_items(&paths.items)?;
    let annotations = read_annotations(&paths.annotations, &items, &annotators)?;
    let max_label = annotations
        .iter()
        .map(|a| a.label)
        .max()
        .ok_or(DatasetError::EmptyCorpus("no annotations"))?;
    let k = num_classes.unwrap_or(max_label + 1);
    if max_label >= k {
        return Err(DatasetError::LabelOutOfRange {
            label: max_label,
            num_classes: k,
        });
    }
    Corpus::new(schema, items, annotators, annotations, k)
}

fn read_annotators(path: &Path) -> Result<(DemographicSchema, Vec<AnnotatorProfile>)> {
    let (header, rows) = read_table(path)?;
    let id_col = column(&header, path, "annotator_id")?;
    let axis_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != id_col)
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if axis_cols.is_empty() {
        return Err(DatasetError::MissingColumn {
            file: file_name(path),
            column: "<demographic axis>".into(),
        });
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyCorpus("no annotators"));
    }

    // Category order is lexicographic so it does not depend on row order.
    let mut categories: Vec<BTreeSet<String>> = vec![BTreeSet::new(); axis_cols.len()];
    for (_, row) in &rows {
        for (d, (col, _)) in axis_cols.iter().enumerate() {
            categories[d].insert(row.get(*col).unwrap_or("").to_string());
        }
    }
    let schema = DemographicSchema::new(
        axis_cols
            .iter()
            .zip(categories)
            .map(|((_, name), cats)| Axis {
                name: name.clone(),
                categories: cats.into_iter().collect(),
            })
            .collect(),
    )?;

    let mut seen = HashSet::new();
    let mut profiles = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        let id = row.get(id_col).unwrap_or("").to_string();
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId {
                kind: "annotator",
                id,
            });
        }
        let values = axis_cols
            .iter()
            .enumerate()
            .map(|(d, (col, name))| {
                let value = row.get(*col).unwrap_or("");
                schema
                    .category_index(d, value)
                    .ok_or_else(|| DatasetError::UnknownCategory {
                        axis: name.clone(),
                        value: value.to_string(),
                        row: *line,
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        profiles.push(AnnotatorProfile {
            annotator_id: id,
            values,
        });
    }
    Ok((schema, profiles))
}

fn read_items(path: &Path) -> Result<Vec<Item>> {
    let (header, rows) = read_table(path)?;
    let id_col = column(&header, path, "item_id")?;
    let text_col = header.iter().position(|h| h == "text");
    let feature_cols: Vec<(usize, String)> = match text_col {
        Some(_) => Vec::new(),
        None => {
            let width = header.len() - 1;
            (0..width)
                .map(|j| {
                    let name = format!("f_{j}");
                    column(&header, path, &name).map(|c| (c, name))
                })
                .collect::<Result<_>>()?
        }
    };
    if text_col.is_none() && feature_cols.is_empty() {
        return Err(DatasetError::MissingColumn {
            file: file_name(path),
            column: "text".into(),
        });
    }
    let mut items = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        let item_id = row.get(id_col).unwrap_or("").to_string();
        let raw_text = text_col.map(|c| row.get(c).unwrap_or("").to_string());
        let features = feature_cols
            .iter()
            .map(|(c, name)| {
                let raw = row.get(*c).unwrap_or("");
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DatasetError::InvalidFeature {
                        row: *line,
                        column: name.clone(),
                        value: raw.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        items.push(Item {
            item_id,
            features,
            raw_text,
        });
    }
    if items.is_empty() {
        return Err(DatasetError::EmptyCorpus("no items"));
    }
    Ok(items)
}

fn read_annotations(
    path: &Path,
    items: &[Item],
    annotators: &[AnnotatorProfile],
) -> Result<Vec<Annotation>> {
    let (header, rows) = read_table(path)?;
    let item_col = column(&header, path, "item_id")?;
    let annotator_col = column(&header, path, "annotator_id")?;
    let label_col = column(&header, path, "label")?;
    let item_index: HashMap<&str, usize> = items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.item_id.as_str(), i))
        .collect();
    let annotator_index: HashMap<&str, usize> = annotators
        .iter()
        .enumerate()
        .map(|(i, a)| (a.annotator_id.as_str(), i))
        .collect();
    let mut pairs = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        let item_id = row.get(item_col).unwrap_or("");
        let annotator_id = row.get(annotator_col).unwrap_or("");
        let raw_label = row.get(label_col).unwrap_or("");
        let item = *item_index
            .get(item_id)
            .ok_or_else(|| DatasetError::UnknownItem {
                id: item_id.to_string(),
                row: *line,
            })?;
        let annotator =
            *annotator_index
                .get(annotator_id)
                .ok_or_else(|| DatasetError::UnknownAnnotator {
                    id: annotator_id.to_string(),
                    row: *line,
                })?;
        let label = raw_label
            .parse::<usize>()
            .map_err(|_| DatasetError::InvalidLabel {
                row: *line,
                value: raw_label.to_string(),
            })?;
        if !pairs.insert((item, annotator)) {
            return Err(DatasetError::DuplicateAnnotation {
                item: item_id.to_string(),
                annotator: annotator_id.to_string(),
            });
        }
        out.push(Annotation {
            item,
            annotator,
            label,
        });
    }
    if out.is_empty() {
        return Err(DatasetError::EmptyCorpus("no annotations"));
    }
    Ok(out)
}

/// Writes the corpus in the same three-file layout `load_corpus` reads.
/// Featurized items are written as `f_*` columns, otherwise as text.
pub fn write_corpus(corpus: &Corpus, paths: &CorpusPaths) -> Result<()> {
    let schema = corpus.schema();

    let mut header = vec!["annotator_id".to_string()];
    header.extend(schema.axes().iter().map(|a| a.name.clone()));
    let rows = corpus.annotators().iter().map(|p| {
        let mut row = vec![p.annotator_id.clone()];
        row.extend(p.values.iter().enumerate().map(|(d, &v)| {
            schema.axes()[d]
                .categories
                .get(v)
                .cloned()
                .unwrap_or_else(|| "UNK".into())
        }));
        row
    });
    write_table(&paths.annotators, header, rows)?;

    let width = corpus.feature_dim();
    let mut header = vec!["item_id".to_string()];
    if width > 0 {
        header.extend((0..width).map(|j| format!("f_{j}")));
    } else {
        header.push("text".into());
    }
    let rows = corpus.items().iter().map(|it| {
        let mut row = vec![it.item_id.clone()];
        if width > 0 {
            row.extend(it.features.iter().map(|v| v.to_string()));
        } else {
            row.push(it.raw_text.clone().unwrap_or_default());
        }
        row
    });
    write_table(&paths.items, header, rows)?;

    let header = vec!["item_id".into(), "annotator_id".into(), "label".into()];
    let rows = corpus.annotations().iter().map(|a| {
        vec![
            corpus.items()[a.item].item_id.clone(),
            corpus.annotators()[a.annotator].annotator_id.clone(),
            a.label.to_string(),
        ]
    });
    write_table(&paths.annotations, header, rows)
}

fn write_table(
    path: &Path,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = WriterBuilder::new().from_path(path).map_err(csv_err)?;
    writer.write_record(&header).map_err(csv_err)?;
    for row in rows {
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}
