//! Hard, soft and perspectivist evaluation metrics, plus the correlation
//! between actual and predicted per-item disagreement.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Corpus;
use crate::network::linalg::argmax;

/// Default number of equal-width confidence bins for ECE.
pub const DEFAULT_BINS: usize = 15;

/// Collapse threshold: share of predictions in the majority class.
pub const COLLAPSE_SHARE: f64 = 0.99;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("distribution {index} sums to {sum}, not 1")]
    NotNormalized { index: usize, sum: f64 },
    #[error("need at least 3 items with 2+ annotators, found {0}")]
    TooFewItems(usize),
    #[error("n_bins must be >= 1")]
    InvalidBins,
    #[error("class index {0} out of range")]
    ClassOutOfRange(usize),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardMetrics {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub kappa: f64,
    pub mcc: f64,
}

/// `K × K` counts, rows gold, columns predicted.
pub fn confusion_matrix(preds: &[usize], golds: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), golds.len()));
    }
    let mut cm = vec![vec![0usize; k]; k];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= k || g >= k {
            return Err(MetricsError::ClassOutOfRange(p.max(g)));
        }
        cm[g][p] += 1;
    }
    Ok(cm)
}

/// Accuracy, macro/weighted F1, Cohen's κ and multiclass MCC. Degenerate
/// denominators (a constant predictor, a single gold class) give 0.
pub fn hard_metrics(preds: &[usize], golds: &[usize], k: usize) -> Result<HardMetrics> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let cm = confusion_matrix(preds, golds, k)?;
    let n = preds.len() as f64;
    let gold_count: Vec<f64> = (0..k).map(|c| cm[c].iter().sum::<usize>() as f64).collect();
    let pred_count: Vec<f64> = (0..k)
        .map(|c| cm.iter().map(|r| r[c]).sum::<usize>() as f64)
        .collect();
    let correct: f64 = (0..k).map(|c| cm[c][c] as f64).sum();

    let mut f1_sum = 0.0;
    let mut present = 0usize;
    let mut f1_weighted = 0.0;
    for c in 0..k {
        if gold_count[c] == 0.0 && pred_count[c] == 0.0 {
            continue;
        }
        let tp = cm[c][c] as f64;
        let f1 = 2.0 * tp / (gold_count[c] + pred_count[c]);
        f1_sum += f1;
        present += 1;
        f1_weighted += f1 * gold_count[c] / n;
    }

    let p_o = correct / n;
    let p_e: f64 = (0..k).map(|c| gold_count[c] * pred_count[c]).sum::<f64>() / (n * n);
    let kappa = if (1.0 - p_e).abs() > 0.0 {
        (p_o - p_e) / (1.0 - p_e)
    } else {
        0.0
    };

    let cross: f64 = (0..k).map(|c| gold_count[c] * pred_count[c]).sum();
    let sq_pred: f64 = pred_count.iter().map(|x| x * x).sum();
    let sq_gold: f64 = gold_count.iter().map(|x| x * x).sum();
    let denom = ((n * n - sq_pred) * (n * n - sq_gold)).sqrt();
    let mcc = if denom > 0.0 {
        (correct * n - cross) / denom
    } else {
        0.0
    };

    Ok(HardMetrics {
        accuracy: p_o,
        f1_macro: f1_sum / present.max(1) as f64,
        f1_weighted,
        kappa,
        mcc,
    })
}

fn kl_base2(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).log2())
        .sum()
}

/// Jensen-Shannon divergence with base-2 logs, in `[0, 1]`.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl_base2(p, &m) + 0.5 * kl_base2(q, &m)).clamp(0.0, 1.0)
}

/// `Σ_k |p_k − q_k|`.
pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

fn check_distributions(pred: &[Vec<f64>], gold: &[Vec<f64>]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), gold.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for (index, (p, q)) in pred.iter().zip(gold).enumerate() {
        if p.len() != q.len() {
            return Err(MetricsError::LengthMismatch(p.len(), q.len()));
        }
        for d in [p, q] {
            let sum: f64 = d.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(MetricsError::NotNormalized { index, sum });
            }
        }
    }
    Ok(())
}

/// Mean JSD and mean L1 distance (MD) between per-item distributions.
pub fn soft_metrics(pred_dists: &[Vec<f64>], gold_dists: &[Vec<f64>]) -> Result<(f64, f64)> {
    check_distributions(pred_dists, gold_dists)?;
    let n = pred_dists.len() as f64;
    let (mut jsd, mut md) = (0.0, 0.0);
    for (p, q) in pred_dists.iter().zip(gold_dists) {
        jsd += jensen_shannon(p, q);
        md += l1_distance(p, q);
    }
    Ok((jsd / n, md / n))
}

/// Equal-width, right-closed bins over `[0, 1]`; confidence 0 joins the
/// first bin.
pub fn expected_calibration_error(
    confidences: &[f64],
    correct: &[bool],
    n_bins: usize,
) -> Result<f64> {
    if n_bins == 0 {
        return Err(MetricsError::InvalidBins);
    }
    if confidences.len() != correct.len() {
        return Err(MetricsError::LengthMismatch(
            confidences.len(),
            correct.len(),
        ));
    }
    if confidences.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hits[b] as f64 / m - conf_sum[b] / m).abs()
        })
        .sum())
}

/// `(er, ece)`: ER is the mean item-level total-variation distance
/// `½ Σ_k |p_k − q_k|`; ECE uses per-sample max confidence.
pub fn perspectivist_metrics(
    confidences: &[f64],
    correct: &[bool],
    pred_dists: &[Vec<f64>],
    gold_dists: &[Vec<f64>],
    n_bins: usize,
) -> Result<(f64, f64)> {
    check_distributions(pred_dists, gold_dists)?;
    let er = pred_dists
        .iter()
        .zip(gold_dists)
        .map(|(p, q)| 0.5 * l1_distance(p, q))
        .sum::<f64>()
        / pred_dists.len() as f64;
    let ece = expected_calibration_error(confidences, correct, n_bins)?;
    Ok((er, ece))
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let constant = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
    if constant(x) || constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Population variance `(n Σl² − (Σl)²) / n²`, exact in the numerator so
/// equal label multisets give bit-identical values.
fn class_variance(labels: &[usize]) -> f64 {
    let n = labels.len() as u128;
    let sum: u128 = labels.iter().map(|&l| l as u128).sum();
    let sq: u128 = labels.iter().map(|&l| (l as u128) * (l as u128)).sum();
    (n * sq - sum * sum) as f64 / (n * n) as f64
}

/// Base-2 Shannon entropy of the label histogram.
fn label_entropy(labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    counts.sort_unstable();
    let n = labels.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementCorrelation {
    pub var_pearson: f64,
    pub var_spearman: f64,
    pub ent_pearson: f64,
    pub ent_spearman: f64,
    /// Some side had zero variance across items; its correlations are 0.
    pub collapse: bool,
    pub actual_variance: Vec<f64>,
    pub predicted_variance: Vec<f64>,
    pub actual_entropy: Vec<f64>,
    pub predicted_entropy: Vec<f64>,
}

/// Correlates actual and predicted per-item label variance and entropy.
pub fn disagreement_correlation(
    actual: &[Vec<usize>],
    predicted: &[Vec<usize>],
) -> Result<DisagreementCorrelation> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch(actual.len(), predicted.len()));
    }
    for (a, p) in actual.iter().zip(predicted) {
        if a.len() != p.len() {
            return Err(MetricsError::LengthMismatch(a.len(), p.len()));
        }
    }
    let eligible = actual.iter().filter(|a| a.len() >= 2).count();
    if eligible != actual.len() || eligible < 3 {
        return Err(MetricsError::TooFewItems(eligible.min(actual.len())));
    }
    let actual_variance: Vec<f64> = actual.iter().map(|a| class_variance(a)).collect();
    let predicted_variance: Vec<f64> = predicted.iter().map(|p| class_variance(p)).collect();
    let actual_entropy: Vec<f64> = actual.iter().map(|a| label_entropy(a)).collect();
    let predicted_entropy: Vec<f64> = predicted.iter().map(|p| label_entropy(p)).collect();

    let mut collapse = false;
    let mut corr = |v: Option<f64>| {
        v.unwrap_or_else(|| {
            collapse = true;
            0.0
        })
    };
    let var_pearson = corr(pearson(&actual_variance, &predicted_variance));
    let var_spearman = corr(spearman(&actual_variance, &predicted_variance));
    let ent_pearson = corr(pearson(&actual_entropy, &predicted_entropy));
    let ent_spearman = corr(spearman(&actual_entropy, &predicted_entropy));
    Ok(DisagreementCorrelation {
        var_pearson,
        var_spearman,
        ent_pearson,
        ent_spearman,
        collapse,
        actual_variance,
        predicted_variance,
        actual_entropy,
        predicted_entropy,
    })
}

/// True iff one class takes more than 99% of the predictions.
pub fn detect_collapse(preds: &[usize], k: usize) -> bool {
    if preds.is_empty() {
        return false;
    }
    let mut counts = vec![0usize; k.max(preds.iter().copied().max().unwrap_or(0) + 1)];
    for &p in preds {
        counts[p] += 1;
    }
    let top = counts.into_iter().max().unwrap_or(0);
    // top / n > 0.99, in integers.
    top * 100 > preds.len() * 99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub kappa: f64,
    pub mcc: f64,
    pub jsd: f64,
    pub md: f64,
    pub er: f64,
    pub ece: f64,
    /// `None` when fewer than three items have two or more annotators.
    pub var_pearson: Option<f64>,
    pub var_spearman: Option<f64>,
    pub ent_pearson: Option<f64>,
    pub ent_spearman: Option<f64>,
    pub collapse_flag: bool,
    pub n_samples: usize,
    pub n_items: usize,
}

/// Per-item quantities behind an [`EvalReport`], kept for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemDisagreement {
    pub item_id: String,
    pub actual_variance: f64,
    pub predicted_variance: f64,
}

/// Scores per-annotation `p_yI` predictions (in `corpus` annotation order).
/// The predicted item distribution is the mean of `p_yI` over the item's
/// annotators; the gold one is the normalized label histogram.
pub fn evaluate_predictions(
    corpus: &Corpus,
    p_yi: &[Vec<f64>],
    n_bins: usize,
) -> Result<(EvalReport, Vec<ItemDisagreement>)> {
    let annotations = corpus.annotations();
    if p_yi.len() != annotations.len() {
        return Err(MetricsError::LengthMismatch(p_yi.len(), annotations.len()));
    }
    let k = corpus.num_classes();
    let preds: Vec<usize> = p_yi.iter().map(|p| argmax(p)).collect();
    let golds: Vec<usize> = annotations.iter().map(|a| a.label).collect();
    let hard = hard_metrics(&preds, &golds, k)?;
    let confidences: Vec<f64> = p_yi
        .iter()
        .map(|p| p.iter().copied().fold(0.0, f64::max))
        .collect();
    let correct: Vec<bool> = preds.iter().zip(&golds).map(|(p, g)| p == g).collect();

    let groups: Vec<Vec<usize>> = corpus
        .annotations_by_item()
        .into_iter()
        .filter(|g| !g.is_empty())
        .collect();
    let mut pred_dists = Vec::with_capacity(groups.len());
    let mut gold_dists = Vec::with_capacity(groups.len());
    for group in &groups {
        let mut pred = vec![0.0; k];
        let mut gold = vec![0.0; k];
        for &i in group {
            for (acc, v) in pred.iter_mut().zip(&p_yi[i]) {
                *acc += v;
            }
            gold[golds[i]] += 1.0;
        }
        let m = group.len() as f64;
        pred.iter_mut().for_each(|v| *v /= m);
        gold.iter_mut().for_each(|v| *v /= m);
        pred_dists.push(pred);
        gold_dists.push(gold);
    }
    let (jsd, md) = soft_metrics(&pred_dists, &gold_dists)?;
    let (er, ece) =
        perspectivist_metrics(&confidences, &correct, &pred_dists, &gold_dists, n_bins)?;

    let multi: Vec<&Vec<usize>> = groups.iter().filter(|g| g.len() >= 2).collect();
    let actual: Vec<Vec<usize>> = multi
        .iter()
        .map(|g| g.iter().map(|&i| golds[i]).collect())
        .collect();
    let predicted: Vec<Vec<usize>> = multi
        .iter()
        .map(|g| g.iter().map(|&i| preds[i]).collect())
        .collect();
    let mut collapse_flag = detect_collapse(&preds, k);
    let mut items = Vec::new();
    let corr = match disagreement_correlation(&actual, &predicted) {
        Ok(c) => {
            collapse_flag |= c.collapse;
            for (g, (&av, &pv)) in multi
                .iter()
                .zip(c.actual_variance.iter().zip(&c.predicted_variance))
            {
                items.push(ItemDisagreement {
                    item_id: corpus.items()[annotations[g[0]].item].item_id.clone(),
                    actual_variance: av,
                    predicted_variance: pv,
                });
            }
            Some(c)
        }
        Err(MetricsError::TooFewItems(_)) => None,
        Err(e) => return Err(e),
    };

    let report = EvalReport {
        accuracy: hard.accuracy,
        f1_macro: hard.f1_macro,
        f1_weighted: hard.f1_weighted,
        kappa: hard.kappa,
        mcc: hard.mcc,
        jsd,
        md,
        er,
        ece,
        var_pearson: corr.as_ref().map(|c| c.var_pearson),
        var_spearman: corr.as_ref().map(|c| c.var_spearman),
        ent_pearson: corr.as_ref().map(|c| c.ent_pearson),
        ent_spearman: corr.as_ref().map(|c| c.ent_spearman),
        collapse_flag,
        n_samples: preds.len(),
        n_items: groups.len(),
    };
    Ok((report, items))
}

impl EvalReport {
    /// Aligned two-column table.
    pub fn to_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let rows: Vec<(&str, String)> = vec![
            ("accuracy", format!("{:.4}", self.accuracy)),
            ("f1_macro", format!("{:.4}", self.f1_macro)),
            ("f1_weighted", format!("{:.4}", self.f1_weighted)),
            ("kappa", format!("{:.4}", self.kappa)),
            ("mcc", format!("{:.4}", self.mcc)),
            ("jsd", format!("{:.4}", self.jsd)),
            ("md", format!("{:.4}", self.md)),
            ("er", format!("{:.4}", self.er)),
            ("ece", format!("{:.4}", self.ece)),
            ("var_pearson", fmt_opt(self.var_pearson)),
            ("var_spearman", fmt_opt(self.var_spearman)),
            ("ent_pearson", fmt_opt(self.ent_pearson)),
            ("ent_spearman", fmt_opt(self.ent_spearman)),
            ("collapse_flag", self.collapse_flag.to_string()),
            ("n_samples", self.n_samples.to_string()),
            ("n_items", self.n_items.to_string()),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>10}");
        }
        out
    }
}
