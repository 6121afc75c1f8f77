//! Binary classification metrics: confusion matrix, summary scores, ROC and
//! AUC. The positive class defaults to label 1 (Abnormal).

use std::fmt::Write;

use thiserror::Error;

pub const DEFAULT_POSITIVE: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0}")]
    Contract(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
}

type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub positive_class: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same outcomes seen from the other class of a binary problem.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
            positive_class: 1 - self.positive_class.min(1),
        }
    }
}

pub fn confusion(
    preds: &[usize],
    labels: &[usize],
    positive_class: usize,
) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(MetricsError::Contract(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(MetricsError::Contract("no samples".into()));
    }
    let mut cm = ConfusionMatrix {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
        positive_class,
    };
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == positive_class, l == positive_class) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Scores derived from a confusion matrix. A 0/0 ratio is reported as 0
/// and flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

/// F1 as the harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> (f64, bool) {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn summary(cm: &ConfusionMatrix) -> Result<Summary> {
    if cm.total() == 0 {
        return Err(MetricsError::Contract("empty confusion matrix".into()));
    }
    let (tp, fp, fn_) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64);
    let accuracy = (cm.tp + cm.tn) as f64 / cm.total() as f64;
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    let (f1, f1_undefined) = f1_score(precision, recall);
    Ok(Summary {
        accuracy,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples with score ≥ threshold are called positive. The first point
    /// uses `+inf`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn class_counts(scores: &[f64], labels: &[usize], positive_class: usize) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(MetricsError::Contract(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|&&l| l == positive_class).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::Undefined(
            "ROC needs both classes present".into(),
        ));
    }
    Ok((pos, neg))
}

/// ROC over every distinct score, highest first, with a `+inf` sentinel
/// giving the (0, 0) start. Tied scores enter in one step, which makes the
/// trapezoidal area equal to the Mann-Whitney statistic.
pub fn roc(scores: &[f64], labels: &[usize]) -> Result<RocCurve> {
    roc_for(scores, labels, DEFAULT_POSITIVE)
}

pub fn roc_for(scores: &[f64], labels: &[usize], positive_class: usize) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels, positive_class)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    // Twice the area in units of one positive-negative pair.
    let mut area2: u128 = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == positive_class {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - prev_fp) * (tp + prev_tp)) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        });
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half. Quadratic; meant as an independent check of [`roc`].
pub fn auc_pairwise_oracle(scores: &[f64], labels: &[usize]) -> Result<f64> {
    auc_pairwise_oracle_for(scores, labels, DEFAULT_POSITIVE)
}

pub fn auc_pairwise_oracle_for(
    scores: &[f64],
    labels: &[usize],
    positive_class: usize,
) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels, positive_class)?;
    let mut twice: u128 = 0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != positive_class {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == positive_class {
                continue;
            }
            if si > sj {
                twice += 2;
            } else if si == sj {
                twice += 1;
            }
        }
    }
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        let t = if p.threshold.is_infinite() {
            "inf".to_string()
        } else {
            format!("{}", p.threshold)
        };
        writeln!(s, "{t},{},{}", p.fpr, p.tpr).unwrap();
    }
    s
}

/// Rows are actual classes, columns predicted, negative class first; the
/// fraction column is normalised within each actual class.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let frac = |a: usize, b: usize| ratio(a as f64, (a + b) as f64).0;
    let rows = [
        ("negative", "negative", cm.tn, frac(cm.tn, cm.fp)),
        ("negative", "positive", cm.fp, frac(cm.fp, cm.tn)),
        ("positive", "negative", cm.fn_, frac(cm.fn_, cm.tp)),
        ("positive", "positive", cm.tp, frac(cm.tp, cm.fn_)),
    ];
    let mut s = String::from("actual,predicted,count,fraction\n");
    for (a, p, c, f) in rows {
        writeln!(s, "{a},{p},{c},{f}").unwrap();
    }
    s
}

/// Percentage with two decimals, as in published tables.
pub fn percent(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}
