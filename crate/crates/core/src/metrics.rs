//! Confusion matrices, classification reports, and color-histogram comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

pub const HISTOGRAM_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    /// Row-major `C × C`; rows are true classes, columns predictions.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Self {
        let c = class_names.len();
        Self { class_names, counts: vec![vec![0; c]; c] }
    }

    /// Build from class indices rather than names.
    pub fn from_indices(class_names: Vec<String>, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!("{} truths vs {} predictions", truth.len(), predicted.len())));
        }
        let mut cm = Self::zeros(class_names);
        let c = cm.class_count();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= c || p >= c {
                return Err(Error::UnknownLabel(format!("class index {}", t.max(p))));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.class_count()).map(|i| self.counts[i][i]).sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.counts[k][k]
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        (0..self.class_count()).filter(|&i| i != k).map(|i| self.counts[i][k]).sum()
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        (0..self.class_count()).filter(|&j| j != k).map(|j| self.counts[k][j]).sum()
    }

    /// Number of samples whose true class is `k`.
    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }
}

pub fn confusion_matrix<S: AsRef<str>>(
    true_labels: &[S],
    predicted_labels: &[S],
    class_names: &[String],
) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} truths vs {} predictions",
            true_labels.len(),
            predicted_labels.len()
        )));
    }
    let index = |s: &str| {
        class_names.iter().position(|c| c == s).ok_or_else(|| Error::UnknownLabel(s.to_string()))
    };
    let mut cm = ConfusionMatrix::zeros(class_names.to_vec());
    for (t, p) in true_labels.iter().zip(predicted_labels) {
        let (i, j) = (index(t.as_ref())?, index(p.as_ref())?);
        cm.counts[i][j] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean, or 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of one class; empty denominators give 0.
///
/// # Panics
/// If `class_index` is out of range.
pub fn precision_recall_f1(cm: &ConfusionMatrix, class_index: usize) -> Scores {
    let tp = cm.true_positives(class_index);
    let precision = ratio(tp, tp + cm.false_positives(class_index));
    let recall = ratio(tp, tp + cm.false_negatives(class_index));
    Scores { precision, recall, f1: f1_score(precision, recall) }
}

/// Unweighted mean of each field.
pub fn macro_average(per_class: &[Scores]) -> Scores {
    let n = per_class.len().max(1) as f64;
    Scores {
        precision: per_class.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    #[serde(flatten)]
    pub scores: Scores,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassReport>,
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: Scores,
    pub total: u64,
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let per_class: Vec<ClassReport> = (0..cm.class_count())
        .map(|k| ClassReport {
            class: cm.class_names[k].clone(),
            scores: precision_recall_f1(cm, k),
            support: cm.support(k),
        })
        .collect();
    let scores: Vec<Scores> = per_class.iter().map(|c| c.scores).collect();
    Ok(ClassificationReport {
        macro_avg: macro_average(&scores),
        accuracy: cm.trace() as f64 / total as f64,
        per_class,
        total,
    })
}

/// Round half away from zero to two decimals.
pub fn round2(x: f64) -> f64 {
    // The nudge keeps decimal ties such as 0.285 from falling below the midpoint in binary.
    (x * 100.0 + 0.5 + 1e-9).floor() / 100.0
}

fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

impl ClassificationReport {
    /// Fixed-width text table with per-class, `accuracy` and `macro avg` rows.
    pub fn render(&self) -> String {
        let w = self
            .per_class
            .iter()
            .map(|c| c.class.len())
            .chain(std::iter::once("macro avg".len()))
            .max()
            .unwrap_or(0);
        let mut s = String::new();
        let _ = writeln!(s, "{:>w$} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
        s.push('\n');
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:>w$} {:>9} {:>9} {:>9} {:>9}",
                c.class,
                fmt2(c.scores.precision),
                fmt2(c.scores.recall),
                fmt2(c.scores.f1),
                c.support
            );
        }
        s.push('\n');
        let _ = writeln!(s, "{:>w$} {:>9} {:>9} {:>9} {:>9}", "accuracy", "", "", fmt2(self.accuracy), self.total);
        let _ = writeln!(
            s,
            "{:>w$} {:>9} {:>9} {:>9} {:>9}",
            "macro avg",
            fmt2(self.macro_avg.precision),
            fmt2(self.macro_avg.recall),
            fmt2(self.macro_avg.f1),
            self.total
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-channel 256-bin frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    pub channels: [Vec<f64>; 3],
}

impl ColorHistogram {
    pub fn bins(&self) -> impl Iterator<Item = f64> + '_ {
        self.channels.iter().flatten().copied()
    }

    pub fn len(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// # Panics
/// If the image has no pixels.
pub fn color_histogram(img: &Image) -> ColorHistogram {
    assert!(!img.is_empty(), "histogram of an empty image");
    let mut counts = [[0u64; HISTOGRAM_BINS]; 3];
    for px in img.pixels() {
        for c in 0..3 {
            counts[c][px[c] as usize] += 1;
        }
    }
    let n = (img.width() * img.height()) as f64;
    ColorHistogram { channels: counts.map(|ch| ch.iter().map(|&k| k as f64 / n).collect()) }
}

pub fn histogram_rms_difference(a: &ColorHistogram, b: &ColorHistogram) -> Result<f64> {
    let same = a.channels.iter().zip(&b.channels).all(|(x, y)| x.len() == y.len());
    if !same || a.is_empty() {
        return Err(Error::ShapeMismatch(format!("histograms with {} and {} bins", a.len(), b.len())));
    }
    let sum: f64 = a.bins().zip(b.bins()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}
