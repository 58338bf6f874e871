use serde::{Deserialize, Serialize};

use crate::corpus::LabelMap;

/// Raw evaluation tallies. Merging is associative, so per-thread counts can
/// be combined in any order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    /// Rows are gold labels, columns predictions.
    pub confusion: Vec<Vec<u64>>,
    pub planted: u64,
    pub selection_correct: u64,
    pub topk_hits: u64,
    pub window_histogram: Vec<u64>,
}

impl Counts {
    pub fn new(num_labels: usize, num_windows: usize) -> Self {
        Self {
            confusion: vec![vec![0; num_labels]; num_labels],
            window_histogram: vec![0; num_windows],
            ..Self::default()
        }
    }

    pub fn record(&mut self, gold: usize, pred: usize, selected: usize, active: &[usize], planted: Option<usize>) {
        self.confusion[gold][pred] += 1;
        self.window_histogram[selected] += 1;
        if let Some(w) = planted {
            self.planted += 1;
            self.selection_correct += u64::from(selected == w);
            self.topk_hits += u64::from(active.contains(&w));
        }
    }

    pub fn merge(&mut self, other: &Counts) {
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.window_histogram.iter_mut().zip(&other.window_histogram) {
            *x += y;
        }
        self.planted += other.planted;
        self.selection_correct += other.selection_correct;
        self.topk_hits += other.topk_hits;
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    /// Mean F1 over classes that occur in the gold labels or predictions.
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
    /// `None` when no utterance carries a planted window.
    pub window_selection_accuracy: Option<f64>,
    pub topk_hit_rate: Option<f64>,
    pub window_histogram: Vec<u64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_counts(counts: &Counts, labels: &LabelMap) -> Self {
        let c = counts.confusion.len();
        let total = counts.total();
        let mut per_class = Vec::with_capacity(c);
        let mut macro_sum = 0.0;
        let mut macro_n = 0usize;
        let mut weighted = 0.0;
        let mut correct = 0;
        for k in 0..c {
            let tp = counts.confusion[k][k];
            correct += tp;
            let support: u64 = counts.confusion[k].iter().sum();
            let predicted: u64 = counts.confusion.iter().map(|row| row[k]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            if support > 0 || predicted > 0 {
                macro_sum += f1;
                macro_n += 1;
            }
            weighted += f1 * support as f64;
            per_class.push(ClassMetrics {
                label: labels.name(k).to_string(),
                precision,
                recall,
                f1,
                support,
            });
        }
        let planted = (counts.planted > 0).then_some(counts.planted);
        Self {
            micro_f1: ratio(correct, total),
            macro_f1: if macro_n == 0 { 0.0 } else { macro_sum / macro_n as f64 },
            weighted_f1: if total == 0 { 0.0 } else { weighted / total as f64 },
            per_class,
            confusion: counts.confusion.clone(),
            window_selection_accuracy: planted.map(|n| ratio(counts.selection_correct, n)),
            topk_hit_rate: planted.map(|n| ratio(counts.topk_hits, n)),
            window_histogram: counts.window_histogram.clone(),
        }
    }
}
