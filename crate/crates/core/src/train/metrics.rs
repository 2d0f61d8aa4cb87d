use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of this class.
    pub support: usize,
}

/// Accuracy and macro-averaged precision, recall and F1 over all `k`
/// classes, including classes with no gold instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// `num / den` with 0/0 read as 0.
fn ratio((num, den): (u64, u64)) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of the fractions (0/0 read as 0), summed exactly and rounded once.
/// Falls back to floating point if the exact sum outgrows 128 bits.
fn mean_of_ratios(fracs: &[(u64, u64)]) -> f64 {
    if fracs.is_empty() {
        return 0.0;
    }
    let exact = fracs.iter().try_fold((0u128, 1u128), |(n, d), &(a, b)| {
        if b == 0 || a == 0 {
            return Some((n, d));
        }
        let (a, b) = (u128::from(a), u128::from(b));
        let num = n.checked_mul(b)?.checked_add(a.checked_mul(d)?)?;
        let den = d.checked_mul(b)?;
        let g = gcd(num, den);
        Some((num / g, den / g))
    });
    match exact.and_then(|(n, d)| Some((n, d.checked_mul(fracs.len() as u128)?))) {
        Some((n, d)) => {
            let g = gcd(n, d).max(1);
            // Correctly rounded while both fit in 53 bits.
            (n / g) as f64 / (d / g) as f64
        }
        None => fracs.iter().copied().map(ratio).sum::<f64>() / fracs.len() as f64,
    }
}

/// Scores `predictions` against `gold`. A 0/0 precision or recall counts
/// as 0, and F1 is 0 when precision and recall are both 0. Macro averages
/// are computed exactly from the counts and rounded once.
pub fn evaluate_metrics(predictions: &[usize], gold: &[usize], k: usize) -> Result<MetricsReport> {
    if predictions.len() != gold.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if let Some(&bad) = predictions.iter().chain(gold).find(|&&c| c >= k) {
        return Err(Error::contract(format!("class {bad} out of range for {k} classes")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &g) in predictions.iter().zip(gold) {
        confusion[g][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut fracs = [Vec::new(), Vec::new(), Vec::new()];
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c] as u64;
            let predicted = (0..k).map(|g| confusion[g][c]).sum::<usize>() as u64;
            let support = confusion[c].iter().sum::<usize>();
            let (fp, fn_) = (predicted - tp, support as u64 - tp);
            // 2PR / (P + R) reduces to this when tp > 0, and both are 0 otherwise.
            let f1 = (2 * tp, if tp == 0 { 0 } else { 2 * tp + fp + fn_ });
            let (p, r) = ((tp, predicted), (tp, support as u64));
            fracs[0].push(p);
            fracs[1].push(r);
            fracs[2].push(f1);
            ClassMetrics {
                class: c,
                label: None,
                precision: ratio(p),
                recall: ratio(r),
                f1: ratio(f1),
                support,
            }
        })
        .collect();
    Ok(MetricsReport {
        accuracy: ratio((correct as u64, gold.len() as u64)),
        macro_precision: mean_of_ratios(&fracs[0]),
        macro_recall: mean_of_ratios(&fracs[1]),
        macro_f1: mean_of_ratios(&fracs[2]),
        per_class,
        confusion,
    })
}

impl MetricsReport {
    /// Attaches label names to the per-class entries.
    pub fn with_labels(mut self, labels: &[String]) -> Self {
        for c in &mut self.per_class {
            c.label = labels.get(c.class).cloned();
        }
        self
    }

    pub fn class_f1(&self) -> Vec<f64> {
        self.per_class.iter().map(|c| c.f1).collect()
    }

    /// JSON document with the report fields plus an optional `buckets` entry.
    pub fn to_json(&self, buckets: Option<&FrequencyBuckets>) -> Value {
        let mut doc = serde_json::to_value(self).expect("metrics serialize");
        if let Some(b) = buckets {
            doc["buckets"] = serde_json::to_value(b).expect("buckets serialize");
        }
        doc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Low,
    Medium,
    High,
}

/// Low up to and including 10 training cases, high above 100, medium
/// otherwise.
pub fn bucket_of(count: usize) -> Bucket {
    match count {
        0..=10 => Bucket::Low,
        11..=100 => Bucket::Medium,
        _ => Bucket::High,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub classes: Vec<usize>,
    /// Unweighted mean F1 of the member classes; `None` for an empty bucket.
    pub macro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBuckets {
    pub assignments: Vec<Bucket>,
    pub low: BucketSummary,
    pub medium: BucketSummary,
    pub high: BucketSummary,
}

impl FrequencyBuckets {
    pub fn summary(&self, bucket: Bucket) -> &BucketSummary {
        match bucket {
            Bucket::Low => &self.low,
            Bucket::Medium => &self.medium,
            Bucket::High => &self.high,
        }
    }
}

/// Groups classes by training frequency and averages `class_f1` within
/// each group.
pub fn bucketize_charges(train_frequencies: &[usize], class_f1: &[f64]) -> Result<FrequencyBuckets> {
    if train_frequencies.len() != class_f1.len() {
        return Err(Error::contract("one F1 score per class required"));
    }
    let assignments: Vec<Bucket> = train_frequencies.iter().map(|&c| bucket_of(c)).collect();
    let summarize = |bucket: Bucket| {
        let classes: Vec<usize> = (0..assignments.len()).filter(|&c| assignments[c] == bucket).collect();
        let macro_f1 = (!classes.is_empty())
            .then(|| classes.iter().map(|&c| class_f1[c]).sum::<f64>() / classes.len() as f64);
        BucketSummary { classes, macro_f1 }
    };
    Ok(FrequencyBuckets {
        low: summarize(Bucket::Low),
        medium: summarize(Bucket::Medium),
        high: summarize(Bucket::High),
        assignments,
    })
}

/// Pretty JSON text for a report.
pub fn metrics_json(report: &MetricsReport, buckets: Option<&FrequencyBuckets>) -> String {
    serde_json::to_string_pretty(&report.to_json(buckets)).expect("json")
}

/// Key set every metrics document carries.
pub const METRICS_KEYS: [&str; 5] = ["accuracy", "macro_precision", "macro_recall", "macro_f1", "per_class"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = evaluate_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn all_wrong() {
        let r = evaluate_metrics(&[1, 0], &[0, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(evaluate_metrics(&[0], &[0, 1], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(bucket_of(0), Bucket::Low);
        assert_eq!(bucket_of(10), Bucket::Low);
        assert_eq!(bucket_of(11), Bucket::Medium);
        assert_eq!(bucket_of(100), Bucket::Medium);
        assert_eq!(bucket_of(101), Bucket::High);
    }

    #[test]
    fn bucket_macro_f1() {
        let b = bucketize_charges(&[5, 50, 500, 7], &[0.2, 0.5, 0.9, 0.4]).unwrap();
        assert_eq!(b.low.classes, vec![0, 3]);
        assert!((b.low.macro_f1.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(b.high.macro_f1, Some(0.9));
    }
}
