//! Evaluation: confusion matrices, per-class recall, UAR/WAR, pooled
//! cross-validation metrics, and a deterministic 2-D feature projection.
//!
//! UAR (unweighted average recall) is the mean of per-class recalls and
//! treats every class equally regardless of support; WAR (weighted average
//! recall) is plain accuracy. Cross-validation metrics are pooled: all
//! per-fold predictions go into one confusion matrix rather than averaging
//! per-fold scores.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::annotation::{EmotionCategory, CATEGORY_COUNT};
use crate::error::Result;
use crate::validation;

/// 7x7 prediction counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; CATEGORY_COUNT]; CATEGORY_COUNT],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: EmotionCategory, pred: EmotionCategory) {
        self.counts[truth.slot()][pred.slot()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [u64; CATEGORY_COUNT] {
        let mut sums = [0u64; CATEGORY_COUNT];
        for (slot, row) in self.counts.iter().enumerate() {
            sums[slot] = row.iter().sum();
        }
        sums
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for t in 0..CATEGORY_COUNT {
            for p in 0..CATEGORY_COUNT {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }
}

/// Build a confusion matrix from parallel truth/prediction vectors.
pub fn confusion(truth: &[EmotionCategory], pred: &[EmotionCategory]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(validation!(
            "truth has {} labels but predictions have {}",
            truth.len(),
            pred.len()
        ));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(pred.iter()) {
        cm.record(t, p);
    }
    Ok(cm)
}

/// Recall per class plus the two summary metrics, as raw fractions in [0,1].
///
/// Classes with no ground-truth samples have undefined recall; they are
/// excluded from the UAR mean and listed in `excluded_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub uar: f64,
    pub war: f64,
    pub per_class_recall: [Option<f64>; CATEGORY_COUNT],
    pub n_per_class: [u64; CATEGORY_COUNT],
    pub excluded_classes: Vec<EmotionCategory>,
}

impl MetricReport {
    /// UAR as a percentage rounded to two decimals, as reported in tables.
    pub fn uar_percent(&self) -> f64 {
        (self.uar * 10000.0).round() / 100.0
    }

    pub fn war_percent(&self) -> f64 {
        (self.war * 10000.0).round() / 100.0
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(validation!("confusion matrix is empty"));
    }
    let row_sums = cm.row_sums();
    let mut per_class_recall = [None; CATEGORY_COUNT];
    let mut excluded_classes = Vec::new();
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    for slot in 0..CATEGORY_COUNT {
        if row_sums[slot] == 0 {
            excluded_classes.push(EmotionCategory::ALL[slot]);
            continue;
        }
        let recall = cm.counts[slot][slot] as f64 / row_sums[slot] as f64;
        per_class_recall[slot] = Some(recall);
        recall_sum += recall;
        present += 1;
    }
    let trace: u64 = (0..CATEGORY_COUNT).map(|slot| cm.counts[slot][slot]).sum();
    Ok(MetricReport {
        uar: recall_sum / present as f64,
        war: trace as f64 / total as f64,
        per_class_recall,
        n_per_class: row_sums,
        excluded_classes,
    })
}

/// One prediction: clip id, ground truth, predicted label.
pub type Prediction = (String, EmotionCategory, EmotionCategory);

/// Pool per-fold predictions into one confusion matrix and compute metrics.
///
/// Every expected clip must appear exactly once across the folds; a
/// duplicated or missing clip is an error naming the offender.
pub fn cv_aggregate(
    fold_predictions: &[Vec<Prediction>],
    expected_clips: &[String],
) -> Result<(ConfusionMatrix, MetricReport)> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut cm = ConfusionMatrix::default();
    for predictions in fold_predictions {
        for (clip_id, truth, pred) in predictions {
            if let Some(count) = seen.get(clip_id.as_str()) {
                return Err(validation!(
                    "clip {clip_id:?} predicted {} times",
                    count + 1
                ));
            }
            seen.insert(clip_id, 1);
            cm.record(*truth, *pred);
        }
    }
    for clip_id in expected_clips {
        if !seen.contains_key(clip_id.as_str()) {
            return Err(validation!("clip {clip_id:?} has no prediction"));
        }
    }
    if seen.len() != expected_clips.len() {
        let expected: std::collections::HashSet<&str> =
            expected_clips.iter().map(String::as_str).collect();
        let stray = seen
            .keys()
            .find(|id| !expected.contains(**id))
            .expect("count mismatch implies a stray clip");
        return Err(validation!("prediction for unknown clip {stray:?}"));
    }
    let report = metrics(&cm)?;
    Ok((cm, report))
}

/// Project feature rows onto their top-2 principal directions.
///
/// Features are centered first. Each principal direction is sign-fixed so
/// its largest-magnitude coordinate is positive, making the projection
/// deterministic.
pub fn project_2d(features: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, d) = features.dim();
    if n < 2 || d < 2 {
        return Err(validation!("projection needs n >= 2 and d >= 2, got {n}x{d}"));
    }
    let mean = features.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let centered = features - &mean;

    // Covariance (scaled by n-1; constant factors do not change directions).
    let mut cov = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in i..d {
            let mut sum = 0.0;
            for r in 0..n {
                sum += centered[(r, i)] * centered[(r, j)];
            }
            cov[(i, j)] = sum;
            cov[(j, i)] = sum;
        }
    }
    let frobenius: f64 = cov.iter().map(|&v| v * v).sum::<f64>().sqrt();
    if frobenius == 0.0 {
        return Err(validation!("features have rank 0; nothing to project"));
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen_symmetric(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));

    let mut coords = Array2::<f64>::zeros((n, 2));
    for (axis, &column) in order.iter().take(2).enumerate() {
        let mut direction: Vec<f64> = (0..d).map(|i| eigenvectors[(i, column)]).collect();
        let peak = (0..d)
            .max_by(|&a, &b| direction[a].abs().total_cmp(&direction[b].abs()))
            .expect("d >= 2");
        if direction[peak] < 0.0 {
            for v in &mut direction {
                *v = -*v;
            }
        }
        for r in 0..n {
            let mut dot = 0.0;
            for i in 0..d {
                dot += centered[(r, i)] * direction[i];
            }
            coords[(r, axis)] = dot;
        }
    }
    Ok(coords)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, column eigenvectors).
fn jacobi_eigen_symmetric(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let d = matrix.nrows();
    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(d);
    let scale: f64 = matrix.iter().map(|&x| x * x).sum::<f64>().sqrt().max(1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off < 1e-14 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a[(i, i)]).collect();
    (eigenvalues, v)
}

/// Write the confusion matrix as CSV with category names on both axes.
pub fn write_confusion_csv(path: &Path, cm: &ConfusionMatrix) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["truth\\pred".to_string()];
    header.extend(EmotionCategory::ALL.iter().map(|c| c.name().to_string()));
    writer.write_record(&header)?;
    for truth in EmotionCategory::ALL {
        let mut row = vec![truth.name().to_string()];
        row.extend(cm.counts[truth.slot()].iter().map(u64::to_string));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Write projected coordinates as `clip_id,label,px,py`.
pub fn write_projection_csv(
    path: &Path,
    clip_ids: &[String],
    labels: &[EmotionCategory],
    coords: &Array2<f64>,
) -> Result<()> {
    if clip_ids.len() != coords.nrows() || labels.len() != coords.nrows() {
        return Err(validation!(
            "projection rows {} do not match {} ids / {} labels",
            coords.nrows(),
            clip_ids.len(),
            labels.len()
        ));
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["clip_id", "label", "px", "py"])?;
    for (row, (clip_id, label)) in clip_ids.iter().zip(labels.iter()).enumerate() {
        writer.write_record([
            clip_id.as_str(),
            &label.index().to_string(),
            &coords[(row, 0)].to_string(),
            &coords[(row, 1)].to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
