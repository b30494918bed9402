//! Batch losses over feature matrices: the EC-STFL ratio loss with its
//! analytic gradient, softmax cross-entropy, center loss, and the joint
//! objective `L = L_s + lambda * L_ecstfl`.
//!
//! EC-STFL is a ratio of class-frequency-weighted distance sums over a
//! mini-batch of features `x_1..x_n` (row vectors, taken just before the
//! softmax layer):
//!
//! ```text
//!             sum over ordered pairs i != j, same label   ||x_i - x_j|| / N_i
//! L_ecstfl = ---------------------------------------------------------------
//!             sum over ordered pairs i != j, diff label   ||x_i - x_j|| / N_j
//! ```
//!
//! where `N_i` is the number of batch samples sharing `x_i`'s label
//! (including `x_i` itself). The `1/N` weights make every class contribute
//! on equal footing regardless of how many samples it has in the batch.
//! Minimizing the ratio pulls same-label features together and pushes
//! different-label features apart.
//!
//! When a batch holds a single label the denominator is empty and the loss is
//! undefined; the batch is marked `skipped` and its gradient is zero, so the
//! joint objective falls back to the softmax term alone.

use ndarray::Array2;

use crate::annotation::{EmotionCategory, CATEGORY_COUNT};
use crate::error::{Error, Result};
use crate::validation;

/// A mini-batch of `n` feature rows in `R^d` with one label per row.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    features: Array2<f64>,
    labels: Vec<EmotionCategory>,
}

impl FeatureBatch {
    pub fn new(features: Array2<f64>, labels: Vec<EmotionCategory>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(validation!("feature batch must be non-empty, got {n}x{d}"));
        }
        if labels.len() != n {
            return Err(validation!(
                "label count {} does not match batch size {n}",
                labels.len()
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(validation!("feature batch contains NaN or infinite values"));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[EmotionCategory] {
        &self.labels
    }

    /// Batch frequency of each category (the `N` weights).
    pub fn class_counts(&self) -> [usize; CATEGORY_COUNT] {
        let mut counts = [0usize; CATEGORY_COUNT];
        for &label in &self.labels {
            counts[label.slot()] += 1;
        }
        counts
    }

    pub fn distinct_labels(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }
}

/// Value and gradient of one loss term over one batch.
///
/// `skipped = true` means the term was undefined on this batch (single-label
/// EC-STFL); the gradient is then the zero matrix and the value is 0.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub grad: Array2<f64>,
    pub skipped: bool,
}

/// EC-STFL loss and its gradient with respect to the feature rows.
pub fn ec_stfl_loss(batch: &FeatureBatch) -> Result<LossResult> {
    let n = batch.len();
    let d = batch.dim();
    if n < 2 {
        return Err(validation!("EC-STFL needs at least 2 samples, got {n}"));
    }
    if batch.distinct_labels() < 2 {
        return Ok(LossResult {
            value: 0.0,
            grad: Array2::zeros((n, d)),
            skipped: true,
        });
    }

    let counts = batch.class_counts();
    let features = batch.features();
    let labels = batch.labels();

    // Walk unordered pairs once; each ordered direction contributes its own
    // 1/N weight. Same label: both directions weigh 1/N_i. Different labels:
    // (i,j) weighs 1/N_j and (j,i) weighs 1/N_i.
    let mut intra = 0.0;
    let mut inter = 0.0;
    let mut intra_dir = Array2::<f64>::zeros((n, d));
    let mut inter_dir = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut dist_sq = 0.0;
            for c in 0..d {
                let delta = features[(i, c)] - features[(j, c)];
                dist_sq += delta * delta;
            }
            let dist = dist_sq.sqrt();
            let weight = if labels[i] == labels[j] {
                2.0 / counts[labels[i].slot()] as f64
            } else {
                1.0 / counts[labels[i].slot()] as f64 + 1.0 / counts[labels[j].slot()] as f64
            };
            let (sum, dir) = if labels[i] == labels[j] {
                (&mut intra, &mut intra_dir)
            } else {
                (&mut inter, &mut inter_dir)
            };
            *sum += weight * dist;
            if dist > 0.0 {
                let scale = weight / dist;
                for c in 0..d {
                    let delta = features[(i, c)] - features[(j, c)];
                    dir[(i, c)] += scale * delta;
                    dir[(j, c)] -= scale * delta;
                }
            }
        }
    }

    if inter == 0.0 {
        return Err(Error::CollapsedFeatures);
    }

    let value = intra / inter;
    // Quotient rule: d(u/v) = du/v - (u/v^2) dv.
    let grad = &intra_dir / inter - &inter_dir * (intra / (inter * inter));
    Ok(LossResult {
        value,
        grad,
        skipped: false,
    })
}

/// Compare the analytic EC-STFL gradient against central finite differences.
///
/// Each entry is perturbed by a step proportional to its magnitude,
/// `h = epsilon * max(1, |x|)`, so the check is meaningful at any feature
/// scale (the loss itself is scale-invariant). Returns the largest entrywise
/// difference relative to the gradient's max magnitude.
pub fn ec_stfl_grad_check(batch: &FeatureBatch, epsilon: f64) -> Result<f64> {
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(validation!("epsilon {epsilon} outside [1e-7, 1e-4]"));
    }
    let analytic = ec_stfl_loss(batch)?;
    if analytic.skipped {
        return Err(validation!(
            "gradient check is undefined on a skipped (single-label) batch"
        ));
    }

    let n = batch.len();
    let d = batch.dim();
    let mut numeric = Array2::<f64>::zeros((n, d));
    let mut perturbed = batch.features().clone();
    for i in 0..n {
        for c in 0..d {
            let original = perturbed[(i, c)];
            let h = epsilon * original.abs().max(1.0);
            perturbed[(i, c)] = original + h;
            let plus = ec_stfl_loss(&FeatureBatch::new(
                perturbed.clone(),
                batch.labels().to_vec(),
            )?)?
            .value;
            perturbed[(i, c)] = original - h;
            let minus = ec_stfl_loss(&FeatureBatch::new(
                perturbed.clone(),
                batch.labels().to_vec(),
            )?)?
            .value;
            perturbed[(i, c)] = original;
            numeric[(i, c)] = (plus - minus) / (2.0 * h);
        }
    }

    let scale = analytic
        .grad
        .iter()
        .chain(numeric.iter())
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
        .max(1e-12);
    let max_diff = analytic
        .grad
        .iter()
        .zip(numeric.iter())
        .fold(0.0f64, |acc, (&a, &g)| acc.max((a - g).abs()));
    Ok(max_diff / scale)
}

/// Mean softmax cross-entropy over the batch; gradient is with respect to
/// the logits: `(softmax - onehot) / n`.
pub fn softmax_xent(logits: &Array2<f64>, labels: &[EmotionCategory]) -> Result<LossResult> {
    let (n, k) = logits.dim();
    if n == 0 || k != CATEGORY_COUNT {
        return Err(validation!("logits must be n x {CATEGORY_COUNT}, got {n}x{k}"));
    }
    if labels.len() != n {
        return Err(validation!(
            "label count {} does not match logit rows {n}",
            labels.len()
        ));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(validation!("logits contain NaN or infinite values"));
    }

    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros((n, k));
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let mut total = 0.0;
        for &v in row {
            total += (v - max).exp();
        }
        let log_z = max + total.ln();
        value += log_z - row[label.slot()];
        for c in 0..k {
            grad[(i, c)] = (row[c] - log_z).exp() / n as f64;
        }
        grad[(i, label.slot())] -= 1.0 / n as f64;
    }

    Ok(LossResult {
        value: value / n as f64,
        grad,
        skipped: false,
    })
}

/// Per-class feature centers for the center-loss comparator.
#[derive(Debug, Clone)]
pub struct ClassCenters {
    centers: Array2<f64>,
    update_rate: f64,
}

impl ClassCenters {
    /// Zero-initialized centers, one per category.
    pub fn zeros(dim: usize, update_rate: f64) -> Result<Self> {
        if dim == 0 {
            return Err(validation!("center dimension must be positive"));
        }
        if !(update_rate > 0.0 && update_rate <= 1.0) {
            return Err(validation!("update_rate {update_rate} outside (0, 1]"));
        }
        Ok(Self {
            centers: Array2::zeros((CATEGORY_COUNT, dim)),
            update_rate,
        })
    }

    pub fn centers(&self) -> &Array2<f64> {
        &self.centers
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }
}

/// Center loss `(1/2n) * sum_i ||x_i - c_{y_i}||^2` with gradient
/// `(x_i - c_{y_i}) / n` per row, followed by the batch-mean center update
/// scaled by the update rate.
pub fn center_loss(batch: &FeatureBatch, centers: &mut ClassCenters) -> Result<LossResult> {
    let n = batch.len();
    let d = batch.dim();
    if centers.dim() != d {
        return Err(validation!(
            "center dimension {} does not match feature dimension {d}",
            centers.dim()
        ));
    }

    let features = batch.features();
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros((n, d));
    for (i, &label) in batch.labels().iter().enumerate() {
        let slot = label.slot();
        for c in 0..d {
            let delta = features[(i, c)] - centers.centers[(slot, c)];
            value += delta * delta;
            grad[(i, c)] = delta / n as f64;
        }
    }
    value /= 2.0 * n as f64;

    // c_k <- c_k - rate * sum_i (c_k - x_i) / (1 + n_k), summed over the
    // batch samples of class k.
    let counts = batch.class_counts();
    let mut shift = Array2::<f64>::zeros((CATEGORY_COUNT, d));
    for (i, &label) in batch.labels().iter().enumerate() {
        let slot = label.slot();
        for c in 0..d {
            shift[(slot, c)] += centers.centers[(slot, c)] - features[(i, c)];
        }
    }
    for slot in 0..CATEGORY_COUNT {
        if counts[slot] == 0 {
            continue;
        }
        let scale = centers.update_rate / (1.0 + counts[slot] as f64);
        for c in 0..d {
            centers.centers[(slot, c)] -= scale * shift[(slot, c)];
        }
    }

    Ok(LossResult {
        value,
        grad,
        skipped: false,
    })
}

/// The joint objective `L_s + lambda * L_ecstfl` with gradients on both
/// surfaces it touches: the logits (softmax term) and the feature rows
/// (EC-STFL term).
#[derive(Debug, Clone)]
pub struct JointLoss {
    pub value: f64,
    pub softmax: f64,
    pub ecstfl: f64,
    pub grad_logits: Array2<f64>,
    pub grad_features: Array2<f64>,
    pub skipped: bool,
}

pub fn joint_loss(batch: &FeatureBatch, logits: &Array2<f64>, lambda: f64) -> Result<JointLoss> {
    if lambda < 0.0 {
        return Err(validation!("lambda must be non-negative, got {lambda}"));
    }
    if logits.nrows() != batch.len() {
        return Err(validation!(
            "logit rows {} do not match batch size {}",
            logits.nrows(),
            batch.len()
        ));
    }
    let softmax = softmax_xent(logits, batch.labels())?;

    // The skip rule also covers batches of one sample, where EC-STFL's
    // pair sums are empty.
    if batch.len() < 2 || batch.distinct_labels() < 2 {
        let n = batch.len();
        let d = batch.dim();
        return Ok(JointLoss {
            value: softmax.value,
            softmax: softmax.value,
            ecstfl: 0.0,
            grad_logits: softmax.grad,
            grad_features: Array2::zeros((n, d)),
            skipped: true,
        });
    }

    let ecstfl = ec_stfl_loss(batch)?;
    Ok(JointLoss {
        value: softmax.value + lambda * ecstfl.value,
        softmax: softmax.value,
        ecstfl: ecstfl.value,
        grad_logits: softmax.grad,
        grad_features: ecstfl.grad * lambda,
        skipped: false,
    })
}

/// One row of the per-step loss trace.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossTraceRow {
    pub step: usize,
    pub loss_softmax: f64,
    pub loss_ecstfl: f64,
    pub loss_total: f64,
    pub skipped: bool,
}

/// Write a loss trace as CSV rows `step,L_s,L_ecstfl,L_total,skipped`.
pub fn write_loss_trace(path: &std::path::Path, rows: &[LossTraceRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["step", "L_s", "L_ecstfl", "L_total", "skipped"])?;
    for row in rows {
        writer.write_record([
            row.step.to_string(),
            row.loss_softmax.to_string(),
            row.loss_ecstfl.to_string(),
            row.loss_total.to_string(),
            (row.skipped as u8).to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Convenience constructor for 1-D feature batches in tests and examples.
pub fn batch_1d(values: &[f64], labels: &[EmotionCategory]) -> Result<FeatureBatch> {
    let features = Array2::from_shape_vec((values.len(), 1), values.to_vec())
        .map_err(|e| validation!("{e}"))?;
    FeatureBatch::new(features, labels.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use EmotionCategory::*;

    fn random_batch(
        seed: u64,
        n: usize,
        d: usize,
        classes: usize,
    ) -> FeatureBatch {
        let mut rng = substream(seed, "losses/test");
        let features = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        let labels: Vec<EmotionCategory> = (0..n)
            .map(|i| {
                // Force at least two distinct labels.
                let slot = if i < 2 { i } else { rng.random_range(0..classes) };
                EmotionCategory::ALL[slot]
            })
            .collect();
        FeatureBatch::new(features, labels).unwrap()
    }

    #[test]
    fn worked_one_dimensional_example() {
        // Intra: two clusters at unit spacing, each counted in both orders
        // with weight 1/2 -> 2. Inter: ordered cross distances sum to 80,
        // each weighted 1/2 -> 40. Ratio 0.05.
        let batch = batch_1d(&[0.0, 1.0, 10.0, 11.0], &[Happy, Happy, Sad, Sad]).unwrap();
        let result = ec_stfl_loss(&batch).unwrap();
        assert!(!result.skipped);
        assert!((result.value - 0.05).abs() < 1e-12, "value = {}", result.value);
    }

    #[test]
    fn all_singleton_classes_give_zero_loss() {
        let batch = batch_1d(&[0.0, 1.0, 2.0, 3.0], &[Happy, Sad, Neutral, Angry]).unwrap();
        let result = ec_stfl_loss(&batch).unwrap();
        assert_eq!(result.value, 0.0);
        assert!(!result.skipped);
    }

    #[test]
    fn single_label_batch_is_skipped_with_zero_grad() {
        let batch = batch_1d(&[0.0, 1.0, 2.0], &[Happy, Happy, Happy]).unwrap();
        let result = ec_stfl_loss(&batch).unwrap();
        assert!(result.skipped);
        assert_eq!(result.value, 0.0);
        assert!(result.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn coincident_cross_class_features_collapse() {
        let batch = batch_1d(&[1.5, 1.5], &[Happy, Sad]).unwrap();
        match ec_stfl_loss(&batch) {
            Err(Error::CollapsedFeatures) => {}
            other => panic!("expected CollapsedFeatures, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_features() {
        let features = Array2::from_shape_vec((2, 1), vec![f64::NAN, 0.0]).unwrap();
        assert!(FeatureBatch::new(features, vec![Happy, Sad]).is_err());
    }

    #[test]
    fn grad_check_on_worked_example() {
        let batch = batch_1d(&[0.0, 1.0, 10.0, 11.0], &[Happy, Happy, Sad, Sad]).unwrap();
        let err = ec_stfl_grad_check(&batch, 1e-6).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn grad_check_on_random_batch() {
        let batch = random_batch(11, 8, 16, 3);
        let err = ec_stfl_grad_check(&batch, 1e-5).unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn grad_check_is_scale_independent() {
        let batch = batch_1d(&[0.0, 1.0, 10.0, 11.0], &[Happy, Happy, Sad, Sad]).unwrap();
        let scaled = FeatureBatch::new(batch.features() * 1000.0, batch.labels().to_vec()).unwrap();
        let err = ec_stfl_grad_check(&scaled, 1e-6).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn grad_check_rejects_skipped_batches_and_bad_epsilon() {
        let single = batch_1d(&[0.0, 1.0], &[Happy, Happy]).unwrap();
        assert!(ec_stfl_grad_check(&single, 1e-5).is_err());
        let batch = batch_1d(&[0.0, 1.0], &[Happy, Sad]).unwrap();
        assert!(ec_stfl_grad_check(&batch, 1e-3).is_err());
    }

    #[test]
    fn scale_and_translation_invariance() {
        let batch = random_batch(21, 10, 6, 4);
        let base = ec_stfl_loss(&batch).unwrap().value;
        for c in [0.5, 2.0, 1000.0] {
            let scaled =
                FeatureBatch::new(batch.features() * c, batch.labels().to_vec()).unwrap();
            let v = ec_stfl_loss(&scaled).unwrap().value;
            assert!((v - base).abs() / base.abs() < 1e-9, "c={c}: {v} vs {base}");
        }
        let shift = ndarray::Array1::from_iter((0..6).map(|i| 3.0 + i as f64));
        let translated =
            FeatureBatch::new(batch.features() + &shift, batch.labels().to_vec()).unwrap();
        let v = ec_stfl_loss(&translated).unwrap().value;
        assert!((v - base).abs() / base.abs() < 1e-9);
    }

    #[test]
    fn permutation_invariance() {
        let batch = random_batch(31, 9, 4, 3);
        let base = ec_stfl_loss(&batch).unwrap().value;
        let order: Vec<usize> = (0..9).rev().collect();
        let features = Array2::from_shape_fn((9, 4), |(i, c)| batch.features()[(order[i], c)]);
        let labels: Vec<EmotionCategory> = order.iter().map(|&i| batch.labels()[i]).collect();
        let permuted = FeatureBatch::new(features, labels).unwrap();
        let v = ec_stfl_loss(&permuted).unwrap().value;
        assert!((v - base).abs() / base.abs() < 1e-12);
    }

    #[test]
    fn separation_monotonicity() {
        // Move class B rigidly along +e1; every cross-class distance grows,
        // intra distances are fixed, so the ratio must strictly decrease.
        let mut previous = f64::INFINITY;
        for offset in [2.0, 4.0, 8.0, 16.0] {
            let features = Array2::from_shape_vec(
                (4, 2),
                vec![0.0, 0.0, 0.0, 1.0, offset, 0.2, offset, 1.3],
            )
            .unwrap();
            let batch = FeatureBatch::new(features, vec![Happy, Happy, Sad, Sad]).unwrap();
            let v = ec_stfl_loss(&batch).unwrap().value;
            assert!(v < previous, "offset {offset}: {v} !< {previous}");
            previous = v;
        }
    }

    #[test]
    fn softmax_uniform_and_saturated() {
        let labels = vec![Happy, Sad, Neutral];
        let uniform = Array2::zeros((3, 7));
        let result = softmax_xent(&uniform, &labels).unwrap();
        assert!((result.value - (7.0f64).ln()).abs() < 1e-12);

        let mut aligned = Array2::from_elem((3, 7), -20.0);
        for (i, &label) in labels.iter().enumerate() {
            aligned[(i, label.slot())] = 20.0;
        }
        let saturated = softmax_xent(&aligned, &labels).unwrap();
        assert!(saturated.value < 1e-8, "loss = {}", saturated.value);
    }

    #[test]
    fn softmax_grad_matches_finite_differences() {
        let mut rng = substream(41, "losses/softmax");
        let logits = Array2::from_shape_fn((5, 7), |_| rng.sample::<f64, _>(StandardNormal));
        let labels: Vec<EmotionCategory> = (0..5)
            .map(|_| EmotionCategory::ALL[rng.random_range(0..7)])
            .collect();
        let analytic = softmax_xent(&logits, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..5 {
            for c in 0..7 {
                let mut plus = logits.clone();
                plus[(i, c)] += eps;
                let mut minus = logits.clone();
                minus[(i, c)] -= eps;
                let numeric = (softmax_xent(&plus, &labels).unwrap().value
                    - softmax_xent(&minus, &labels).unwrap().value)
                    / (2.0 * eps);
                assert!(
                    (numeric - analytic.grad[(i, c)]).abs() < 1e-6,
                    "({i},{c}): {numeric} vs {}",
                    analytic.grad[(i, c)]
                );
            }
        }
    }

    #[test]
    fn center_loss_values_and_grad() {
        // Features equal to their centers: zero loss.
        let mut centers = ClassCenters::zeros(2, 0.5).unwrap();
        let batch = FeatureBatch::new(
            Array2::zeros((3, 2)),
            vec![Happy, Sad, Neutral],
        )
        .unwrap();
        let result = center_loss(&batch, &mut centers.clone()).unwrap();
        assert_eq!(result.value, 0.0);

        // One sample at distance 2 from its (zero) center: (1/2) * 4 = 2.
        let single = FeatureBatch::new(
            Array2::from_shape_vec((1, 2), vec![2.0, 0.0]).unwrap(),
            vec![Happy],
        )
        .unwrap();
        let result = center_loss(&single, &mut centers).unwrap();
        assert!((result.value - 2.0).abs() < 1e-15);

        // Random batch: gradient vs finite differences with centers frozen.
        let mut rng = substream(51, "losses/center");
        let features = Array2::from_shape_fn((6, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let labels: Vec<EmotionCategory> = (0..6)
            .map(|_| EmotionCategory::ALL[rng.random_range(0..4)])
            .collect();
        let frozen = ClassCenters::zeros(3, 0.5).unwrap();
        let batch = FeatureBatch::new(features.clone(), labels.clone()).unwrap();
        let analytic = center_loss(&batch, &mut frozen.clone()).unwrap();
        let eps = 1e-6;
        for i in 0..6 {
            for c in 0..3 {
                let mut plus = features.clone();
                plus[(i, c)] += eps;
                let mut minus = features.clone();
                minus[(i, c)] -= eps;
                let value = |f: Array2<f64>| {
                    center_loss(
                        &FeatureBatch::new(f, labels.clone()).unwrap(),
                        &mut frozen.clone(),
                    )
                    .unwrap()
                    .value
                };
                let numeric = (value(plus) - value(minus)) / (2.0 * eps);
                assert!((numeric - analytic.grad[(i, c)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn center_update_pulls_toward_batch_mean() {
        let mut centers = ClassCenters::zeros(1, 1.0).unwrap();
        let batch = batch_1d(&[4.0, 6.0], &[Happy, Happy]).unwrap();
        center_loss(&batch, &mut centers).unwrap();
        // shift = (0-4) + (0-6) = -10, scaled by 1/(1+2): center moves to 10/3.
        assert!((centers.centers()[(0, 0)] - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_reduces_to_softmax_when_lambda_zero_or_skipped() {
        let batch = batch_1d(&[0.0, 1.0, 10.0, 11.0], &[Happy, Happy, Sad, Sad]).unwrap();
        let mut rng = substream(61, "losses/joint");
        let logits = Array2::from_shape_fn((4, 7), |_| rng.sample::<f64, _>(StandardNormal));

        let softmax_only = softmax_xent(&logits, batch.labels()).unwrap();
        let zero_lambda = joint_loss(&batch, &logits, 0.0).unwrap();
        assert_eq!(zero_lambda.value, softmax_only.value);
        assert_eq!(zero_lambda.grad_logits, softmax_only.grad);

        let single = batch_1d(&[0.0, 1.0, 2.0], &[Happy, Happy, Happy]).unwrap();
        let logits3 = logits.slice(ndarray::s![0..3, ..]).to_owned();
        let skipped = joint_loss(&single, &logits3, 10.0).unwrap();
        assert!(skipped.skipped);
        let softmax3 = softmax_xent(&logits3, single.labels()).unwrap();
        assert_eq!(skipped.value, softmax3.value);
        assert_eq!(skipped.grad_logits, softmax3.grad);
        assert!(skipped.grad_features.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn joint_loss_composes_both_terms() {
        let batch = batch_1d(&[0.0, 1.0, 10.0, 11.0], &[Happy, Happy, Sad, Sad]).unwrap();
        let mut rng = substream(71, "losses/joint2");
        let logits = Array2::from_shape_fn((4, 7), |_| rng.sample::<f64, _>(StandardNormal));
        let joint = joint_loss(&batch, &logits, 10.0).unwrap();
        let softmax = softmax_xent(&logits, batch.labels()).unwrap();
        let ecstfl = ec_stfl_loss(&batch).unwrap();
        assert!((joint.value - (softmax.value + 10.0 * ecstfl.value)).abs() < 1e-15);
        assert_eq!(joint.grad_features, ecstfl.grad * 10.0);
    }
}
