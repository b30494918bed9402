//! Synthetic clip sequences with class imbalance, usable-frame filtering,
//! 16-frame temporal alignment, and the 5-fold split protocol.
//!
//! Each clip is a `T x F` matrix of per-frame feature vectors plus a
//! usable-frame mask. Generation draws, per class, an affine-in-time
//! trajectory template (a class center plus a linear temporal drift) and adds
//! seeded Gaussian noise per clip. Affine templates make the pipeline
//! self-checking: piecewise-linear resampling reproduces them exactly, so
//! with zero noise every clip of a class aligns to the same 16-frame matrix
//! regardless of its original length.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotation::{EmotionCategory, CATEGORY_COUNT};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::validation;

/// Number of frames every clip is aligned to before entering the model.
pub const TARGET_FRAMES: usize = 16;

/// Default minimum usable-frame rate; clips below it are eliminated.
pub const DEFAULT_MIN_USABLE_RATE: f64 = 0.5;

/// Class proportions of the single-labeled corpus the synthetic defaults
/// mimic: happy, sad, neutral, angry, surprise, disgust, fear.
pub const DEFAULT_PROPORTIONS: [f64; CATEGORY_COUNT] =
    [0.2063, 0.1665, 0.2246, 0.1848, 0.1242, 0.0122, 0.0814];

/// A variable-length sequence of per-frame feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSequence {
    pub clip_id: String,
    /// `T x F` frame features.
    pub frames: Array2<f64>,
    /// One flag per frame; unusable frames are skipped by interpolation.
    pub usable: Vec<bool>,
    pub label: Option<EmotionCategory>,
}

impl ClipSequence {
    pub fn new(
        clip_id: String,
        frames: Array2<f64>,
        usable: Vec<bool>,
        label: Option<EmotionCategory>,
    ) -> Result<Self> {
        if frames.nrows() == 0 {
            return Err(validation!("clip {clip_id:?} has no frames"));
        }
        if usable.len() != frames.nrows() {
            return Err(validation!(
                "clip {clip_id:?}: mask length {} does not match {} frames",
                usable.len(),
                frames.nrows()
            ));
        }
        Ok(Self {
            clip_id,
            frames,
            usable,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn usable_count(&self) -> usize {
        self.usable.iter().filter(|&&u| u).count()
    }

    pub fn usable_fraction(&self) -> f64 {
        self.usable_count() as f64 / self.len() as f64
    }
}

/// Parameters of a synthetic dataset; together with the seed they determine
/// the generated clips exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub class_proportions: [f64; CATEGORY_COUNT],
    pub n_clips: usize,
    pub feature_dim: usize,
    /// Scale of the class centers; larger values separate the clusters.
    pub cluster_separation: f64,
    /// Standard deviation of the per-frame Gaussian noise.
    pub noise_scale: f64,
    /// Inclusive range of raw clip lengths.
    pub length_range: (usize, usize),
    /// Independent probability that a frame is unusable.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            class_proportions: DEFAULT_PROPORTIONS,
            n_clips: 700,
            feature_dim: 8,
            cluster_separation: 3.0,
            noise_scale: 2.0,
            length_range: (8, 24),
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clips == 0 {
            return Err(validation!("n_clips must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(validation!("feature_dim must be positive"));
        }
        if self.class_proportions.iter().any(|&p| p < 0.0) {
            return Err(validation!("class proportions must be non-negative"));
        }
        let sum: f64 = self.class_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(validation!("class proportions sum to {sum}, expected 1"));
        }
        let (lo, hi) = self.length_range;
        if lo == 0 || lo > hi {
            return Err(validation!("invalid length range {lo}..={hi}"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(validation!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            ));
        }
        if self.cluster_separation < 0.0 || self.noise_scale < 0.0 {
            return Err(validation!("separation and noise must be non-negative"));
        }
        Ok(())
    }
}

/// Apportion `total` into integer class counts by largest-remainder
/// rounding of the proportions. Ties go to the lower class index.
pub fn largest_remainder_counts(
    proportions: &[f64; CATEGORY_COUNT],
    total: usize,
) -> [usize; CATEGORY_COUNT] {
    let mut counts = [0usize; CATEGORY_COUNT];
    let mut fractions: Vec<(usize, f64)> = Vec::with_capacity(CATEGORY_COUNT);
    let mut assigned = 0usize;
    for (slot, &p) in proportions.iter().enumerate() {
        let quota = p * total as f64;
        let floor = quota.floor() as usize;
        counts[slot] = floor;
        assigned += floor;
        fractions.push((slot, quota - floor as f64));
    }
    fractions.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(slot, _) in fractions.iter().take(total.saturating_sub(assigned)) {
        counts[slot] += 1;
    }
    counts
}

/// Generate the synthetic dataset described by `spec`.
///
/// Clips come out grouped by class in id order. Each clip draws its length,
/// noise, and mask from a stream derived from `(seed, clip index)`, so
/// generation order never affects content.
pub fn synth_generate(spec: &DatasetSpec) -> Result<Vec<ClipSequence>> {
    spec.validate()?;
    let counts = largest_remainder_counts(&spec.class_proportions, spec.n_clips);
    for (slot, (&count, &p)) in counts.iter().zip(spec.class_proportions.iter()).enumerate() {
        if count == 0 && p > 0.0 {
            return Err(validation!(
                "class {} rounds to 0 clips at n_clips={}; increase n_clips",
                EmotionCategory::ALL[slot],
                spec.n_clips
            ));
        }
    }

    let f = spec.feature_dim;
    // Per-class affine template: g_k(tau) = center_k + (tau - 1/2) * drift_k.
    let mut centers = Vec::with_capacity(CATEGORY_COUNT);
    let mut drifts = Vec::with_capacity(CATEGORY_COUNT);
    for slot in 0..CATEGORY_COUNT {
        let mut rng = substream(spec.seed, &format!("data/template/{slot}"));
        let scale = spec.cluster_separation / (f as f64).sqrt();
        let center: Vec<f64> = (0..f)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let drift: Vec<f64> = (0..f)
            .map(|_| 0.5 * scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        centers.push(center);
        drifts.push(drift);
    }

    let mut clips = Vec::with_capacity(spec.n_clips);
    let mut clip_index = 0usize;
    for (slot, &count) in counts.iter().enumerate() {
        let label = EmotionCategory::ALL[slot];
        for _ in 0..count {
            let mut rng = substream(spec.seed, &format!("data/clip/{clip_index}"));
            let (lo, hi) = spec.length_range;
            let t = rng.random_range(lo..=hi);
            let mut frames = Array2::<f64>::zeros((t, f));
            for row in 0..t {
                let tau = if t == 1 { 0.5 } else { row as f64 / (t - 1) as f64 };
                for col in 0..f {
                    let template = centers[slot][col] + (tau - 0.5) * drifts[slot][col];
                    let noise: f64 = rng.sample(StandardNormal);
                    frames[(row, col)] = template + spec.noise_scale * noise;
                }
            }
            let usable: Vec<bool> = (0..t)
                .map(|_| rng.random::<f64>() >= spec.dropout_rate)
                .collect();
            clips.push(ClipSequence::new(
                format!("clip{clip_index:05}"),
                frames,
                usable,
                Some(label),
            )?);
            clip_index += 1;
        }
    }
    Ok(clips)
}

/// A clip eliminated by the usable-rate filter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedClip {
    pub clip_id: String,
    pub usable: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub n_input: usize,
    pub n_retained: usize,
    pub rejected: Vec<RejectedClip>,
}

/// Keep clips whose usable-frame fraction is at least `min_rate` and drop
/// their unusable frames. Exactly at the threshold counts as retained.
pub fn usable_rate_filter(
    clips: Vec<ClipSequence>,
    min_rate: f64,
) -> Result<(Vec<ClipSequence>, FilterReport)> {
    if !(0.0..=1.0).contains(&min_rate) {
        return Err(validation!("min_rate {min_rate} outside [0, 1]"));
    }
    let mut report = FilterReport {
        n_input: clips.len(),
        ..FilterReport::default()
    };
    let mut retained = Vec::with_capacity(clips.len());
    for clip in clips {
        if clip.usable_fraction() >= min_rate {
            retained.push(drop_unusable_frames(clip));
        } else {
            report.rejected.push(RejectedClip {
                clip_id: clip.clip_id.clone(),
                usable: clip.usable_count(),
                total: clip.len(),
            });
        }
    }
    report.n_retained = retained.len();
    Ok((retained, report))
}

fn drop_unusable_frames(clip: ClipSequence) -> ClipSequence {
    if clip.usable.iter().all(|&u| u) {
        return clip;
    }
    let kept: Vec<usize> = (0..clip.len()).filter(|&t| clip.usable[t]).collect();
    let f = clip.feature_dim();
    let frames = Array2::from_shape_fn((kept.len(), f), |(row, col)| {
        clip.frames[(kept[row], col)]
    });
    ClipSequence {
        clip_id: clip.clip_id,
        frames,
        usable: vec![true; kept.len()],
        label: clip.label,
    }
}

/// Align a clip to exactly `target` frames by piecewise-linear resampling of
/// its usable-frame sequence. The first and last usable frames are preserved
/// exactly and the output mask is all-true.
pub fn interpolate_to_length(clip: &ClipSequence, target: usize) -> Result<ClipSequence> {
    if target == 0 {
        return Err(validation!("target frame count must be positive"));
    }
    let rows: Vec<usize> = (0..clip.len()).filter(|&t| clip.usable[t]).collect();
    if rows.is_empty() {
        return Err(validation!("clip {:?} has no usable frames", clip.clip_id));
    }
    let f = clip.feature_dim();
    let u = rows.len();
    let frames = if u == 1 {
        Array2::from_shape_fn((target, f), |(_, col)| clip.frames[(rows[0], col)])
    } else if target == 1 {
        Array2::from_shape_fn((1, f), |(_, col)| clip.frames[(rows[0], col)])
    } else {
        Array2::from_shape_fn((target, f), |(s, col)| {
            let position = s as f64 * (u - 1) as f64 / (target - 1) as f64;
            let lower = position.floor() as usize;
            let fraction = position - lower as f64;
            if fraction == 0.0 {
                clip.frames[(rows[lower], col)]
            } else {
                let a = clip.frames[(rows[lower], col)];
                let b = clip.frames[(rows[lower + 1], col)];
                a + fraction * (b - a)
            }
        })
    };
    ClipSequence::new(
        clip.clip_id.clone(),
        frames,
        vec![true; target],
        clip.label,
    )
}

/// The preprocessing pipeline: filter clips by usable rate, then align the
/// survivors to [`TARGET_FRAMES`] frames.
pub fn preprocess(
    clips: Vec<ClipSequence>,
    min_rate: f64,
) -> Result<(Vec<ClipSequence>, FilterReport)> {
    let (retained, report) = usable_rate_filter(clips, min_rate)?;
    let aligned = retained
        .iter()
        .map(|clip| interpolate_to_length(clip, TARGET_FRAMES))
        .collect::<Result<Vec<_>>>()?;
    Ok((aligned, report))
}

/// Assignment of every clip to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// 1-based fold index of a clip.
    pub fn fold_of(&self, clip_id: &str) -> Option<usize> {
        self.fold_of.get(clip_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &fold in self.fold_of.values() {
            sizes[fold - 1] += 1;
        }
        sizes
    }

    /// Clip ids whose test fold is `fold` (1-based), in sorted order.
    pub fn test_ids(&self, fold: usize) -> Vec<String> {
        self.fold_of
            .iter()
            .filter(|&(_, &f)| f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.fold_of
            .iter()
            .filter(|&(_, &f)| f != fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn clip_ids(&self) -> Vec<String> {
        self.fold_of.keys().cloned().collect()
    }
}

/// Split clips into `k` folds: seeded shuffle, then contiguous parts whose
/// sizes differ by at most one.
pub fn kfold_split(clip_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(validation!("fold count must be positive"));
    }
    if clip_ids.len() < k {
        return Err(validation!(
            "cannot split {} clips into {k} folds",
            clip_ids.len()
        ));
    }
    let mut unique = HashSet::new();
    for id in clip_ids {
        if !unique.insert(id.as_str()) {
            return Err(validation!("duplicate clip_id {id:?} in fold input"));
        }
    }

    let mut order: Vec<usize> = (0..clip_ids.len()).collect();
    order.shuffle(&mut substream(seed, "folds"));

    let n = clip_ids.len();
    let base = n / k;
    let extra = n % k;
    let mut fold_of = BTreeMap::new();
    let mut cursor = 0usize;
    for fold in 1..=k {
        let size = base + usize::from(fold <= extra);
        for &index in &order[cursor..cursor + size] {
            fold_of.insert(clip_ids[index].clone(), fold);
        }
        cursor += size;
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Class-stratified variant: clips are shuffled within each class and dealt
/// round-robin, so fold sizes still differ by at most one while every class
/// spreads evenly across folds.
pub fn kfold_split_stratified(
    clips: &[(String, EmotionCategory)],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(validation!("fold count must be positive"));
    }
    if clips.len() < k {
        return Err(validation!(
            "cannot split {} clips into {k} folds",
            clips.len()
        ));
    }
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); CATEGORY_COUNT];
    for (id, label) in clips {
        by_class[label.slot()].push(id);
    }
    let mut rng = substream(seed, "folds/stratified");
    let mut dealt: Vec<&str> = Vec::with_capacity(clips.len());
    for class in &mut by_class {
        class.shuffle(&mut rng);
        dealt.extend(class.iter().copied());
    }
    let mut fold_of = BTreeMap::new();
    for (i, id) in dealt.iter().enumerate() {
        if fold_of.insert(id.to_string(), (i % k) + 1).is_some() {
            return Err(validation!("duplicate clip_id {id:?} in fold input"));
        }
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Write the fold file `clip_id,fold`.
pub fn write_folds_csv(path: &Path, folds: &FoldAssignment) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["clip_id", "fold"])?;
    for (clip_id, fold) in &folds.fold_of {
        writer.write_record([clip_id.as_str(), &fold.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_folds_csv(path: &Path) -> Result<FoldAssignment> {
    let display = path.display().to_string();
    let schema_err = |line: usize, msg: String| Error::Schema {
        path: display.clone(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<&str> = reader.headers()?.iter().collect();
    if header != ["clip_id", "fold"] {
        return Err(schema_err(1, format!("expected header clip_id,fold, got {header:?}")));
    }
    let mut fold_of = BTreeMap::new();
    let mut k = 0usize;
    for (row_index, record) in reader.records().enumerate() {
        let line = row_index + 2;
        let record = record?;
        if record.len() != 2 {
            return Err(schema_err(line, format!("expected 2 fields, got {}", record.len())));
        }
        let fold: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| schema_err(line, format!("non-integer fold {:?}", &record[1])))?;
        if fold == 0 {
            return Err(schema_err(line, "fold indices are 1-based".to_string()));
        }
        k = k.max(fold);
        if fold_of.insert(record[0].to_string(), fold).is_some() {
            return Err(schema_err(line, format!("duplicate clip_id {:?}", &record[0])));
        }
    }
    if fold_of.is_empty() {
        return Err(schema_err(2, "fold file has no rows".to_string()));
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Write the dataset as one frame per row: `clip_id,label,t,f1..fF,usable`.
pub fn write_dataset_csv(path: &Path, clips: &[ClipSequence]) -> Result<()> {
    let Some(first) = clips.first() else {
        return Err(validation!("cannot write an empty dataset"));
    };
    let f = first.feature_dim();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["clip_id".to_string(), "label".to_string(), "t".to_string()];
    header.extend((1..=f).map(|c| format!("f{c}")));
    header.push("usable".to_string());
    writer.write_record(&header)?;
    for clip in clips {
        if clip.feature_dim() != f {
            return Err(validation!(
                "clip {:?} has feature dim {}, expected {f}",
                clip.clip_id,
                clip.feature_dim()
            ));
        }
        let label = clip
            .label
            .map(|l| l.index().to_string())
            .unwrap_or_default();
        for t in 0..clip.len() {
            let mut row = vec![clip.clip_id.clone(), label.clone(), t.to_string()];
            row.extend((0..f).map(|c| clip.frames[(t, c)].to_string()));
            row.push((clip.usable[t] as u8).to_string());
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`]. Frames of a clip must be
/// consecutive with `t = 0..T-1` in order.
pub fn read_dataset_csv(path: &Path) -> Result<Vec<ClipSequence>> {
    let display = path.display().to_string();
    let schema_err = |line: usize, msg: String| Error::Schema {
        path: display.clone(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 5 || header[0] != "clip_id" || header[1] != "label" || header[2] != "t" {
        return Err(schema_err(1, format!("unrecognized header {header:?}")));
    }
    let f = header.len() - 4;
    for (c, name) in header[3..3 + f].iter().enumerate() {
        if *name != format!("f{}", c + 1) {
            return Err(schema_err(1, format!("expected column f{}, got {name:?}", c + 1)));
        }
    }
    if header[3 + f] != "usable" {
        return Err(schema_err(1, "last column must be usable".to_string()));
    }

    struct Pending {
        clip_id: String,
        label: Option<EmotionCategory>,
        rows: Vec<Vec<f64>>,
        usable: Vec<bool>,
    }
    let mut clips = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut pending: Option<Pending> = None;
    let flush = |pending: Option<Pending>, clips: &mut Vec<ClipSequence>| -> Result<()> {
        if let Some(p) = pending {
            let t = p.rows.len();
            let flat: Vec<f64> = p.rows.into_iter().flatten().collect();
            let frames = Array2::from_shape_vec((t, f), flat)
                .map_err(|e| validation!("{e}"))?;
            clips.push(ClipSequence::new(p.clip_id, frames, p.usable, p.label)?);
        }
        Ok(())
    };

    for (row_index, record) in reader.records().enumerate() {
        let line = row_index + 2;
        let record = record?;
        if record.len() != header.len() {
            return Err(schema_err(
                line,
                format!("expected {} fields, got {}", header.len(), record.len()),
            ));
        }
        let clip_id = record[0].to_string();
        let label = if record[1].trim().is_empty() {
            None
        } else {
            let index: usize = record[1]
                .trim()
                .parse()
                .map_err(|_| schema_err(line, format!("non-integer label {:?}", &record[1])))?;
            Some(
                EmotionCategory::from_index(index)
                    .map_err(|e| schema_err(line, e.to_string()))?,
            )
        };
        let t: usize = record[2]
            .trim()
            .parse()
            .map_err(|_| schema_err(line, format!("non-integer t {:?}", &record[2])))?;
        let values: Vec<f64> = record
            .iter()
            .skip(3)
            .take(f)
            .map(|field| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| schema_err(line, format!("non-numeric feature {field:?}")))
            })
            .collect::<Result<_>>()?;
        let usable = match record[3 + f].trim() {
            "0" => false,
            "1" => true,
            other => return Err(schema_err(line, format!("usable must be 0 or 1, got {other:?}"))),
        };

        let start_new = match &pending {
            Some(p) => p.clip_id != clip_id,
            None => true,
        };
        if start_new {
            if !seen.insert(clip_id.clone()) {
                return Err(schema_err(
                    line,
                    format!("clip {clip_id:?} rows are not consecutive"),
                ));
            }
            flush(pending.take(), &mut clips)?;
            pending = Some(Pending {
                clip_id: clip_id.clone(),
                label,
                rows: Vec::new(),
                usable: Vec::new(),
            });
        }
        let p = pending.as_mut().expect("pending clip");
        if p.label != label {
            return Err(schema_err(line, format!("clip {clip_id:?} changes label mid-clip")));
        }
        if t != p.rows.len() {
            return Err(schema_err(
                line,
                format!("clip {clip_id:?}: expected t={}, got {t}", p.rows.len()),
            ));
        }
        p.rows.push(values);
        p.usable.push(usable);
    }
    flush(pending, &mut clips)?;
    if clips.is_empty() {
        return Err(schema_err(2, "dataset has no rows".to_string()));
    }
    Ok(clips)
}

/// Metadata JSON written next to a generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub spec: DatasetSpec,
    pub class_counts: [usize; CATEGORY_COUNT],
    pub n_generated: usize,
    pub n_retained: usize,
    pub target_frames: usize,
    pub min_usable_rate: f64,
    pub filter: FilterReport,
}

pub fn write_dataset_meta(path: &Path, meta: &DatasetMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_dataset_meta(path: &Path) -> Result<DatasetMeta> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_clip(t: usize) -> ClipSequence {
        // f_t = t in one dimension.
        let frames = Array2::from_shape_fn((t, 1), |(row, _)| row as f64);
        ClipSequence::new("ramp".into(), frames, vec![true; t], None).unwrap()
    }

    #[test]
    fn largest_remainder_matches_hand_rounding() {
        // Default proportions at n=700; seats go to fear, surprise, sad,
        // disgust (largest fractional parts).
        let counts = largest_remainder_counts(&DEFAULT_PROPORTIONS, 700);
        assert_eq!(counts, [144, 117, 157, 129, 87, 9, 57]);
        assert_eq!(counts.iter().sum::<usize>(), 700);
    }

    #[test]
    fn generation_is_deterministic_and_respects_counts() {
        let spec = DatasetSpec {
            n_clips: 60,
            ..DatasetSpec::default()
        };
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a.len(), 60);
        assert_eq!(a, b);

        let counts = largest_remainder_counts(&spec.class_proportions, 60);
        let mut observed = [0usize; CATEGORY_COUNT];
        for clip in &a {
            observed[clip.label.unwrap().slot()] += 1;
        }
        assert_eq!(observed, counts);
    }

    #[test]
    fn generation_rejects_too_few_clips() {
        let spec = DatasetSpec {
            n_clips: 3,
            ..DatasetSpec::default()
        };
        let err = synth_generate(&spec).unwrap_err();
        assert!(err.to_string().contains("increase n_clips"), "{err}");
    }

    #[test]
    fn zero_noise_clips_align_identically_within_class() {
        let spec = DatasetSpec {
            n_clips: 40,
            noise_scale: 0.0,
            dropout_rate: 0.0,
            cluster_separation: 2.0,
            ..DatasetSpec::default()
        };
        let clips = synth_generate(&spec).unwrap();
        let mut aligned: BTreeMap<usize, Array2<f64>> = BTreeMap::new();
        for clip in &clips {
            let result = interpolate_to_length(clip, TARGET_FRAMES).unwrap();
            let slot = clip.label.unwrap().slot();
            match aligned.get(&slot) {
                None => {
                    aligned.insert(slot, result.frames);
                }
                Some(reference) => {
                    let max_diff = (&result.frames - reference)
                        .iter()
                        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
                    assert!(max_diff < 1e-12, "class {slot}: {max_diff}");
                }
            }
        }
    }

    #[test]
    fn filter_boundaries() {
        let make = |usable: Vec<bool>| {
            let t = usable.len();
            ClipSequence::new(
                format!("c{t}{}", usable.iter().filter(|&&u| u).count()),
                Array2::zeros((t, 2)),
                usable,
                None,
            )
            .unwrap()
        };
        // 7 of 16 (43.75%) rejected, 8 of 16 (50%) retained.
        let below = make([vec![true; 7], vec![false; 9]].concat());
        let boundary = make([vec![true; 8], vec![false; 8]].concat());
        let full = make(vec![true; 16]);
        let (retained, report) =
            usable_rate_filter(vec![below, boundary, full.clone()], 0.5).unwrap();
        assert_eq!(report.n_input, 3);
        assert_eq!(report.n_retained, 2);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].usable, 7);
        // Retained clips have unusable frames removed...
        assert_eq!(retained[0].len(), 8);
        assert!(retained[0].usable.iter().all(|&u| u));
        // ...and fully usable clips pass through unchanged.
        assert_eq!(retained[1], full);
    }

    #[test]
    fn filter_is_monotone_in_min_rate() {
        let spec = DatasetSpec {
            n_clips: 50,
            dropout_rate: 0.4,
            ..DatasetSpec::default()
        };
        let clips = synth_generate(&spec).unwrap();
        let (strict, _) = usable_rate_filter(clips.clone(), 0.6).unwrap();
        let (loose, _) = usable_rate_filter(clips, 0.4).unwrap();
        let loose_ids: HashSet<_> = loose.iter().map(|c| c.clip_id.clone()).collect();
        for clip in &strict {
            assert!(loose_ids.contains(&clip.clip_id));
        }
    }

    #[test]
    fn interpolation_identity_on_sixteen_frames() {
        let clip = ramp_clip(16);
        let out = interpolate_to_length(&clip, 16).unwrap();
        assert_eq!(out.frames, clip.frames);
    }

    #[test]
    fn interpolation_two_frames_linear_formula() {
        let frames = Array2::from_shape_vec((2, 1), vec![3.0, 11.0]).unwrap();
        let clip = ClipSequence::new("ab".into(), frames, vec![true; 2], None).unwrap();
        let out = interpolate_to_length(&clip, 16).unwrap();
        assert_eq!(out.len(), 16);
        assert_eq!(out.frames[(0, 0)], 3.0);
        assert_eq!(out.frames[(15, 0)], 11.0);
        // 0-indexed frame 7 sits at fraction 7/15.
        let expected = 3.0 + (7.0 / 15.0) * 8.0;
        assert!((out.frames[(7, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn interpolation_exact_on_affine_ramp() {
        let clip = ramp_clip(8);
        let out = interpolate_to_length(&clip, 16).unwrap();
        assert_eq!(out.frames[(0, 0)], 0.0);
        assert_eq!(out.frames[(15, 0)], 7.0);
        for s in 0..16 {
            let expected = s as f64 * 7.0 / 15.0;
            assert!(
                (out.frames[(s, 0)] - expected).abs() < 1e-12,
                "frame {s}: {} vs {expected}",
                out.frames[(s, 0)]
            );
        }
    }

    #[test]
    fn interpolation_skips_unusable_and_needs_one_usable_frame() {
        let frames = Array2::from_shape_vec((3, 1), vec![0.0, 99.0, 2.0]).unwrap();
        let clip =
            ClipSequence::new("gap".into(), frames, vec![true, false, true], None).unwrap();
        let out = interpolate_to_length(&clip, 16).unwrap();
        // The unusable middle frame is ignored; output spans 0..2 linearly.
        assert_eq!(out.frames[(0, 0)], 0.0);
        assert_eq!(out.frames[(15, 0)], 2.0);
        assert!(out.frames.iter().all(|&v| v <= 2.0));

        let none = ClipSequence::new(
            "dead".into(),
            Array2::zeros((2, 1)),
            vec![false, false],
            None,
        )
        .unwrap();
        assert!(interpolate_to_length(&none, 16).is_err());
    }

    #[test]
    fn kfold_sizes_and_determinism() {
        let ids: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let folds = kfold_split(&ids, 5, 3).unwrap();
        assert_eq!(folds.fold_sizes(), vec![2, 2, 2, 2, 2]);
        assert_eq!(folds, kfold_split(&ids, 5, 3).unwrap());
        assert_ne!(
            kfold_split(&ids, 5, 3).unwrap().test_ids(1),
            kfold_split(&ids, 5, 4).unwrap().test_ids(1),
        );
    }

    #[test]
    fn kfold_twelve_thousand_fifty_nine() {
        let ids: Vec<String> = (0..12059).map(|i| format!("c{i}")).collect();
        let folds = kfold_split(&ids, 5, 0).unwrap();
        let mut sizes = folds.fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2411, 2412, 2412, 2412, 2412]);
    }

    #[test]
    fn kfold_rejects_fewer_clips_than_folds() {
        let ids: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        assert!(kfold_split(&ids, 5, 0).is_err());
    }

    #[test]
    fn stratified_kfold_balances_classes() {
        let clips: Vec<(String, EmotionCategory)> = (0..70)
            .map(|i| {
                (
                    format!("c{i}"),
                    EmotionCategory::ALL[i % CATEGORY_COUNT],
                )
            })
            .collect();
        let folds = kfold_split_stratified(&clips, 5, 1).unwrap();
        assert_eq!(folds.fold_sizes(), vec![14; 5]);
        for fold in 1..=5 {
            let mut per_class = [0usize; CATEGORY_COUNT];
            for id in folds.test_ids(fold) {
                let index: usize = id[1..].parse().unwrap();
                per_class[index % CATEGORY_COUNT] += 1;
            }
            assert!(per_class.iter().all(|&c| c == 2), "{per_class:?}");
        }
    }

    #[test]
    fn dataset_csv_round_trip() {
        let spec = DatasetSpec {
            n_clips: 100,
            feature_dim: 3,
            ..DatasetSpec::default()
        };
        let clips = synth_generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.csv");
        write_dataset_csv(&path, &clips).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(clips, back);
    }

    #[test]
    fn folds_csv_round_trip() {
        let ids: Vec<String> = (0..12).map(|i| format!("c{i}")).collect();
        let folds = kfold_split(&ids, 5, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("folds.csv");
        write_folds_csv(&path, &folds).unwrap();
        assert_eq!(read_folds_csv(&path).unwrap(), folds);
    }
}
