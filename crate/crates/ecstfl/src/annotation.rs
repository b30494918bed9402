//! Multi-annotator emotion labels: vote tallies, threshold single-labeling,
//! and Fleiss's kappa agreement statistics.
//!
//! Each clip carries a 7-component distribution of annotator votes. A clip
//! earns a single label only when one category's count strictly exceeds a
//! threshold `r` (default 6 of 10 annotators). Annotation quality over a
//! whole dataset is quantified by Fleiss's kappa:
//!
//! ```text
//! p_j   = (1 / (N * n)) * sum_i n_ij          proportion of assignments to category j
//! P_i   = (sum_j n_ij^2 - n) / (n * (n - 1))  pairwise agreement on item i
//! kappa = (P_bar - Pe_bar) / (1 - Pe_bar)     with P_bar = mean P_i, Pe_bar = sum_j p_j^2
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::validation;

/// Number of emotion categories.
pub const CATEGORY_COUNT: usize = 7;

/// Default number of annotators per clip.
pub const DEFAULT_ANNOTATORS: u32 = 10;

/// Default single-label threshold: a category needs strictly more than
/// `r` votes.
pub const DEFAULT_THRESHOLD: u32 = 6;

/// The seven basic emotion categories, with the fixed 1-based index mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EmotionCategory {
    Happy = 1,
    Sad = 2,
    Neutral = 3,
    Angry = 4,
    Surprise = 5,
    Disgust = 6,
    Fear = 7,
}

impl EmotionCategory {
    pub const ALL: [EmotionCategory; CATEGORY_COUNT] = [
        EmotionCategory::Happy,
        EmotionCategory::Sad,
        EmotionCategory::Neutral,
        EmotionCategory::Angry,
        EmotionCategory::Surprise,
        EmotionCategory::Disgust,
        EmotionCategory::Fear,
    ];

    /// 1-based category index.
    pub fn index(self) -> usize {
        self as usize
    }

    /// 0-based array slot.
    pub fn slot(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index.wrapping_sub(1))
            .copied()
            .ok_or_else(|| validation!("category index {index} out of range 1..=7"))
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionCategory::Happy => "happy",
            EmotionCategory::Sad => "sad",
            EmotionCategory::Neutral => "neutral",
            EmotionCategory::Angry => "angry",
            EmotionCategory::Surprise => "surprise",
            EmotionCategory::Disgust => "disgust",
            EmotionCategory::Fear => "fear",
        }
    }
}

impl fmt::Display for EmotionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-clip vote counts over the seven categories.
///
/// The number of annotators is the count sum, so the "counts sum to n"
/// invariant holds by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionDistribution {
    counts: [u32; CATEGORY_COUNT],
}

impl EmotionDistribution {
    pub fn new(counts: [u32; CATEGORY_COUNT]) -> Result<Self> {
        if counts.iter().all(|&c| c == 0) {
            return Err(validation!("emotion distribution has zero votes"));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u32; CATEGORY_COUNT] {
        &self.counts
    }

    pub fn count(&self, category: EmotionCategory) -> u32 {
        self.counts[category.slot()]
    }

    /// Total number of annotators (the count sum).
    pub fn n_annotators(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn is_unanimous(&self) -> bool {
        self.counts.iter().filter(|&&c| c > 0).count() == 1
    }
}

/// Outcome of threshold labeling for one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SingleLabelDecision {
    Labeled(EmotionCategory),
    Unlabeled,
}

/// A set of annotated clips sharing the same annotator count.
#[derive(Debug, Clone)]
pub struct AnnotatedDataset {
    items: Vec<(String, EmotionDistribution)>,
    n_annotators: u32,
}

impl AnnotatedDataset {
    pub fn new(items: Vec<(String, EmotionDistribution)>) -> Result<Self> {
        let Some((_, first)) = items.first() else {
            return Err(validation!("annotated dataset is empty"));
        };
        let n_annotators = first.n_annotators();
        let mut seen = std::collections::HashSet::new();
        for (clip_id, dist) in &items {
            if !seen.insert(clip_id.as_str()) {
                return Err(validation!("duplicate clip_id {clip_id:?}"));
            }
            if dist.n_annotators() != n_annotators {
                return Err(validation!(
                    "clip {clip_id:?} has {} annotators, expected {n_annotators}",
                    dist.n_annotators()
                ));
            }
        }
        Ok(Self {
            items,
            n_annotators,
        })
    }

    pub fn items(&self) -> &[(String, EmotionDistribution)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_annotators(&self) -> u32 {
        self.n_annotators
    }
}

/// Count per-annotator votes (1-based category indices) into a distribution.
pub fn tally(raw_votes: &[usize]) -> Result<EmotionDistribution> {
    if raw_votes.is_empty() {
        return Err(validation!("vote list is empty"));
    }
    let mut counts = [0u32; CATEGORY_COUNT];
    for (position, &vote) in raw_votes.iter().enumerate() {
        let category = EmotionCategory::from_index(vote)
            .map_err(|_| validation!("vote #{} is {vote}, outside 1..=7", position + 1))?;
        counts[category.slot()] += 1;
    }
    EmotionDistribution::new(counts)
}

/// Pick the single label: the category whose count strictly exceeds `r`.
///
/// With `r >= n/2` at most one category can qualify. Below that, ties are
/// possible and rejected as ambiguous rather than broken arbitrarily.
pub fn single_label(dist: &EmotionDistribution, r: u32) -> Result<SingleLabelDecision> {
    let n = dist.n_annotators();
    if r > n {
        return Err(validation!("threshold r={r} exceeds annotator count {n}"));
    }
    let winners: Vec<EmotionCategory> = EmotionCategory::ALL
        .iter()
        .copied()
        .filter(|&category| dist.count(category) > r)
        .collect();
    match winners.as_slice() {
        [] => Ok(SingleLabelDecision::Unlabeled),
        [winner] => Ok(SingleLabelDecision::Labeled(*winner)),
        _ => Err(Error::AmbiguousLabel(winners)),
    }
}

/// Proportion of all assignments that went to each category.
pub fn category_proportions(ds: &AnnotatedDataset) -> [f64; CATEGORY_COUNT] {
    let total = (ds.len() as f64) * f64::from(ds.n_annotators());
    let mut sums = [0u64; CATEGORY_COUNT];
    for (_, dist) in ds.items() {
        for (slot, &count) in dist.counts().iter().enumerate() {
            sums[slot] += u64::from(count);
        }
    }
    let mut p = [0.0; CATEGORY_COUNT];
    for (slot, &sum) in sums.iter().enumerate() {
        p[slot] = sum as f64 / total;
    }
    p
}

/// Fraction of annotator pairs that agree on one item.
pub fn per_item_agreement(dist: &EmotionDistribution) -> Result<f64> {
    let n = f64::from(dist.n_annotators());
    if dist.n_annotators() < 2 {
        return Err(validation!(
            "pairwise agreement needs at least 2 annotators, got {}",
            dist.n_annotators()
        ));
    }
    let sum_sq: f64 = dist
        .counts()
        .iter()
        .map(|&c| f64::from(c) * f64::from(c))
        .sum();
    Ok((sum_sq - n) / (n * (n - 1.0)))
}

/// Fleiss's kappa over the dataset.
///
/// Errors with [`Error::DegenerateAgreement`] when every assignment in the
/// dataset falls in a single category (expected agreement 1, kappa is 0/0).
pub fn fleiss_kappa(ds: &AnnotatedDataset) -> Result<f64> {
    let report = kappa_report(ds)?;
    Ok(report.kappa)
}

/// Full kappa computation with the intermediate quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaReport {
    pub n_items: usize,
    pub n_annotators: u32,
    pub p: [f64; CATEGORY_COUNT],
    pub p_bar: f64,
    pub pe_bar: f64,
    pub kappa: f64,
    pub band: String,
}

pub fn kappa_report(ds: &AnnotatedDataset) -> Result<KappaReport> {
    if ds.n_annotators() < 2 {
        return Err(validation!(
            "kappa needs at least 2 annotators, got {}",
            ds.n_annotators()
        ));
    }
    let p = category_proportions(ds);
    let p_bar = {
        let mut sum = 0.0;
        for (_, dist) in ds.items() {
            sum += per_item_agreement(dist)?;
        }
        sum / ds.len() as f64
    };
    let pe_bar: f64 = p.iter().map(|&pj| pj * pj).sum();
    if pe_bar >= 1.0 {
        return Err(Error::DegenerateAgreement);
    }
    let kappa = (p_bar - pe_bar) / (1.0 - pe_bar);
    Ok(KappaReport {
        n_items: ds.len(),
        n_annotators: ds.n_annotators(),
        p,
        p_bar,
        pe_bar,
        kappa,
        band: interpret_kappa(kappa)?.to_string(),
    })
}

/// Map a kappa value to its agreement band.
pub fn interpret_kappa(kappa: f64) -> Result<&'static str> {
    if kappa > 1.0 {
        return Err(validation!("kappa {kappa} exceeds 1"));
    }
    Ok(if kappa < 0.0 {
        "Poor agreement"
    } else if kappa <= 0.20 {
        "Slight agreement"
    } else if kappa <= 0.40 {
        "Fair agreement"
    } else if kappa <= 0.60 {
        "Moderate agreement"
    } else if kappa <= 0.80 {
        "Substantial agreement"
    } else {
        "Almost perfect agreement"
    })
}

/// Read an annotation CSV.
///
/// Two schemas are accepted, distinguished by the header:
/// `clip_id,c1,...,c7` for pre-tallied counts and `clip_id,v1,...,v10` for
/// raw per-annotator votes. Any other header, field count, or non-integer
/// field is a line-numbered schema error.
pub fn read_annotation_csv(path: &Path) -> Result<AnnotatedDataset> {
    let display = path.display().to_string();
    let schema_err = |line: usize, msg: String| Error::Schema {
        path: display.clone(),
        line,
        msg,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;

    let counts_header: Vec<String> = std::iter::once("clip_id".to_string())
        .chain((1..=CATEGORY_COUNT).map(|k| format!("c{k}")))
        .collect();
    let votes_header: Vec<String> = std::iter::once("clip_id".to_string())
        .chain((1..=DEFAULT_ANNOTATORS).map(|k| format!("v{k}")))
        .collect();

    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|field| field.trim().to_string())
        .collect();
    let votes_mode = if header == counts_header {
        false
    } else if header == votes_header {
        true
    } else {
        return Err(schema_err(
            1,
            format!(
                "unrecognized header {:?}; expected {:?} or {:?}",
                header.join(","),
                counts_header.join(","),
                votes_header.join(",")
            ),
        ));
    };
    let expected_fields = header.len();

    let mut items = Vec::new();
    for (row_index, record) in reader.records().enumerate() {
        let line = row_index + 2;
        let record = record?;
        if record.len() != expected_fields {
            return Err(schema_err(
                line,
                format!("expected {expected_fields} fields, got {}", record.len()),
            ));
        }
        let clip_id = record[0].trim().to_string();
        if clip_id.is_empty() {
            return Err(schema_err(line, "empty clip_id".to_string()));
        }
        let numbers: Vec<u32> = record
            .iter()
            .skip(1)
            .map(|field| {
                field
                    .trim()
                    .parse::<u32>()
                    .map_err(|_| schema_err(line, format!("non-integer field {field:?}")))
            })
            .collect::<Result<_>>()?;
        let dist = if votes_mode {
            let votes: Vec<usize> = numbers.iter().map(|&v| v as usize).collect();
            tally(&votes).map_err(|e| schema_err(line, e.to_string()))?
        } else {
            let mut counts = [0u32; CATEGORY_COUNT];
            counts.copy_from_slice(&numbers);
            EmotionDistribution::new(counts).map_err(|e| schema_err(line, e.to_string()))?
        };
        items.push((clip_id, dist));
    }

    AnnotatedDataset::new(items)
}
