//! Cleaning of comb-format data: short-tree removal, robust
//! aberrant-tree filtering and per-pole-type outlier marking.
//!
//! The procedure runs in three steps: (1) drop trees shorter than a
//! generation threshold, (2) compute a trimmed mean `m` and a MAD-based
//! spread `sigma` over the remainder and drop trees whose plain mean
//! rate sits more than `sigma` away from `m`, (3) within each surviving
//! tree mark cells whose rate falls outside `median +/- k*sigma` for
//! their pole type. Marked rates are treated as missing downstream; the
//! raw value stays on the record.

use serde::{Deserialize, Serialize};

use crate::ingest::{Dataset, LabelRef, LineageTree};
use crate::lineage::PoleType;

/// MAD consistency constant for the standard deviation under normality.
pub const MAD_CONSISTENCY: f64 = 1.4826;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid trim fraction {0}, must be in [0, 0.5)")]
    InvalidTrim(f64),
    #[error("all trees removed; dataset is degenerate")]
    AllTreesRemoved,
    #[error("no growth rates available")]
    NoRates,
}

/// Robust location/scale of the pooled growth rates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RobustStats {
    pub m: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutlierCounts {
    pub tree_id: i64,
    pub old_pole: usize,
    pub new_pole: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub trees_removed_short: Vec<i64>,
    pub trees_removed_aberrant: Vec<i64>,
    pub outliers_marked: Vec<OutlierCounts>,
    pub m: f64,
    pub sigma: f64,
    pub warnings: Vec<String>,
}

impl PreprocessReport {
    pub fn total_outliers(&self) -> usize {
        self.outliers_marked
            .iter()
            .map(|c| c.old_pole + c.new_pole)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_generations: u32,
    pub trim: f64,
    pub k_sigma: f64,
    /// Apply the 1.4826 normal-consistency factor to the MAD.
    pub mad_consistency: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_generations: 20,
            trim: 0.05,
            k_sigma: 3.0,
            mad_consistency: true,
        }
    }
}

/// Mean after discarding `floor(trim * n)` smallest and largest values.
pub fn trimmed_mean(xs: &[f64], trim: f64) -> Result<f64, PreprocessError> {
    if xs.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(PreprocessError::InvalidTrim(trim));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = (trim * xs.len() as f64).floor() as usize;
    let kept = &sorted[k..xs.len() - k];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn median(xs: &[f64]) -> Result<f64, PreprocessError> {
    if xs.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(median_sorted(&sorted))
}

/// Median absolute deviation, scaled by 1.4826 unless `consistency` is
/// false.
pub fn mad_with(xs: &[f64], consistency: bool) -> Result<f64, PreprocessError> {
    let med = median(xs)?;
    let devs: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
    let raw = median(&devs)?;
    Ok(if consistency { MAD_CONSISTENCY * raw } else { raw })
}

/// MAD with the standard consistency constant.
pub fn mad(xs: &[f64]) -> Result<f64, PreprocessError> {
    mad_with(xs, true)
}

/// Steps 1-2: remove short trees, then trees whose plain mean rate is
/// more than `sigma` from the robust global mean.
pub fn filter_trees(
    ds: &Dataset,
    config: &PreprocessConfig,
) -> Result<(Dataset, PreprocessReport), PreprocessError> {
    let mut removed_short = Vec::new();
    let mut kept: Vec<&LineageTree> = Vec::new();
    for tree in &ds.trees {
        if tree.max_generation() < config.min_generations {
            removed_short.push(tree.tree_id);
        } else {
            kept.push(tree);
        }
    }
    let pooled: Vec<f64> = kept.iter().flat_map(|t| t.rates()).collect();
    if pooled.is_empty() {
        return Err(if kept.is_empty() {
            PreprocessError::AllTreesRemoved
        } else {
            PreprocessError::NoRates
        });
    }
    let m = trimmed_mean(&pooled, config.trim)?;
    let sigma = mad_with(&pooled, config.mad_consistency)?;

    let mut removed_aberrant = Vec::new();
    let mut retained = Vec::new();
    for tree in kept {
        let rates: Vec<f64> = tree.rates().collect();
        if rates.is_empty() {
            removed_aberrant.push(tree.tree_id);
            continue;
        }
        let m_t = rates.iter().sum::<f64>() / rates.len() as f64;
        if (m_t - m).abs() > sigma {
            removed_aberrant.push(tree.tree_id);
        } else {
            retained.push(tree.clone());
        }
    }
    if retained.is_empty() {
        return Err(PreprocessError::AllTreesRemoved);
    }
    let filtered = Dataset {
        source: ds.source,
        trees: retained,
        warnings: ds.warnings.clone(),
    };
    let report = PreprocessReport {
        trees_removed_short: removed_short,
        trees_removed_aberrant: removed_aberrant,
        outliers_marked: Vec::new(),
        m,
        sigma,
        warnings: Vec::new(),
    };
    Ok((filtered, report))
}

/// Step 3 for one tree: mark cells outside `median +/- k*sigma` of their
/// pole class. Boundaries are inclusive (a cell exactly at the edge is
/// kept). Returns the marked tree and per-class counts.
pub fn mark_outliers(
    tree: &LineageTree,
    sigma: f64,
    k_sigma: f64,
) -> (LineageTree, OutlierCounts, Vec<String>) {
    let mut warnings = Vec::new();
    let mut counts = OutlierCounts {
        tree_id: tree.tree_id,
        old_pole: 0,
        new_pole: 0,
    };
    let mut class_median = |pole: PoleType| -> Option<f64> {
        let rates: Vec<f64> = tree
            .records
            .iter()
            .filter(|r| r.pole() == Some(pole))
            .filter_map(|r| r.rate())
            .collect();
        if rates.is_empty() {
            warnings.push(format!(
                "tree {}: no usable {} pole rates, class skipped",
                tree.tree_id, pole
            ));
            None
        } else {
            median(&rates).ok()
        }
    };
    let m_old = class_median(PoleType::Old);
    let m_new = class_median(PoleType::New);

    let mut marked = tree.clone();
    for r in &mut marked.records {
        let center = match r.pole() {
            Some(PoleType::Old) => m_old,
            Some(PoleType::New) => m_new,
            None => None,
        };
        if let (Some(c), Some(rate)) = (center, r.rate()) {
            if (rate - c).abs() > k_sigma * sigma {
                r.outlier_flag = true;
                match r.pole() {
                    Some(PoleType::Old) => counts.old_pole += 1,
                    Some(PoleType::New) => counts.new_pole += 1,
                    None => {}
                }
            }
        }
    }
    propagate_mother_marks(&mut marked);
    (marked, counts, warnings)
}

/// Sync each record's `mother_outlier_flag` with the outlier mark on the
/// mother's own record, when the mother is present in the tree.
fn propagate_mother_marks(tree: &mut LineageTree) {
    let flagged: std::collections::HashSet<LabelRef> = tree
        .records
        .iter()
        .filter(|r| r.outlier_flag)
        .map(|r| r.label)
        .collect();
    for r in &mut tree.records {
        if let Some(mother) = r.label.mother() {
            r.mother_outlier_flag = flagged.contains(&mother);
        }
    }
}

/// Full three-step preprocessing.
pub fn preprocess(
    ds: &Dataset,
    config: &PreprocessConfig,
) -> Result<(Dataset, PreprocessReport), PreprocessError> {
    let (filtered, mut report) = filter_trees(ds, config)?;
    let mut trees = Vec::with_capacity(filtered.trees.len());
    for tree in &filtered.trees {
        let (marked, counts, warnings) = mark_outliers(tree, report.sigma, config.k_sigma);
        trees.push(marked);
        report.outliers_marked.push(counts);
        report.warnings.extend(warnings);
    }
    Ok((
        Dataset {
            source: filtered.source,
            trees,
            warnings: filtered.warnings,
        },
        report,
    ))
}
