//! End-to-end analyses over a parsed dataset, producing plot-ready
//! structured reports: mother/grandmother regressions, pole-type
//! comparisons, normalized pole-accumulation trends, per-tree
//! stationarity checks and generation summaries.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{Dataset, LineageTree};
use crate::lineage::PoleType;
use crate::stattests::{
    arma11_fit, correlation_ci, ks_two_sample, ks_uniform, ols_with_intercept,
    student_two_sample, StatError, TestResult, WelchTest,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no usable trees for this analysis")]
    NoUsableTrees,
    #[error(transparent)]
    Stat(#[from] StatError),
}

/// Binned values with strictly increasing edges; counts sum to `n`.
/// Values outside the edge range are clamped into the end bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramReport {
    pub label: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n: u64,
}

impl HistogramReport {
    pub fn from_values(label: &str, values: &[f64], edges: Vec<f64>) -> Self {
        assert!(edges.len() >= 2);
        assert!(edges.windows(2).all(|w| w[1] > w[0]));
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        for &v in values {
            let mut idx = match edges[..edges.len() - 1]
                .iter()
                .rposition(|&e| v >= e)
            {
                Some(i) => i,
                None => 0,
            };
            if idx >= bins {
                idx = bins - 1;
            }
            counts[idx] += 1;
        }
        HistogramReport {
            label: label.to_string(),
            bin_edges: edges,
            counts,
            n: values.len() as u64,
        }
    }

    /// Equal-width bins over [0, 1], for p-values.
    pub fn p_values(label: &str, values: &[f64], bins: usize) -> Self {
        let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        Self::from_values(label, values, edges)
    }

    /// Equal-width bins over the observed range.
    pub fn auto(label: &str, values: &[f64], bins: usize) -> Self {
        let (mut lo, mut hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi <= lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        Self::from_values(label, values, edges)
    }
}

// ---------------------------------------------------------------------
// Mother / grandmother regression
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MgTreeFit {
    pub tree_id: i64,
    pub n_triples: usize,
    pub beta_0: f64,
    pub beta_m: f64,
    pub beta_g: f64,
    pub p_m: f64,
    pub p_g: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MgReport {
    pub per_tree: Vec<MgTreeFit>,
    pub skipped: Vec<(i64, usize)>,
    pub beta_m_p_hist: HistogramReport,
    pub beta_g_p_hist: HistogramReport,
    pub beta_m_mean: f64,
    pub beta_m_median: f64,
}

/// Old-pole spine rates keyed by generation.
fn spine_rates(tree: &LineageTree) -> BTreeMap<u32, f64> {
    let mut map = BTreeMap::new();
    for r in &tree.records {
        if r.pole() == Some(PoleType::Old) {
            if let Some(rate) = r.rate() {
                map.insert(r.generation, rate);
            }
        }
    }
    map
}

/// Per tree, regress the old-pole spine rate on the mother and
/// grandmother spine rates; rows with any missing member are dropped.
/// Trees with fewer than `min_triples` usable rows are skipped.
pub fn mother_grandmother_analysis(
    ds: &Dataset,
    min_triples: usize,
    bins: usize,
) -> Result<MgReport, PipelineError> {
    let mut per_tree = Vec::new();
    let mut skipped = Vec::new();
    for tree in &ds.trees {
        let spine = spine_rates(tree);
        let mut r = Vec::new();
        let mut m = Vec::new();
        let mut g = Vec::new();
        for (&gen, &rate) in &spine {
            if gen < 2 {
                continue;
            }
            if let (Some(&mo), Some(&gd)) = (spine.get(&(gen - 1)), spine.get(&(gen - 2))) {
                r.push(rate);
                m.push(mo);
                g.push(gd);
            }
        }
        if r.len() < min_triples {
            skipped.push((tree.tree_id, r.len()));
            continue;
        }
        match ols_with_intercept(&r, &[&m, &g]) {
            Ok(fit) => per_tree.push(MgTreeFit {
                tree_id: tree.tree_id,
                n_triples: r.len(),
                beta_0: fit.coefficients[0],
                beta_m: fit.coefficients[1],
                beta_g: fit.coefficients[2],
                p_m: fit.p_values[1],
                p_g: fit.p_values[2],
            }),
            Err(_) => skipped.push((tree.tree_id, r.len())),
        }
    }
    if per_tree.is_empty() {
        return Err(PipelineError::NoUsableTrees);
    }
    let p_m: Vec<f64> = per_tree.iter().map(|t| t.p_m).collect();
    let p_g: Vec<f64> = per_tree.iter().map(|t| t.p_g).collect();
    let mut betas: Vec<f64> = per_tree.iter().map(|t| t.beta_m).collect();
    let beta_m_mean = betas.iter().sum::<f64>() / betas.len() as f64;
    betas.sort_by(|a, b| a.total_cmp(b));
    let beta_m_median = if betas.len() % 2 == 1 {
        betas[betas.len() / 2]
    } else {
        0.5 * (betas[betas.len() / 2 - 1] + betas[betas.len() / 2])
    };
    Ok(MgReport {
        beta_m_p_hist: HistogramReport::p_values("p-value of mother coefficient", &p_m, bins),
        beta_g_p_hist: HistogramReport::p_values("p-value of grandmother coefficient", &p_g, bins),
        per_tree,
        skipped,
        beta_m_mean,
        beta_m_median,
    })
}

// ---------------------------------------------------------------------
// Pole comparison
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoleComparisonReport {
    pub mean_test: WelchTest,
    pub corr_new_pole: TestResult,
    pub corr_old_pole: TestResult,
    pub beta_m_new_hist: HistogramReport,
    pub beta_m_old_hist: HistogramReport,
    pub level: f64,
}

/// Compare old- and new-pole cells: Welch mean test with per-class mean
/// CIs, Fisher-z daughter-mother correlation CIs split by daughter pole
/// type, and per-tree single-regressor slopes (grandmother coefficient
/// fixed at 0) histogrammed by pole type.
pub fn pole_comparison(
    ds: &Dataset,
    level: f64,
    min_pairs: usize,
    bins: usize,
) -> Result<PoleComparisonReport, PipelineError> {
    let mut old_rates = Vec::new();
    let mut new_rates = Vec::new();
    let mut pairs_old = (Vec::new(), Vec::new());
    let mut pairs_new = (Vec::new(), Vec::new());
    for r in ds.all_records() {
        let pole = match r.pole() {
            Some(p) => p,
            None => continue,
        };
        if let Some(rate) = r.rate() {
            match pole {
                PoleType::Old => old_rates.push(rate),
                PoleType::New => new_rates.push(rate),
            }
            if let Some(mother) = r.mother_rate() {
                match pole {
                    PoleType::Old => {
                        pairs_old.0.push(rate);
                        pairs_old.1.push(mother);
                    }
                    PoleType::New => {
                        pairs_new.0.push(rate);
                        pairs_new.1.push(mother);
                    }
                }
            }
        }
    }
    let mean_test = student_two_sample(&old_rates, &new_rates, level)?;
    let corr_old_pole = correlation_ci(&pairs_old.0, &pairs_old.1, level)?;
    let corr_new_pole = correlation_ci(&pairs_new.0, &pairs_new.1, level)?;

    // per-tree slope of daughter rate on mother rate, one per pole type
    let mut slopes_new = Vec::new();
    let mut slopes_old = Vec::new();
    for tree in &ds.trees {
        for (pole, out) in [
            (PoleType::New, &mut slopes_new),
            (PoleType::Old, &mut slopes_old),
        ] {
            let mut y = Vec::new();
            let mut x = Vec::new();
            for r in &tree.records {
                if r.pole() == Some(pole) {
                    if let (Some(rate), Some(mother)) = (r.rate(), r.mother_rate()) {
                        y.push(rate);
                        x.push(mother);
                    }
                }
            }
            if y.len() >= min_pairs {
                if let Ok(fit) = ols_with_intercept(&y, &[&x]) {
                    out.push(fit.coefficients[1]);
                }
            }
        }
    }
    Ok(PoleComparisonReport {
        mean_test,
        corr_new_pole,
        corr_old_pole,
        beta_m_new_hist: HistogramReport::auto("beta_m, new pole cells", &slopes_new, bins),
        beta_m_old_hist: HistogramReport::auto("beta_m, old pole cells", &slopes_old, bins),
        level,
    })
}

// ---------------------------------------------------------------------
// Pole accumulation trends
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendSeries {
    pub n_values: Vec<u32>,
    pub mean_normalized_rate: Vec<f64>,
    pub counts: Vec<usize>,
    /// OLS slope of the mean normalized rate against n.
    pub slope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoleTrendReport {
    pub new_pole: TrendSeries,
    pub old_pole: TrendSeries,
    /// Cells whose (tree, generation) normalization group was unusable.
    pub skipped_cells: usize,
}

fn trend_series(buckets: &BTreeMap<u32, Vec<f64>>) -> TrendSeries {
    let mut n_values = Vec::new();
    let mut means = Vec::new();
    let mut counts = Vec::new();
    for (&n, vals) in buckets {
        if vals.is_empty() {
            continue;
        }
        n_values.push(n);
        means.push(vals.iter().sum::<f64>() / vals.len() as f64);
        counts.push(vals.len());
    }
    let slope = if n_values.len() >= 2 {
        let xs: Vec<f64> = n_values.iter().map(|&n| n as f64).collect();
        ols_with_intercept(&means, &[&xs])
            .map(|f| f.coefficients[1])
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    TrendSeries {
        n_values,
        mean_normalized_rate: means,
        counts,
        slope,
    }
}

/// Growth-rate trends against consecutive pole accumulation on a
/// full-tree dataset. Rates are normalized by the mean of their
/// (tree, generation) group. Returns the cumulated-pole report
/// (cells with n consecutive new/old poles, 1 <= n <= `max_n`) and the
/// switched-pole report (cells whose type switched after the mother
/// cumulated n poles, 1 <= n <= `max_n - 1`).
pub fn pole_trend_analysis(
    ds: &Dataset,
    max_n: u32,
) -> Result<(PoleTrendReport, PoleTrendReport), PipelineError> {
    // group means per (tree, generation)
    let mut group_sum: BTreeMap<(i64, u32), (f64, usize)> = BTreeMap::new();
    for r in ds.all_records() {
        if let Some(rate) = r.rate() {
            let e = group_sum.entry((r.tree_id, r.generation)).or_insert((0.0, 0));
            e.0 += rate;
            e.1 += 1;
        }
    }
    let mut skipped_cells = 0usize;
    let mut cum_new: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut cum_old: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut sw_new: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut sw_old: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for n in 1..=max_n {
        cum_new.insert(n, Vec::new());
        cum_old.insert(n, Vec::new());
        if n < max_n {
            sw_new.insert(n, Vec::new());
            sw_old.insert(n, Vec::new());
        }
    }
    for r in ds.all_records() {
        let rate = match r.rate() {
            Some(v) => v,
            None => continue,
        };
        let pole = match r.pole() {
            Some(p) => p,
            None => continue,
        };
        let (sum, count) = group_sum[&(r.tree_id, r.generation)];
        let mean = sum / count as f64;
        if mean <= 0.0 {
            skipped_cells += 1;
            continue;
        }
        let norm = rate / mean;
        match pole {
            PoleType::New => {
                if let Some(n) = r.consec_new {
                    if let Some(bucket) = cum_new.get_mut(&n) {
                        bucket.push(norm);
                    }
                }
                // new pole cell after the mother cumulated n old poles
                if let Some(n) = r.mother_consec_old {
                    if let Some(bucket) = sw_new.get_mut(&n) {
                        bucket.push(norm);
                    }
                }
            }
            PoleType::Old => {
                if let Some(n) = r.consec_old {
                    if let Some(bucket) = cum_old.get_mut(&n) {
                        bucket.push(norm);
                    }
                }
                if let Some(n) = r.mother_consec_new {
                    if let Some(bucket) = sw_old.get_mut(&n) {
                        bucket.push(norm);
                    }
                }
            }
        }
    }
    let cumulated = PoleTrendReport {
        new_pole: trend_series(&cum_new),
        old_pole: trend_series(&cum_old),
        skipped_cells,
    };
    let switched = PoleTrendReport {
        new_pole: trend_series(&sw_new),
        old_pole: trend_series(&sw_old),
        skipped_cells,
    };
    Ok((cumulated, switched))
}

// ---------------------------------------------------------------------
// Stationarity
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StationarityTest {
    Ks,
    Student,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub test: StationarityTest,
    pub per_tree: Vec<(i64, f64)>,
    pub skipped: Vec<(i64, String)>,
    pub p_hist: HistogramReport,
    /// KS-vs-uniform p-value of the per-tree p-values.
    pub uniformity_p: f64,
}

/// Per tree: fit ARMA(1,1) to the old-pole spine rates (missing values
/// compacted), split the residuals first half / second half (the first
/// half takes the extra point for odd lengths) and compare the halves.
pub fn stationarity_analysis(
    ds: &Dataset,
    test: StationarityTest,
    min_points: usize,
    bins: usize,
) -> Result<StationarityReport, PipelineError> {
    let outcomes: Vec<(i64, Result<f64, String>)> = ds
        .trees
        .par_iter()
        .map(|tree| {
            let series: Vec<f64> = spine_rates(tree).values().copied().collect();
            if series.len() < min_points {
                return (
                    tree.tree_id,
                    Err(format!("only {} usable spine points", series.len())),
                );
            }
            let fit = match arma11_fit(&series) {
                Ok(f) => f,
                Err(e) => return (tree.tree_id, Err(e.to_string())),
            };
            let split = (fit.residuals.len() + 1) / 2;
            let (first, second) = fit.residuals.split_at(split);
            let p = match test {
                StationarityTest::Ks => ks_two_sample(first, second).map(|t| t.p_value),
                StationarityTest::Student => {
                    student_two_sample(first, second, 0.95).map(|t| t.p_value)
                }
            };
            match p {
                Ok(p) => (tree.tree_id, Ok(p)),
                Err(e) => (tree.tree_id, Err(e.to_string())),
            }
        })
        .collect();

    let mut per_tree = Vec::new();
    let mut skipped = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(p) => per_tree.push((id, p)),
            Err(reason) => skipped.push((id, reason)),
        }
    }
    if per_tree.is_empty() {
        return Err(PipelineError::NoUsableTrees);
    }
    let ps: Vec<f64> = per_tree.iter().map(|(_, p)| *p).collect();
    let uniformity_p = ks_uniform(&ps)?.p_value;
    Ok(StationarityReport {
        test,
        p_hist: HistogramReport::p_values("stationarity p-values", &ps, bins),
        per_tree,
        skipped,
        uniformity_p,
    })
}

// ---------------------------------------------------------------------
// Generation summaries
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRow {
    pub generation: u32,
    pub count: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
    pub histogram: Option<HistogramReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationSummaryReport {
    pub rows: Vec<GenerationRow>,
    /// Whether rates outside [0, 0.08] were excluded.
    pub outliers_excluded: bool,
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Tukey hinges: the halves include the median element when the length
/// is odd.
fn hinges(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let half = (n + 1) / 2;
    (median_of(&sorted[..half]), median_of(&sorted[n - half..]))
}

/// Five-number summaries and histogram bins per requested generation.
/// With `exclude_outliers`, rates negative or above 0.08 are dropped
/// first (boxplot display convention for the comb data).
pub fn generation_summary(
    ds: &Dataset,
    generations: &[u32],
    exclude_outliers: bool,
    bins: usize,
) -> GenerationSummaryReport {
    let mut rows = Vec::with_capacity(generations.len());
    for &gen in generations {
        let mut rates: Vec<f64> = ds
            .all_records()
            .filter(|r| r.generation == gen)
            .filter_map(|r| r.rate())
            .filter(|&r| !exclude_outliers || (0.0..=0.08).contains(&r))
            .collect();
        rates.sort_by(|a, b| a.total_cmp(b));
        if rates.is_empty() {
            rows.push(GenerationRow {
                generation: gen,
                count: 0,
                min: None,
                q1: None,
                median: None,
                q3: None,
                max: None,
                histogram: None,
            });
            continue;
        }
        let (q1, q3) = hinges(&rates);
        rows.push(GenerationRow {
            generation: gen,
            count: rates.len(),
            min: Some(rates[0]),
            q1: Some(q1),
            median: Some(median_of(&rates)),
            q3: Some(q3),
            max: Some(*rates.last().unwrap()),
            histogram: Some(HistogramReport::auto(
                &format!("growth rates, generation {gen}"),
                &rates,
                bins,
            )),
        });
    }
    GenerationSummaryReport {
        rows,
        outliers_excluded: exclude_outliers,
    }
}
