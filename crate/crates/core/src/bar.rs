//! The asymmetric bifurcating autoregressive (BAR) model on comb trees:
//! simulation, the missing-data-aware least-squares estimator, and
//! asymptotic confidence intervals.
//!
//! Each daughter's growth rate is an affine function of its mother's
//! plus noise, with separate parameters per pole type:
//! `X_{2k} = a0 + b0 X_k + eps_{2k}` (new pole) and
//! `X_{2k+1} = a1 + b1 X_k + eps_{2k+1}` (old pole). A per-cell
//! observation indicator gates every term of the normal equations, so a
//! mother-daughter pair contributes only when both rates are available.
//! The normal equations split into two independent 2x2 blocks, one per
//! daughter type.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ingest::{CellRecord, Dataset, LabelRef, LineageTree, SourceFormat};
use crate::lineage::{CombCell, PoleType};
use crate::stattests::dist::normal_quantile;

/// Condition-number guard for the 2x2 block solves.
pub const MAX_BLOCK_CONDITION: f64 = 1e12;

#[derive(Debug, thiserror::Error)]
pub enum BarError {
    #[error("invalid probability {0}, must be in [0, 1)")]
    InvalidProbability(f64),
    #[error("need at least 2 generations, got {0}")]
    TooFewGenerations(u32),
    #[error("noise standard deviation must be >= 0, got {0}")]
    InvalidNoiseSd(f64),
    #[error("noise correlation {0} must be in [-1, 1]")]
    InvalidCorrelation(f64),
    #[error("|b1| >= 1 with no explicit initial law; spine has no fixed point")]
    NoFixedPoint,
    #[error("{block} block of the normal equations is rank deficient")]
    RankDeficientBlock { block: PoleType },
    #[error("confidence level {0} must lie in (0, 1)")]
    InvalidLevel(f64),
}

/// Model parameters `theta = (a0, b0, a1, b1)` plus the noise law.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BarParams {
    pub a0: f64,
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
    pub noise_sd: f64,
    /// Correlation between the two sisters' noises.
    pub noise_correlation: f64,
}

impl BarParams {
    pub fn theta(&self) -> [f64; 4] {
        [self.a0, self.b0, self.a1, self.b1]
    }

    /// Fixed point of the old-pole spine map `x -> a1 + b1 x`.
    pub fn spine_fixed_point(&self) -> Option<f64> {
        if self.b1.abs() < 1.0 {
            Some(self.a1 / (1.0 - self.b1))
        } else {
            None
        }
    }

    /// Whether the spine recursion is in the stationary regime.
    pub fn is_stationary(&self) -> bool {
        self.b0.abs() < 1.0 && self.b1.abs() < 1.0
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub params: BarParams,
    pub n_generations: u32,
    pub n_trees: u32,
    pub missing_prob: f64,
    pub seed: u64,
    /// Initial spine value law: Gaussian with this mean (default: the
    /// spine fixed point).
    pub init_mean: Option<f64>,
    /// Standard deviation of the initial law (default: the stationary
    /// spine standard deviation).
    pub init_sd: Option<f64>,
}

/// Simulate comb trees: along the old-pole spine both daughters are
/// generated each generation; each cell is hidden independently with
/// `missing_prob`. Output uses the comb (9-column) record schema. Each
/// tree draws from its own RNG stream, so results do not depend on
/// evaluation order.
pub fn simulate_comb(cfg: &SimulateConfig) -> Result<Dataset, BarError> {
    let p = &cfg.params;
    if !(0.0..1.0).contains(&cfg.missing_prob) {
        return Err(BarError::InvalidProbability(cfg.missing_prob));
    }
    if cfg.n_generations < 2 {
        return Err(BarError::TooFewGenerations(cfg.n_generations));
    }
    if p.noise_sd < 0.0 {
        return Err(BarError::InvalidNoiseSd(p.noise_sd));
    }
    if !(-1.0..=1.0).contains(&p.noise_correlation) {
        return Err(BarError::InvalidCorrelation(p.noise_correlation));
    }
    let init_mean = match cfg.init_mean {
        Some(m) => m,
        None => p.spine_fixed_point().ok_or(BarError::NoFixedPoint)?,
    };
    let init_sd = cfg.init_sd.unwrap_or_else(|| {
        if p.b1.abs() < 1.0 {
            p.noise_sd / (1.0 - p.b1 * p.b1).sqrt()
        } else {
            p.noise_sd
        }
    });

    let rho = p.noise_correlation;
    let mut trees = Vec::with_capacity(cfg.n_trees as usize);
    for tree_idx in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(tree_idx as u64 + 1);
        let tree_id = tree_idx as i64 + 1;

        let mut spine = init_mean + init_sd * rng.sample::<f64, _>(StandardNormal);
        let mut spine_visible = rng.gen::<f64>() >= cfg.missing_prob;
        let mut spine_rate_opt = spine_visible.then_some(spine);
        let mut records = Vec::with_capacity(2 * cfg.n_generations as usize);

        for gen in 1..=cfg.n_generations {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let eps_new = p.noise_sd * z1;
            let eps_old = p.noise_sd * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
            let x_new = p.a0 + p.b0 * spine + eps_new;
            let x_old = p.a1 + p.b1 * spine + eps_old;
            let new_visible = rng.gen::<f64>() >= cfg.missing_prob;
            let old_visible = rng.gen::<f64>() >= cfg.missing_prob;

            let mother_rate = spine_rate_opt;
            records.push(comb_record(
                tree_id,
                gen,
                PoleType::New,
                new_visible.then_some(x_new),
                mother_rate,
            ));
            records.push(comb_record(
                tree_id,
                gen,
                PoleType::Old,
                old_visible.then_some(x_old),
                mother_rate,
            ));

            spine = x_old;
            spine_visible = old_visible;
            spine_rate_opt = spine_visible.then_some(spine);
        }
        trees.push(LineageTree { tree_id, records });
    }
    Ok(Dataset {
        source: SourceFormat::Wang,
        trees,
        warnings: Vec::new(),
    })
}

fn comb_record(
    tree_id: i64,
    gen: u32,
    pole: PoleType,
    rate: Option<f64>,
    mother_rate: Option<f64>,
) -> CellRecord {
    let (co, cn) = match pole {
        PoleType::Old => (gen, 0),
        PoleType::New => (0, 1),
    };
    CellRecord {
        tree_id,
        label: LabelRef::Comb(CombCell {
            generation: gen,
            pole,
        }),
        generation: gen,
        mother_generation: Some(gen - 1),
        growth_rate: rate,
        mother_growth_rate: mother_rate,
        consec_old: Some(co),
        consec_new: Some(cn),
        mother_consec_old: Some(gen - 1),
        mother_consec_new: Some(0),
        outlier_flag: false,
        mother_outlier_flag: false,
    }
}

/// One 2x2 block of the normalizing matrix plus its right-hand side.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct BlockSums {
    /// Number of observed mother-daughter pairs.
    pub n: f64,
    /// Sum of mother rates.
    pub sx: f64,
    /// Sum of squared mother rates.
    pub sxx: f64,
    /// Sum of daughter rates.
    pub sy: f64,
    /// Sum of mother * daughter rates.
    pub sxy: f64,
}

impl BlockSums {
    pub fn add(&mut self, mother: f64, daughter: f64) {
        self.n += 1.0;
        self.sx += mother;
        self.sxx += mother * mother;
        self.sy += daughter;
        self.sxy += mother * daughter;
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.n, self.sx], [self.sx, self.sxx]]
    }

    /// Solve for (a, b); errors when singular or ill-conditioned.
    fn solve(&self, block: PoleType) -> Result<(f64, f64), BarError> {
        let t = self.n + self.sxx;
        let det = self.n * self.sxx - self.sx * self.sx;
        let disc = (t * t / 4.0 - det).max(0.0).sqrt();
        let lam_max = t / 2.0 + disc;
        let lam_min = t / 2.0 - disc;
        if lam_min <= 0.0 || lam_max / lam_min > MAX_BLOCK_CONDITION {
            return Err(BarError::RankDeficientBlock { block });
        }
        let a = (self.sxx * self.sy - self.sx * self.sxy) / det;
        let b = (self.n * self.sxy - self.sx * self.sy) / det;
        Ok((a, b))
    }

    fn inverse(&self) -> [[f64; 2]; 2] {
        let det = self.n * self.sxx - self.sx * self.sx;
        [
            [self.sxx / det, -self.sx / det],
            [-self.sx / det, self.n / det],
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarEstimate {
    /// `(a0, b0, a1, b1)`.
    pub theta_hat: [f64; 4],
    /// New-pole (index 0) and old-pole (index 1) blocks of `S_n`.
    pub s_blocks: [BlockSums; 2],
    /// `sigma^2 S_n^{-1}`, block diagonal, row-major 4x4.
    pub cov: [[f64; 4]; 4],
    /// Per-coordinate intervals at `ci_level`.
    pub ci: [(f64, f64); 4],
    pub ci_level: f64,
    /// Pooled mean squared residual over both branches.
    pub noise_var_hat: f64,
    /// Residual noise variance relative to the rate variance.
    pub noise_to_signal: f64,
    pub n_pairs: [usize; 2],
    pub n_generations: u32,
    pub n_trees: usize,
}

/// Observed mother-daughter pair: daughter pole type, mother rate,
/// daughter rate.
pub type Pair = (PoleType, f64, f64);

/// Pairs restricted to the comb subtree (cells `2^n - 2`, `2^n - 1`).
pub fn comb_pairs(ds: &Dataset) -> Vec<Pair> {
    pairs_filtered(ds, true)
}

/// Every observed mother-daughter pair, regardless of position.
pub fn all_pairs(ds: &Dataset) -> Vec<Pair> {
    pairs_filtered(ds, false)
}

fn is_comb_label(label: &LabelRef) -> bool {
    match label {
        LabelRef::Comb(_) => true,
        LabelRef::Explicit(l) => {
            let v = l.value();
            v >= 2 && ((v + 1).is_power_of_two() || (v + 2).is_power_of_two())
        }
    }
}

fn pairs_filtered(ds: &Dataset, comb_only: bool) -> Vec<Pair> {
    let mut pairs = Vec::new();
    for tree in &ds.trees {
        for r in &tree.records {
            if comb_only && !is_comb_label(&r.label) {
                continue;
            }
            let pole = match r.pole() {
                Some(p) => p,
                None => continue,
            };
            if let (Some(mother), Some(daughter)) = (r.mother_rate(), r.rate()) {
                pairs.push((pole, mother, daughter));
            }
        }
    }
    pairs
}

/// The least-squares estimator over a set of observed pairs.
pub fn estimate_pairs(
    pairs: &[Pair],
    n_generations: u32,
    n_trees: usize,
    level: f64,
) -> Result<BarEstimate, BarError> {
    if !(0.0 < level && level < 1.0) {
        return Err(BarError::InvalidLevel(level));
    }
    let mut blocks = [BlockSums::default(), BlockSums::default()];
    for &(pole, mother, daughter) in pairs {
        let idx = match pole {
            PoleType::New => 0,
            PoleType::Old => 1,
        };
        blocks[idx].add(mother, daughter);
    }
    let (a0, b0) = blocks[0].solve(PoleType::New)?;
    let (a1, b1) = blocks[1].solve(PoleType::Old)?;
    let theta_hat = [a0, b0, a1, b1];

    // pooled residual variance over both branches
    let mut rss = 0.0;
    let mut n_pairs = [0usize; 2];
    let mut rates = Vec::with_capacity(pairs.len());
    for &(pole, mother, daughter) in pairs {
        let (a, b, idx) = match pole {
            PoleType::New => (a0, b0, 0),
            PoleType::Old => (a1, b1, 1),
        };
        let e = daughter - a - b * mother;
        rss += e * e;
        n_pairs[idx] += 1;
        rates.push(daughter);
    }
    let total = (n_pairs[0] + n_pairs[1]) as f64;
    let dof = (total - 4.0).max(1.0);
    let noise_var_hat = rss / dof;
    let rate_mean = rates.iter().sum::<f64>() / total;
    let rate_var = rates
        .iter()
        .map(|r| (r - rate_mean) * (r - rate_mean))
        .sum::<f64>()
        / (total - 1.0).max(1.0);
    let noise_to_signal = if rate_var > 0.0 {
        noise_var_hat / rate_var
    } else {
        0.0
    };

    let inv0 = blocks[0].inverse();
    let inv1 = blocks[1].inverse();
    let mut cov = [[0.0; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] = noise_var_hat * inv0[i][j];
            cov[i + 2][j + 2] = noise_var_hat * inv1[i][j];
        }
    }
    let ci = intervals(&theta_hat, &cov, level);

    Ok(BarEstimate {
        theta_hat,
        s_blocks: blocks,
        cov,
        ci,
        ci_level: level,
        noise_var_hat,
        noise_to_signal,
        n_pairs,
        n_generations,
        n_trees,
    })
}

fn intervals(theta: &[f64; 4], cov: &[[f64; 4]; 4], level: f64) -> [(f64, f64); 4] {
    let z = normal_quantile(0.5 + level / 2.0);
    let mut ci = [(0.0, 0.0); 4];
    for i in 0..4 {
        let half = z * cov[i][i].max(0.0).sqrt();
        ci[i] = (theta[i] - half, theta[i] + half);
    }
    ci
}

/// Estimate from comb-subtree pairs only.
pub fn estimate_comb(ds: &Dataset, level: f64) -> Result<BarEstimate, BarError> {
    let pairs = comb_pairs(ds);
    estimate_pairs(&pairs, max_generation(ds), ds.trees.len(), level)
}

/// Estimate from every observed mother-daughter pair of full trees.
pub fn estimate_full_tree(ds: &Dataset, level: f64) -> Result<BarEstimate, BarError> {
    let pairs = all_pairs(ds);
    estimate_pairs(&pairs, max_generation(ds), ds.trees.len(), level)
}

fn max_generation(ds: &Dataset) -> u32 {
    ds.trees.iter().map(|t| t.max_generation()).max().unwrap_or(0)
}

/// Recompute per-coordinate intervals at another level.
pub fn confidence_intervals(est: &BarEstimate, level: f64) -> Result<[(f64, f64); 4], BarError> {
    if !(0.0 < level && level < 1.0) {
        return Err(BarError::InvalidLevel(level));
    }
    Ok(intervals(&est.theta_hat, &est.cov, level))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a0: f64, b0: f64, a1: f64, b1: f64, sd: f64) -> BarParams {
        BarParams {
            a0,
            b0,
            a1,
            b1,
            noise_sd: sd,
            noise_correlation: 0.0,
        }
    }

    #[test]
    fn degenerate_noiseless_chain() {
        // b0 = b1 = 0: all new-pole rates equal a0, old-pole rates a1
        let cfg = SimulateConfig {
            params: params(0.04, 0.0, 0.02, 0.0, 0.0),
            n_generations: 10,
            n_trees: 3,
            missing_prob: 0.0,
            seed: 1,
            init_mean: Some(0.03),
            init_sd: Some(0.0),
        };
        let ds = simulate_comb(&cfg).unwrap();
        for r in ds.all_records() {
            match r.pole().unwrap() {
                PoleType::New => assert_eq!(r.growth_rate, Some(0.04)),
                PoleType::Old => assert_eq!(r.growth_rate, Some(0.02)),
            }
        }
    }

    #[test]
    fn spine_sticks_to_fixed_point() {
        let p = params(0.03, 0.1, 0.0281, 0.0994, 0.0);
        let fp = p.spine_fixed_point().unwrap();
        let cfg = SimulateConfig {
            params: p,
            n_generations: 20,
            n_trees: 1,
            missing_prob: 0.0,
            seed: 3,
            init_mean: Some(fp),
            init_sd: Some(0.0),
        };
        let ds = simulate_comb(&cfg).unwrap();
        for r in ds.all_records() {
            if r.pole() == Some(PoleType::Old) {
                assert!((r.growth_rate.unwrap() - fp).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn table_like_simulation_mean_near_fixed_point() {
        let p = params(0.0304, 0.0664, 0.0281, 0.0994, 0.003);
        let fp = p.spine_fixed_point().unwrap();
        let cfg = SimulateConfig {
            params: p,
            n_generations: 300,
            n_trees: 224,
            missing_prob: 0.0,
            seed: 5,
            init_mean: None,
            init_sd: None,
        };
        let ds = simulate_comb(&cfg).unwrap();
        let old_rates: Vec<f64> = ds
            .all_records()
            .filter(|r| r.pole() == Some(PoleType::Old))
            .filter_map(|r| r.growth_rate)
            .collect();
        let mean = old_rates.iter().sum::<f64>() / old_rates.len() as f64;
        let sd = p.noise_sd / (1.0 - p.b1 * p.b1).sqrt();
        let se = sd / (old_rates.len() as f64).sqrt();
        assert!(
            (mean - fp).abs() < 3.0 * se * 3.0, // allow for spine autocorrelation
            "mean {mean} vs fixed point {fp}"
        );
    }

    #[test]
    fn noiseless_exact_recovery() {
        let cfg = SimulateConfig {
            params: params(0.0304, 0.0664, 0.0281, 0.0994, 0.0),
            n_generations: 30,
            n_trees: 5,
            missing_prob: 0.0,
            seed: 9,
            init_mean: Some(0.031),
            init_sd: Some(0.01),
        };
        let ds = simulate_comb(&cfg).unwrap();
        let est = estimate_comb(&ds, 0.95).unwrap();
        let truth = [0.0304, 0.0664, 0.0281, 0.0994];
        for (e, t) in est.theta_hat.iter().zip(&truth) {
            assert!((e - t).abs() < 1e-10 * t.abs().max(1.0), "{e} vs {t}");
        }
        // noiseless: zero-width intervals
        for (lo, hi) in est.ci {
            assert!(hi - lo < 1e-8);
        }
        assert!(est.noise_var_hat < 1e-20);
    }

    #[test]
    fn all_missing_is_rank_deficient() {
        let cfg = SimulateConfig {
            params: params(0.03, 0.1, 0.03, 0.1, 0.001),
            n_generations: 10,
            n_trees: 2,
            missing_prob: 0.0,
            seed: 1,
            init_mean: None,
            init_sd: None,
        };
        let mut ds = simulate_comb(&cfg).unwrap();
        for tree in &mut ds.trees {
            for r in &mut tree.records {
                r.growth_rate = None;
            }
        }
        assert!(matches!(
            estimate_comb(&ds, 0.95),
            Err(BarError::RankDeficientBlock { .. })
        ));
    }

    #[test]
    fn constant_mothers_are_rank_deficient() {
        // all observed mother rates equal -> singular block
        let cfg = SimulateConfig {
            params: params(0.04, 0.0, 0.02, 0.0, 0.0),
            n_generations: 10,
            n_trees: 2,
            missing_prob: 0.0,
            seed: 1,
            init_mean: Some(0.02),
            init_sd: Some(0.0),
        };
        let ds = simulate_comb(&cfg).unwrap();
        assert!(matches!(
            estimate_comb(&ds, 0.95),
            Err(BarError::RankDeficientBlock { .. })
        ));
    }

    #[test]
    fn full_tree_equals_comb_on_comb_data() {
        let cfg = SimulateConfig {
            params: params(0.03, 0.2, 0.028, 0.1, 0.002),
            n_generations: 40,
            n_trees: 10,
            missing_prob: 0.1,
            seed: 17,
            init_mean: None,
            init_sd: None,
        };
        let ds = simulate_comb(&cfg).unwrap();
        let a = estimate_comb(&ds, 0.95).unwrap();
        let b = estimate_full_tree(&ds, 0.95).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
    }

    #[test]
    fn affine_equivariance() {
        let cfg = SimulateConfig {
            params: params(0.03, 0.2, 0.028, 0.1, 0.004),
            n_generations: 50,
            n_trees: 8,
            missing_prob: 0.0,
            seed: 23,
            init_mean: None,
            init_sd: None,
        };
        let mut ds = simulate_comb(&cfg).unwrap();
        let base = estimate_comb(&ds, 0.95).unwrap();
        let c = 0.5;
        for tree in &mut ds.trees {
            for r in &mut tree.records {
                r.growth_rate = r.growth_rate.map(|v| v + c);
                r.mother_growth_rate = r.mother_growth_rate.map(|v| v + c);
            }
        }
        let shifted = estimate_comb(&ds, 0.95).unwrap();
        let [a0, b0, a1, b1] = base.theta_hat;
        assert!((shifted.theta_hat[1] - b0).abs() < 1e-9);
        assert!((shifted.theta_hat[3] - b1).abs() < 1e-9);
        assert!((shifted.theta_hat[0] - (a0 + c * (1.0 - b0))).abs() < 1e-9);
        assert!((shifted.theta_hat[2] - (a1 + c * (1.0 - b1))).abs() < 1e-9);
    }

    #[test]
    fn block_sums_match_naive_double_loop() {
        let cfg = SimulateConfig {
            params: params(0.03, 0.2, 0.028, 0.1, 0.004),
            n_generations: 12,
            n_trees: 4,
            missing_prob: 0.2,
            seed: 31,
            init_mean: None,
            init_sd: None,
        };
        let ds = simulate_comb(&cfg).unwrap();
        let est = estimate_comb(&ds, 0.95).unwrap();
        // naive oracle: loop trees x generations, accumulate terms
        let mut oracle = [BlockSums::default(), BlockSums::default()];
        for tree in &ds.trees {
            for gen in 1..=12u32 {
                let mother = if gen == 1 {
                    // the simulated root rate is only visible through the
                    // daughters' mother_growth_rate field
                    tree.records
                        .iter()
                        .find(|r| r.generation == 1)
                        .and_then(|r| r.mother_growth_rate)
                } else {
                    tree.comb_rate(gen - 1, PoleType::Old)
                };
                for (idx, pole) in [(0, PoleType::New), (1, PoleType::Old)] {
                    let daughter = tree.comb_rate(gen, pole);
                    if let (Some(m), Some(d)) = (mother, daughter) {
                        oracle[idx].add(m, d);
                    }
                }
            }
        }
        for i in 0..2 {
            assert!((est.s_blocks[i].n - oracle[i].n).abs() < 1e-12);
            assert!((est.s_blocks[i].sx - oracle[i].sx).abs() < 1e-12);
            assert!((est.s_blocks[i].sxx - oracle[i].sxx).abs() < 1e-12);
            assert!((est.s_blocks[i].sy - oracle[i].sy).abs() < 1e-12);
            assert!((est.s_blocks[i].sxy - oracle[i].sxy).abs() < 1e-12);
        }
    }

    #[test]
    fn simulate_rejects_bad_inputs() {
        let base = SimulateConfig {
            params: params(0.03, 0.1, 0.03, 0.1, 0.001),
            n_generations: 10,
            n_trees: 1,
            missing_prob: 0.0,
            seed: 0,
            init_mean: None,
            init_sd: None,
        };
        let mut bad = base;
        bad.missing_prob = 1.0;
        assert!(matches!(
            simulate_comb(&bad),
            Err(BarError::InvalidProbability(_))
        ));
        let mut bad = base;
        bad.n_generations = 1;
        assert!(matches!(
            simulate_comb(&bad),
            Err(BarError::TooFewGenerations(1))
        ));
        let mut bad = base;
        bad.params.b1 = 1.0;
        assert!(matches!(simulate_comb(&bad), Err(BarError::NoFixedPoint)));
    }
}
