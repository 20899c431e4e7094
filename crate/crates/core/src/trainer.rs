//! Calibration of the per-depth inference model.
//!
//! Every square block of depth 0..=3 in the fully searched high-resolution
//! trees yields one sample: whether it was 4-way split, and the neighborhood
//! estimator from the low-resolution depth map for every candidate margin.
//! For depths 0..=2 the threshold is the largest grid value whose type II rate
//! stays within `epsilon`, and the margin minimizes the resulting type I rate.
//! Depth 3 uses margin 0 and minimizes the total error count.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::neighborhood::{DepthIndex, DepthMap, Ladder, NeighborhoodSpec, MARGIN_SLOTS, MARGIN_STEP};
use crate::rdo::{PartitionMode, PartitionTree, MAX_DEPTH};
use crate::{Error, Result};

/// Depths at which termination can be decided (a square with a split to skip).
pub const DECIDED_DEPTHS: usize = MAX_DEPTH as usize;
/// Threshold grid: `k / 10` for `k = 0..=10`.
pub const TAU_SLOTS: usize = 11;
/// Depth handled by the total-error rule.
pub const SMALL_BLOCK_DEPTH: u8 = 3;

pub fn tau_grid() -> [f64; TAU_SLOTS] {
    std::array::from_fn(|k| k as f64 / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub depth: u8,
    /// Observed 4-way split of the high-resolution block.
    pub x1: bool,
    /// Estimator value per margin slot (`margin = 8 * slot`).
    pub x2: [f64; MARGIN_SLOTS],
}

impl CalibrationSample {
    pub fn x2_at(&self, margin: usize) -> f64 {
        self.x2[margin / MARGIN_STEP]
    }
}

/// Gathers calibration samples from fully searched training frames.
///
/// `hi_trees[k]` are the superblock trees of high-resolution frame `k` and
/// `lo_maps[k]` the depth map of the same frame's low-resolution pass.
pub fn collect_samples(
    hi_trees: &[Vec<PartitionTree>],
    lo_maps: &[DepthMap],
    ladder: &Ladder,
) -> Result<Vec<CalibrationSample>> {
    if hi_trees.len() != lo_maps.len() {
        return Err(Error::Input(format!(
            "{} high-resolution frames but {} low-resolution depth maps",
            hi_trees.len(),
            lo_maps.len()
        )));
    }
    let per_frame: Vec<Vec<CalibrationSample>> = hi_trees
        .par_iter()
        .zip(lo_maps.par_iter())
        .map(|(trees, map)| {
            let index = DepthIndex::new(map);
            let mut out = Vec::new();
            for tree in trees {
                tree.walk(&mut |node| {
                    let depth = node.depth();
                    if !node.rect.is_square() || depth >= MAX_DEPTH {
                        return;
                    }
                    if let Some(x2) = estimator_by_margin(&index, ladder, node, depth) {
                        out.push(CalibrationSample { depth, x1: node.mode == PartitionMode::Split4, x2 });
                    }
                });
            }
            out
        })
        .collect();
    Ok(per_frame.into_iter().flatten().collect())
}

/// `None` when the block falls entirely outside the low-resolution map.
fn estimator_by_margin(
    index: &DepthIndex,
    ladder: &Ladder,
    node: &PartitionTree,
    depth: u8,
) -> Option<[f64; MARGIN_SLOTS]> {
    let region = ladder.colocate(&node.rect, index.dims());
    let mut x2 = [0.0; MARGIN_SLOTS];
    for (slot, v) in x2.iter_mut().enumerate() {
        let spec = NeighborhoodSpec { margin: slot * MARGIN_STEP, depth };
        *v = index.mean(&region, &spec).ok()?;
    }
    Some(x2)
}

/// Denominator used for error rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateDenominator {
    /// Both rates over all samples at the depth.
    #[default]
    Joint,
    /// Type I over non-split samples, type II over split samples.
    Conditional,
}

impl std::str::FromStr for RateDenominator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(RateDenominator::Joint),
            "conditional" => Ok(RateDenominator::Conditional),
            _ => Err(Error::Config(format!("unknown error-rate denominator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub epsilon: f64,
    /// Depths with fewer samples are left without early termination.
    pub min_samples: usize,
    pub denominator: RateDenominator,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { epsilon: 0.1, min_samples: 50, denominator: RateDenominator::Joint }
    }
}

impl CalibrationConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        CalibrationConfig { epsilon, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Type I: predicted split, observed non-split. Type II: predicted non-split,
/// observed split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub type1: usize,
    pub type2: usize,
    pub total: usize,
    /// Samples observed as split.
    pub splits: usize,
}

impl ErrorStats {
    pub fn rates(&self, denominator: RateDenominator) -> (f64, f64) {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        match denominator {
            RateDenominator::Joint => (ratio(self.type1, self.total), ratio(self.type2, self.total)),
            RateDenominator::Conditional => {
                (ratio(self.type1, self.total - self.splits), ratio(self.type2, self.splits))
            }
        }
    }
}

/// Error counts under the rule "predict non-split iff `x2 < tau`".
pub fn evaluate_errors(samples: &[CalibrationSample], margin: usize, tau: f64) -> ErrorStats {
    let mut s = ErrorStats::default();
    for sample in samples {
        let predicted_split = sample.x2_at(margin) >= tau;
        s.total += 1;
        s.splits += sample.x1 as usize;
        match (predicted_split, sample.x1) {
            (true, false) => s.type1 += 1,
            (false, true) => s.type2 += 1,
            _ => {}
        }
    }
    s
}

/// Error counts for every threshold on the grid, for one margin slot.
fn error_table(samples: &[&CalibrationSample], slot: usize) -> [ErrorStats; TAU_SLOTS] {
    let grid = tau_grid();
    // first[k]: samples whose smallest threshold with x2 < tau is grid[k].
    let mut split_first = [0usize; TAU_SLOTS + 1];
    let mut whole_first = [0usize; TAU_SLOTS + 1];
    for s in samples {
        let k = grid.partition_point(|&t| t <= s.x2[slot]);
        if s.x1 {
            split_first[k] += 1;
        } else {
            whole_first[k] += 1;
        }
    }
    let splits: usize = split_first.iter().sum();
    let total = samples.len();
    let (mut below_split, mut below_whole) = (0, 0);
    std::array::from_fn(|k| {
        below_split += split_first[k];
        below_whole += whole_first[k];
        ErrorStats { type1: (total - splits) - below_whole, type2: below_split, total, splits }
    })
}

/// Largest grid threshold whose type II rate does not exceed `epsilon`.
fn max_tau_within(table: &[ErrorStats; TAU_SLOTS], epsilon: f64, denominator: RateDenominator) -> usize {
    (0..TAU_SLOTS).rev().find(|&k| table[k].rates(denominator).1 <= epsilon).unwrap_or(0)
}

/// `tau(margin)` for samples of a single depth.
pub fn threshold_for_margin(
    samples: &[CalibrationSample],
    margin: usize,
    epsilon: f64,
    denominator: RateDenominator,
) -> f64 {
    let refs: Vec<_> = samples.iter().collect();
    let table = error_table(&refs, margin / MARGIN_STEP);
    tau_grid()[max_tau_within(&table, epsilon, denominator)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthModel {
    pub depth: u8,
    pub margin: usize,
    pub tau: f64,
    pub enabled: bool,
    pub type1_rate: f64,
    pub type2_rate: f64,
    pub sample_count: usize,
}

impl DepthModel {
    fn disabled(depth: u8) -> Self {
        DepthModel {
            depth,
            margin: if depth == SMALL_BLOCK_DEPTH { 0 } else { MARGIN_STEP },
            tau: 0.0,
            enabled: false,
            type1_rate: 0.0,
            type2_rate: 0.0,
            sample_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceModel {
    pub epsilon: f64,
    pub denominator: RateDenominator,
    pub depths: Vec<DepthModel>,
}

impl InferenceModel {
    pub fn depth(&self, d: u8) -> Option<&DepthModel> {
        self.depths.get(d as usize)
    }

    /// Same margins, every threshold replaced by `tau`.
    pub fn with_tau(mut self, tau: f64) -> Self {
        for d in &mut self.depths {
            d.tau = tau;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelFormat(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if self.depths.len() != DECIDED_DEPTHS {
            return bad(format!("expected {DECIDED_DEPTHS} depth entries, got {}", self.depths.len()));
        }
        for (i, d) in self.depths.iter().enumerate() {
            if d.depth as usize != i {
                return bad(format!("depth entry {i} labelled {}", d.depth));
            }
            if NeighborhoodSpec::new(d.margin, d.depth).is_err() || (d.depth == SMALL_BLOCK_DEPTH && d.margin != 0) {
                return bad(format!("invalid margin {} at depth {}", d.margin, d.depth));
            }
            if !tau_grid().contains(&d.tau) {
                return bad(format!("tau {} at depth {} is off the grid", d.tau, d.depth));
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let model: InferenceModel = toml::from_str(s).map_err(|e| Error::ModelFormat(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

fn calibrate_depth(samples: &[&CalibrationSample], depth: u8, cfg: &CalibrationConfig) -> DepthModel {
    let grid = tau_grid();
    let (margin, tau_k, stats) = if depth == SMALL_BLOCK_DEPTH {
        let table = error_table(samples, 0);
        let mut best = 0;
        for k in 1..TAU_SLOTS {
            let errs = |k: usize| table[k].type1 + table[k].type2;
            if errs(k) < errs(best) {
                best = k;
            }
        }
        (0, best, table[best])
    } else {
        let mut best: Option<(usize, usize, ErrorStats, f64)> = None;
        for slot in 1..MARGIN_SLOTS {
            let table = error_table(samples, slot);
            let k = max_tau_within(&table, cfg.epsilon, cfg.denominator);
            let type1 = table[k].rates(cfg.denominator).0;
            if best.as_ref().is_none_or(|b| type1 < b.3) {
                best = Some((slot * MARGIN_STEP, k, table[k], type1));
            }
        }
        let (margin, k, stats, _) = best.expect("margin grid is non-empty");
        (margin, k, stats)
    };
    let (type1_rate, type2_rate) = stats.rates(cfg.denominator);
    DepthModel {
        depth,
        margin,
        tau: grid[tau_k],
        enabled: samples.len() >= cfg.min_samples,
        type1_rate,
        type2_rate,
        sample_count: samples.len(),
    }
}

/// Builds the inference model from calibration samples.
pub fn calibrate(samples: &[CalibrationSample], cfg: &CalibrationConfig) -> Result<InferenceModel> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Calibration("no calibration samples at any depth".into()));
    }
    let depths = (0..MAX_DEPTH)
        .map(|d| {
            let subset: Vec<_> = samples.iter().filter(|s| s.depth == d).collect();
            if subset.is_empty() {
                DepthModel::disabled(d)
            } else {
                calibrate_depth(&subset, d, cfg)
            }
        })
        .collect();
    Ok(InferenceModel { epsilon: cfg.epsilon, denominator: cfg.denominator, depths })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(depth: u8, x1: bool, x2: f64) -> CalibrationSample {
        CalibrationSample { depth, x1, x2: [x2; MARGIN_SLOTS] }
    }

    #[test]
    fn never_split_gives_max_tau() {
        let samples: Vec<_> = (0..200).map(|i| sample((i % 3) as u8, false, (i % 10) as f64 / 10.0)).collect();
        let m = calibrate(&samples, &CalibrationConfig::default()).unwrap();
        for d in 0..3 {
            let dm = m.depth(d).unwrap();
            assert_eq!(dm.tau, 1.0);
            assert_eq!(dm.type2_rate, 0.0);
            assert!(dm.enabled);
        }
        assert!(!m.depth(3).unwrap().enabled);
    }

    #[test]
    fn always_split_full_estimator() {
        let samples: Vec<_> = (0..100).map(|_| sample(0, true, 1.0)).collect();
        let m = calibrate(&samples, &CalibrationConfig::default()).unwrap();
        let d0 = m.depth(0).unwrap();
        assert_eq!(d0.tau, 1.0);
        assert_eq!(d0.type1_rate, 0.0);
        assert_eq!(d0.type2_rate, 0.0);
        assert_eq!(d0.margin, 8);
    }

    #[test]
    fn evaluate_errors_boundaries() {
        let samples = vec![sample(0, true, 0.0), sample(0, false, 0.0), sample(0, true, 0.5), sample(0, false, 0.95)];
        let s = evaluate_errors(&samples, 8, 0.0);
        assert_eq!(s.type2, 0);
        assert_eq!(s.type1, 2);
        let s = evaluate_errors(&samples, 8, 1.0);
        assert_eq!(s.type1, 0);
        assert_eq!(s.type2, 2);
        let s = evaluate_errors(&samples, 8, 0.5);
        assert_eq!((s.type1, s.type2, s.total, s.splits), (1, 1, 4, 2));
    }

    #[test]
    fn error_table_matches_direct_evaluation() {
        let samples: Vec<_> = (0..97).map(|i| sample(1, i % 3 == 0, ((i * 7) % 23) as f64 / 22.0)).collect();
        let refs: Vec<_> = samples.iter().collect();
        let table = error_table(&refs, 4);
        for (k, tau) in tau_grid().into_iter().enumerate() {
            assert_eq!(table[k], evaluate_errors(&samples, 32, tau));
        }
    }

    #[test]
    fn sparse_depth_disabled() {
        let mut samples: Vec<_> = (0..60).map(|i| sample(0, i % 2 == 0, 0.5)).collect();
        samples.extend((0..10).map(|_| sample(1, true, 0.9)));
        let m = calibrate(&samples, &CalibrationConfig::default()).unwrap();
        assert!(m.depth(0).unwrap().enabled);
        let d1 = m.depth(1).unwrap();
        assert!(!d1.enabled);
        assert_eq!(d1.sample_count, 10);
    }

    #[test]
    fn empty_and_bad_epsilon() {
        assert!(matches!(calibrate(&[], &CalibrationConfig::default()), Err(Error::Calibration(_))));
        let s = vec![sample(0, true, 0.5)];
        assert!(calibrate(&s, &CalibrationConfig::with_epsilon(0.0)).is_err());
        assert!(calibrate(&s, &CalibrationConfig::with_epsilon(1.0)).is_err());
    }

    #[test]
    fn conditional_denominator() {
        // 10 splits, 90 non-splits; 2 splits below 0.3.
        let mut samples: Vec<_> = (0..90).map(|_| sample(0, false, 0.1)).collect();
        samples.extend((0..2).map(|_| sample(0, true, 0.2)));
        samples.extend((0..8).map(|_| sample(0, true, 0.8)));
        let joint = CalibrationConfig { epsilon: 0.05, ..Default::default() };
        let cond = CalibrationConfig { denominator: RateDenominator::Conditional, ..joint };
        // Joint: 2/100 <= 0.05 allows tau up to 0.8.
        assert_eq!(calibrate(&samples, &joint).unwrap().depth(0).unwrap().tau, 0.8);
        // Conditional: 2/10 > 0.05, so tau must stay at or below 0.2.
        assert_eq!(calibrate(&samples, &cond).unwrap().depth(0).unwrap().tau, 0.2);
    }

    #[test]
    fn depth3_minimizes_total_errors() {
        let mut samples: Vec<_> = (0..80).map(|_| sample(3, false, 0.0)).collect();
        samples.extend((0..20).map(|_| sample(3, true, 0.4)));
        samples.extend((0..5).map(|_| sample(3, false, 0.6)));
        let m = calibrate(&samples, &CalibrationConfig::default()).unwrap();
        let d3 = m.depth(3).unwrap();
        assert_eq!(d3.margin, 0);
        // tau in (0, 0.4] has zero type II and 5 type I; smallest such is 0.1.
        assert_eq!(d3.tau, 0.1);
    }

    #[test]
    fn model_file_round_trip() {
        let samples: Vec<_> = (0..300).map(|i| sample((i % 4) as u8, i % 5 == 0, (i % 11) as f64 / 10.0)).collect();
        let m = calibrate(&samples, &CalibrationConfig::default()).unwrap();
        let text = m.to_toml_string().unwrap();
        assert!(text.contains("epsilon = 0.1"));
        assert!(text.contains("denominator = \"joint\""));
        assert_eq!(InferenceModel::from_toml_str(&text).unwrap(), m);
        let broken = text.replacen("tau = ", "tau = 0.05 #", 1);
        assert!(InferenceModel::from_toml_str(&broken).is_err());
    }
}
