//! Synthetic simulator for the split-probability model.
//!
//! A latent detail field `mu` is sampled on a unit lattice around a reference
//! block at the origin. The value at offset `eta` is drawn independently as
//! `N(mu0 + beta . eta, |eta| sigma2)`. Each block is 4-way split with
//! probability `g(mu)` for a logistic link `g`. The neighborhood estimator is
//! the split fraction over the `(2r + 1)^2` lattice blocks within Chebyshev
//! radius `r` of the origin.
//!
//! Every replication draws from its own ChaCha stream keyed by
//! `(seed, replication)`, so results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    /// Field value at the reference block.
    pub mu0: f64,
    /// Drift per unit offset.
    pub beta: [f64; 2],
    /// Variance per unit offset length.
    pub sigma2: f64,
}

impl FieldParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be finite and >= 0, got {}", self.sigma2)));
        }
        if !(self.mu0.is_finite() && self.beta.iter().all(|b| b.is_finite())) {
            return Err(Error::Config("field parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn beta_norm(&self) -> f64 {
        self.beta[0].hypot(self.beta[1])
    }

    /// Mean of the field at `offset`.
    pub fn drift_at(&self, offset: (i64, i64)) -> f64 {
        self.mu0 + self.beta[0] * offset.0 as f64 + self.beta[1] * offset.1 as f64
    }
}

/// One realization of the field on the square lattice `[-radius, radius]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticField {
    pub params: FieldParams,
    pub radius: usize,
    pub seed: u64,
    /// Row-major, `(2 * radius + 1)^2` values, origin at the center.
    pub grid: Vec<f64>,
}

impl SyntheticField {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, offset: (i64, i64)) -> f64 {
        let r = self.radius as i64;
        assert!(offset.0.abs() <= r && offset.1.abs() <= r, "offset {offset:?} outside radius {r}");
        let side = self.side() as i64;
        self.grid[((offset.1 + r) * side + offset.0 + r) as usize]
    }
}

fn norm(offset: (i64, i64)) -> f64 {
    (offset.0 as f64).hypot(offset.1 as f64)
}

/// Lattice offsets of the square neighborhood of Chebyshev radius `r`, row-major.
pub fn neighborhood_offsets(r: usize) -> Vec<(i64, i64)> {
    let r = r as i64;
    (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect()
}

fn draw_field<R: Rng>(params: &FieldParams, radius: usize, rng: &mut R) -> Vec<f64> {
    neighborhood_offsets(radius)
        .into_iter()
        .map(|eta| {
            let z: f64 = rng.sample(StandardNormal);
            params.drift_at(eta) + (norm(eta) * params.sigma2).sqrt() * z
        })
        .collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_field(params: &FieldParams, radius: usize, seed: u64) -> Result<SyntheticField> {
    params.validate()?;
    let grid = draw_field(params, radius, &mut stream_rng(seed, 0));
    Ok(SyntheticField { params: *params, radius, seed, grid })
}

/// Logistic link `g(mu) = 1 / (1 + exp(-(mu - location) / scale))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkFunction {
    pub location: f64,
    pub scale: f64,
}

impl LinkFunction {
    pub fn logistic(location: f64, scale: f64) -> Self {
        LinkFunction { location, scale }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite() && self.location.is_finite()) {
            return Err(Error::Config(format!("logistic link needs finite location and scale > 0, got {self:?}")));
        }
        Ok(())
    }

    pub fn eval(&self, mu: f64) -> f64 {
        1.0 / (1.0 + (-(mu - self.location) / self.scale).exp())
    }

    pub fn derivative(&self, mu: f64) -> f64 {
        let g = self.eval(mu);
        g * (1.0 - g) / self.scale
    }

    pub fn inverse(&self, p: f64) -> f64 {
        self.location + self.scale * (p / (1.0 - p)).ln()
    }
}

fn bernoulli<R: Rng>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

/// Independent split indicators for the blocks at `offsets`.
pub fn sample_partitions(field: &SyntheticField, g: &LinkFunction, offsets: &[(i64, i64)], seed: u64) -> Result<Vec<bool>> {
    g.validate()?;
    let mut rng = stream_rng(seed, 0);
    Ok(offsets.iter().map(|&eta| bernoulli(g.eval(field.at(eta)), &mut rng)).collect())
}

/// `(1/n) |g'(mu0)| |beta| sum |eta_j|` over the radius-`r` neighborhood.
pub fn bias_bound(params: &FieldParams, g: &LinkFunction, radius: usize) -> f64 {
    let offsets = neighborhood_offsets(radius);
    let total: f64 = offsets.iter().map(|&e| norm(e)).sum();
    g.derivative(params.mu0).abs() * params.beta_norm() * total / offsets.len() as f64
}

/// Mean, standard deviation and standard errors of a replication sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub mean: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub sd_se: f64,
}

impl SampleMoments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let var = m2 * n / (n - 1.0);
        let sd = var.sqrt();
        // Delta method: Var(s^2) ~ (m4 - m2^2) / n, se(s) = se(s^2) / (2 s).
        let sd_se = if sd > 0.0 { ((m4 - m2 * m2).max(0.0) / n).sqrt() / (2.0 * sd) } else { 0.0 };
        SampleMoments { mean, sd, mean_se: sd / n.sqrt(), sd_se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub n: usize,
    pub replications: usize,
    pub empirical_mean: f64,
    pub empirical_sd: f64,
    pub mean_se: f64,
    pub sd_se: f64,
    /// `(1/n) sum g(mu_j)` over the realized field.
    pub predicted_mean: f64,
    /// `(1/n) sqrt(sum g(mu_j)(1 - g(mu_j)))`.
    pub predicted_sd: f64,
    pub bias_bound: f64,
}

impl EstimatorReport {
    /// Both moments within `k` standard errors of the predictions.
    pub fn moments_within(&self, k: f64) -> bool {
        (self.empirical_mean - self.predicted_mean).abs() <= k * self.mean_se
            && (self.empirical_sd - self.predicted_sd).abs() <= k * self.sd_se
    }
}

/// Compares the sampled estimator over a fixed field realization against the
/// closed-form mean and standard deviation.
pub fn estimator_moments(
    field: &SyntheticField,
    g: &LinkFunction,
    radius: usize,
    replications: usize,
    seed: u64,
) -> Result<EstimatorReport> {
    g.validate()?;
    if radius > field.radius {
        return Err(Error::Config(format!("radius {radius} exceeds field radius {}", field.radius)));
    }
    if replications < 2 {
        return Err(Error::Config("need at least 2 replications".into()));
    }
    let probs: Vec<f64> = neighborhood_offsets(radius).into_iter().map(|e| g.eval(field.at(e))).collect();
    let n = probs.len() as f64;
    let values: Vec<f64> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r);
            probs.iter().filter(|&&p| bernoulli(p, &mut rng)).count() as f64 / n
        })
        .collect();
    let m = SampleMoments::of(&values);
    Ok(EstimatorReport {
        n: probs.len(),
        replications,
        empirical_mean: m.mean,
        empirical_sd: m.sd,
        mean_se: m.mean_se,
        sd_se: m.sd_se,
        predicted_mean: probs.iter().sum::<f64>() / n,
        predicted_sd: probs.iter().map(|p| p * (1.0 - p)).sum::<f64>().sqrt() / n,
        bias_bound: bias_bound(&field.params, g, radius),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub radius: usize,
    pub n: usize,
    /// `E[X'] - g(mu0)` estimated over field and split draws.
    pub bias: f64,
    pub bias_se: f64,
    pub sd: f64,
    pub bound: f64,
    /// `bias^2 + sd^2`.
    pub mse: f64,
}

impl SweepRow {
    pub fn within_bound(&self, k: f64) -> bool {
        self.bias.abs() <= self.bound + k * self.bias_se
    }
}

/// Monte Carlo bias and spread of the estimator against neighborhood radius.
/// Each replication draws a fresh field and fresh split indicators.
pub fn bias_variance_sweep(
    params: &FieldParams,
    g: &LinkFunction,
    radii: &[usize],
    replications: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    params.validate()?;
    g.validate()?;
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("radii must be strictly ascending".into()));
    }
    if replications < 2 {
        return Err(Error::Config("need at least 2 replications".into()));
    }
    let target = g.eval(params.mu0);
    Ok(radii
        .iter()
        .map(|&radius| {
            let radius_seed = seed ^ (radius as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let values: Vec<f64> = (0..replications as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = stream_rng(radius_seed, r);
                    let field = draw_field(params, radius, &mut rng);
                    let hits = field.iter().filter(|&&mu| bernoulli(g.eval(mu), &mut rng)).count();
                    hits as f64 / field.len() as f64
                })
                .collect();
            let m = SampleMoments::of(&values);
            let bias = m.mean - target;
            SweepRow {
                radius,
                n: (2 * radius + 1).pow(2),
                bias,
                bias_se: m.mean_se,
                sd: m.sd,
                bound: bias_bound(params, g, radius),
                mse: bias * bias + m.sd * m.sd,
            }
        })
        .collect())
}

/// Radius with the smallest `bias^2 + sd^2`.
pub fn best_radius(rows: &[SweepRow]) -> Option<usize> {
    rows.iter().min_by(|a, b| a.mse.total_cmp(&b.mse)).map(|r| r.radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub offset: (i64, i64),
    pub distance: f64,
    /// Empirical split rate of the high-resolution block at `offset`.
    pub ex1: f64,
    /// Empirical split rate of the low-resolution block at the origin.
    pub ex2: f64,
    /// `g1(g2^-1(ex2))`.
    pub predicted_ex1: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub rows: Vec<LinkRow>,
    pub max_discrepancy: f64,
    /// `g1 o g2^-1` strictly increasing on a probability grid.
    pub composed_increasing: bool,
}

/// Checks the transfer of split rates from the low-resolution reference block
/// to nearby high-resolution blocks through `g1 o g2^-1`.
pub fn cross_resolution_link(
    field: &SyntheticField,
    g1: &LinkFunction,
    g2: &LinkFunction,
    offsets: &[(i64, i64)],
    replications: usize,
    seed: u64,
) -> Result<LinkReport> {
    g1.validate()?;
    g2.validate()
        .map_err(|_| Error::Config(format!("low-resolution link {g2:?} is not invertible")))?;
    if replications < 2 {
        return Err(Error::Config("need at least 2 replications".into()));
    }
    let rate = |p: f64, stream: u64| {
        let mut rng = stream_rng(seed, stream);
        (0..replications).filter(|_| bernoulli(p, &mut rng)).count() as f64 / replications as f64
    };
    // Keep the empirical rate away from 0 and 1 so the inverse stays finite.
    let floor = 0.5 / replications as f64;
    let ex2 = rate(g2.eval(field.at((0, 0))), 0);
    let predicted_ex1 = g1.eval(g2.inverse(ex2.clamp(floor, 1.0 - floor)));
    let rows: Vec<LinkRow> = offsets
        .iter()
        .enumerate()
        .map(|(i, &offset)| {
            let ex1 = rate(g1.eval(field.at(offset)), i as u64 + 1);
            LinkRow { offset, distance: norm(offset), ex1, ex2, predicted_ex1, discrepancy: (ex1 - predicted_ex1).abs() }
        })
        .collect();
    let composed: Vec<f64> = (1..100).map(|k| g1.eval(g2.inverse(k as f64 / 100.0))).collect();
    Ok(LinkReport {
        max_discrepancy: rows.iter().map(|r| r.discrepancy).fold(0.0, f64::max),
        rows,
        composed_increasing: composed.windows(2).all(|w| w[1] > w[0]),
    })
}

/// The default simulator configuration.
pub fn default_params() -> (FieldParams, LinkFunction) {
    (FieldParams { mu0: 1.5, beta: [0.5, 0.2], sigma2: 0.05 }, LinkFunction::logistic(0.0, 1.0))
}

pub const DEFAULT_RADII: [usize; 9] = [0, 1, 2, 3, 4, 5, 6, 8, 10];
