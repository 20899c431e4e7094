//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use qtree_core::trainer::{CalibrationSample, RateDenominator};
use qtree_core::{BlockRect, FrameBuffer, PartitionMode, PartitionTree, RdoConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every legal tree over `rect` with its cost, scored from first principles.
pub fn enumerate(frame: &FrameBuffer, rect: BlockRect, cfg: &RdoConfig) -> Vec<PartitionTree> {
    let leaf = |r: BlockRect| {
        let px: Vec<f64> = (r.y..r.y + r.h)
            .flat_map(|y| (r.x..r.x + r.w).map(move |x| (x, y)))
            .map(|(x, y)| frame.get(x, y) as f64)
            .collect();
        let mean = px.iter().sum::<f64>() / px.len() as f64;
        let sse: f64 = px.iter().map(|v| (v - mean) * (v - mean)).sum();
        PartitionTree::leaf(r, sse + cfg.lambda * cfg.header_bits)
    };
    let mut out = vec![leaf(rect)];
    if rect.w < 8 {
        return out;
    }
    let split = cfg.lambda * cfg.split_bits;
    for mode in [PartitionMode::Horz, PartitionMode::Vert] {
        let children: Vec<_> = rect.children(mode).into_iter().map(leaf).collect();
        let cost = children.iter().map(|c| c.cost).sum::<f64>() + split;
        out.push(PartitionTree { rect, mode, cost, children });
    }
    let options: Vec<Vec<PartitionTree>> =
        rect.children(PartitionMode::Split4).into_iter().map(|c| enumerate(frame, c, cfg)).collect();
    let mut idx = [0usize; 4];
    loop {
        let children: Vec<_> = (0..4).map(|k| options[k][idx[k]].clone()).collect();
        let cost = children.iter().map(|c| c.cost).sum::<f64>() + split;
        out.push(PartitionTree { rect, mode: PartitionMode::Split4, cost, children });
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < options[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == 4 {
                return out;
            }
        }
    }
}

pub fn random_block(rng: &mut ChaCha8Rng) -> FrameBuffer {
    // Piecewise-constant patches plus noise of random strength, so that every
    // mode wins somewhere.
    let levels: Vec<u8> = (0..4).map(|_| rng.random()).collect();
    let cut_x = rng.random_range(0..=16);
    let cut_y = rng.random_range(0..=16);
    let noise = [0u8, 2, 8, 40][rng.random_range(0..4)];
    let jitter: Vec<i32> = (0..256).map(|_| rng.random_range(-(noise as i32)..=noise as i32)).collect();
    FrameBuffer::from_fn(16, 16, |x, y| {
        let patch = (x >= cut_x) as usize + 2 * (y >= cut_y) as usize;
        (levels[patch] as i32 + jitter[y * 16 + x]).clamp(0, 255) as u8
    })
}

pub fn same_shape(a: &PartitionTree, b: &PartitionTree) -> bool {
    a.rect == b.rect && a.mode == b.mode && a.children.iter().zip(&b.children).all(|(x, y)| same_shape(x, y))
}

pub struct Pick {
    pub margin: usize,
    pub tau: f64,
    pub type1: f64,
    pub type2: f64,
}

pub fn rates(samples: &[&CalibrationSample], margin: usize, tau: f64, denom: RateDenominator) -> (f64, f64) {
    let slot = margin / 8;
    let t1 = samples.iter().filter(|s| !s.x1 && s.x2[slot] >= tau).count() as f64;
    let t2 = samples.iter().filter(|s| s.x1 && s.x2[slot] < tau).count() as f64;
    let splits = samples.iter().filter(|s| s.x1).count() as f64;
    let n = samples.len() as f64;
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    match denom {
        RateDenominator::Joint => (div(t1, n), div(t2, n)),
        RateDenominator::Conditional => (div(t1, n - splits), div(t2, splits)),
    }
}

pub fn oracle(samples: &[&CalibrationSample], depth: u8, eps: f64, denom: RateDenominator) -> Pick {
    let taus: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    if depth == 3 {
        let errors = |tau: f64| {
            samples.iter().filter(|s| (s.x2[0] < tau) == s.x1).count()
        };
        let mut best = taus[0];
        for &t in &taus[1..] {
            if errors(t) < errors(best) {
                best = t;
            }
        }
        let (type1, type2) = rates(samples, 0, best, denom);
        return Pick { margin: 0, tau: best, type1, type2 };
    }
    let mut best: Option<Pick> = None;
    for margin in (8..=128).step_by(8) {
        let tau = taus.iter().copied().filter(|&t| rates(samples, margin, t, denom).1 <= eps).fold(0.0, f64::max);
        let (type1, type2) = rates(samples, margin, tau, denom);
        if best.as_ref().is_none_or(|b| type1 < b.type1) {
            best = Some(Pick { margin, tau, type1, type2 });
        }
    }
    best.unwrap()
}

pub fn random_samples(rng: &mut ChaCha8Rng) -> Vec<CalibrationSample> {
    let n = rng.random_range(1..400);
    let split_bias: f64 = rng.random();
    (0..n)
        .map(|_| {
            let depth = rng.random_range(0..4);
            let latent: f64 = rng.random();
            let x1 = rng.random::<f64>() < split_bias * 0.5 + latent * 0.5;
            let x2 = std::array::from_fn(|_| {
                let v: f64 = (latent + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0);
                // Depth fractions often land exactly on the grid.
                if rng.random_bool(0.3) {
                    (v * 10.0).round() / 10.0
                } else {
                    v
                }
            });
            CalibrationSample { depth, x1, x2 }
        })
        .collect()
}

/// Lagrange interpolation through four points.
pub fn lagrange(xs: &[f64; 4], ys: &[f64; 4], x: f64) -> f64 {
    (0..4)
        .map(|i| {
            let basis: f64 = (0..4).filter(|&j| j != i).map(|j| (x - xs[j]) / (xs[i] - xs[j])).product();
            ys[i] * basis
        })
        .sum()
}

pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..=n).map(|k| f(a + k as f64 * h) * if k == 0 || k == n { 0.5 } else { 1.0 }).sum::<f64>() * h
}


/// Oracle picks for every depth present in `samples`.
pub fn oracle_all(samples: &[CalibrationSample], eps: f64, denom: RateDenominator) -> Vec<Option<Pick>> {
    (0..4u8)
        .map(|d| {
            let subset: Vec<_> = samples.iter().filter(|s| s.depth == d).collect();
            (!subset.is_empty()).then(|| oracle(&subset, d, eps, denom))
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
