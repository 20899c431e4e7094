//! Bjøntegaard deltas for external RD curves, and run summaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::driver::RunReport;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    /// kbit/s
    pub rate: f64,
    /// dB
    pub psnr: f64,
}

impl RdPoint {
    pub fn new(rate: f64, psnr: f64) -> Self {
        RdPoint { rate, psnr }
    }
}

const MIN_POINTS: usize = 4;

fn validate_curve(curve: &[RdPoint], name: &str) -> Result<()> {
    if curve.len() < MIN_POINTS {
        return Err(Error::Domain(format!("{name} curve needs at least {MIN_POINTS} points, has {}", curve.len())));
    }
    for p in curve {
        if !(p.rate.is_finite() && p.rate > 0.0 && p.psnr.is_finite()) {
            return Err(Error::Domain(format!("{name} curve has invalid point {p:?}")));
        }
    }
    let mut rates: Vec<f64> = curve.iter().map(|p| p.rate).collect();
    rates.sort_by(f64::total_cmp);
    if rates.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Domain(format!("{name} curve has repeated rates")));
    }
    Ok(())
}

/// Least-squares cubic in `x - center`.
struct Cubic {
    center: f64,
    coeffs: [f64; 4],
}

impl Cubic {
    fn fit(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let center = xs.iter().sum::<f64>() / xs.len() as f64;
        let a = DMatrix::from_fn(xs.len(), 4, |i, k| (xs[i] - center).powi(k as i32));
        let b = DVector::from_column_slice(ys);
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| Error::Domain(format!("cubic fit failed: {e}")))?;
        Ok(Cubic { center, coeffs: [sol[0], sol[1], sol[2], sol[3]] })
    }

    fn antiderivative(&self, x: f64) -> f64 {
        let t = x - self.center;
        self.coeffs.iter().enumerate().rev().fold(0.0, |acc, (k, c)| acc * t + c / (k + 1) as f64) * t
    }

    fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.antiderivative(hi) - self.antiderivative(lo)
    }
}

/// Mean vertical gap `test - reference` between the cubic fits of `y(x)`
/// over the overlapping `x` interval.
fn mean_gap(reference: &[(f64, f64)], test: &[(f64, f64)]) -> Result<f64> {
    let range = |c: &[(f64, f64)]| {
        c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)))
    };
    let (r_lo, r_hi) = range(reference);
    let (t_lo, t_hi) = range(test);
    let lo = r_lo.max(t_lo);
    let hi = r_hi.min(t_hi);
    if hi <= lo {
        return Err(Error::Domain(format!("curves do not overlap ({r_lo}..{r_hi} vs {t_lo}..{t_hi})")));
    }
    let fit = |c: &[(f64, f64)]| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = c.iter().copied().unzip();
        Cubic::fit(&xs, &ys)
    };
    let r = fit(reference)?;
    let t = fit(test)?;
    Ok((t.integral(lo, hi) - r.integral(lo, hi)) / (hi - lo))
}

/// Average bitrate difference at equal PSNR, in percent.
pub fn bd_rate(reference: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    validate_curve(reference, "reference")?;
    validate_curve(test, "test")?;
    let pts = |c: &[RdPoint]| c.iter().map(|p| (p.psnr, p.rate.ln())).collect::<Vec<_>>();
    let gap = mean_gap(&pts(reference), &pts(test))?;
    Ok((gap.exp() - 1.0) * 100.0)
}

/// Average PSNR difference at equal bitrate, in dB.
pub fn bd_psnr(reference: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    validate_curve(reference, "reference")?;
    validate_curve(test, "test")?;
    let pts = |c: &[RdPoint]| c.iter().map(|p| (p.rate.ln(), p.psnr)).collect::<Vec<_>>();
    mean_gap(&pts(reference), &pts(test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSummary {
    pub qp: u8,
    pub reference_nodes: u64,
    pub accelerated_nodes: u64,
    pub reference_cost: f64,
    pub accelerated_cost: f64,
    /// `(accelerated - reference) / reference` node count.
    pub delta_t_proxy: f64,
    /// `(accelerated - reference) / reference` total RD cost.
    pub delta_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_qp: Vec<QpSummary>,
    /// Over the totals of all QPs.
    pub delta_t_proxy: f64,
    pub delta_cost: f64,
    pub fired: [u64; 5],
}

pub fn summarize(run: &RunReport) -> Result<Summary> {
    let mut per_qp = Vec::with_capacity(run.per_qp.len());
    let mut fired = [0u64; 5];
    let (mut rn, mut an, mut rc, mut ac) = (0u64, 0u64, 0.0, 0.0);
    for q in &run.per_qp {
        let reference = q
            .reference
            .ok_or_else(|| Error::Report(format!("QP {} has no reference pass", q.qp)))?;
        let a = q.accelerated;
        per_qp.push(QpSummary {
            qp: q.qp,
            reference_nodes: reference.nodes,
            accelerated_nodes: a.nodes,
            reference_cost: reference.cost,
            accelerated_cost: a.cost,
            delta_t_proxy: (a.nodes as f64 - reference.nodes as f64) / reference.nodes as f64,
            delta_cost: (a.cost - reference.cost) / reference.cost,
        });
        rn += reference.nodes;
        an += a.nodes;
        rc += reference.cost;
        ac += a.cost;
        for (f, g) in fired.iter_mut().zip(q.fired) {
            *f += g;
        }
    }
    if per_qp.is_empty() {
        return Err(Error::Report("run has no QP passes".into()));
    }
    Ok(Summary {
        per_qp,
        delta_t_proxy: (an as f64 - rn as f64) / rn as f64,
        delta_cost: (ac - rc) / rc,
        fired,
    })
}
