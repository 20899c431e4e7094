//! DC-prediction leaf cost: `SSE(rect) + lambda * header_bits`, where SSE is
//! the residual energy around the block mean.

use super::{BlockRect, RdoConfig};
use crate::frame_io::FrameBuffer;

/// `sum((v - mean)^2)` from exact integer moments. For power-of-two areas the
/// division is exact in `f64`.
#[inline]
fn sse_from_moments(n: u64, sum: u64, sum_sq: u64) -> f64 {
    (n * sum_sq - sum * sum) as f64 / n as f64
}

/// Leaf cost computed directly from the frame samples.
pub fn leaf_cost(frame: &FrameBuffer, rect: &BlockRect, cfg: &RdoConfig) -> f64 {
    let (mut sum, mut sum_sq) = (0u64, 0u64);
    for y in rect.y..rect.y + rect.h {
        for &v in &frame.row(y)[rect.x..rect.x + rect.w] {
            sum += v as u64;
            sum_sq += (v as u64) * (v as u64);
        }
    }
    sse_from_moments(rect.area() as u64, sum, sum_sq) + cfg.leaf_rate_cost()
}

/// Summed-area tables of the samples and their squares; O(1) leaf costs.
pub struct CostModel {
    stride: usize,
    width: usize,
    height: usize,
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
}

impl CostModel {
    pub fn new(frame: &FrameBuffer) -> Self {
        let (w, h) = (frame.width(), frame.height());
        let stride = w + 1;
        let mut sum = vec![0u64; stride * (h + 1)];
        let mut sum_sq = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let (mut rs, mut rq) = (0u64, 0u64);
            for (x, &v) in frame.row(y).iter().enumerate() {
                rs += v as u64;
                rq += (v as u64) * (v as u64);
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + rs;
                sum_sq[i] = sum_sq[i - stride] + rq;
            }
        }
        CostModel { stride, width: w, height: h, sum, sum_sq }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn rect_sum(table: &[u64], stride: usize, r: &BlockRect) -> u64 {
        let (x0, y0, x1, y1) = (r.x, r.y, r.x + r.w, r.y + r.h);
        table[y1 * stride + x1] + table[y0 * stride + x0]
            - table[y0 * stride + x1]
            - table[y1 * stride + x0]
    }

    #[inline]
    pub fn sse(&self, rect: &BlockRect) -> f64 {
        debug_assert!(rect.x + rect.w <= self.width && rect.y + rect.h <= self.height);
        let s = Self::rect_sum(&self.sum, self.stride, rect);
        let q = Self::rect_sum(&self.sum_sq, self.stride, rect);
        sse_from_moments(rect.area() as u64, s, q)
    }

    #[inline]
    pub fn leaf_cost(&self, rect: &BlockRect, cfg: &RdoConfig) -> f64 {
        self.sse(rect) + cfg.leaf_rate_cost()
    }
}
