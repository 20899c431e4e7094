use super::FrameBuffer;
use crate::{Error, Result};

/// Source taps for one output coordinate: `(source index, weight)`, weights in
/// units of `1/dst` source pixels, summing to `src`.
fn taps(src: usize, dst: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst)
        .map(|o| {
            // Output cell o covers [o*src, (o+1)*src) in units of 1/dst.
            let lo = o * src;
            let hi = lo + src;
            (lo / dst..hi.div_ceil(dst))
                .map(|i| {
                    let a = (i * dst).max(lo);
                    let b = ((i + 1) * dst).min(hi);
                    (i, (b - a) as u64)
                })
                .filter(|&(_, w)| w > 0)
                .collect()
        })
        .collect()
}

/// Area-average (box filter) downscale with round-half-up to 8 bits.
///
/// Arithmetic is exact integer: each output sample is the rational mean of the
/// source area it covers.
pub fn downscale(frame: &FrameBuffer, target_w: usize, target_h: usize) -> Result<FrameBuffer> {
    let (w, h) = (frame.width(), frame.height());
    if target_w == 0 || target_h == 0 || target_w > w || target_h > h {
        return Err(Error::InvalidArgument(format!(
            "cannot scale {w}x{h} to {target_w}x{target_h}: only downscaling is supported"
        )));
    }
    let xt = taps(w, target_w);
    let yt = taps(h, target_h);

    // Horizontal pass keeps unnormalized sums.
    let mut rows = vec![0u64; target_w * h];
    for y in 0..h {
        let src = frame.row(y);
        let dst = &mut rows[y * target_w..(y + 1) * target_w];
        for (out, taps) in dst.iter_mut().zip(&xt) {
            *out = taps.iter().map(|&(i, wt)| wt * src[i] as u64).sum();
        }
    }

    let den = (w * h) as u64;
    let mut samples = Vec::with_capacity(target_w * target_h);
    for taps in &yt {
        for x in 0..target_w {
            let num: u64 = taps.iter().map(|&(j, wt)| wt * rows[j * target_w + x]).sum();
            samples.push(((2 * num + den) / (2 * den)) as u8);
        }
    }
    FrameBuffer::new(target_w, target_h, samples)
}
