use super::cifar::{Dataset, CHANNELS, PLANE};
use crate::error::{Error, Result};

/// Per-channel mean and standard deviation of pixel values scaled to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    /// Mean 0, std 1: scaling to [0, 1] only.
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Degenerate(format!("invalid normalisation stats {self:?}")));
        }
        Ok(())
    }

    /// Normalised value of every possible byte, per channel.
    pub fn lookup(&self) -> [[f32; 256]; 3] {
        let mut lut = [[0.0f32; 256]; 3];
        for (c, row) in lut.iter_mut().enumerate() {
            for (v, out) in row.iter_mut().enumerate() {
                *out = ((v as f64 / 255.0 - self.mean[c]) / self.std[c]) as f32;
            }
        }
        lut
    }
}

/// Population statistics over every pixel of every image. Sums are kept
/// as integers so the result does not depend on summation order.
pub fn channel_stats(ds: &Dataset) -> Result<NormStats> {
    let n = (ds.len() * PLANE) as u128;
    if n < 2 {
        return Err(Error::Degenerate("need at least two pixels per channel".into()));
    }
    let mut sum = [0u128; 3];
    let mut sq = [0u128; 3];
    for image in ds.images().chunks_exact(CHANNELS * PLANE) {
        for c in 0..CHANNELS {
            let (mut s, mut q) = (0u64, 0u64);
            for &v in &image[c * PLANE..(c + 1) * PLANE] {
                s += v as u64;
                q += (v as u64) * (v as u64);
            }
            sum[c] += s as u128;
            sq[c] += q as u128;
        }
    }
    let mut stats = NormStats::identity();
    for c in 0..CHANNELS {
        // n^2 var = n * sum(x^2) - (sum x)^2, exact in integers.
        let spread = n * sq[c] - sum[c] * sum[c];
        if spread == 0 {
            return Err(Error::Degenerate(format!("channel {c} has zero variance")));
        }
        let nf = n as f64;
        stats.mean[c] = sum[c] as f64 / nf / 255.0;
        stats.std[c] = (spread as f64).sqrt() / nf / 255.0;
    }
    Ok(stats)
}

/// Scales one 3×32×32 byte image to [0, 1] and normalises it into `out`.
pub fn normalize_into(image: &[u8], lut: &[[f32; 256]; 3], out: &mut [f32]) {
    for c in 0..CHANNELS {
        let (src, dst) = (&image[c * PLANE..(c + 1) * PLANE], &mut out[c * PLANE..(c + 1) * PLANE]);
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = lut[c][v as usize];
        }
    }
}

/// Inverse of normalisation: values back on the [0, 1] scale.
pub fn denormalize(values: &[f32], stats: &NormStats) -> Vec<f32> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = (i / PLANE) % CHANNELS;
            (v as f64 * stats.std[c] + stats.mean[c]) as f32
        })
        .collect()
}
