use std::f64::consts::PI;

use super::cifar::{Dataset, Split, CHANNELS, IMAGE_BYTES, IMAGE_SIDE, NUM_CLASSES, PLANE};
use crate::rng::RngStream;

/// Deterministic stand-in for CIFAR-10 with a learnable signal: each class
/// has its own colour balance and stripe direction, overlaid with noise.
pub fn synthetic(n: usize, split: Split, seed: u64) -> Dataset {
    let mut rng = RngStream::with_stream(seed, split as u64 + 100);
    let mut images = vec![0u8; n * IMAGE_BYTES];
    let mut labels = Vec::with_capacity(n);
    for image in images.chunks_exact_mut(IMAGE_BYTES) {
        let k = rng.below(NUM_CLASSES as u32) as usize;
        labels.push(k as u8);
        let angle = PI * k as f64 / NUM_CLASSES as f64;
        let (fy, fx) = (angle.sin() * 3.0, angle.cos() * 3.0);
        let phase = rng.uniform_in(0.0, 2.0 * PI);
        for c in 0..CHANNELS {
            let base = 60.0 + 45.0 * ((k * (c + 2) + c) % 4) as f64;
            for y in 0..IMAGE_SIDE {
                for x in 0..IMAGE_SIDE {
                    let t = 2.0 * PI * (fy * y as f64 + fx * x as f64) / IMAGE_SIDE as f64 + phase;
                    let v = base + 50.0 * t.sin() + rng.uniform_in(-30.0, 30.0);
                    image[c * PLANE + y * IMAGE_SIDE + x] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Dataset::new(images, labels, split).expect("labels in range")
}
