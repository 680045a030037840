use super::cifar::{CHANNELS, IMAGE_BYTES, IMAGE_SIDE, PLANE};
use crate::rng::RngStream;

/// Zero padding on each side before cropping.
pub const PAD: usize = 4;
/// Crop origins per axis: `0..=2*PAD`.
pub const CROP_POSITIONS: u32 = (2 * PAD + 1) as u32;

/// Crop origin in the padded 40×40 image and whether to mirror.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AugmentParams {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

impl AugmentParams {
    /// Centre crop without flip: the identity transform.
    pub const IDENTITY: Self = Self {
        dy: PAD,
        dx: PAD,
        flip: false,
    };

    /// Draws `dy`, then `dx`, then the flip bit.
    pub fn draw(rng: &mut RngStream) -> Self {
        let dy = rng.below(CROP_POSITIONS) as usize;
        let dx = rng.below(CROP_POSITIONS) as usize;
        let flip = rng.below(2) == 1;
        Self { dy, dx, flip }
    }
}

/// Pads by [`PAD`] zero pixels, crops 32×32 at `(dy, dx)`, then optionally
/// mirrors left-right.
pub fn augment_with(image: &[u8], p: AugmentParams, out: &mut [u8]) {
    debug_assert_eq!(image.len(), IMAGE_BYTES);
    let side = IMAGE_SIDE as isize;
    for c in 0..CHANNELS {
        let src = &image[c * PLANE..(c + 1) * PLANE];
        let dst = &mut out[c * PLANE..(c + 1) * PLANE];
        for y in 0..IMAGE_SIDE {
            let sy = (y + p.dy) as isize - PAD as isize;
            for x in 0..IMAGE_SIDE {
                let cx = if p.flip { IMAGE_SIDE - 1 - x } else { x };
                let sx = (cx + p.dx) as isize - PAD as isize;
                dst[y * IMAGE_SIDE + x] = if (0..side).contains(&sy) && (0..side).contains(&sx) {
                    src[(sy * side + sx) as usize]
                } else {
                    0
                };
            }
        }
    }
}

pub fn augment(image: &[u8], rng: &mut RngStream) -> Vec<u8> {
    let mut out = vec![0; IMAGE_BYTES];
    augment_with(image, AugmentParams::draw(rng), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Vec<u8> {
        (0..IMAGE_BYTES).map(|i| (i % 251) as u8 + 1).collect()
    }

    #[test]
    fn centre_crop_is_identity() {
        let img = ramp();
        let mut out = vec![0; IMAGE_BYTES];
        augment_with(&img, AugmentParams::IDENTITY, &mut out);
        assert_eq!(out, img);
    }

    #[test]
    fn flip_twice_restores_crop() {
        let img = ramp();
        let p = AugmentParams { dy: 1, dx: 7, flip: false };
        let mut crop = vec![0; IMAGE_BYTES];
        augment_with(&img, p, &mut crop);
        let mut once = vec![0; IMAGE_BYTES];
        augment_with(&crop, AugmentParams { flip: true, ..AugmentParams::IDENTITY }, &mut once);
        let mut twice = vec![0; IMAGE_BYTES];
        augment_with(&once, AugmentParams { flip: true, ..AugmentParams::IDENTITY }, &mut twice);
        assert_ne!(once, crop);
        assert_eq!(twice, crop);
    }

    #[test]
    fn corner_crop_shifts_and_pads() {
        let img = ramp();
        let mut out = vec![0; IMAGE_BYTES];
        augment_with(&img, AugmentParams { dy: 0, dx: 0, flip: false }, &mut out);
        assert_eq!(out[0], 0);
        assert_eq!(out[4 * IMAGE_SIDE + 4], img[0]);
        assert_eq!(out[IMAGE_SIDE * IMAGE_SIDE - 1], img[27 * IMAGE_SIDE + 27]);
    }
}
