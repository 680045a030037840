use std::thread;

use super::augment::{augment_with, AugmentParams};
use super::cifar::{Dataset, IMAGE_BYTES, IMAGE_SIDE};
use super::stats::{normalize_into, NormStats};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub shuffle: bool,
    pub augment: bool,
    /// Threads used to assemble each batch; 0 and 1 both mean the calling
    /// thread. The output does not depend on this value.
    pub workers: usize,
}

impl BatchOptions {
    pub fn eval(batch_size: usize) -> Self {
        Self {
            batch_size,
            shuffle: false,
            augment: false,
            workers: 1,
        }
    }
}

/// All random choices for one pass over a dataset, drawn up front so batch
/// assembly can run on any number of threads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochPlan {
    pub order: Vec<usize>,
    pub augment: Option<Vec<AugmentParams>>,
}

/// Shuffles record indices (Fisher-Yates), then draws augmentation
/// parameters for each position of the shuffled order.
pub fn plan_epoch(n: usize, shuffle: bool, augment: bool, rng: &mut RngStream) -> EpochPlan {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    let augment = augment.then(|| (0..n).map(|_| AugmentParams::draw(rng)).collect());
    EpochPlan { order, augment }
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 3, 32, 32]`, normalised.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// Lazily assembled batches of one epoch; the final partial batch is kept.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    lut: [[f32; 256]; 3],
    plan: EpochPlan,
    batch_size: usize,
    workers: usize,
    pos: usize,
}

pub fn batches<'a>(
    dataset: &'a Dataset,
    options: BatchOptions,
    stats: &NormStats,
    rng: &mut RngStream,
) -> Result<Batches<'a>> {
    if dataset.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::Usage("batch_size must be >= 1".into()));
    }
    stats.validate()?;
    Ok(Batches {
        dataset,
        lut: stats.lookup(),
        plan: plan_epoch(dataset.len(), options.shuffle, options.augment, rng),
        batch_size: options.batch_size,
        workers: options.workers.max(1),
        pos: 0,
    })
}

impl Batches<'_> {
    pub fn plan(&self) -> &EpochPlan {
        &self.plan
    }

    fn fill(&self, positions: std::ops::Range<usize>, out: &mut [f32]) {
        let mut scratch = vec![0u8; IMAGE_BYTES];
        for (pos, dst) in positions.zip(out.chunks_exact_mut(IMAGE_BYTES)) {
            let image = self.dataset.image(self.plan.order[pos]);
            let src = match &self.plan.augment {
                Some(params) => {
                    augment_with(image, params[pos], &mut scratch);
                    &scratch[..]
                }
                None => image,
            };
            normalize_into(src, &self.lut, dst);
        }
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let n = self.dataset.len();
        if self.pos >= n {
            return None;
        }
        let (lo, hi) = (self.pos, (self.pos + self.batch_size).min(n));
        self.pos = hi;
        let count = hi - lo;
        let mut data = vec![0.0f32; count * IMAGE_BYTES];
        let workers = self.workers.min(count);
        if workers <= 1 {
            self.fill(lo..hi, &mut data);
        } else {
            let per = count.div_ceil(workers);
            let this = &*self;
            thread::scope(|s| {
                for (k, chunk) in data.chunks_mut(per * IMAGE_BYTES).enumerate() {
                    let start = lo + k * per;
                    let end = start + chunk.len() / IMAGE_BYTES;
                    s.spawn(move || this.fill(start..end, chunk));
                }
            });
        }
        let labels = self.plan.order[lo..hi].iter().map(|&i| self.dataset.label(i)).collect();
        let images = Tensor::new(vec![count, 3, IMAGE_SIDE, IMAGE_SIDE], data).expect("sized above");
        Some(Batch { images, labels })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.dataset.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}
