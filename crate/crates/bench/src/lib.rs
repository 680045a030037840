//! Shared inputs for the criterion benchmarks.

use budgetnet::{RngStream, Tensor};

/// Standard-normal tensor of the given shape.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = RngStream::new(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.standard_normal() as f32)
}
