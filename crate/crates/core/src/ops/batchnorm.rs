//! Per-channel batch normalization over `(N, H, W)`.

use crate::error::{Error, Result};
use crate::tensor::{Mode, Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Running statistics tracked in train mode and used in eval mode.
///
/// `running_var` accumulates the unbiased batch variance, as PyTorch does;
/// normalization itself uses the biased variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Self-contained layer state: affine parameters, running statistics and
/// hyperparameters.
#[derive(Clone, Debug)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running: RunningStats<T>,
    pub momentum: T,
    pub eps: T,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running: RunningStats::new(channels),
            momentum: T::lit(DEFAULT_MOMENTUM),
            eps: T::lit(DEFAULT_EPS),
            mode: Mode::Train,
        }
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
    mode: Mode,
}

pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    batchnorm_forward_with(
        input,
        &state.gamma,
        &state.beta,
        &mut state.running,
        state.momentum,
        state.eps,
        state.mode,
    )
}

/// Forward pass with the affine parameters borrowed from elsewhere (the
/// model keeps gamma and beta in its parameter store).
pub fn batchnorm_forward_with<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: &mut RunningStats<T>,
    momentum: T,
    eps: T,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    if gamma.len() != c || beta.len() != c || running.mean.len() != c || running.var.len() != c {
        return Err(Error::config(format!(
            "batch norm has {} channels, input has {c}",
            gamma.len()
        )));
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape().to_vec());
    let mut x_hat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); c];

    if mode == Mode::Train && count < 2 {
        return Err(Error::Degenerate(
            "batch norm in train mode needs at least two values per channel".into(),
        ));
    }
    let m = T::lit(count as f64);
    for ch in 0..c {
        let values = || (0..n).flat_map(move |b| x[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied());
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = values().fold(T::zero(), |a, v| a + v) / m;
                let var = values().fold(T::zero(), |a, v| a + (v - mean) * (v - mean)) / m;
                let unbiased = var * m / (m - T::one());
                running.mean[ch] = (T::one() - momentum) * running.mean[ch] + momentum * mean;
                running.var[ch] = (T::one() - momentum) * running.var[ch] + momentum * unbiased;
                (mean, var)
            }
            Mode::Eval => (running.mean[ch], running.var[ch]),
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                let xh = (x[i] - mean) * istd;
                x_hat[i] = xh;
                out.data_mut()[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            x_hat,
            inv_std,
            shape: input.shape().to_vec(),
            mode,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`. In train mode the
/// gradient includes the dependence of the batch mean and variance on the
/// input.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &[T],
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::config(format!(
            "batch norm grad shape {:?}, expected {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let m = T::lit((n * plane) as f64);
    let dy = grad_out.data();
    let mut grad_in = Tensor::zeros(cache.shape.clone());
    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                sum_dy = sum_dy + dy[i];
                sum_dy_xh = sum_dy_xh + dy[i] * cache.x_hat[i];
            }
        }
        grad_beta[ch] = sum_dy;
        grad_gamma[ch] = sum_dy_xh;
        let scale = gamma[ch] * cache.inv_std[ch];
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                grad_in.data_mut()[i] = match cache.mode {
                    Mode::Train => {
                        scale * (dy[i] - sum_dy / m - cache.x_hat[i] * sum_dy_xh / m)
                    }
                    Mode::Eval => scale * dy[i],
                };
            }
        }
    }
    Ok((grad_in, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, h, w) = t.dims4().unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| t.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var.sqrt())
    }

    #[test]
    fn output_has_beta_mean_and_gamma_std() {
        let mut rng = RngStream::new(1);
        let x = Tensor::from_fn([4, 3, 5, 5], |_| rng.normal(3.0, 2.5));
        let mut st = BatchNormState::<f64>::new(3);
        st.gamma = vec![0.5, -2.0, 1.5];
        st.beta = vec![0.1, -0.3, 2.0];
        let (y, _) = batchnorm_forward(&x, &mut st).unwrap();
        for ch in 0..3 {
            let (mean, std) = channel_moments(&y, ch);
            assert!((mean - st.beta[ch]).abs() < 1e-5);
            // eps in the denominator shrinks the std by ~eps/(2 var)
            assert!((std - st.gamma[ch].abs()).abs() < 1e-5, "{std}");
        }
    }

    #[test]
    fn normalized_input_is_nearly_unchanged() {
        let mut rng = RngStream::new(2);
        let mut x = Tensor::from_fn([2, 2, 4, 4], |_| rng.standard_normal());
        // standardize each channel exactly
        let (n, c, h, w) = x.dims4().unwrap();
        for ch in 0..c {
            let (mean, std) = channel_moments(&x, ch);
            for b in 0..n {
                for v in &mut x.data_mut()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w] {
                    *v = (*v - mean) / std;
                }
            }
        }
        let mut st = BatchNormState::<f64>::new(2);
        let (y, _) = batchnorm_forward(&x, &mut st).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut rng = RngStream::new(3);
        let x = Tensor::from_fn([2, 2, 3, 3], |_| rng.standard_normal());
        let mut st = BatchNormState::<f64>::new(2);
        st.gamma = vec![0.0, 0.0];
        st.beta = vec![1.25, -4.0];
        let (y, _) = batchnorm_forward(&x, &mut st).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, st.beta[(i / 9) % 2]);
        }
    }

    #[test]
    fn running_stats_follow_momentum_rule() {
        let x = Tensor::new([2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let mut st = BatchNormState::<f64>::new(1);
        batchnorm_forward(&x, &mut st).unwrap();
        // batch mean 4, unbiased var 20/3
        assert!((st.running.mean[0] - 0.4).abs() < 1e-12);
        assert!((st.running.var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        assert!(st.running.var[0] >= 0.0);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::new([1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        let mut st = BatchNormState::<f64>::new(1);
        st.running = RunningStats { mean: vec![1.0], var: vec![4.0 - 1e-5] };
        st.mode = Mode::Eval;
        let (y, _) = batchnorm_forward(&x, &mut st).unwrap();
        assert!((y.data()[0] - 0.5).abs() < 1e-12);
        assert!((y.data()[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn single_value_batch_is_degenerate_in_train_mode() {
        let x = Tensor::<f64>::zeros([1, 2, 1, 1]);
        let mut st = BatchNormState::<f64>::new(2);
        assert!(matches!(batchnorm_forward(&x, &mut st), Err(Error::Degenerate(_))));
        st.mode = Mode::Eval;
        assert!(batchnorm_forward(&x, &mut st).is_ok());
    }

    #[test]
    fn grad_beta_is_channel_sum_and_zero_grad_is_zero() {
        let mut rng = RngStream::new(4);
        let x = Tensor::from_fn([2, 3, 2, 2], |_| rng.standard_normal());
        let mut st = BatchNormState::<f64>::new(3);
        let (_, cache) = batchnorm_forward(&x, &mut st).unwrap();
        let go = Tensor::from_fn([2, 3, 2, 2], |i| i as f64 * 0.1);
        let (_, _, gb) = batchnorm_backward(&go, &cache, &st.gamma).unwrap();
        for ch in 0..3 {
            let want: f64 = (0..2)
                .flat_map(|b| go.data()[(b * 3 + ch) * 4..(b * 3 + ch + 1) * 4].to_vec())
                .sum();
            assert!((gb[ch] - want).abs() < 1e-12);
        }
        let (gi, gg, gb) = batchnorm_backward(&Tensor::zeros([2, 3, 2, 2]), &cache, &st.gamma).unwrap();
        assert!(gi.data().iter().chain(&gg).chain(&gb).all(|&v| v == 0.0));
    }
}
