//! Squeeze-and-excitation: global average per channel, a two-layer
//! bottleneck with sigmoid gating, and a per-channel rescale of the input.

use crate::error::{Error, Result};
use crate::ops::{
    global_avgpool_backward, global_avgpool_forward, linear_backward, linear_forward, relu, relu_backward, sigmoid,
    sigmoid_backward,
};
use crate::tensor::{Scalar, Tensor};

/// Weights of one squeeze-and-excitation unit. `fc1: C -> C/r`,
/// `fc2: C/r -> C`, both stored `[in, out]`.
#[derive(Clone, Copy)]
pub struct SeWeights<'a, T> {
    pub fc1_weight: &'a Tensor<T>,
    pub fc1_bias: &'a Tensor<T>,
    pub fc2_weight: &'a Tensor<T>,
    pub fc2_bias: &'a Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct SeCache<T> {
    input: Tensor<T>,
    squeeze: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
    excitation: Tensor<T>,
    forced: bool,
}

impl<T> SeCache<T> {
    pub fn squeeze(&self) -> &Tensor<T> {
        &self.squeeze
    }

    pub fn excitation(&self) -> &Tensor<T> {
        &self.excitation
    }
}

#[derive(Clone, Debug)]
pub struct SeGrads<T> {
    pub input: Tensor<T>,
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weight: Tensor<T>,
    pub fc2_bias: Tensor<T>,
}

/// Hidden width of the bottleneck.
pub fn se_hidden(channels: usize, ratio: usize) -> Result<usize> {
    if ratio == 0 || channels % ratio != 0 {
        return Err(Error::config(format!(
            "se_ratio {ratio} does not divide channels {channels}"
        )));
    }
    Ok(channels / ratio)
}

/// With `force_unit_excitation` the gate is replaced by exactly 1.0, which
/// turns the unit into an identity (test hook).
pub fn se_forward<T: Scalar>(
    input: &Tensor<T>,
    w: SeWeights<'_, T>,
    force_unit_excitation: bool,
) -> Result<(Tensor<T>, SeCache<T>)> {
    let (n, c, h, wd) = input.dims4()?;
    let (fc1_in, _) = w.fc1_weight.dims2()?;
    let (_, fc2_out) = w.fc2_weight.dims2()?;
    if fc1_in != c || fc2_out != c {
        return Err(Error::config(format!(
            "squeeze-excitation weights sized for {fc1_in}->{fc2_out}, input has {c} channels"
        )));
    }
    let squeeze = global_avgpool_forward(input)?;
    let hidden_pre = linear_forward(&squeeze, w.fc1_weight, w.fc1_bias)?;
    let hidden = relu(&hidden_pre);
    let excitation = if force_unit_excitation {
        Tensor::full([n, c], T::one())
    } else {
        sigmoid(&linear_forward(&hidden, w.fc2_weight, w.fc2_bias)?)
    };
    let plane = h * wd;
    let mut out = input.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let e = excitation.data()[i];
        chunk.iter_mut().for_each(|v| *v = *v * e);
    }
    Ok((
        out,
        SeCache {
            input: input.clone(),
            squeeze,
            hidden_pre,
            hidden,
            excitation,
            forced: force_unit_excitation,
        },
    ))
}

pub fn se_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &SeCache<T>, w: SeWeights<'_, T>) -> Result<SeGrads<T>> {
    if grad_out.shape() != cache.input.shape() {
        return Err(Error::config("squeeze-excitation grad shape mismatch"));
    }
    let (n, c, h, wd) = grad_out.dims4()?;
    let plane = h * wd;
    let mut grad_input = grad_out.clone();
    let mut grad_exc = Tensor::zeros([n, c]);
    for (i, (g, x)) in grad_out
        .data()
        .chunks(plane)
        .zip(cache.input.data().chunks(plane))
        .enumerate()
    {
        let e = cache.excitation.data()[i];
        grad_exc.data_mut()[i] = g.iter().zip(x).fold(T::zero(), |a, (&g, &x)| a + g * x);
        grad_input.data_mut()[i * plane..(i + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = *v * e);
    }
    if cache.forced {
        return Ok(SeGrads {
            input: grad_input,
            fc1_weight: Tensor::zeros(w.fc1_weight.shape().to_vec()),
            fc1_bias: Tensor::zeros(w.fc1_bias.shape().to_vec()),
            fc2_weight: Tensor::zeros(w.fc2_weight.shape().to_vec()),
            fc2_bias: Tensor::zeros(w.fc2_bias.shape().to_vec()),
        });
    }
    let grad_pre = sigmoid_backward(&grad_exc, &cache.excitation)?;
    let (grad_hidden, fc2_weight, fc2_bias) = linear_backward(&grad_pre, &cache.hidden, w.fc2_weight)?;
    let grad_hidden_pre = relu_backward(&grad_hidden, &cache.hidden_pre)?;
    let (grad_squeeze, fc1_weight, fc1_bias) = linear_backward(&grad_hidden_pre, &cache.squeeze, w.fc1_weight)?;
    let via_squeeze = global_avgpool_backward(&grad_squeeze, cache.input.shape())?;
    for (a, &b) in grad_input.data_mut().iter_mut().zip(via_squeeze.data()) {
        *a = *a + b;
    }
    Ok(SeGrads {
        input: grad_input,
        fc1_weight,
        fc1_bias,
        fc2_weight,
        fc2_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Owned {
        w1: Tensor<f64>,
        b1: Tensor<f64>,
        w2: Tensor<f64>,
        b2: Tensor<f64>,
    }

    impl Owned {
        fn zeros(c: usize, r: usize) -> Self {
            Self {
                w1: Tensor::zeros([c, c / r]),
                b1: Tensor::zeros([c / r]),
                w2: Tensor::zeros([c / r, c]),
                b2: Tensor::zeros([c]),
            }
        }

        fn weights(&self) -> SeWeights<'_, f64> {
            SeWeights {
                fc1_weight: &self.w1,
                fc1_bias: &self.b1,
                fc2_weight: &self.w2,
                fc2_bias: &self.b2,
            }
        }
    }

    #[test]
    fn zero_weights_halve_the_input() {
        let x = Tensor::from_fn([2, 4, 3, 3], |i| i as f64 - 30.0);
        let w = Owned::zeros(4, 2);
        let (y, cache) = se_forward(&x, w.weights(), false).unwrap();
        assert!(cache.excitation().data().iter().all(|&e| e == 0.5));
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn squeeze_of_constant_planes() {
        let x = Tensor::from_fn([1, 4, 5, 5], |i| (i / 25) as f64 * 1.5);
        let w = Owned::zeros(4, 4);
        let (_, cache) = se_forward(&x, w.weights(), false).unwrap();
        assert_eq!(cache.squeeze().data(), &[0.0, 1.5, 3.0, 4.5]);
    }

    #[test]
    fn forced_excitation_is_identity() {
        let x = Tensor::from_fn([1, 4, 2, 2], |i| (i as f64).cos());
        let mut w = Owned::zeros(4, 2);
        w.w2 = Tensor::full([2, 4], 3.0);
        let (y, _) = se_forward(&x, w.weights(), true).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ratio_must_divide_channels() {
        assert_eq!(se_hidden(64, 16).unwrap(), 4);
        assert!(matches!(se_hidden(64, 5), Err(Error::Config(_))));
    }
}
