//! Stateful layer wrappers: each holds ids into the model's parameter
//! store plus whatever its backward pass needs from the forward pass.

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward_with, conv2d_backward, conv2d_forward, dropout_backward, dropout_forward,
    linear_backward, linear_forward, BatchNormCache, DEFAULT_EPS, DEFAULT_MOMENTUM,
};
use crate::rng::RngStream;
use crate::tensor::{Mode, Scalar, Tensor};

use super::params::{BufferId, BufferStore, ParamId, ParamKind, ParamStore};
use super::se::{se_backward, se_forward, se_hidden, SeCache, SeWeights};

fn missing_cache(layer: &str) -> Error {
    Error::Usage(format!("{layer} backward called without a train-mode forward"))
}

#[derive(Clone, Debug)]
pub(crate) struct Conv2d<T> {
    weight: ParamId,
    stride: usize,
    padding: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Same-padded square convolution.
    pub fn new(params: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            ParamKind::ConvWeight {
                fan_in: cin * kernel * kernel,
                fan_out: cout * kernel * kernel,
            },
            vec![cout, cin, kernel, kernel],
        );
        Self {
            weight,
            stride,
            padding: (kernel - 1) / 2,
            input: None,
        }
    }

    pub fn forward(&mut self, params: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = conv2d_forward(x, params.tensor(self.weight), self.stride, self.padding)?;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, params: &mut ParamStore<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.input.take().ok_or_else(|| missing_cache("conv"))?;
        let (gi, gw) = conv2d_backward(grad, &input, params.tensor(self.weight), self.stride, self.padding)?;
        params.accumulate_grad(self.weight, gw.data());
        Ok(gi)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm2d<T> {
    gamma: ParamId,
    beta: ParamId,
    stats: BufferId,
    momentum: T,
    eps: T,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(params: &mut ParamStore<T>, buffers: &mut BufferStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), ParamKind::BnGamma, vec![channels]),
            beta: params.add(format!("{name}.beta"), ParamKind::BnBeta, vec![channels]),
            stats: buffers.add(name.to_string(), channels),
            momentum: T::lit(DEFAULT_MOMENTUM),
            eps: T::lit(DEFAULT_EPS),
            cache: None,
        }
    }

    pub fn forward(
        &mut self,
        params: &ParamStore<T>,
        buffers: &mut BufferStore<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let (y, cache) = batchnorm_forward_with(
            x,
            params.tensor(self.gamma).data(),
            params.tensor(self.beta).data(),
            buffers.get_mut(self.stats),
            self.momentum,
            self.eps,
            mode,
        )?;
        self.cache = (mode == Mode::Train).then_some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, params: &mut ParamStore<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batch norm"))?;
        let (gi, gg, gb) = batchnorm_backward(grad, &cache, params.tensor(self.gamma).data())?;
        params.accumulate_grad(self.gamma, &gg);
        params.accumulate_grad(self.beta, &gb);
        Ok(gi)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear<T> {
    weight: ParamId,
    bias: ParamId,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(params: &mut ParamStore<T>, name: &str, din: usize, dout: usize) -> Self {
        Self {
            weight: params.add(
                format!("{name}.weight"),
                ParamKind::LinearWeight {
                    fan_in: din,
                    fan_out: dout,
                },
                vec![din, dout],
            ),
            bias: params.add(format!("{name}.bias"), ParamKind::Bias, vec![dout]),
            input: None,
        }
    }

    pub fn forward(&mut self, params: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = linear_forward(x, params.tensor(self.weight), params.tensor(self.bias))?;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, params: &mut ParamStore<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.input.take().ok_or_else(|| missing_cache("linear"))?;
        let (gi, gw, gb) = linear_backward(grad, &input, params.tensor(self.weight))?;
        params.accumulate_grad(self.weight, gw.data());
        params.accumulate_grad(self.bias, gb.data());
        Ok(gi)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SqueezeExcite<T> {
    fc1_weight: ParamId,
    fc1_bias: ParamId,
    fc2_weight: ParamId,
    fc2_bias: ParamId,
    pub force_unit_excitation: bool,
    cache: Option<SeCache<T>>,
}

impl<T: Scalar> SqueezeExcite<T> {
    pub fn new(params: &mut ParamStore<T>, name: &str, channels: usize, ratio: usize) -> Result<Self> {
        let hidden = se_hidden(channels, ratio)?;
        let fc1 = Linear::new(params, &format!("{name}.fc1"), channels, hidden);
        let fc2 = Linear::new(params, &format!("{name}.fc2"), hidden, channels);
        Ok(Self {
            fc1_weight: fc1.weight,
            fc1_bias: fc1.bias,
            fc2_weight: fc2.weight,
            fc2_bias: fc2.bias,
            force_unit_excitation: false,
            cache: None,
        })
    }

    fn weights<'a>(&self, params: &'a ParamStore<T>) -> SeWeights<'a, T> {
        SeWeights {
            fc1_weight: params.tensor(self.fc1_weight),
            fc1_bias: params.tensor(self.fc1_bias),
            fc2_weight: params.tensor(self.fc2_weight),
            fc2_bias: params.tensor(self.fc2_bias),
        }
    }

    pub fn forward(&mut self, params: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, cache) = se_forward(x, self.weights(params), self.force_unit_excitation)?;
        self.cache = (mode == Mode::Train).then_some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, params: &mut ParamStore<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("squeeze-excitation"))?;
        let g = se_backward(grad, &cache, self.weights(params))?;
        params.accumulate_grad(self.fc1_weight, g.fc1_weight.data());
        params.accumulate_grad(self.fc1_bias, g.fc1_bias.data());
        params.accumulate_grad(self.fc2_weight, g.fc2_weight.data());
        params.accumulate_grad(self.fc2_bias, g.fc2_bias.data());
        Ok(g.input)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dropout<T> {
    p: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64) -> Self {
        Self { p, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: Option<&mut RngStream>) -> Result<Tensor<T>> {
        let (y, mask) = dropout_forward(x, self.p, rng, mode)?;
        self.mask = mask;
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        dropout_backward(grad, self.mask.take().as_deref())
    }
}
