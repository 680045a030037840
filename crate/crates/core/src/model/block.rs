use crate::error::{Error, Result};
use crate::ops::{relu, relu_backward};
use crate::rng::RngStream;
use crate::tensor::{Mode, Scalar, Tensor};

use super::layers::{BatchNorm2d, Conv2d, Dropout, SqueezeExcite};
use super::params::{BufferStore, ParamStore};

/// Shape of one basic block.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockSpec {
    pub in_channels: usize,
    pub channels: usize,
    pub conv_kernel: usize,
    pub skip_kernel: usize,
    pub stride: usize,
    /// Bottleneck ratio when the block carries squeeze-and-excitation.
    pub se_ratio: Option<usize>,
    pub dropout_p: f64,
}

impl BlockSpec {
    pub fn needs_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.channels
    }
}

/// conv -> BN -> relu -> conv -> BN -> [SE] -> [dropout] -> + shortcut -> relu
#[derive(Clone, Debug)]
pub(crate) struct BasicBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    pub se: Option<SqueezeExcite<T>>,
    dropout: Dropout<T>,
    pub dropout_enabled: bool,
    shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    hidden: Option<Tensor<T>>,
    out: Option<Tensor<T>>,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new(params: &mut ParamStore<T>, buffers: &mut BufferStore<T>, name: &str, spec: BlockSpec) -> Result<Self> {
        let conv1 = Conv2d::new(params, &format!("{name}.conv1"), spec.in_channels, spec.channels, spec.conv_kernel, spec.stride);
        let bn1 = BatchNorm2d::new(params, buffers, &format!("{name}.bn1"), spec.channels);
        let conv2 = Conv2d::new(params, &format!("{name}.conv2"), spec.channels, spec.channels, spec.conv_kernel, 1);
        let bn2 = BatchNorm2d::new(params, buffers, &format!("{name}.bn2"), spec.channels);
        let se = spec
            .se_ratio
            .map(|r| SqueezeExcite::new(params, &format!("{name}.se"), spec.channels, r))
            .transpose()?;
        let shortcut = spec.needs_projection().then(|| {
            (
                Conv2d::new(
                    params,
                    &format!("{name}.shortcut.conv"),
                    spec.in_channels,
                    spec.channels,
                    spec.skip_kernel,
                    spec.stride,
                ),
                BatchNorm2d::new(params, buffers, &format!("{name}.shortcut.bn"), spec.channels),
            )
        });
        Ok(Self {
            conv1,
            bn1,
            conv2,
            bn2,
            se,
            dropout: Dropout::new(spec.dropout_p),
            dropout_enabled: true,
            shortcut,
            hidden: None,
            out: None,
        })
    }

    pub fn has_projection(&self) -> bool {
        self.shortcut.is_some()
    }

    pub fn forward(
        &mut self,
        params: &ParamStore<T>,
        buffers: &mut BufferStore<T>,
        x: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut RngStream>,
    ) -> Result<Tensor<T>> {
        let h = self.conv1.forward(params, x, mode)?;
        let h = self.bn1.forward(params, buffers, &h, mode)?;
        let hidden = relu(&h);
        let h = self.conv2.forward(params, &hidden, mode)?;
        let mut h = self.bn2.forward(params, buffers, &h, mode)?;
        if let Some(se) = self.se.as_mut() {
            h = se.forward(params, &h, mode)?;
        }
        if self.dropout_enabled {
            h = self.dropout.forward(&h, mode, rng)?;
        }
        let short = match self.shortcut.as_mut() {
            Some((conv, bn)) => {
                let s = conv.forward(params, x, mode)?;
                bn.forward(params, buffers, &s, mode)?
            }
            None => x.clone(),
        };
        if short.shape() != h.shape() {
            return Err(Error::config(format!(
                "residual shapes differ: {:?} vs {:?}",
                h.shape(),
                short.shape()
            )));
        }
        for (a, &b) in h.data_mut().iter_mut().zip(short.data()) {
            *a = *a + b;
        }
        let out = relu(&h);
        if mode == Mode::Train {
            self.hidden = Some(hidden);
            self.out = Some(out.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, params: &mut ParamStore<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let missing = || Error::Usage("block backward called without a train-mode forward".into());
        let out = self.out.take().ok_or_else(missing)?;
        let hidden = self.hidden.take().ok_or_else(missing)?;
        let g = relu_backward(grad, &out)?;

        let mut gm = g.clone();
        if self.dropout_enabled {
            gm = self.dropout.backward(&gm)?;
        }
        if let Some(se) = self.se.as_mut() {
            gm = se.backward(params, &gm)?;
        }
        let gm = self.bn2.backward(params, &gm)?;
        let gm = self.conv2.backward(params, &gm)?;
        let gm = relu_backward(&gm, &hidden)?;
        let gm = self.bn1.backward(params, &gm)?;
        let mut gx = self.conv1.backward(params, &gm)?;

        let gs = match self.shortcut.as_mut() {
            Some((conv, bn)) => {
                let gs = bn.backward(params, &g)?;
                conv.backward(params, &gs)?
            }
            None => g,
        };
        for (a, &b) in gx.data_mut().iter_mut().zip(gs.data()) {
            *a = *a + b;
        }
        Ok(gx)
    }
}
