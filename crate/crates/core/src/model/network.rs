use crate::error::{Error, Result};
use crate::init::{initialize, InitScheme};
use crate::ops::{avgpool_backward, avgpool_forward, relu, relu_backward};
use crate::rng::RngStream;
use crate::tensor::{Mode, Scalar, Tensor};

use super::block::{BasicBlock, BlockSpec};
use super::config::{ResNetConfig, INPUT_SIZE};
use super::layers::{BatchNorm2d, Conv2d, Linear};
use super::params::{BufferStore, ParamStore};

const STEM_KERNEL: usize = 3;
const INPUT_CHANNELS: usize = 3;

/// Residual network built from a [`ResNetConfig`]:
/// stem conv + BN + relu, `n_layers` stages of basic blocks, average pool,
/// flatten and a linear classifier.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    config: ResNetConfig,
    params: ParamStore<T>,
    buffers: BufferStore<T>,
    stem_conv: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    stem_out: Option<Tensor<T>>,
    layers: Vec<Vec<BasicBlock<T>>>,
    pool_input_shape: Option<Vec<usize>>,
    classifier: Linear<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds the network and initialises its parameters.
    pub fn build(config: &ResNetConfig, init: &InitScheme, rng: &mut RngStream) -> Result<Self> {
        let mut model = Self::build_zeroed(config)?;
        initialize(&mut model.params, init, rng);
        Ok(model)
    }

    /// Builds the network with every parameter set to zero.
    pub fn build_zeroed(config: &ResNetConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut buffers = BufferStore::default();
        let c0 = config.channels[0];
        let stem_conv = Conv2d::new(&mut params, "stem.conv", INPUT_CHANNELS, c0, STEM_KERNEL, 1);
        let stem_bn = BatchNorm2d::new(&mut params, &mut buffers, "stem.bn", c0);
        let mut layers = Vec::with_capacity(config.n_layers);
        let mut in_channels = c0;
        for layer in 0..config.n_layers {
            let channels = config.channels[layer];
            let mut blocks = Vec::with_capacity(config.blocks[layer]);
            for b in 0..config.blocks[layer] {
                let spec = BlockSpec {
                    in_channels,
                    channels,
                    conv_kernel: config.conv_kernels[layer],
                    skip_kernel: config.skip_kernels[layer],
                    stride: if layer > 0 && b == 0 { 2 } else { 1 },
                    se_ratio: config.has_se(layer, b).then_some(config.se_ratio),
                    dropout_p: config.dropout_p,
                };
                blocks.push(BasicBlock::new(&mut params, &mut buffers, &format!("layers.{layer}.{b}"), spec)?);
                in_channels = channels;
            }
            layers.push(blocks);
        }
        let classifier = Linear::new(&mut params, "classifier", in_channels, config.num_classes);
        Ok(Self {
            config: config.clone(),
            params,
            buffers,
            stem_conv,
            stem_bn,
            stem_out: None,
            layers,
            pool_input_shape: None,
            classifier,
        })
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Batch-norm running statistics, one entry per BN layer in build order.
    pub fn buffers(&self) -> &BufferStore<T> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut BufferStore<T> {
        &mut self.buffers
    }

    pub fn total_params(&self) -> usize {
        self.params.total_numel()
    }

    /// Number of projection shortcuts in the network.
    pub fn projection_count(&self) -> usize {
        self.layers.iter().flatten().filter(|b| b.has_projection()).count()
    }

    /// Test hook: replace every excitation gate with exactly 1.0.
    pub fn set_se_bypass(&mut self, bypass: bool) {
        for se in self.layers.iter_mut().flatten().filter_map(|b| b.se.as_mut()) {
            se.force_unit_excitation = bypass;
        }
    }

    /// Test hook: skip the dropout layers entirely.
    pub fn set_dropout_layers(&mut self, enabled: bool) {
        for b in self.layers.iter_mut().flatten() {
            b.dropout_enabled = enabled;
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.zero_grads();
    }

    /// `[N,3,32,32] -> [N,num_classes]` logits. Train mode caches what
    /// [`Model::backward`] needs; `rng` drives dropout.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: Option<&mut RngStream>) -> Result<Tensor<T>> {
        self.forward_traced(x, mode, rng, None)
    }

    /// Output shapes after the stem, each residual layer, pooling, flatten
    /// and the classifier.
    pub fn shape_trace(&mut self, x: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
        let mut trace = Vec::new();
        self.forward_traced(x, Mode::Eval, None, Some(&mut trace))?;
        Ok(trace)
    }

    fn forward_traced(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        mut rng: Option<&mut RngStream>,
        mut trace: Option<&mut Vec<Vec<usize>>>,
    ) -> Result<Tensor<T>> {
        let (_, c, h, w) = x.dims4()?;
        if c != INPUT_CHANNELS || h != INPUT_SIZE || w != INPUT_SIZE {
            return Err(Error::config(format!(
                "model expects [N, 3, 32, 32] input, got {:?}",
                x.shape()
            )));
        }
        let mut record = |t: &Tensor<T>| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(t.shape().to_vec());
            }
        };
        let Self {
            params,
            buffers,
            stem_conv,
            stem_bn,
            layers,
            classifier,
            ..
        } = self;
        let h = stem_conv.forward(params, x, mode)?;
        let h = stem_bn.forward(params, buffers, &h, mode)?;
        let mut h = relu(&h);
        let stem_out = (mode == Mode::Train).then(|| h.clone());
        record(&h);
        for blocks in layers.iter_mut() {
            for block in blocks.iter_mut() {
                h = block.forward(params, buffers, &h, mode, rng.as_deref_mut())?;
            }
            record(&h);
        }
        let pool_in = h.shape().to_vec();
        let pooled = avgpool_forward(&h, self.config.pool_kernel)?;
        record(&pooled);
        let (n, ch, ph, pw) = pooled.dims4()?;
        let flat = pooled.reshape([n, ch * ph * pw])?;
        record(&flat);
        let logits = classifier.forward(params, &flat, mode)?;
        record(&logits);
        if mode == Mode::Train {
            self.stem_out = stem_out;
            self.pool_input_shape = Some(pool_in);
        }
        Ok(logits)
    }

    /// Accumulates parameter gradients for the last train-mode forward and
    /// returns the gradient with respect to the input.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let pool_in = self
            .pool_input_shape
            .take()
            .ok_or_else(|| Error::Usage("model backward called without a train-mode forward".into()))?;
        let stem_out = self.stem_out.take().ok_or_else(|| Error::Usage("missing stem cache".into()))?;
        let Self {
            params,
            stem_conv,
            stem_bn,
            layers,
            classifier,
            config,
            ..
        } = self;
        let g = classifier.backward(params, grad_logits)?;
        let p = config.pool_kernel;
        let g = g.reshape([pool_in[0], pool_in[1], pool_in[2] / p, pool_in[3] / p])?;
        let mut g = avgpool_backward(&g, &pool_in, p)?;
        for blocks in layers.iter_mut().rev() {
            for block in blocks.iter_mut().rev() {
                g = block.backward(params, &g)?;
            }
        }
        let g = relu_backward(&g, &stem_out)?;
        let g = stem_bn.backward(params, &g)?;
        stem_conv.backward(params, &g)
    }
}
