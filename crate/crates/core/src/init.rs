//! Weight initialisation schemes.

use crate::error::{Error, Result};
use crate::model::{ParamKind, ParamStore};
use crate::rng::RngStream;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    /// Normal with a fixed std.
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitScheme {
    pub kind: InitKind,
    pub normal_std: f64,
}

pub const DEFAULT_NORMAL_STD: f64 = 0.01;

impl Default for InitScheme {
    fn default() -> Self {
        Self::he()
    }
}

impl InitScheme {
    pub fn he() -> Self {
        Self {
            kind: InitKind::He,
            normal_std: DEFAULT_NORMAL_STD,
        }
    }

    pub fn xavier() -> Self {
        Self {
            kind: InitKind::Xavier,
            normal_std: DEFAULT_NORMAL_STD,
        }
    }

    pub fn normal(std: f64) -> Self {
        Self {
            kind: InitKind::Normal,
            normal_std: std,
        }
    }
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::He => "he",
            InitKind::Xavier => "xavier",
            InitKind::Normal => "normal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "he" => Ok(InitKind::He),
            "xavier" => Ok(InitKind::Xavier),
            "normal" => Ok(InitKind::Normal),
            other => Err(Error::config(format!("init must be he, xavier or normal, got {other:?}"))),
        }
    }
}

/// Re-draws every weight in parameter order. Conv and linear weights
/// (including the squeeze-excitation layers) follow the scheme; biases and
/// BN betas become 0 and BN gammas 1.
pub fn initialize<T: Scalar>(params: &mut ParamStore<T>, scheme: &InitScheme, rng: &mut RngStream) {
    for p in params.iter_mut() {
        let data = p.tensor.data_mut();
        match p.kind {
            ParamKind::ConvWeight { fan_in, fan_out } | ParamKind::LinearWeight { fan_in, fan_out } => {
                match scheme.kind {
                    InitKind::He => {
                        let std = (2.0 / fan_in as f64).sqrt();
                        data.iter_mut().for_each(|v| *v = T::lit(rng.normal(0.0, std)));
                    }
                    InitKind::Xavier => {
                        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let b = T::lit(bound);
                        data.iter_mut()
                            .for_each(|v| *v = T::lit(rng.uniform_in(-bound, bound)).max(-b).min(b));
                    }
                    InitKind::Normal => {
                        data.iter_mut().for_each(|v| *v = T::lit(rng.normal(0.0, scheme.normal_std)));
                    }
                }
            }
            ParamKind::Bias | ParamKind::BnBeta => data.fill(T::zero()),
            ParamKind::BnGamma => data.fill(T::one()),
        }
    }
}
