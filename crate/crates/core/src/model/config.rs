use crate::error::{Error, Result};

/// Side length of the CIFAR-10 images the architecture is built for.
pub const INPUT_SIZE: usize = 32;
pub const MAX_LAYERS: usize = 4;

/// Which residual blocks carry a squeeze-and-excitation unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SePlacement {
    EveryBlock,
    /// Only the first block of the first residual layer.
    FirstBlock,
}

impl SePlacement {
    pub fn as_str(self) -> &'static str {
        match self {
            SePlacement::EveryBlock => "every_block",
            SePlacement::FirstBlock => "first_block",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "every_block" => Ok(SePlacement::EveryBlock),
            "first_block" => Ok(SePlacement::FirstBlock),
            other => Err(Error::config(format!(
                "se_placement must be every_block or first_block, got {other:?}"
            ))),
        }
    }
}

/// Architecture hyperparameters of the configurable residual network.
#[derive(Clone, Debug, PartialEq)]
pub struct ResNetConfig {
    /// Number of residual layers N.
    pub n_layers: usize,
    /// Residual blocks per layer.
    pub blocks: Vec<usize>,
    /// Channel width per layer.
    pub channels: Vec<usize>,
    /// Convolution kernel size per layer (odd).
    pub conv_kernels: Vec<usize>,
    /// Projection-shortcut kernel size per layer (odd).
    pub skip_kernels: Vec<usize>,
    /// Final average-pool kernel; must equal [`avgpool_kernel`]`(n_layers)`.
    pub pool_kernel: usize,
    pub se_enabled: bool,
    /// Squeeze-and-excitation bottleneck ratio r.
    pub se_ratio: usize,
    pub se_placement: SePlacement,
    pub dropout_p: f64,
    pub num_classes: usize,
}

pub const DEFAULT_SE_RATIO: usize = 16;

/// Final average-pool kernel for 32x32 inputs: `32 / 2^(n_layers - 1)`.
pub fn avgpool_kernel(n_layers: usize) -> Result<usize> {
    if !(1..=5).contains(&n_layers) {
        return Err(Error::config(format!(
            "n_layers {n_layers} gives no integer pool kernel for {INPUT_SIZE}x{INPUT_SIZE} inputs"
        )));
    }
    Ok(INPUT_SIZE >> (n_layers - 1))
}

impl ResNetConfig {
    /// The budget model: N=3, B=[4,4,3], C=[64,128,256], 3x3 convs, 1x1
    /// shortcuts, P=8, squeeze-and-excitation on.
    pub fn budget_model() -> Self {
        Self {
            n_layers: 3,
            blocks: vec![4, 4, 3],
            channels: vec![64, 128, 256],
            conv_kernels: vec![3, 3, 3],
            skip_kernels: vec![1, 1, 1],
            pool_kernel: 8,
            se_enabled: true,
            se_ratio: DEFAULT_SE_RATIO,
            se_placement: SePlacement::EveryBlock,
            dropout_p: 0.0,
            num_classes: 10,
        }
    }

    /// CIFAR-style ResNet18 baseline.
    pub fn resnet18() -> Self {
        Self {
            n_layers: 4,
            blocks: vec![2, 2, 2, 2],
            channels: vec![64, 128, 256, 512],
            conv_kernels: vec![3, 3, 3, 3],
            skip_kernels: vec![1, 1, 1, 1],
            pool_kernel: 4,
            se_enabled: false,
            se_ratio: DEFAULT_SE_RATIO,
            se_placement: SePlacement::EveryBlock,
            dropout_p: 0.0,
            num_classes: 10,
        }
    }

    /// Uniform-kernel config with the pool kernel derived from the depth.
    pub fn uniform(blocks: Vec<usize>, channels: Vec<usize>, conv_kernel: usize, skip_kernel: usize) -> Result<Self> {
        let n = blocks.len();
        let cfg = Self {
            n_layers: n,
            conv_kernels: vec![conv_kernel; n],
            skip_kernels: vec![skip_kernel; n],
            pool_kernel: avgpool_kernel(n)?,
            blocks,
            channels,
            se_enabled: false,
            se_ratio: DEFAULT_SE_RATIO,
            se_placement: SePlacement::EveryBlock,
            dropout_p: 0.0,
            num_classes: 10,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Whether block `block` of layer `layer` carries squeeze-and-excitation.
    pub fn has_se(&self, layer: usize, block: usize) -> bool {
        self.se_enabled
            && match self.se_placement {
                SePlacement::EveryBlock => true,
                SePlacement::FirstBlock => layer == 0 && block == 0,
            }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_layers;
        if !(1..=MAX_LAYERS).contains(&n) {
            return Err(Error::config(format!("n_layers must be in 1..={MAX_LAYERS}, got {n}")));
        }
        for (field, list) in [
            ("blocks", &self.blocks),
            ("channels", &self.channels),
            ("conv_kernels", &self.conv_kernels),
            ("skip_kernels", &self.skip_kernels),
        ] {
            if list.len() != n {
                return Err(Error::config(format!(
                    "{field} has {} entries, expected n_layers = {n}",
                    list.len()
                )));
            }
            if list.contains(&0) {
                return Err(Error::config(format!("{field} entries must be positive")));
            }
        }
        for (field, list) in [("conv_kernels", &self.conv_kernels), ("skip_kernels", &self.skip_kernels)] {
            if let Some(k) = list.iter().find(|&&k| k % 2 == 0) {
                return Err(Error::config(format!("{field} must be odd, got {k}")));
            }
        }
        let expected = avgpool_kernel(n)?;
        if self.pool_kernel != expected {
            return Err(Error::config(format!(
                "pool_kernel must be {expected} for n_layers = {n}, got {}",
                self.pool_kernel
            )));
        }
        if self.se_enabled {
            if self.se_ratio == 0 {
                return Err(Error::config("se_ratio must be positive"));
            }
            for (layer, &c) in self.channels.iter().enumerate() {
                if self.has_se(layer, 0) && c % self.se_ratio != 0 {
                    return Err(Error::config(format!(
                        "se_ratio {} does not divide channels {c}",
                        self.se_ratio
                    )));
                }
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout must be in [0, 1), got {}", self.dropout_p)));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_kernel_formula() {
        assert_eq!(avgpool_kernel(3).unwrap(), 8);
        assert_eq!(avgpool_kernel(4).unwrap(), 4);
        assert_eq!(avgpool_kernel(1).unwrap(), 32);
        assert_eq!(avgpool_kernel(5).unwrap(), 2);
        assert!(avgpool_kernel(0).is_err());
        assert!(avgpool_kernel(6).is_err());
    }

    #[test]
    fn presets_validate() {
        ResNetConfig::budget_model().validate().unwrap();
        ResNetConfig::resnet18().validate().unwrap();
    }

    #[test]
    fn errors_name_the_offending_field() {
        let mut c = ResNetConfig::budget_model();
        c.blocks = vec![1, 1];
        assert!(c.validate().unwrap_err().to_string().contains("blocks"));

        let mut c = ResNetConfig::budget_model();
        c.conv_kernels = vec![3, 4, 3];
        assert!(c.validate().unwrap_err().to_string().contains("conv_kernels"));

        let mut c = ResNetConfig::budget_model();
        c.pool_kernel = 4;
        assert!(c.validate().unwrap_err().to_string().contains("pool_kernel"));

        let mut c = ResNetConfig::budget_model();
        c.se_ratio = 48;
        assert!(c.validate().unwrap_err().to_string().contains("se_ratio"));
    }
}
