use crate::error::Result;

use super::config::ResNetConfig;
use super::se::se_hidden;

const STEM_KERNEL: usize = 3;
const INPUT_CHANNELS: usize = 3;

/// Trainable-parameter count by closed form: conv weights (no bias), BN
/// gamma and beta, squeeze-excitation weights and biases, classifier weight
/// and bias. BN running statistics are not trainable and are excluded.
pub fn count_params(config: &ResNetConfig) -> Result<usize> {
    config.validate()?;
    let bn = |c: usize| 2 * c;
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k;

    let c0 = config.channels[0];
    let mut total = conv(INPUT_CHANNELS, c0, STEM_KERNEL) + bn(c0);
    let mut cin = c0;
    for layer in 0..config.n_layers {
        let c = config.channels[layer];
        let f = config.conv_kernels[layer];
        let k = config.skip_kernels[layer];
        for b in 0..config.blocks[layer] {
            let stride = if layer > 0 && b == 0 { 2 } else { 1 };
            total += conv(cin, c, f) + bn(c) + conv(c, c, f) + bn(c);
            if config.has_se(layer, b) {
                let hidden = se_hidden(c, config.se_ratio)?;
                total += c * hidden + hidden + hidden * c + c;
            }
            if stride != 1 || cin != c {
                total += conv(cin, c, k) + bn(c);
            }
            cin = c;
        }
    }
    Ok(total + cin * config.num_classes + config.num_classes)
}
