use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_refine::DlcConfig;
use crate::objectives::LossWeights;
use crate::signal::{StftConfig, DEFAULT_SAMPLE_RATE};

/// Dilated DenseNet used by the encoder and both decoders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    /// Square kernel extent.
    pub kernel: usize,
    /// One dilation per layer; the depth is `dilations.len()`.
    pub dilations: Vec<usize>,
    /// Instance normalisation after each convolution. Only disabled for
    /// receptive-field probing.
    pub instance_norm: bool,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        Self {
            kernel: 3,
            dilations: vec![1, 2, 4, 8],
            instance_norm: true,
        }
    }
}

impl DenseNetConfig {
    pub fn depth(&self) -> usize {
        self.dilations.len()
    }

    /// Closed-form receptive field along either axis.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }
}

/// Every architecture hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of locally refined Taylor transformer stages.
    pub n_blocks: usize,
    /// Encoder output channels.
    pub channels: usize,
    /// Stage width is `channels * stage_width_factor` at the halved resolution.
    pub stage_width_factor: usize,
    pub heads: usize,
    pub stft: StftConfig,
    pub sample_rate: u32,
    pub densenet: DenseNetConfig,
    pub dlc: DlcConfig,
    pub loss_weights: LossWeights,
    /// Power-law exponent applied to magnitudes before encoding.
    pub mag_compression: f64,
    /// Ceiling of the learnable sigmoid mask.
    pub lsigmoid_beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            channels: 16,
            stage_width_factor: 2,
            heads: 4,
            stft: StftConfig::default(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            densenet: DenseNetConfig::default(),
            dlc: DlcConfig::default(),
            loss_weights: LossWeights::default(),
            mag_compression: 1.0,
            lsigmoid_beta: 2.0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for quick experiments: N=1, C=4, 64-point FFT, hop 16.
    pub fn micro() -> Self {
        Self {
            n_blocks: 1,
            channels: 4,
            stft: StftConfig {
                fft_len: 64,
                win_len: 64,
                hop: 16,
            },
            ..Self::default()
        }
    }

    pub fn stage_width(&self) -> usize {
        self.channels * self.stage_width_factor
    }

    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_blocks < 1 {
            return bad("n_blocks must be >= 1".into());
        }
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return bad(format!("channels must be even and >= 2, got {}", self.channels));
        }
        if self.stage_width_factor < 1 {
            return bad("stage_width_factor must be >= 1".into());
        }
        if self.heads == 0 || !self.stage_width().is_multiple_of(self.heads) {
            return bad(format!(
                "{} heads do not divide stage width {}",
                self.heads,
                self.stage_width()
            ));
        }
        let d = &self.densenet.dilations;
        if d.is_empty()
            || d.iter().any(|x| !x.is_power_of_two())
            || d.windows(2).any(|w| w[1] <= w[0])
        {
            return bad(format!(
                "dilations must be strictly increasing powers of two, got {d:?}"
            ));
        }
        if self.densenet.kernel.is_multiple_of(2) {
            return bad("densenet kernel must be odd".into());
        }
        self.dlc.validate()?;
        self.stft.validate()?;
        self.loss_weights.validate()?;
        if !(self.lsigmoid_beta > 0.0) || !(self.mag_compression > 0.0) {
            return bad("lsigmoid_beta and mag_compression must be positive".into());
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        Ok(())
    }
}
