//! Locally refined convolution: a gated unit whose gate comes from a
//! convolutional feed-forward network (CFN) and whose value comes from a pair
//! of dilated dense convolutions run along time and then frequency.

use serde::{Deserialize, Serialize};

use crate::array::{sigmoid, silu, ConvSpec, DenseArray, NormKind};
use crate::error::{Error, Result};
use crate::nn;
use crate::weights::{Params, SpecBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    Time,
    Frequency,
}

/// Dilated dense convolution along one axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DlcConfig {
    pub depth: usize,
    /// Layer `l` (1-based) uses dilation `dilation_base^l`.
    pub dilation_base: usize,
    /// Kernel extent along the convolved axis; 1 along the other.
    pub kernel: usize,
    pub axis: Axis,
    pub instance_norm: bool,
}

impl Default for DlcConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            dilation_base: 2,
            kernel: 19,
            axis: Axis::Time,
            instance_norm: true,
        }
    }
}

impl DlcConfig {
    pub fn with_axis(&self, axis: Axis) -> Self {
        Self {
            axis,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidParameter("dlc depth must be >= 1".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "dlc kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.dilation_base < 1 {
            return Err(Error::InvalidParameter("dlc dilation_base must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dilations(&self) -> Vec<usize> {
        (1..=self.depth as u32)
            .map(|l| self.dilation_base.pow(l))
            .collect()
    }

    /// Width of the impulse response along the convolved axis.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations().iter().sum::<usize>()
    }

    fn layer_spec(&self, dilation: usize) -> ConvSpec {
        match self.axis {
            Axis::Time => ConvSpec::same((self.kernel, 1), (dilation, 1)),
            Axis::Frequency => ConvSpec::same((1, self.kernel), (1, dilation)),
        }
    }

    fn kernel_shape(&self) -> (usize, usize) {
        match self.axis {
            Axis::Time => (self.kernel, 1),
            Axis::Frequency => (1, self.kernel),
        }
    }
}

/// `x + dw3x3(silu(pw(LN(x))))`.
pub fn cfn(x: &DenseArray, params: &Params<'_>) -> Result<DenseArray> {
    let c = x.dims4()[1];
    let h = nn::norm(&params.scope("norm"), x, NormKind::Layer)?;
    let h = silu(&nn::conv(&params.scope("pw"), &h, &ConvSpec::pointwise())?);
    let h = nn::conv(
        &params.scope("dw"),
        &h,
        &ConvSpec::same((3, 3), (1, 1)).groups(c),
    )?;
    x.add(&h)
}

pub fn cfn_specs(b: &mut SpecBuilder, prefix: &str, c: usize) {
    b.norm(&format!("{prefix}.norm"), c)
        .conv(&format!("{prefix}.pw"), [c, c, 1, 1], c)
        .conv(&format!("{prefix}.dw"), [c, 1, 3, 3], c);
}

/// `x + lin_out(dense(lin_in(x)))`.
///
/// Dense layer `j` sees the concatenation of the stack input and every earlier
/// layer output; layers past the first compress that back to `C` with a
/// pointwise convolution before the dilated one. The last layer's output
/// leaves the stack.
pub fn dlc(x: &DenseArray, cfg: &DlcConfig, params: &Params<'_>) -> Result<DenseArray> {
    cfg.validate()?;
    let pw = ConvSpec::pointwise();
    let h = nn::conv(&params.scope("lin_in"), x, &pw)?;
    let mut outputs: Vec<DenseArray> = Vec::with_capacity(cfg.depth);
    for (j, d) in cfg.dilations().into_iter().enumerate() {
        let layer = params.scope(&format!("dense.{j}"));
        let input = if j == 0 {
            h.clone()
        } else {
            let mut parts = vec![&h];
            parts.extend(outputs.iter());
            let cat = DenseArray::concat_channels(&parts)?;
            nn::conv(&layer.scope("compress"), &cat, &pw)?
        };
        outputs.push(nn::conv_norm_act(
            &layer,
            &input,
            &cfg.layer_spec(d),
            cfg.instance_norm,
        )?);
    }
    let last = outputs.pop().expect("depth >= 1");
    x.add(&nn::conv(&params.scope("lin_out"), &last, &pw)?)
}

pub fn dlc_specs(b: &mut SpecBuilder, prefix: &str, c: usize, cfg: &DlcConfig) {
    let (kh, kw) = cfg.kernel_shape();
    b.conv(&format!("{prefix}.lin_in"), [c, c, 1, 1], c);
    for j in 0..cfg.depth {
        let layer = format!("{prefix}.dense.{j}");
        if j > 0 {
            b.conv(&format!("{layer}.compress"), [c, c * (j + 1), 1, 1], c);
        }
        nn::conv_norm_act_specs(b, &layer, [c, c, kh, kw], c);
    }
    b.conv(&format!("{prefix}.lin_out"), [c, c, 1, 1], c);
}

/// `x + gate_proj(sigmoid(cfn(x)) * dlc_f(dlc_t(x)))`.
pub fn lrc_block(x: &DenseArray, cfg: &DlcConfig, params: &Params<'_>) -> Result<DenseArray> {
    let gate = sigmoid(&cfn(x, &params.scope("cfn"))?);
    let value = dlc(x, &cfg.with_axis(Axis::Time), &params.scope("dlc_t"))?;
    let value = dlc(&value, &cfg.with_axis(Axis::Frequency), &params.scope("dlc_f"))?;
    let gated = gate.mul(&value)?;
    x.add(&nn::conv(
        &params.scope("gate_proj"),
        &gated,
        &ConvSpec::pointwise(),
    )?)
}

pub fn lrc_specs(b: &mut SpecBuilder, prefix: &str, c: usize, cfg: &DlcConfig) {
    cfn_specs(b, &format!("{prefix}.cfn"), c);
    dlc_specs(b, &format!("{prefix}.dlc_t"), c, &cfg.with_axis(Axis::Time));
    dlc_specs(b, &format!("{prefix}.dlc_f"), c, &cfg.with_axis(Axis::Frequency));
    b.conv(&format!("{prefix}.gate_proj"), [c, c, 1, 1], c);
}

/// Multiply-accumulates of one `lrc_block` on a `[1, c, t, f]` map.
pub fn lrc_macs(c: usize, t: usize, f: usize, cfg: &DlcConfig) -> u64 {
    let plane = (t * f) as u64;
    let c = c as u64;
    let cfn = c * c * plane + 9 * c * plane;
    let mut dlc = 2 * c * c * plane;
    for j in 0..cfg.depth as u64 {
        if j > 0 {
            dlc += (j + 1) * c * c * plane;
        }
        dlc += cfg.kernel as u64 * c * c * plane;
    }
    cfn + 2 * dlc + c * c * plane
}
