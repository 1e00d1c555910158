//! Parameterised layers that read their weights from a [`Params`] scope.

use crate::array::{conv2d, normalize, prelu, ConvSpec, DenseArray, NormKind, NORM_EPS};
use crate::error::Result;
use crate::weights::{Params, SpecBuilder};

/// Convolution using `{scope}.weight` and, when present, `{scope}.bias`.
pub fn conv(p: &Params<'_>, x: &DenseArray, spec: &ConvSpec) -> Result<DenseArray> {
    conv2d(x, p.get("weight")?, p.get_opt("bias"), spec)
}

pub fn norm(p: &Params<'_>, x: &DenseArray, kind: NormKind) -> Result<DenseArray> {
    normalize(x, kind, p.get("gain")?, p.get("shift")?, NORM_EPS)
}

pub fn act(p: &Params<'_>, x: &DenseArray) -> Result<DenseArray> {
    prelu(x, p.get("slope")?.data())
}

/// Conv, optional instance norm, PReLU.
pub fn conv_norm_act(
    p: &Params<'_>,
    x: &DenseArray,
    spec: &ConvSpec,
    instance_norm: bool,
) -> Result<DenseArray> {
    let mut y = conv(&p.scope("conv"), x, spec)?;
    if instance_norm {
        y = norm(&p.scope("norm"), &y, NormKind::Instance)?;
    }
    act(&p.scope("act"), &y)
}

pub fn conv_norm_act_specs(b: &mut SpecBuilder, prefix: &str, shape: [usize; 4], out: usize) {
    b.conv(&format!("{prefix}.conv"), shape, out)
        .norm(&format!("{prefix}.norm"), out)
        .prelu(&format!("{prefix}.act"), out);
}

/// Densely connected stack: layer `j` sees the block input concatenated with
/// the outputs of layers `0..j` and maps them back to `channels`. Returns the
/// last layer's output.
pub fn dilated_dense(
    p: &Params<'_>,
    x: &DenseArray,
    layers: &[ConvSpec],
    instance_norm: bool,
) -> Result<DenseArray> {
    let mut outputs: Vec<DenseArray> = Vec::with_capacity(layers.len());
    for (j, spec) in layers.iter().enumerate() {
        let input = if j == 0 {
            x.clone()
        } else {
            let mut parts: Vec<&DenseArray> = vec![x];
            parts.extend(outputs.iter());
            DenseArray::concat_channels(&parts)?
        };
        let y = conv_norm_act(&p.scope(&j.to_string()), &input, spec, instance_norm)?;
        outputs.push(y);
    }
    Ok(outputs.pop().expect("at least one dense layer"))
}

pub fn dilated_dense_specs(b: &mut SpecBuilder, prefix: &str, channels: usize, layers: &[ConvSpec]) {
    for (j, spec) in layers.iter().enumerate() {
        conv_norm_act_specs(
            b,
            &format!("{prefix}.{j}"),
            [channels, channels * (j + 1), spec.kernel.0, spec.kernel.1],
            channels,
        );
    }
}

/// Multiply-accumulates of a non-transposed convolution producing `(to, fo)`.
pub fn conv_macs(cin: usize, cout: usize, spec: &ConvSpec, to: usize, fo: usize) -> u64 {
    (cout * (cin / spec.groups) * spec.kernel.0 * spec.kernel.1 * to * fo) as u64
}

/// Multiply-accumulates of a transposed convolution reading `(ti, fi)`.
pub fn conv_transposed_macs(cin: usize, cout: usize, spec: &ConvSpec, ti: usize, fi: usize) -> u64 {
    (cin * (cout / spec.groups) * spec.kernel.0 * spec.kernel.1 * ti * fi) as u64
}
