use super::DenseArray;
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution over the `(time, freq)` plane.
///
/// Weights are `[out, in/groups, kh, kw]` for ordinary convolutions and
/// `[in, out/groups, kh, kw]` when `transposed` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn new(kernel: (usize, usize)) -> Self {
        Self {
            kernel,
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
            groups: 1,
            transposed: false,
        }
    }

    /// Stride-1 convolution padded so the output keeps the input extent.
    pub fn same(kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        Self::new(kernel)
            .dilation(dilation)
            .padding((dilation.0 * (kernel.0 - 1) / 2, dilation.1 * (kernel.1 - 1) / 2))
    }

    pub fn pointwise() -> Self {
        Self::new((1, 1))
    }

    pub fn stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn dilation(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn padding(mut self, padding: (usize, usize)) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (dh, dw) = self.dilation;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || self.groups == 0 {
            return Err(Error::InvalidSpec(format!(
                "kernel, stride and groups must be positive: {self:?}"
            )));
        }
        if dh == 0 || dw == 0 {
            return Err(Error::InvalidSpec(format!(
                "dilation must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn out_extent(&self, input: usize, axis: usize) -> Result<usize> {
        let (k, s, d, p) = if axis == 0 {
            (self.kernel.0, self.stride.0, self.dilation.0, self.padding.0)
        } else {
            (self.kernel.1, self.stride.1, self.dilation.1, self.padding.1)
        };
        let span = d * (k - 1) + 1;
        if self.transposed {
            let full = (input - 1) * s + span;
            if full <= 2 * p {
                return Err(Error::InvalidSpec(format!(
                    "transposed convolution output is empty for input extent {input}: {self:?}"
                )));
            }
            Ok(full - 2 * p)
        } else {
            let padded = input + 2 * p;
            if padded < span {
                return Err(Error::InvalidSpec(format!(
                    "convolution output is empty for input extent {input}: {self:?}"
                )));
            }
            Ok((padded - span) / s + 1)
        }
    }
}

/// Output `(time, freq)` extents for an input plane of `(t, f)`.
pub fn conv2d_output_shape(spec: &ConvSpec, t: usize, f: usize) -> Result<(usize, usize)> {
    spec.validate()?;
    Ok((spec.out_extent(t, 0)?, spec.out_extent(f, 1)?))
}

/// Cross-correlation (no kernel flip) of a `[B, Cin, T, F]` input.
pub fn conv2d(
    input: &DenseArray,
    weight: &DenseArray,
    bias: Option<&DenseArray>,
    spec: &ConvSpec,
) -> Result<DenseArray> {
    spec.validate()?;
    if input.rank() != 4 || weight.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects rank-4 input and weight, got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    let [b, cin, t, f] = input.dims4();
    let [w0, w1, kh, kw] = weight.dims4();
    let g = spec.groups;
    if (kh, kw) != spec.kernel {
        return Err(Error::Shape(format!(
            "weight kernel {:?} does not match spec kernel {:?}",
            (kh, kw),
            spec.kernel
        )));
    }
    let (cout, cin_g, cout_g) = if spec.transposed {
        if w0 != cin {
            return Err(Error::Shape(format!(
                "transposed weight expects {w0} input channels, input has {cin}"
            )));
        }
        (w1 * g, cin / g, w1)
    } else {
        if w1 * g != cin {
            return Err(Error::Shape(format!(
                "weight expects {} input channels ({} per group x {g} groups), input has {cin}",
                w1 * g,
                w1
            )));
        }
        (w0, w1, w0 / g)
    };
    if cin % g != 0 || cout % g != 0 {
        return Err(Error::Shape(format!(
            "channels ({cin} in, {cout} out) not divisible by groups {g}"
        )));
    }
    if let Some(bias) = bias {
        if bias.len() != cout {
            return Err(Error::Shape(format!(
                "bias has {} entries, expected {cout}",
                bias.len()
            )));
        }
    }
    let (to, fo) = conv2d_output_shape(spec, t, f)?;
    let mut out = vec![0.0; b * cout * to * fo];
    if let Some(bias) = bias {
        for bi in 0..b {
            for oc in 0..cout {
                let s = (bi * cout + oc) * to * fo;
                out[s..s + to * fo].fill(bias.data()[oc]);
            }
        }
    }
    let x = input.data();
    let w = weight.data();
    if spec.transposed {
        transposed_kernel(x, w, &mut out, [b, cin, t, f], [cout, to, fo], cin_g, cout_g, spec);
    } else {
        direct_kernel(x, w, &mut out, [b, cin, t, f], [cout, to, fo], cin_g, cout_g, spec);
    }
    DenseArray::new(&[b, cout, to, fo], out)
}

/// Range of output indices `o` with `o*s - p + k*d` inside `[0, n)`.
fn valid_range(n: usize, out: usize, s: usize, p: usize, kd: usize) -> (usize, usize) {
    // o*s + kd >= p  and  o*s + kd < n + p
    let lo = if kd >= p { 0 } else { (p - kd).div_ceil(s) };
    let hi = if n + p > kd {
        ((n + p - kd - 1) / s + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn direct_kernel(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    [b, cin, t, f]: [usize; 4],
    [cout, to, fo]: [usize; 3],
    cin_g: usize,
    cout_g: usize,
    spec: &ConvSpec,
) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    for bi in 0..b {
        for oc in 0..cout {
            let group = oc / cout_g;
            let obase = (bi * cout + oc) * to * fo;
            for icg in 0..cin_g {
                let ic = group * cin_g + icg;
                let ibase = (bi * cin + ic) * t * f;
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(t, to, sh, ph, ky * dh);
                    for kx in 0..kw {
                        let wv = w[((oc * cin_g + icg) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(f, fo, sw, pw, kx * dw);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky * dh - ph;
                            let orow = &mut out[obase + oy * fo + ox0..obase + oy * fo + ox1];
                            let ix0 = ox0 * sw + kx * dw - pw;
                            let irow = &x[ibase + iy * f..ibase + (iy + 1) * f];
                            if sw == 1 {
                                for (o, &v) in orow.iter_mut().zip(&irow[ix0..]) {
                                    *o += wv * v;
                                }
                            } else {
                                for (j, o) in orow.iter_mut().enumerate() {
                                    *o += wv * irow[ix0 + j * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn transposed_kernel(
    x: &[f64],
    w: &[f64],
    out: &mut [f64],
    [b, cin, t, f]: [usize; 4],
    [cout, to, fo]: [usize; 3],
    cin_g: usize,
    cout_g: usize,
    spec: &ConvSpec,
) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    for bi in 0..b {
        for ic in 0..cin {
            let group = ic / cin_g;
            let ibase = (bi * cin + ic) * t * f;
            for ocg in 0..cout_g {
                let oc = group * cout_g + ocg;
                let obase = (bi * cout + oc) * to * fo;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w[((ic * cout_g + ocg) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for iy in 0..t {
                            let oy = iy * sh + ky * dh;
                            if oy < ph || oy - ph >= to {
                                continue;
                            }
                            let oy = oy - ph;
                            for ix in 0..f {
                                let ox = ix * sw + kx * dw;
                                if ox < pw || ox - pw >= fo {
                                    continue;
                                }
                                out[obase + oy * fo + ox - pw] += wv * x[ibase + iy * f + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_identity_passes_input_through() {
        let x = DenseArray::from_fn(&[1, 3, 4, 5], |i| (i as f64).sin());
        let w = DenseArray::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = conv2d(&x, &w, None, &ConvSpec::pointwise()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = DenseArray::from_fn(&[1, 2, 5, 5], |i| i as f64);
        let w = DenseArray::zeros(&[4, 2, 3, 3]);
        let b = DenseArray::zeros(&[4]);
        let y = conv2d(&x, &w, Some(&b), &ConvSpec::same((3, 3), (1, 1))).unwrap();
        assert_eq!(y.shape(), &[1, 4, 5, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = DenseArray::zeros(&[1, 3, 4, 4]);
        let w = DenseArray::zeros(&[2, 2, 3, 3]);
        let err = conv2d(&x, &w, None, &ConvSpec::new((3, 3))).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn empty_output_is_invalid_spec() {
        let x = DenseArray::zeros(&[1, 1, 2, 2]);
        let w = DenseArray::zeros(&[1, 1, 3, 3]);
        let err = conv2d(&x, &w, None, &ConvSpec::new((3, 3))).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
    }

    #[test]
    fn zero_dilation_rejected() {
        let x = DenseArray::zeros(&[1, 1, 4, 4]);
        let w = DenseArray::zeros(&[1, 1, 3, 3]);
        let spec = ConvSpec::new((3, 3)).dilation((0, 1));
        assert!(matches!(
            conv2d(&x, &w, None, &spec),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn transposed_stride_two_doubles_extent() {
        let x = DenseArray::filled(&[1, 1, 3, 4], 1.0);
        let w = DenseArray::filled(&[1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &w, None, &ConvSpec::new((2, 2)).stride((2, 2)).transposed()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 8]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }
}
