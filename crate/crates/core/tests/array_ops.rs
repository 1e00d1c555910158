use lort::array::{
    conv2d, conv2d_output_shape, matmul, normalize, prelu, sigmoid, silu, softmax, ConvSpec,
    DenseArray, NormKind,
};
use proptest::prelude::*;

/// Direct loop over the defining sums, written against the index formula.
fn conv_oracle(x: &DenseArray, w: &DenseArray, spec: &ConvSpec) -> DenseArray {
    let [b, cin, t, f] = x.dims4();
    let [w0, w1, kh, kw] = w.dims4();
    let g = spec.groups;
    let (to, fo) = conv2d_output_shape(spec, t, f).unwrap();
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    if !spec.transposed {
        let cout = w0;
        let mut out = DenseArray::zeros(&[b, cout, to, fo]);
        for bi in 0..b {
            for oc in 0..cout {
                let grp = oc / (cout / g);
                for ot in 0..to {
                    for of in 0..fo {
                        let mut acc = 0.0;
                        for ic in 0..w1 {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let ti = (ot * sh + i * dh) as isize - ph as isize;
                                    let fi = (of * sw + j * dw) as isize - pw as isize;
                                    if ti < 0 || fi < 0 || ti >= t as isize || fi >= f as isize {
                                        continue;
                                    }
                                    acc += x.at4(bi, grp * w1 + ic, ti as usize, fi as usize)
                                        * w.at4(oc, ic, i, j);
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + oc) * to + ot) * fo + of] = acc;
                    }
                }
            }
        }
        out
    } else {
        let cout = w1 * g;
        let cin_g = cin / g;
        let mut out = DenseArray::zeros(&[b, cout, to, fo]);
        for bi in 0..b {
            for ic in 0..cin {
                let grp = ic / cin_g;
                for oc in 0..w1 {
                    for it in 0..t {
                        for jf in 0..f {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let ot = (it * sh + i * dh) as isize - ph as isize;
                                    let of = (jf * sw + j * dw) as isize - pw as isize;
                                    if ot < 0 || of < 0 || ot >= to as isize || of >= fo as isize {
                                        continue;
                                    }
                                    let idx = ((bi * cout + grp * w1 + oc) * to + ot as usize) * fo
                                        + of as usize;
                                    out.data_mut()[idx] += x.at4(bi, ic, it, jf) * w.at4(ic, oc, i, j);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn arb_conv() -> impl Strategy<Value = (DenseArray, DenseArray, ConvSpec)> {
    (
        1usize..=2,
        1usize..=3,
        1usize..=3,
        1usize..=3,
        1usize..=4,
        1usize..=4,
        1usize..=3,
        1usize..=2,
        1usize..=2,
        0usize..=2,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(b, g, cin_g, cout_g, kh, kw, s, dh, dw, p, transposed, seed)| {
            let mut spec = ConvSpec::new((kh, kw))
                .stride((s, s.min(2)))
                .dilation((dh, dw))
                .padding((p.min(kh - 1), p.min(kw - 1)))
                .groups(g);
            if transposed {
                spec = spec.transposed();
            }
            let cin = g * cin_g;
            let (t, f) = (kh * dh + 4, kw * dw + 5);
            let mut state = seed | 1;
            let mut next = move |_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 2001) as f64 / 1000.0 - 1.0
            };
            let x = DenseArray::from_fn(&[b, cin, t, f], &mut next);
            let w = if transposed {
                DenseArray::from_fn(&[cin, cout_g, kh, kw], &mut next)
            } else {
                DenseArray::from_fn(&[g * cout_g, cin_g, kh, kw], &mut next)
            };
            (x, w, spec)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_loop_oracle((x, w, spec) in arb_conv()) {
        let fast = conv2d(&x, &w, None, &spec).unwrap();
        let slow = conv_oracle(&x, &w, &spec);
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(fast.max_abs_diff(&slow) < 1e-10);
    }

    #[test]
    fn conv_is_linear_in_input(
        (x, w, spec) in arb_conv(),
        a in -2.0f64..2.0,
    ) {
        let y = conv2d(&x.scale(a), &w, None, &spec).unwrap();
        let ya = conv2d(&x, &w, None, &spec).unwrap().scale(a);
        prop_assert!(y.max_abs_diff(&ya) < 1e-10);
    }

    #[test]
    fn instance_norm_statistics(seed in any::<u64>(), c in 1usize..4, t in 2usize..7, f in 2usize..7) {
        let mut s = seed | 1;
        let x = DenseArray::from_fn(&[2, c, t, f], |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) * 4.0 - 2.0
        });
        let y = normalize(&x, NormKind::Instance, &DenseArray::filled(&[1], 1.0), &DenseArray::zeros(&[1]), 1e-12).unwrap();
        for plane in y.data().chunks(t * f) {
            let n = plane.len() as f64;
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!(plane.iter().all(|&v| v == 0.0) || (var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-30.0f64..30.0, 12)) {
        let x = DenseArray::new(&[3, 4], v).unwrap();
        let y = softmax(&x, 1).unwrap();
        for row in y.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }
}

#[test]
fn layer_norm_spans_channels() {
    let x = DenseArray::new(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = normalize(
        &x,
        NormKind::Layer,
        &DenseArray::filled(&[1], 1.0),
        &DenseArray::zeros(&[1]),
        1e-12,
    )
    .unwrap();
    let s = 1.25f64.sqrt();
    let want = [-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s];
    for (a, b) in y.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn activations_at_known_points() {
    let x = DenseArray::new(&[1, 1, 1, 3], vec![-2.0, 0.0, 2.0]).unwrap();
    let s = sigmoid(&x);
    assert_eq!(s.data()[1], 0.5);
    assert!((s.data()[0] + s.data()[2] - 1.0).abs() < 1e-15);
    let y = silu(&x);
    assert!((y.data()[2] - 2.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    assert_eq!(prelu(&x, &[0.25]).unwrap().data(), &[-0.5, 0.0, 2.0]);
}

#[test]
fn matmul_small() {
    let a = DenseArray::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let b = DenseArray::new(&[3, 1], vec![1.0, 0.0, -1.0]).unwrap();
    assert_eq!(matmul(&a, &b).unwrap().data(), &[-2.0, -2.0]);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let x = DenseArray::zeros(&[1, 3, 4, 4]);
    let w = DenseArray::zeros(&[2, 2, 3, 3]);
    assert!(conv2d(&x, &w, None, &ConvSpec::new((3, 3))).is_err());
    let bad = ConvSpec::new((3, 3)).dilation((0, 1));
    assert!(conv2d(&x, &DenseArray::zeros(&[2, 3, 3, 3]), None, &bad).is_err());
}
