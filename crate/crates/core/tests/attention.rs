use lort::array::{sigmoid_scalar, DenseArray};
use lort::attention::{
    count_ops, heads_to_map, map_to_heads, msar_correct, msar_specs, scea, scea_specs,
    softmax_attention, taylor_attention, taylor_attention_scaled, tmsa_branches, tmsa_specs,
    AttentionInput,
};
use lort::weights::{SpecBuilder, WeightStore};
use lort::Error;
use proptest::prelude::*;

fn arr(shape: &[usize], v: Vec<f64>) -> DenseArray {
    DenseArray::new(shape, v).unwrap()
}

fn arb_input(max_n: usize) -> impl Strategy<Value = AttentionInput> {
    (1usize..=2, 1usize..=max_n, 1usize..=5).prop_flat_map(|(h, n, d)| {
        let len = h * n * d;
        (
            prop::collection::vec(-2.0f64..2.0, len),
            prop::collection::vec(-2.0f64..2.0, len),
            prop::collection::vec(-2.0f64..2.0, len),
        )
            .prop_filter_map("non-zero keys", move |(q, k, v)| {
                // Keep every key away from the origin so normalisation is well defined.
                if k.chunks(d).any(|r| r.iter().map(|x| x * x).sum::<f64>() < 1e-2) {
                    return None;
                }
                let input = AttentionInput::new(arr(&[h, n, d], q), arr(&[h, n, d], k), arr(&[h, n, d], v), (1, n)).ok()?;
                // Antipodal query/key sets give a vanishing normaliser; that case has its own test.
                (min_normaliser(&input) > 1e-3).then_some(input)
            })
    })
}

fn unit(r: &[f64]) -> Vec<f64> {
    let l = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    r.iter().map(|x| if l > 0.0 { x / l } else { 0.0 }).collect()
}

fn min_normaliser(input: &AttentionInput) -> f64 {
    let (h, n, d) = (input.heads(), input.tokens(), input.head_dim());
    let at = |a: &DenseArray, hh: usize, i: usize| unit(&a.data()[(hh * n + i) * d..(hh * n + i + 1) * d]);
    let mut lo = f64::INFINITY;
    for hh in 0..h {
        for i in 0..n {
            let q = at(&input.q, hh, i);
            let z: f64 = (0..n)
                .map(|j| 1.0 + q.iter().zip(at(&input.k, hh, j)).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            lo = lo.min(z);
        }
    }
    lo
}

/// Weighted mean with weights `1 + s * cos(q_i, k_j)`, one pair at a time.
fn first_order_oracle(input: &AttentionInput, s: f64) -> Vec<f64> {
    let (h, n, d) = (input.heads(), input.tokens(), input.head_dim());
    let at = |a: &DenseArray, hh: usize, i: usize| a.data()[(hh * n + i) * d..(hh * n + i + 1) * d].to_vec();
    let mut out = Vec::with_capacity(h * n * d);
    for hh in 0..h {
        for i in 0..n {
            let q = unit(&at(&input.q, hh, i));
            let ws: Vec<f64> = (0..n)
                .map(|j| {
                    let k = unit(&at(&input.k, hh, j));
                    1.0 + s * q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let z: f64 = ws.iter().sum();
            for c in 0..d {
                out.push((0..n).map(|j| ws[j] * input.v.data()[(hh * n + j) * d + c]).sum::<f64>() / z);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn taylor_matches_pairwise_oracle(input in arb_input(12)) {
        let got = taylor_attention(&input).unwrap();
        let want = first_order_oracle(&input, 1.0);
        for (a, b) in got.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn taylor_is_a_convex_combination(input in arb_input(12)) {
        // Weights 1 + cos are non-negative, so each output lies in the value hull.
        let out = taylor_attention(&input).unwrap();
        let (h, n, d) = (input.heads(), input.tokens(), input.head_dim());
        for hh in 0..h {
            for c in 0..d {
                let col: Vec<f64> = (0..n).map(|j| input.v.data()[(hh * n + j) * d + c]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..n {
                    let y = out.data()[(hh * n + i) * d + c];
                    prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance(input in arb_input(10), rot in 0usize..10) {
        let (h, n, d) = (input.heads(), input.tokens(), input.head_dim());
        let r = rot % n;
        let roll = |a: &DenseArray| {
            let mut out = vec![0.0; a.len()];
            for hh in 0..h {
                for i in 0..n {
                    let src = (hh * n + (i + r) % n) * d;
                    out[(hh * n + i) * d..(hh * n + i + 1) * d].copy_from_slice(&a.data()[src..src + d]);
                }
            }
            arr(&[h, n, d], out)
        };
        let base = taylor_attention(&input).unwrap();
        let kv_rolled = AttentionInput::new(input.q.clone(), roll(&input.k), roll(&input.v), (1, n)).unwrap();
        prop_assert!(taylor_attention(&kv_rolled).unwrap().max_abs_diff(&base) < 1e-12);
        let q_rolled = AttentionInput::new(roll(&input.q), input.k.clone(), input.v.clone(), (1, n)).unwrap();
        prop_assert!(taylor_attention(&q_rolled).unwrap().max_abs_diff(&roll(&base)) < 1e-12);
    }

    #[test]
    fn zero_scale_is_uniform_mean(input in arb_input(8)) {
        let taylor = taylor_attention_scaled(&input, 0.0).unwrap();
        let soft = softmax_attention(&input, 0.0);
        prop_assert_eq!(&taylor, &soft);
        let want = first_order_oracle(&input, 0.0);
        for (a, b) in taylor.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn head_layout_roundtrip(v in prop::collection::vec(-1.0f64..1.0, 48)) {
        let map = arr(&[1, 6, 2, 4], v);
        let heads = map_to_heads(&map, 3).unwrap();
        prop_assert_eq!(heads.shape(), &[3, 8, 2]);
        prop_assert_eq!(heads_to_map(&heads, (2, 4)).unwrap(), map);
    }
}

#[test]
fn softmax_matches_explicit_weights() {
    let q = arr(&[1, 2, 1], vec![1.0, -1.0]);
    let k = arr(&[1, 2, 1], vec![0.5, 2.0]);
    let v = arr(&[1, 2, 1], vec![3.0, -1.0]);
    let out = softmax_attention(&AttentionInput::new(q, k, v, (1, 2)).unwrap(), 1.0);
    let w0 = [0.5f64.exp(), 2.0f64.exp()];
    let w1 = [(-0.5f64).exp(), (-2.0f64).exp()];
    let want0 = (3.0 * w0[0] - w0[1]) / (w0[0] + w0[1]);
    let want1 = (3.0 * w1[0] - w1[1]) / (w1[0] + w1[1]);
    assert!((out.data()[0] - want0).abs() < 1e-12);
    assert!((out.data()[1] - want1).abs() < 1e-12);
}

#[test]
fn antipodal_keys_are_degenerate() {
    let q = arr(&[1, 2, 1], vec![1.0, 1.0]);
    let k = arr(&[1, 2, 1], vec![-1.0, -3.0]);
    let v = arr(&[1, 2, 1], vec![1.0, 2.0]);
    let err = taylor_attention(&AttentionInput::new(q, k, v, (1, 2)).unwrap()).unwrap_err();
    assert!(matches!(err, Error::DegenerateAttention { head: 0, .. }));
}

#[test]
fn op_counts_match_hand_values() {
    let ops = count_ops(2, 3, 4);
    assert_eq!(ops.mhsa_ops, 4 * 6 * 16 + 2 * 36 * 4);
    assert_eq!(ops.tmsa_ops, 18 * 6 * 4 + 2 * 6 * 16);
}

fn msar_store(channels: usize, seed: u64) -> WeightStore {
    let mut b = SpecBuilder::new();
    msar_specs(&mut b, "m", channels);
    let mut ws = WeightStore::initialize(&b.build(), seed);
    // The specs are zero-initialised; fill them so the oracle sees real weights.
    let mut s = seed;
    let names: Vec<String> = ws.names().map(String::from).collect();
    for n in names {
        for v in ws.get_mut(&n).unwrap().data_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            *v = ((s >> 40) as f64 / (1u64 << 24) as f64) - 0.5;
        }
    }
    ws
}

#[test]
fn msar_matches_loop_oracle() {
    let (c, t, f, heads) = (4, 3, 5, 2);
    let mk = |seed: f64| DenseArray::from_fn(&[1, c, t, f], |i| ((i as f64 + seed) * 0.7).sin());
    let (qm, km, vm, vpm) = (mk(0.0), mk(1.0), mk(2.0), mk(3.0));
    let input = AttentionInput::from_maps(&qm, &km, &vm, heads).unwrap();
    let vprime = map_to_heads(&vpm, heads).unwrap();
    let ws = msar_store(c, 3);
    let got = heads_to_map(&msar_correct(&input, &vprime, &ws.scope("m")).unwrap(), (t, f)).unwrap();

    let lw = ws.get("m.local.weight").unwrap();
    let lb = ws.get("m.local.bias").unwrap().data();
    let gw = ws.get("m.gate.weight").unwrap();
    let gb = ws.get("m.gate.bias").unwrap().data();
    for ch in 0..c {
        for ti in 0..t {
            for fi in 0..f {
                let mut local = lb[ch];
                for i in 0..3 {
                    for j in 0..3 {
                        let (a, b) = (ti as isize + i as isize - 1, fi as isize + j as isize - 1);
                        if a >= 0 && b >= 0 && (a as usize) < t && (b as usize) < f {
                            local += lw.at4(ch, 0, i, j) * vm.at4(0, ch, a as usize, b as usize);
                        }
                    }
                }
                let mut g = gb[ch];
                for ic in 0..c {
                    g += gw.at4(ch, ic, 0, 0) * qm.at4(0, ic, ti, fi);
                    g += gw.at4(ch, c + ic, 0, 0) * km.at4(0, ic, ti, fi);
                }
                let want = vpm.at4(0, ch, ti, fi) + sigmoid_scalar(g) * local;
                assert!((got.at4(0, ch, ti, fi) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn msar_gate_saturation() {
    let (c, t, f) = (2, 2, 3);
    let mk = |seed: f64| DenseArray::from_fn(&[1, c, t, f], |i| ((i as f64 + seed) * 1.3).cos());
    let input = AttentionInput::from_maps(&mk(0.0), &mk(1.0), &mk(2.0), 1).unwrap();
    let vprime = map_to_heads(&mk(3.0), 1).unwrap();
    let mut ws = msar_store(c, 5);
    ws.get_mut("m.gate.weight").unwrap().data_mut().fill(0.0);
    ws.get_mut("m.gate.bias").unwrap().data_mut().fill(-60.0);
    let closed = msar_correct(&input, &vprime, &ws.scope("m")).unwrap();
    assert!(closed.max_abs_diff(&vprime) < 1e-20);
    // Zero local filter: output is V' whatever the gate.
    let mut zero = msar_store(c, 5);
    zero.get_mut("m.local.weight").unwrap().data_mut().fill(0.0);
    zero.get_mut("m.local.bias").unwrap().data_mut().fill(0.0);
    assert_eq!(msar_correct(&input, &vprime, &zero.scope("m")).unwrap(), vprime);
}

#[test]
fn scea_with_zero_weights_quarters_input() {
    let mut b = SpecBuilder::new();
    scea_specs(&mut b, "s");
    let ws = WeightStore::zeros(&b.build());
    let x = DenseArray::from_fn(&[2, 3, 4, 6], |i| (i as f64 * 0.31).sin());
    let y = scea(&x, &ws.scope("s")).unwrap();
    assert!(y.max_abs_diff(&x.scale(0.25)) < 1e-15);
}

#[test]
fn scea_grows_with_channel_bias() {
    let mut b = SpecBuilder::new();
    scea_specs(&mut b, "s");
    let mut ws = WeightStore::initialize(&b.build(), 4);
    let x = DenseArray::from_fn(&[1, 3, 4, 5], |i| 0.1 + (i % 7) as f64 * 0.2);
    let mut prev = 0.0;
    for bias in [-3.0, -1.0, 0.0, 1.0, 3.0] {
        ws.get_mut("s.channel.bias").unwrap().data_mut()[0] = bias;
        let energy = scea(&x, &ws.scope("s")).unwrap().sum();
        assert!(energy > prev);
        prev = energy;
    }
    assert!(prev < x.sum());
}

#[test]
fn tmsa_branches_have_input_shape() {
    let c = 8;
    let mut b = SpecBuilder::new();
    tmsa_specs(&mut b, "blk", c);
    let ws = WeightStore::initialize(&b.build(), 2);
    let x = DenseArray::from_fn(&[1, c, 5, 7], |i| (i as f64 * 0.11).sin());
    let br = tmsa_branches(&x, &ws.scope("blk"), 4).unwrap();
    assert_eq!(br.attention.shape(), x.shape());
    assert_eq!(br.scea.shape(), x.shape());
    assert!(br.attention.all_finite());
}
