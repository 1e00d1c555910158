use lort::array::{sigmoid_scalar, DenseArray, NORM_EPS};
use lort::local_refine::{cfn, cfn_specs, dlc, dlc_specs, lrc_block, lrc_specs, Axis, DlcConfig};
use lort::weights::{SpecBuilder, WeightStore};
use proptest::prelude::*;

fn silu(x: f64) -> f64 {
    x * sigmoid_scalar(x)
}

#[test]
fn cfn_matches_loop_oracle() {
    let (c, t, f) = (2, 4, 4);
    let mut b = SpecBuilder::new();
    cfn_specs(&mut b, "cfn", c);
    let mut ws = WeightStore::initialize(&b.build(), 21);
    ws.get_mut("cfn.norm.gain").unwrap().data_mut().copy_from_slice(&[1.5, 0.5]);
    ws.get_mut("cfn.norm.shift").unwrap().data_mut().copy_from_slice(&[0.1, -0.2]);
    let x = DenseArray::from_fn(&[1, c, t, f], |i| ((i * 7 % 11) as f64 - 5.0) / 3.0);
    let got = cfn(&x, &ws.scope("cfn")).unwrap();

    let n = (c * t * f) as f64;
    let mean = x.sum() / n;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let g = ws.get("cfn.norm.gain").unwrap().data();
    let s = ws.get("cfn.norm.shift").unwrap().data();
    let ln = |ch: usize, ti: usize, fi: usize| (x.at4(0, ch, ti, fi) - mean) / (var + NORM_EPS).sqrt() * g[ch] + s[ch];
    let pw = ws.get("cfn.pw.weight").unwrap();
    let pb = ws.get("cfn.pw.bias").unwrap().data();
    let hidden = |ch: usize, ti: usize, fi: usize| {
        silu(pb[ch] + (0..c).map(|ic| pw.at4(ch, ic, 0, 0) * ln(ic, ti, fi)).sum::<f64>())
    };
    let dw = ws.get("cfn.dw.weight").unwrap();
    let db = ws.get("cfn.dw.bias").unwrap().data();
    for ch in 0..c {
        for ti in 0..t {
            for fi in 0..f {
                let mut acc = db[ch];
                for i in 0..3 {
                    for j in 0..3 {
                        let (a, bb) = (ti as isize + i as isize - 1, fi as isize + j as isize - 1);
                        if a >= 0 && bb >= 0 && (a as usize) < t && (bb as usize) < f {
                            acc += dw.at4(ch, 0, i, j) * hidden(ch, a as usize, bb as usize);
                        }
                    }
                }
                let want = x.at4(0, ch, ti, fi) + acc;
                assert!((got.at4(0, ch, ti, fi) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn lrc_reduces_to_self_gating() {
    // Zero CFN and DLC branches leave x on both paths; an identity output
    // projection then gives x + sigmoid(x) * x.
    let c = 3;
    let cfg = DlcConfig::default();
    let mut b = SpecBuilder::new();
    lrc_specs(&mut b, "lrc", c, &cfg);
    let mut ws = WeightStore::zeros(&b.build());
    let w = ws.get_mut("lrc.gate_proj.weight").unwrap();
    for ch in 0..c {
        w.data_mut()[ch * c + ch] = 1.0;
    }
    let x = DenseArray::from_fn(&[1, c, 5, 6], |i| (i as f64 * 0.41).sin() * 2.0);
    let y = lrc_block(&x, &cfg, &ws.scope("lrc")).unwrap();
    let want = x.map(|v| v + sigmoid_scalar(v) * v);
    assert!(y.max_abs_diff(&want) < 1e-15);
}

#[test]
fn dilations_and_receptive_field() {
    let cfg = DlcConfig::default();
    assert_eq!(cfg.dilations(), vec![2, 4]);
    assert_eq!(cfg.receptive_field(), 1 + 18 * (2 + 4));
    let deep = DlcConfig { depth: 3, ..cfg };
    assert_eq!(deep.dilations(), vec![2, 4, 8]);
    assert_eq!(deep.receptive_field(), 1 + 18 * 14);
    assert!(DlcConfig { kernel: 4, ..cfg }.validate().is_err());
    assert!(DlcConfig { depth: 0, ..cfg }.validate().is_err());
}

fn dlc_store(c: usize, cfg: &DlcConfig, seed: u64) -> WeightStore {
    let mut b = SpecBuilder::new();
    dlc_specs(&mut b, "d", c, cfg);
    WeightStore::initialize(&b.build(), seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn time_dlc_commutes_with_frequency_permutation(
        seed in any::<u64>(),
        perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
        c in 1usize..=3,
    ) {
        let cfg = DlcConfig::default();
        let ws = dlc_store(c, &cfg, seed);
        let (t, f) = (7, 6);
        let x = DenseArray::from_fn(&[1, c, t, f], |i| ((i as u64 ^ seed) % 97) as f64 / 48.0 - 1.0);
        let permute = |a: &DenseArray| {
            let mut out = a.clone();
            for row in 0..c * t {
                for (dst, &src) in perm.iter().enumerate() {
                    out.data_mut()[row * f + dst] = a.data()[row * f + src];
                }
            }
            out
        };
        let a = dlc(&permute(&x), &cfg, &ws.scope("d")).unwrap();
        let b = permute(&dlc(&x, &cfg, &ws.scope("d")).unwrap());
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn zero_weight_dlc_is_identity(
        v in prop::collection::vec(-5.0f64..5.0, 2 * 4 * 5),
        freq in any::<bool>(),
    ) {
        let axis = if freq { Axis::Frequency } else { Axis::Time };
        let cfg = DlcConfig::default().with_axis(axis);
        let mut b = SpecBuilder::new();
        dlc_specs(&mut b, "d", 2, &cfg);
        let ws = WeightStore::zeros(&b.build());
        let x = DenseArray::new(&[1, 2, 4, 5], v).unwrap();
        prop_assert_eq!(dlc(&x, &cfg, &ws.scope("d")).unwrap(), x);
    }

    #[test]
    fn lrc_preserves_shape_and_finiteness(seed in any::<u64>(), t in 1usize..6, f in 1usize..6) {
        let cfg = DlcConfig::default();
        let mut b = SpecBuilder::new();
        lrc_specs(&mut b, "l", 4, &cfg);
        let ws = WeightStore::initialize(&b.build(), seed);
        let x = DenseArray::from_fn(&[1, 4, t, f], |i| (i as f64).cos());
        let y = lrc_block(&x, &cfg, &ws.scope("l")).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.all_finite());
    }
}
