use std::f64::consts::PI;

use lort::array::DenseArray;
use lort::objectives::{
    anti_wrap, consistency_projection, discriminate, discriminator_specs, loss_consistency,
    loss_consistency_grad, loss_d, loss_g, loss_mag, loss_phase, loss_ri, total_loss,
    waveform_report, LossTerms, LossWeights, QualityOracle, SegSnrProxy,
};
use lort::signal::{stft_with, ComplexSpec, StftConfig, Waveform};
use lort::weights::{SpecBuilder, WeightStore};
use proptest::prelude::*;

fn disc_store(seed: u64) -> WeightStore {
    let mut b = SpecBuilder::new();
    discriminator_specs(&mut b, "disc");
    WeightStore::initialize(&b.build(), seed)
}

#[test]
fn discriminator_head_saturates() {
    let mut ws = disc_store(1);
    let r = DenseArray::from_fn(&[20, 17], |i| (i as f64 * 0.3).sin().abs());
    let e = r.map(|v| v * 0.5);
    let s = discriminate(&r, &e, &ws.scope("disc")).unwrap();
    assert!(s > 0.0 && s < 1.0);
    ws.get_mut("disc.head.weight").unwrap().data_mut().fill(0.0);
    ws.get_mut("disc.head.bias").unwrap().data_mut().fill(40.0);
    assert!(discriminate(&r, &e, &ws.scope("disc")).unwrap() > 1.0 - 1e-15);
    ws.get_mut("disc.head.bias").unwrap().data_mut().fill(0.0);
    assert_eq!(discriminate(&r, &e, &ws.scope("disc")).unwrap(), 0.5);
    assert!(discriminate(&r, &DenseArray::zeros(&[3, 3]), &ws.scope("disc")).is_err());
}

#[test]
fn adversarial_losses() {
    assert_eq!(loss_g(1.0), 0.0);
    assert_eq!(loss_g(0.5), 0.25);
    assert_eq!(loss_d(1.0, 0.3, 0.3), 0.0);
    assert!((loss_d(0.8, 0.6, 0.2) - (0.04 + 0.16)).abs() < 1e-15);
}

#[test]
fn segmental_snr_endpoints() {
    let proxy = SegSnrProxy::default();
    let x: Vec<f64> = (0..2048).map(|i| (i as f64 * 0.05).sin()).collect();
    let w = Waveform::new(x.clone(), 16000).unwrap();
    assert_eq!(proxy.score(&w, &w).unwrap(), 1.0);
    // Silence as the estimate is a 0 dB error in every frame.
    let silent = Waveform::new(vec![0.0; 2048], 16000).unwrap();
    assert!((proxy.score(&w, &silent).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let inverted: Vec<f64> = x.iter().map(|v| -10.0 * v).collect();
    assert_eq!(proxy.segmental_snr(&x, &inverted).unwrap(), SegSnrProxy::FLOOR_DB);
    assert_eq!(proxy.score(&w, &Waveform::new(inverted, 16000).unwrap()).unwrap(), 0.0);
    // Uniform 10% error: 20 dB in every frame.
    let scaled: Vec<f64> = x.iter().map(|v| v * 0.9).collect();
    assert!((proxy.segmental_snr(&x, &scaled).unwrap() - 20.0).abs() < 1e-9);
    assert!(proxy.segmental_snr(&x, &x[1..]).is_err());
}

#[test]
fn identical_waveforms_report_zero() {
    let x: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.07).sin() * 0.4).collect();
    let w = Waveform::new(x, 16000).unwrap();
    let r = waveform_report(&w, &w, &StftConfig::default(), &LossWeights::default(), &SegSnrProxy::default()).unwrap();
    for (name, v) in r.fields() {
        if name != "l_con" && name != "total" {
            assert_eq!(v, 0.0, "{name}");
        }
    }
    assert!(r.l_con < 1e-20 && r.total < 1e-20);
    assert!(r.to_string().starts_with("l_ri=0 "));
}

#[test]
fn mag_and_ri_use_per_plane_means() {
    let cfg = StftConfig::new(6, 6, 2).unwrap();
    let z = ComplexSpec::from_planes(DenseArray::zeros(&[2, 4]), DenseArray::zeros(&[2, 4]), cfg).unwrap();
    let e = z
        .with_planes(DenseArray::filled(&[2, 4], 3.0), DenseArray::filled(&[2, 4], 4.0))
        .unwrap();
    assert_eq!(loss_ri(&e, &z).unwrap(), 25.0);
    assert_eq!(loss_mag(&DenseArray::filled(&[2, 4], 5.0), &DenseArray::zeros(&[2, 4])).unwrap(), 25.0);
}

#[test]
fn weights_reject_negative() {
    let w = LossWeights { mag: -0.1, ..LossWeights::default() };
    assert!(w.validate().is_err());
    assert_eq!(LossWeights::default().as_array(), [0.1, 0.9, 0.3, 0.1, 0.05]);
}

#[test]
fn consistency_gradient_vanishes_on_consistent_specs() {
    let cfg = StftConfig::new(32, 32, 8).unwrap();
    let x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.21).cos()).collect();
    let spec = stft_with(&x, &cfg).unwrap();
    let (gr, gi) = loss_consistency_grad(&spec).unwrap();
    assert!(gr.data().iter().chain(gi.data()).all(|v| v.abs() < 1e-12));
}

fn random_spec(seed: u64, frames: usize, cfg: StftConfig) -> ComplexSpec {
    let mut s = seed | 1;
    let mut next = move |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 10_000) as f64 / 5_000.0 - 1.0
    };
    let re = DenseArray::from_fn(&[frames, cfg.bins()], &mut next);
    let im = DenseArray::from_fn(&[frames, cfg.bins()], &mut next);
    ComplexSpec::from_planes(re, im, cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn anti_wrap_is_periodic_even_and_bounded(x in -50.0f64..50.0, k in -5i32..5) {
        let a = anti_wrap(x);
        prop_assert!((0.0..=PI + 1e-12).contains(&a));
        prop_assert!((anti_wrap(-x) - a).abs() < 1e-12);
        prop_assert!((anti_wrap(x + 2.0 * PI * k as f64) - a).abs() < 1e-9);
    }

    #[test]
    fn phase_losses_symmetric_and_non_negative(
        e in prop::collection::vec(-PI..PI, 30),
        r in prop::collection::vec(-PI..PI, 30),
    ) {
        let e = DenseArray::new(&[5, 6], e).unwrap();
        let r = DenseArray::new(&[5, 6], r).unwrap();
        let a = loss_phase(&e, &r).unwrap();
        let b = loss_phase(&r, &e).unwrap();
        prop_assert!(a.ip >= 0.0 && a.gd >= 0.0 && a.iaf >= 0.0);
        prop_assert!((a.pha - (a.ip + a.gd + a.iaf)).abs() < 1e-15);
        prop_assert!((a.ip - b.ip).abs() < 1e-12 && (a.gd - b.gd).abs() < 1e-12 && (a.iaf - b.iaf).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent(seed in any::<u64>(), frames in 4usize..12) {
        let cfg = StftConfig::new(16, 16, 4).unwrap();
        let spec = random_spec(seed, frames, cfg);
        let once = consistency_projection(&spec).unwrap();
        let twice = consistency_projection(&once).unwrap();
        prop_assert!(once.re.max_abs_diff(&twice.re) < 1e-10);
        prop_assert!(once.im.max_abs_diff(&twice.im) < 1e-10);
        prop_assert!(loss_consistency(&spec).unwrap() >= 0.0);
    }

    #[test]
    fn total_is_linear_in_terms(v in prop::collection::vec(0.0f64..10.0, 5), s in 0.0f64..4.0) {
        let mk = |scale: f64| {
            let mut t = LossTerms::uniform(0.0);
            t.ri = v[0] * scale;
            t.mag = v[1] * scale;
            t.phase.pha = v[2] * scale;
            t.con = v[3] * scale;
            t.g = v[4] * scale;
            t
        };
        let w = LossWeights::default();
        let base = total_loss(&mk(1.0), &w).total;
        prop_assert!((total_loss(&mk(s), &w).total - s * base).abs() < 1e-9);
    }
}
