use lifb::data::{batches, encode_idx, parse_idx, IdxArray};
use lifb::decouple::kappa_is_exact;
use lifb::neuron::{
    code, emit, lif_step, lifb_step, posneg_step, ChannelWeights, NeuronKind, NeuronParams, SpikeMode,
};
use lifb::train::kappa_update;
use lifb::Tensor;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = NeuronParams> {
    (1.1f64..8.0, -1.0f64..0.5, 0.05f64..2.0, 0.05f64..2.0, 0.05f64..1.0).prop_map(|(tau, v_rst, dth, dh, a)| {
        NeuronParams {
            tau,
            v_rst,
            v_th: v_rst + dth,
            v_h: v_rst + dth + dh,
            surrogate_width: a,
        }
    })
}

fn weights(kappa: f64) -> ChannelWeights {
    ChannelWeights {
        primary: 1.0,
        burst: kappa,
    }
}

proptest! {
    #[test]
    fn idx_round_trip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let data: Vec<u8> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
        let arr = IdxArray { magic: 0x800 + dims.len() as u32, dims, data };
        prop_assert_eq!(parse_idx(&encode_idx(&arr)).unwrap(), arr);
    }

    #[test]
    fn idx_truncation_is_rejected(dims in prop::collection::vec(1usize..5, 1..4), cut in 1usize..8) {
        let n: usize = dims.iter().product();
        let arr = IdxArray { magic: 0x800 + dims.len() as u32, dims, data: vec![7; n] };
        let bytes = encode_idx(&arr);
        let cut = cut.min(bytes.len());
        prop_assert!(parse_idx(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn lifb_emits_tri_state(p in params(), u in -5.0f64..5.0, kappa in -3.0f64..3.0) {
        let out = emit(NeuronKind::Lifb, &p, weights(kappa), u, SpikeMode::Hard);
        let expected = if u > p.v_h { kappa } else if u > p.v_th { 1.0 } else { 0.0 };
        prop_assert_eq!(out.s, expected);
        prop_assert_eq!(out.reset, u > p.v_th);
        let c = if u > p.v_h { code::BURST } else if u > p.v_th { code::REGULAR } else { code::REST };
        prop_assert_eq!(out.code, c);
    }

    #[test]
    fn unit_kappa_step_equals_lif(p in params(), v in prop::collection::vec(-2.0f64..2.0, 6), i in prop::collection::vec(-4.0f64..4.0, 6)) {
        let vt = Tensor::new(vec![2, 3], v).unwrap();
        let it = Tensor::new(vec![2, 3], i).unwrap();
        let (s1, v1) = lif_step(&vt, &it, &p).unwrap();
        let (s2, v2) = lifb_step(&vt, &it, &p, &[1.0; 3]).unwrap();
        prop_assert_eq!(s1.data(), s2.data());
        prop_assert_eq!(v1.data(), v2.data());
    }

    #[test]
    fn posneg_is_odd(tau in 1.1f64..8.0, v_th in 0.05f64..2.0, i in -4.0f64..4.0) {
        let p = NeuronParams { tau, v_th, v_rst: 0.0, v_h: v_th + 1.0, surrogate_width: 0.5 };
        let v = Tensor::zeros(&[1, 1]);
        let (sp, _) = posneg_step(&v, &Tensor::full(&[1, 1], i), &p).unwrap();
        let (sn, _) = posneg_step(&v, &Tensor::full(&[1, 1], -i), &p).unwrap();
        prop_assert_eq!(sp.data()[0], -sn.data()[0]);
        prop_assert!([-1.0, 0.0, 1.0].contains(&sp.data()[0]));
    }

    #[test]
    fn pair_equals_lifb_for_exact_kappa(p in params(), u in -5.0f64..5.0, kappa in 0.5f64..64.0) {
        prop_assert!(kappa_is_exact(kappa));
        let lifb = emit(NeuronKind::Lifb, &p, weights(kappa), u, SpikeMode::Hard);
        let w = ChannelWeights { primary: 1.0, burst: kappa - 1.0 };
        let pair = emit(NeuronKind::Pair, &p, w, u, SpikeMode::Hard);
        prop_assert_eq!(lifb.s, pair.s);
        prop_assert_eq!(lifb.reset, pair.reset);
        prop_assert_eq!(lifb.code, pair.code);
    }

    #[test]
    fn relaxed_emission_is_bounded(p in params(), u in -5.0f64..5.0, kappa in 0.0f64..3.0) {
        let s = emit(NeuronKind::Lifb, &p, weights(kappa), u, SpikeMode::Relaxed).s;
        prop_assert!(s >= 0.0f64.min(kappa) - 1e-12 && s <= 1.0f64.max(kappa) + 1e-12);
    }

    #[test]
    fn batches_partition_indices(len in 1usize..300, bs in 1usize..70, seed in any::<u64>(), epoch in 0u64..5) {
        let b = batches(len, bs, seed, epoch, true).unwrap();
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        prop_assert!(b.iter().all(|x| x.len() <= bs && !x.is_empty()));
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert_eq!(b, batches(len, bs, seed, epoch, true).unwrap());
    }

    #[test]
    fn kappa_rule_matches_closed_form(mu in 0.0f64..0.99, eps in 0.001f64..1.0, g in -2.0f64..2.0, steps in 1usize..30) {
        // With a constant gradient the velocity is a geometric series.
        let (mut k, mut d) = (vec![1.0], vec![0.0]);
        let mut expected_k = 1.0;
        for n in 1..=steps {
            kappa_update(&mut k, &mut d, &[g], mu, eps).unwrap();
            let vel = eps * g * (1.0 - mu.powi(n as i32)) / (1.0 - mu);
            prop_assert!((d[0] - vel).abs() <= 1e-9 * vel.abs().max(1.0));
            expected_k -= vel;
        }
        prop_assert!((k[0] - expected_k).abs() <= 1e-9 * expected_k.abs().max(1.0));
    }
}

#[test]
fn kappa_exactness_region() {
    // Below 0.5 the subtraction `κ - 1` loses low bits of κ.
    assert!(kappa_is_exact(0.5));
    assert!(!(0..1000).all(|i| kappa_is_exact(0.1 + i as f64 * 1e-4 + 1e-17)));
    assert!(kappa_is_exact(2f64.powi(52)));
}
