use lifb::checkpoint::Checkpoint;
use lifb::data::{random_inputs, synth_bars_sized};
use lifb::decouple::{decouple_network, verify_equivalence};
use lifb::graph::{Arch, ForwardOptions};
use lifb::neuron::{NeuronKind, NeuronParams};
use lifb::train::{train, TrainConfig, Variant};

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn decoupled_cnn_is_exact_after_training() {
    let ds = synth_bars_sized(96, 8, 3).unwrap();
    let shape = ds.sample_shape().to_vec();
    let mut net = Variant::Lifb
        .build_with_seed(Arch::CnnSmall, &shape, ds.classes, 2, NeuronParams::default(), 1)
        .unwrap();
    train(&mut net, &ds, None, &config(2)).unwrap();
    let (dec, report) = decouple_network(&net).unwrap();
    assert!(report.inexact_channels.is_empty());
    assert!(!report.converted_layers.is_empty());
    let x = random_inputs(8, &shape, 4).unwrap();
    for t in [1, 3, 5] {
        let r = verify_equivalence(&net, &dec, &x, t).unwrap();
        assert!(r.passed && r.max_logit_deviation == 0.0, "T={t}: {}", r.max_logit_deviation);
    }
    for (l, kind) in dec.spec().neuron_layers() {
        assert_eq!(kind, NeuronKind::Pair, "layer {l}");
    }
}

#[test]
fn decoupling_a_lif_network_changes_nothing() {
    let net = Variant::Lif
        .build_with_seed(Arch::Mlp { hidden: 8 }, &[6], 3, 2, NeuronParams::default(), 2)
        .unwrap();
    let (dec, report) = decouple_network(&net).unwrap();
    assert!(report.converted_layers.is_empty());
    let x = random_inputs(4, &[6], 1).unwrap();
    assert_eq!(verify_equivalence(&net, &dec, &x, 2).unwrap().max_logit_deviation, 0.0);
}

#[test]
fn unit_kappa_network_trains_like_lif() {
    // Fixed κ = 1 carries no parameter, so the whole trajectory coincides.
    let ds = synth_bars_sized(64, 8, 5).unwrap();
    let shape = ds.sample_shape().to_vec();
    let p = NeuronParams::default();
    let mut lif = Variant::Lif.build_with_seed(Arch::Mlp { hidden: 16 }, &shape, ds.classes, 3, p, 7).unwrap();
    let mut one = Variant::LifbFixed(1.0)
        .build_with_seed(Arch::Mlp { hidden: 16 }, &shape, ds.classes, 3, p, 7)
        .unwrap();
    train(&mut lif, &ds, None, &config(2)).unwrap();
    train(&mut one, &ds, None, &config(2)).unwrap();
    let x = random_inputs(8, &shape, 8).unwrap();
    let a = lif.forward(&x, ForwardOptions::inference()).unwrap().logits;
    let b = one.forward(&x, ForwardOptions::inference()).unwrap().logits;
    assert_eq!(a.data(), b.data());
}

#[test]
fn checkpoint_round_trip_preserves_forward() {
    let shape = [1, 16, 16];
    let mut net = Variant::Lifb
        .build_with_seed(Arch::Snn6Small, &shape, 10, 2, NeuronParams::default(), 3)
        .unwrap();
    let x = random_inputs(3, &shape, 2).unwrap();
    let before = net.forward(&x, ForwardOptions::inference()).unwrap().logits;
    let bytes = Checkpoint::from_network(&net, None).encode().unwrap();
    let mut back = Checkpoint::decode(&bytes).unwrap().network().unwrap();
    let after = back.forward(&x, ForwardOptions::inference()).unwrap().logits;
    assert_eq!(before.data(), after.data());
}
