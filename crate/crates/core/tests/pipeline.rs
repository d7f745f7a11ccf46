use std::collections::HashMap;

use sonic_core::gradients::Model;
use sonic_core::grid::FrequencyGrid;
use sonic_core::operator::{
    assemble_symbol, network_forward, network_from_json, network_to_json, NetworkConfig, SonicNetwork,
};
use sonic_core::oracle::run_suite;
use sonic_core::tasks::TaskKind;
use sonic_core::train::{evaluate, train, Dataset, Preprocess, Standardize, TaskSpec, TrainConfig};

fn small_net(out: usize) -> SonicNetwork {
    let cfg = NetworkConfig {
        in_channels: 3,
        width: 4,
        modes: 3,
        depth: 2,
        out_channels: out,
        dim: 2,
        gain_normalize: true,
        mode_dropout_rate: 0.0,
    };
    SonicNetwork::init(&cfg, 3).unwrap()
}

#[test]
fn every_oracle_check_holds() {
    for c in run_suite() {
        assert!(c.passed, "{c}");
    }
}

#[test]
fn saved_networks_reload_exactly() {
    let net = small_net(6);
    let back = network_from_json(&network_to_json(&net).unwrap()).unwrap();
    assert_eq!(net.params(), back.params());
    let mut pre = Preprocess::new(Standardize::Dataset);
    let data = Dataset::generate(&TaskSpec::with_total(TaskKind::SynthShape, 16, 10), 1, &mut pre).unwrap();
    let x = &data.train[0].image;
    assert_eq!(network_forward(&net, x).unwrap(), network_forward(&back, x).unwrap());
}

#[test]
fn symbols_on_two_resolutions_share_bins_bitwise() {
    let net = small_net(6);
    let coarse = FrequencyGrid::unit_extent(&[16, 16]).unwrap();
    let fine = FrequencyGrid::unit_extent(&[32, 32]).unwrap();
    let key = |g: &FrequencyGrid, n: usize| {
        let mut w = [0.0; 2];
        g.half_frequency(n, &mut w);
        (w[0].to_bits(), w[1].to_bits())
    };
    for block in &net.blocks {
        let mut a = block.clone();
        a.gain_normalize = false;
        let (sc, sf) = (assemble_symbol(&a, &coarse).unwrap(), assemble_symbol(&a, &fine).unwrap());
        let index: HashMap<_, _> = (0..fine.half_len()).map(|n| (key(&fine, n), n)).collect();
        let mut shared = 0;
        for n in 0..coarse.half_len() {
            if let Some(&m) = index.get(&key(&coarse, n)) {
                shared += 1;
                for k in 0..sc.outputs() {
                    for c in 0..sc.inputs() {
                        assert_eq!(sc.get(k, c, n), sf.get(k, c, m));
                    }
                }
            }
        }
        // the coarse Nyquist column has no sign-consistent partner
        assert_eq!(shared, coarse.half_len() - 16);
    }
}

#[test]
fn short_training_is_reproducible_and_learns() {
    let spec = TaskSpec::with_total(TaskKind::SynthShape, 16, 60);
    let cfg = TrainConfig { epochs: 4, batch_size: 8, class_weight_samples: 32, ..TrainConfig::default() };
    let loss = cfg.loss_for(TaskKind::SynthShape, 16).unwrap();
    let run = || {
        let mut pre = Preprocess::new(Standardize::Dataset);
        let data = Dataset::generate(&spec, 2, &mut pre).unwrap();
        let before = evaluate(&small_net(6), &data.val, &loss).unwrap();
        let out = train(small_net(6), &data, &loss, &cfg, |_, _| {}).unwrap();
        (before, out)
    };
    let (before, a) = run();
    let (_, b) = run();
    assert_eq!(a.best.params(), b.best.params());
    assert_eq!(a.log, b.log);
    assert!(a.best_metrics.loss < before.loss, "{} vs {}", a.best_metrics.loss, before.loss);
}
