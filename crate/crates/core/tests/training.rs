//! Training behaviour on small problems with known answers.

use bridgelab::interpolant::{BridgeKind, ScheduleSpec};
use bridgelab::net::{Activation, BatchItem, RegressorParams};
use bridgelab::par::Execution;
use bridgelab::rng::{self, domain};
use bridgelab::toy::{self, Dataset};
use bridgelab::training::{
    draw_samples, far_endpoints, mean_outputs, nadb_training_step, train_bridge, train_mean_network, BridgeTrainer,
    TrainConfig, Variant,
};

fn nadb_config(steps: usize) -> TrainConfig {
    let mut c = TrainConfig::new(ScheduleSpec::nadb(0.4, 0.75).unwrap());
    c.steps = steps;
    c.lr = 1e-3;
    c.net.hidden = 32;
    c
}

fn mean_config(steps: usize, lr: f64) -> TrainConfig {
    let mut c = nadb_config(steps);
    c.lr = lr;
    c.net.time_embed_dim = 0;
    c
}

#[test]
fn mean_network_learns_gaussian_posterior_slope() {
    let data = toy::make_gauss_channel(1, 1.0).unwrap().sample(1, domain::DATA_TRAIN, 65_536);
    let mut cfg = mean_config(3000, 1e-3);
    cfg.batch_size = 512;
    let (m, log) = train_mean_network(&data, &cfg).unwrap();
    assert!(log.losses.last().unwrap() < &log.losses[0]);
    let mut worst: f64 = 0.0;
    for i in 0..=40 {
        let x1 = -2.0 + 0.1 * i as f64;
        let got = m.predict(&[x1], None).unwrap()[0];
        worst = worst.max((got - 0.5 * x1).abs());
    }
    assert!(worst < 0.05, "max |M(x1) − x1/2| = {worst}");
}

#[test]
fn identity_degradation_is_learned() {
    let data = toy::make_gauss_channel(2, 0.0).unwrap().sample(2, domain::DATA_TRAIN, 2048);
    let (m, _) = train_mean_network(&data, &mean_config(4000, 3e-3)).unwrap();
    let test = toy::make_gauss_channel(2, 0.0).unwrap().sample(2, domain::DATA_TEST, 512);
    let out = mean_outputs(&m, &test, Execution::Parallel).unwrap();
    // Inside the bulk of the training distribution.
    let mut se = 0.0;
    let mut n = 0usize;
    for i in 0..test.len() {
        if test.x1(i).iter().all(|v| v.abs() < 2.0) {
            for j in 0..2 {
                se += (out[2 * i + j] - test.x1(i)[j]).powi(2);
                n += 1;
            }
        }
    }
    let mse = se / n as f64;
    assert!(mse < 1e-4, "identity mse {mse}");
}

#[test]
fn single_pair_is_memorised() {
    let data = Dataset::new(3, vec![0.2, -0.4, 0.9], vec![1.0, 0.5, -0.5]).unwrap();
    let mut cfg = mean_config(1500, 1e-2);
    cfg.batch_size = 1;
    let (m, _) = train_mean_network(&data, &cfg).unwrap();
    let out = m.predict(data.x1(0), None).unwrap();
    for (a, b) in out.iter().zip(data.x0(0)) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn constant_pair_has_zero_target() {
    let spec = ScheduleSpec::nadb(0.4, 0.75).unwrap();
    let c: &[f64] = &[0.7];
    let mut r = rng::stream(1, 0);
    let samples = draw_samples(&spec, 1e-4, &[c], &[c], &[c], &mut r).unwrap();
    // The noise term is still present; with z = 0 the target vanishes.
    let b = bridgelab::interpolant::make_bridge_sample(&spec, samples[0].t, c, c, c, &[0.0]).unwrap();
    assert_eq!(b.yt, vec![0.0]);
    let net = RegressorParams::mlp(1, 8, 2, 4, Activation::Silu, &mut rng::stream(2, 0)).unwrap();
    let item = BatchItem {
        x: &b.xt,
        t: Some(b.t),
        target: &b.yt,
    };
    let loss = net.mse_batch(&[item], Execution::Sequential).unwrap().loss;
    let e = net.predict(&b.xt, Some(b.t)).unwrap()[0];
    assert!((loss - e * e).abs() < 1e-15);
}

#[test]
fn coupled_noise_in_every_sample() {
    let data = toy::make_2d_clusters(3).unwrap().sample(3, domain::DATA_TRAIN, 64);
    for kind in [BridgeKind::Nadb, BridgeKind::I2sb] {
        let spec = ScheduleSpec::nadb(0.4, 0.75).unwrap().with_kind(kind);
        let x0: Vec<&[f64]> = (0..64).map(|i| data.x0(i)).collect();
        let x1: Vec<&[f64]> = (0..64).map(|i| data.x1(i)).collect();
        let mut r = rng::stream(3, 1);
        for s in draw_samples(&spec, 1e-4, &x0, &x1, &x1, &mut r).unwrap() {
            let scale = spec.target_scale(s.t).unwrap();
            for i in 0..2 {
                let back = s.yt[i] * scale + s.x0[i];
                assert!((back - s.xt[i]).abs() <= 1e-10 * (1.0 + s.xt[i].abs()));
            }
        }
    }
}

#[test]
fn mean_network_stays_frozen() {
    let data = toy::make_gauss_channel(2, 0.5).unwrap().sample(4, domain::DATA_TRAIN, 256);
    let (mean, _) = train_mean_network(&data, &mean_config(50, 1e-3)).unwrap();
    let before = mean.to_bytes();
    train_bridge(&data, &nadb_config(100), Variant::Nadb, Some(&mean)).unwrap();
    let mut trainer = BridgeTrainer::new(2, &nadb_config(1)).unwrap();
    let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..8).map(|i| (data.x0(i).to_vec(), data.x1(i).to_vec())).collect();
    nadb_training_step(&mut trainer, Some(&mean), &batch, &nadb_config(1), &mut rng::stream(1, 1)).unwrap();
    assert_eq!(mean.to_bytes(), before);
}

#[test]
fn ablation_far_endpoints_are_definitional() {
    let data = toy::make_gauss_channel(2, 1.0).unwrap().sample(5, domain::DATA_TRAIN, 32);
    let (mean, _) = train_mean_network(&data, &mean_config(20, 1e-3)).unwrap();
    let m = mean_outputs(&mean, &data, Execution::Sequential).unwrap();
    let e = Execution::Sequential;
    assert_eq!(far_endpoints(Variant::NadbNoMean, Some(&mean), &data, e).unwrap(), data.x1);
    assert_eq!(far_endpoints(Variant::I2sb, None, &data, e).unwrap(), data.x1);
    assert_eq!(far_endpoints(Variant::Nadb, Some(&mean), &data, e).unwrap(), m);
    assert_eq!(far_endpoints(Variant::I2sbWithMean, Some(&mean), &data, e).unwrap(), m);
    assert_eq!(Variant::I2sbWithMean.kind(), BridgeKind::I2sb);
    assert_eq!(Variant::NadbNoMean.kind(), BridgeKind::Nadb);
}

#[test]
fn smoke_run_logs_every_step_and_is_seeded() {
    let data = toy::make_2d_clusters(4).unwrap().sample(6, domain::DATA_TRAIN, 512);
    let cfg = nadb_config(500);
    let (p1, log1) = train_bridge(&data, &cfg, Variant::NadbNoMean, None).unwrap();
    assert_eq!(log1.rows.len(), 500);
    assert!(log1.rows.iter().all(|r| r.loss.is_finite() && r.loss > 0.0));
    let mut seq = cfg.clone();
    seq.exec = Execution::Sequential;
    let (p2, log2) = train_bridge(&data, &seq, Variant::NadbNoMean, None).unwrap();
    assert_eq!(log1.final_loss().to_bits(), log2.final_loss().to_bits());
    assert_eq!(p1.to_bytes(), p2.to_bytes());
    let mut other = cfg.clone();
    other.seed = 1;
    let (_, log3) = train_bridge(&data, &other, Variant::NadbNoMean, None).unwrap();
    assert_ne!(log1.final_loss(), log3.final_loss());
}

#[test]
fn two_point_training_improves_every_bin() {
    let data = Dataset::new(1, vec![-1.0, 1.0], vec![-0.5, 0.5]).unwrap();
    for variant in [Variant::NadbNoMean, Variant::I2sb] {
        let mut cfg = nadb_config(5000);
        cfg.batch_size = 64;
        let (_, log) = train_bridge(&data, &cfg, variant, None).unwrap();
        let first = log.window_bin_means(0..250);
        let last = log.window_bin_means(4750..5000);
        for (b, (f, l)) in first.iter().zip(&last).enumerate() {
            let (f, l) = (f.unwrap(), l.unwrap());
            assert!(l < f, "{variant} bin {b}: {l} !< {f}");
        }
    }
}
