mod common;

use bitplan::distill::{bn_stat_loss, load_batch, normal_batch, save_batch, synthesize, DistillConfig};
use bitplan::model::{forward, BnStats, ForwardTrace};
use bitplan::{toy, Error};
use common::channel_mean_std;

fn closed_form_config() -> DistillConfig {
    // 32 samples of a (2, 1, 1) input: n = 32 values per channel, and both
    // the mean and std error contract by (1 - 2 lr / n) = 0.75 per step
    DistillConfig {
        batch: 32,
        steps: 500,
        learning_rate: 4.0,
        seed: 0,
    }
}

#[test]
fn loss_examples() {
    let model = toy::bn_passthrough(&[1.0], &[2.0], 1).unwrap();
    let trace = |mean: f64, std: f64| ForwardTrace {
        bn_stats: vec![BnStats { layer: 0, mean: vec![mean], std: vec![std] }],
        activations: None,
    };
    assert_eq!(bn_stat_loss(&trace(1.0, 2.0), &model).unwrap(), 0.0);
    assert!((bn_stat_loss(&trace(1.3, 2.0), &model).unwrap() - 0.09).abs() < 1e-12);
}

#[test]
fn multi_layer_loss_is_hand_sum() {
    let model = toy::three_layer_net(2).unwrap();
    let x = normal_batch(&model, 5, 9);
    let (_, trace) = forward(&model, &x, true).unwrap();
    let trace = trace.unwrap();
    let acts = trace.activations.as_ref().unwrap();
    let mut want = 0.0;
    for (i, layer) in model.layers().iter().enumerate() {
        if let bitplan::model::Layer::BatchNorm(bn) = layer {
            let (m, s) = channel_mean_std(&acts[i]);
            for c in 0..bn.channels {
                want += (m[c] - bn.running_mean[c]).powi(2) + (s[c] - bn.running_var[c].sqrt()).powi(2);
            }
        }
    }
    assert!((bn_stat_loss(&trace, &model).unwrap() - want).abs() < 1e-10);
}

#[test]
fn closed_form_fixture_follows_predicted_trajectory() {
    let (u, s) = ([0.5, -1.0], [2.0, 0.5]);
    let model = toy::bn_passthrough(&u, &s, 1).unwrap();
    let cfg = closed_form_config();
    let batch = synthesize(&model, &cfg).unwrap();

    let x0 = normal_batch(&model, cfg.batch, cfg.seed);
    let (m0, s0) = channel_mean_std(&x0);
    let r: f64 = 1.0 - 2.0 * cfg.learning_rate / cfg.batch as f64;
    for (t, loss) in batch.loss_history.iter().enumerate().take(20) {
        let k = r.powi(t as i32 + 1);
        let want: f64 = (0..2).map(|c| ((m0[c] - u[c]) * k).powi(2) + ((s0[c] - s[c]) * k).powi(2)).sum();
        assert!((loss - want).abs() <= 1e-9 * (1.0 + want), "step {t}: {loss} vs {want}");
    }

    assert!(batch.final_loss <= 1e-4);
    let (m, sd) = channel_mean_std(&batch.data);
    for c in 0..2 {
        assert!((m[c] - u[c]).abs() <= 1e-2 && (sd[c] - s[c]).abs() <= 1e-2);
    }
}

#[test]
fn final_loss_never_exceeds_first_on_fixtures() {
    let cases = [
        (toy::bn_passthrough(&[0.5, -1.0], &[2.0, 0.5], 2).unwrap(), DistillConfig { steps: 100, ..DistillConfig::default() }),
        (toy::three_layer_net(0).unwrap(), DistillConfig { steps: 100, ..DistillConfig::default() }),
        (toy::bundled_model().unwrap(), DistillConfig { steps: 60, batch: 8, ..DistillConfig::default() }),
    ];
    for (model, cfg) in cases {
        let b = synthesize(&model, &cfg).unwrap();
        assert_eq!(b.loss_history.len(), cfg.steps);
        assert_eq!(b.final_loss, *b.loss_history.last().unwrap());
        assert!(b.final_loss <= b.loss_history[0]);
        assert!(b.data.all_finite());
    }
}

#[test]
fn step_count_rules() {
    let model = toy::bn_passthrough(&[0.0], &[1.0], 2).unwrap();
    let zero = DistillConfig { steps: 0, ..DistillConfig::default() };
    assert!(matches!(synthesize(&model, &zero), Err(Error::Config { .. })));
    let one = DistillConfig { steps: 1, ..DistillConfig::default() };
    assert_eq!(synthesize(&model, &one).unwrap().loss_history.len(), 1);
}

#[test]
fn same_seed_gives_identical_batches() {
    let model = toy::three_layer_net(0).unwrap();
    let cfg = DistillConfig { steps: 20, ..DistillConfig::default() };
    let a = synthesize(&model, &cfg).unwrap();
    let b = synthesize(&model, &cfg).unwrap();
    assert_eq!(a, b);
    let c = synthesize(&model, &DistillConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.data, c.data);
}

#[test]
fn oversized_learning_rate_reports_divergence() {
    let model = toy::bn_passthrough(&[0.5], &[2.0], 1).unwrap();
    let cfg = DistillConfig { batch: 32, steps: 200, learning_rate: 100.0, seed: 0 };
    let err = synthesize(&model, &cfg).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }));
    assert!(err.to_string().contains("smaller learning rate"));
}

#[test]
fn model_without_batch_norm_is_unsupported() {
    let model = toy::decorrelation_pair(0).unwrap();
    assert!(matches!(synthesize(&model, &DistillConfig::default()), Err(Error::Unsupported(_))));
}

#[test]
fn batch_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy::three_layer_net(0).unwrap();
    let b = synthesize(&model, &DistillConfig { steps: 3, ..DistillConfig::default() }).unwrap();
    let path = dir.path().join("batch.json");
    save_batch(&b, &path).unwrap();
    let back = load_batch(&path).unwrap();
    assert_eq!(back.loss_history, b.loss_history);
    assert_eq!(back.data.shape(), b.data.shape());
    for (x, y) in back.data.data().iter().zip(b.data.data()) {
        assert_eq!(*x, *y as f32 as f64);
    }
}
