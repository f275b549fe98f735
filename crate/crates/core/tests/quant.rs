mod common;

use bitplan::model::{forward, BatchNorm, Conv2d, Layer, ModelGraph};
use bitplan::quant::{
    calibrate_minmax, dequantize, fake_quantize, layer_size_bits, model_size, quantize, quantize_model,
    quantized_forward, BitConfig, QuantParams, FIXED_PARAM_BITS,
};
use bitplan::{toy, Tensor};
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn calibration_examples() {
    let p = calibrate_minmax(&[-1.0, 0.3, 1.0], 8, true).unwrap();
    assert!((p.scale - 1.0 / 127.0).abs() < 1e-15);
    assert_eq!(p.zero_point, 0);

    let p = calibrate_minmax(&[0.0, 1.0, 2.55], 8, false).unwrap();
    assert!((p.scale - 0.01).abs() < 1e-12);
    // min maps to the range floor
    assert_eq!(p.quantize_value(0.0), -128);
    assert_eq!(p.quantize_value(2.55), 127);

    let c = Tensor::full(vec![5], 0.7);
    let p = calibrate_minmax(c.data(), 8, false).unwrap();
    assert_eq!(p.scale, 1.0);
    let back = fake_quantize(&c, &p);
    assert!(back.data().windows(2).all(|w| w[0] == w[1]));
    assert!(back.data().iter().all(|v| (v - 0.7).abs() <= 0.5));
}

#[test]
fn calibration_rejects_empty_and_non_finite() {
    assert!(calibrate_minmax(&[], 8, true).is_err());
    assert!(calibrate_minmax(&[1.0, f64::NAN], 8, false).is_err());
}

#[test]
fn quantize_examples_match_reference() {
    let p = QuantParams::new(0.1, 0, 8, true).unwrap();
    let q = quantize(&Tensor::new(vec![1], vec![0.23]).unwrap(), &p).unwrap();
    assert_eq!(q.data(), [2]);
    assert!((dequantize(&q, &p).data()[0] - 0.2).abs() < 1e-15);

    let p4 = QuantParams::new(0.1, 0, 4, true).unwrap();
    assert_eq!(quantize(&Tensor::new(vec![1], vec![1.0]).unwrap(), &p4).unwrap().data(), [7]);

    let mut r = rng(3);
    for _ in 0..2000 {
        let bits = if r.random_bool(0.5) { 4 } else { 8 };
        let scale = r.random_range(0.01..1.0);
        let zero = r.random_range(-20..20);
        let x = r.random_range(-50.0..50.0);
        let p = QuantParams::new(scale, zero, bits, false).unwrap();
        assert_eq!(p.quantize_value(x) as i64, ref_quantize(x, scale, zero as i64, bits as u32));
    }
}

fn in_range_values(p: &QuantParams, n: usize, seed: u64) -> Vec<f64> {
    let (lo, hi) = p.representable_range();
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(lo..=hi)).collect()
}

proptest! {
    #[test]
    fn round_trip_is_within_half_step(
        lo in -10.0f64..0.0, span in 0.01f64..20.0, bits in prop::sample::select(vec![4u8, 8]),
        symmetric: bool, seed in 0u64..1000,
    ) {
        let p = calibrate_minmax(&[lo, lo + span], bits, symmetric).unwrap();
        for x in in_range_values(&p, 200, seed) {
            prop_assert!((p.fake_quant_value(x) - x).abs() <= p.scale / 2.0);
        }
    }

    #[test]
    fn dequantize_quantize_is_idempotent(values in prop::collection::vec(-5.0f64..5.0, 1..64), symmetric: bool) {
        let t = Tensor::new(vec![values.len()], values.clone()).unwrap();
        let p = calibrate_minmax(&values, 4, symmetric).unwrap();
        let once = fake_quantize(&t, &p);
        let twice = fake_quantize(&once, &p);
        prop_assert_eq!(twice.data(), once.data());
    }
}

#[test]
fn eight_bit_weight_error_is_below_four_bit_per_layer() {
    let model = toy::bundled_model().unwrap();
    for w in weights(&model) {
        let errors = |bits: u8| {
            let p = calibrate_minmax(w.data(), bits, true).unwrap();
            let e: Vec<f64> = w.data().iter().map(|&x| (p.fake_quant_value(x) - x).abs()).collect();
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            (mean, e.into_iter().fold(0.0, f64::max))
        };
        let (mean8, max8) = errors(8);
        let (mean4, max4) = errors(4);
        assert!(mean8 <= mean4 && max8 <= max4);
    }
}

#[test]
fn eight_bit_agrees_with_full_precision_at_least_as_often_as_four_bit() {
    let model = toy::bundled_model().unwrap();
    let calib = toy::bundled_eval_set(32, 77).inputs;
    let data = toy::bundled_eval_set(200, 78).inputs;
    let (fp, _) = forward(&model, &data, false).unwrap();
    let reference = fp.argmax_rows();
    let agreement = |bits: u8| {
        let q = quantize_model(&model, &BitConfig::uniform(4, bits), &calib).unwrap();
        let pred = quantized_forward(&q, &data).unwrap().argmax_rows();
        pred.iter().zip(&reference).filter(|(a, b)| a == b).count()
    };
    assert!(agreement(8) >= agreement(4));
}

#[test]
fn wrong_length_config_is_rejected() {
    let model = toy::bundled_model().unwrap();
    let calib = toy::bundled_eval_set(4, 1).inputs;
    assert!(quantize_model(&model, &BitConfig::uniform(3, 8), &calib).is_err());
    assert!(quantize_model(&model, &BitConfig::uniform(4, 6), &calib).is_err());
}

#[test]
fn representable_identity_conv_is_lossless() {
    // weights {-7..7}/7 sit exactly on the 4-bit symmetric grid
    let w = Tensor::new(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let conv = Conv2d::new(2, 2, (1, 1), 1, 0, w, None).unwrap();
    let model = ModelGraph::new(vec![Layer::Conv2d(conv)], vec![2, 1, 1], 2).unwrap();
    let x = Tensor::new(vec![2, 2, 1, 1], vec![0.5, -1.0, 1.0, 0.25]).unwrap();
    let bits = BitConfig::with_pinned_activations(&[4], 32);
    let q = quantize_model(&model, &bits, &x).unwrap();
    assert_eq!(quantized_forward(&q, &x).unwrap().data(), forward(&model, &x, false).unwrap().0.data());
}

#[test]
fn full_precision_config_is_bitwise_forward() {
    let model = toy::bundled_model().unwrap();
    let x = toy::bundled_eval_set(8, 5).inputs;
    let q = quantize_model(&model, &BitConfig::uniform(4, 32), &x).unwrap();
    assert_eq!(quantized_forward(&q, &x).unwrap().data(), forward(&model, &x, false).unwrap().0.data());
}

#[test]
fn constant_input_conv_bn_net_stays_within_propagated_bound() {
    // 1x1 conv (weight w) -> BN; a constant input c gives
    // out = gamma * (w * c - u) / sqrt(var) + beta. Quantizing the input
    // moves c by at most S_a / 2 and the weight by at most S_w / 2.
    let (w, c, u, var, gamma, beta) = (0.83, 1.37, 0.2, 2.25, 1.5, -0.1);
    let conv = Conv2d::new(1, 1, (1, 1), 1, 0, Tensor::new(vec![1, 1, 1, 1], vec![w]).unwrap(), None).unwrap();
    let bn = BatchNorm::new(vec![u], vec![var], vec![gamma], vec![beta], 0.0).unwrap();
    let model = ModelGraph::new(vec![Layer::Conv2d(conv), Layer::BatchNorm(bn)], vec![1, 2, 2], 4).unwrap();
    let x = Tensor::full(vec![3, 1, 2, 2], c);
    for bits in [4u8, 8] {
        let q = quantize_model(&model, &BitConfig::uniform(1, bits), &x).unwrap();
        let sa = q.layers()[0].activation_params.unwrap().scale;
        let sw = q.layers()[0].weight_params.unwrap().scale;
        let (dc, dw) = (sa / 2.0, sw / 2.0);
        let bound = gamma / var.sqrt() * ((w.abs() + dw) * dc + c.abs() * dw);
        let got = quantized_forward(&q, &x).unwrap();
        let want = forward(&model, &x, false).unwrap().0;
        assert!(got.max_abs_diff(&want).unwrap() <= bound + 1e-12, "{bits}-bit");
    }
}

#[test]
fn model_size_examples() {
    assert_eq!(layer_size_bits(1000, 8), 8000);
    let model = toy::bundled_model().unwrap();
    let s4 = model_size(&model, &BitConfig::uniform(4, 4)).unwrap();
    let s8 = model_size(&model, &BitConfig::uniform(4, 8)).unwrap();
    assert_eq!(s8.weight_bits, 2 * s4.weight_bits);
    assert_eq!(s4.fixed_bits, s8.fixed_bits);
}

#[test]
fn mixed_plan_size_matches_hand_count() {
    // conv 1->2 3x3 (18), conv 2->3 3x3 (54), linear 12->4 (48 + 4 bias);
    // BN 2 and 3 channels hold 4 vectors each
    let model = toy::three_layer_net(0).unwrap();
    let s = model_size(&model, &BitConfig::from_plan(&[8, 4, 4])).unwrap();
    assert_eq!(s.weight_bits, 18 * 8 + 54 * 4 + 48 * 4);
    assert_eq!(s.fixed_bits, (4 + 4 * 2 + 4 * 3) * FIXED_PARAM_BITS);
    let s4 = model_size(&model, &BitConfig::uniform(3, 4)).unwrap();
    let s8 = model_size(&model, &BitConfig::uniform(3, 8)).unwrap();
    assert!(s4.total_bits() <= s.total_bits() && s.total_bits() <= s8.total_bits());
}

#[test]
fn quantized_model_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy::bundled_model().unwrap();
    let x = toy::bundled_eval_set(16, 2).inputs;
    let q = quantize_model(&model, &BitConfig::from_plan(&[8, 4, 4, 8]), &x).unwrap();
    let path = dir.path().join("q.json");
    bitplan::quant::save_quantized(&q, &path).unwrap();
    let back = bitplan::quant::load_quantized(&path, model).unwrap();
    assert_eq!(back, q);
}
