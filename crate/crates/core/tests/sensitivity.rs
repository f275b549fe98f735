mod common;

use bitplan::distill::normal_batch;
use bitplan::model::{forward, Layer, Linear, ModelGraph};
use bitplan::quant::{quantize_model, quantized_forward, BitConfig, QuantizedModel};
use bitplan::sensitivity::{
    kl_divergence, mask_weights, masked_forward, mean_kl, mqe_sensitivity, naive_sensitivity, rank_correlation,
    softmax_rows, MaskSpec,
};
use bitplan::{toy, IntTensor, Tensor};
use common::*;
use proptest::prelude::*;

#[test]
fn mask_examples() {
    let w = IntTensor::new(vec![10], (1..=10).collect()).unwrap();
    let spec = |alpha| MaskSpec { alpha, seed: 3, layer: 0 };
    assert_eq!(mask_weights(&w, &spec(0.0)).unwrap(), w);
    assert!(mask_weights(&w, &spec(1.0)).unwrap().data().iter().all(|&v| v == 0));
    let half = mask_weights(&w, &spec(0.5)).unwrap();
    assert_eq!(half.data().iter().filter(|&&v| v == 0).count(), 5);
    assert_eq!(mask_weights(&w, &spec(0.5)).unwrap(), half);
    // untouched positions keep their values
    assert!(half.data().iter().zip(w.data()).all(|(m, o)| *m == 0 || m == o));
    assert!(mask_weights(&w, &spec(1.5)).is_err());
    // different layers draw different positions
    let other = mask_weights(&w, &MaskSpec { alpha: 0.5, seed: 3, layer: 1 }).unwrap();
    assert_ne!(other, half);
}

#[test]
fn kl_examples() {
    assert_eq!(kl_divergence(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(), 0.0);
    assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    assert!(kl_divergence(&[0.7, 0.7], &[0.5, 0.5]).is_err());
}

proptest! {
    #[test]
    fn kl_is_non_negative(a in prop::collection::vec(0.0f64..1.0, 5), b in prop::collection::vec(0.0f64..1.0, 5)) {
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            v.iter().map(|x| (x + 1e-9 / 5.0) / s).collect::<Vec<_>>()
        };
        let (p, q) = (norm(&a), norm(&b));
        let d = kl_divergence(&p, &q).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - ref_kl(&p, &q)).abs() <= 1e-9 * (1.0 + d));
    }
}

fn fixture() -> (ModelGraph, Tensor) {
    let model = toy::three_layer_net(0).unwrap();
    let batch = normal_batch(&model, 8, 42);
    (model, batch)
}

struct Fq {
    scale: f64,
    zero: i64,
}

impl Fq {
    fn activation(values: &[f64]) -> Self {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = (hi - lo) / 255.0;
        let r = lo / scale;
        let rounded = if r >= 0.0 { (r + 0.5).floor() } else { -((-r + 0.5).floor()) };
        Self { scale, zero: rounded as i64 + 128 }
    }

    fn apply(&self, x: f64) -> f64 {
        self.scale * (ref_quantize(x, self.scale, self.zero, 8) + self.zero) as f64
    }
}

/// Straight-line forward of `three_layer_net`, optionally fake-quantizing
/// the input of each weighted layer. Returns logits and the weighted-layer
/// inputs it saw.
fn oracle_forward(model: &ModelGraph, w: &[Tensor], x: &Tensor, act: Option<&[Fq]>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = x.batch();
    let mut seen = Vec::new();
    let mut quant = |k: usize, t: Tensor| -> Tensor {
        seen.push(t.data().to_vec());
        match act {
            Some(a) => t.map(|v| a[k].apply(v)),
            None => t,
        }
    };
    let bn = |i: usize, t: &Tensor| -> Tensor {
        let Layer::BatchNorm(b) = &model.layers()[i] else { unreachable!() };
        let shape = t.shape().to_vec();
        let (c, sp) = (shape[1], shape[2] * shape[3]);
        Tensor::from_fn(shape, |idx| {
            let ch = idx / sp % c;
            let v = t.data()[idx];
            b.gamma[ch] * (v - b.running_mean[ch]) / (b.running_var[ch] + b.eps).sqrt() + b.beta[ch]
        })
    };
    let relu = |t: Tensor| t.map(|v| v.max(0.0));
    let conv = |i: usize, t: &Tensor, weight: &Tensor| -> Tensor {
        let Layer::Conv2d(c) = &model.layers()[i] else { unreachable!() };
        let mut c = c.clone();
        c.weight = weight.clone();
        let out = direct_conv(t, &c);
        let (h, wd) = (t.shape()[2] + 2 * c.padding - c.kernel.0 + 1, t.shape()[3] + 2 * c.padding - c.kernel.1 + 1);
        Tensor::new(vec![n, c.out_channels, h, wd], out).unwrap()
    };

    let a0 = quant(0, x.clone());
    let h = relu(bn(1, &conv(0, &a0, &w[0])));
    let a1 = quant(1, h);
    let h = relu(bn(4, &conv(3, &a1, &w[1])));
    // 2x2 average pool over (3, 4, 4) -> (3, 2, 2), flattened
    let mut pooled = vec![0.0; n * 12];
    for b in 0..n {
        for c in 0..3 {
            for y in 0..2 {
                for xx in 0..2 {
                    let mut s = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s += h.data()[((b * 3 + c) * 4 + 2 * y + dy) * 4 + 2 * xx + dx];
                        }
                    }
                    pooled[b * 12 + (c * 2 + y) * 2 + xx] = s / 4.0;
                }
            }
        }
    }
    let a2 = quant(2, Tensor::new(vec![n, 12], pooled).unwrap());
    let Layer::Linear(lin) = &model.layers()[7] else { unreachable!() };
    let bias = lin.bias.clone().unwrap();
    let logits = (0..n)
        .map(|b| {
            (0..4)
                .map(|o| bias[o] + (0..12).map(|i| w[2].data()[o * 12 + i] * a2.data()[b * 12 + i]).sum::<f64>())
                .collect()
        })
        .collect();
    (logits, seen)
}

fn symmetric_8bit(w: &Tensor) -> (f64, Vec<i32>) {
    let amax = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = amax / 127.0;
    (scale, w.data().iter().map(|&v| ref_quantize(v, scale, 0, 8) as i32).collect())
}

#[test]
fn mqe_matches_straight_line_oracle() {
    let (model, batch) = fixture();
    let (alpha, seed) = (0.5, 0);
    let report = mqe_sensitivity(&model, &batch, alpha, seed).unwrap();

    let original = weights(&model);
    let (_, fp_inputs) = oracle_forward(&model, &original, &batch, None);
    let act: Vec<Fq> = fp_inputs.iter().map(|v| Fq::activation(v)).collect();
    let quantized: Vec<(f64, Vec<i32>)> = original.iter().map(symmetric_8bit).collect();
    let deq = |k: usize, ints: &[i32]| {
        Tensor::new(original[k].shape().to_vec(), ints.iter().map(|&q| quantized[k].0 * q as f64).collect()).unwrap()
    };
    let base: Vec<Tensor> = (0..3).map(|k| deq(k, &quantized[k].1)).collect();
    let (ref_logits, _) = oracle_forward(&model, &base, &batch, Some(&act));
    let ref_p: Vec<Vec<f64>> = ref_logits.iter().map(|r| ref_softmax(r)).collect();

    for k in 0..3 {
        let ints = IntTensor::new(original[k].shape().to_vec(), quantized[k].1.clone()).unwrap();
        let masked = mask_weights(&ints, &MaskSpec { alpha, seed, layer: k }).unwrap();
        let expected_zeros = (alpha * ints.len() as f64).round() as usize;
        let newly_zero = masked.data().iter().zip(ints.data()).filter(|(m, o)| **m == 0 && **o != 0).count();
        assert!(newly_zero <= expected_zeros);
        let mut w = base.clone();
        w[k] = deq(k, masked.data());
        let (logits, _) = oracle_forward(&model, &w, &batch, Some(&act));
        let omega = ref_p
            .iter()
            .zip(&logits)
            .map(|(p, l)| ref_kl(p, &ref_softmax(l)))
            .sum::<f64>()
            / batch.batch() as f64;
        assert!((report.omega[k] - omega).abs() <= 1e-6, "layer {k}: {} vs {omega}", report.omega[k]);
    }
}

#[test]
fn alpha_zero_gives_zero_sensitivity() {
    let (model, batch) = fixture();
    assert!(mqe_sensitivity(&model, &batch, 0.0, 5).unwrap().omega.iter().all(|&w| w == 0.0));
}

#[test]
fn sensitivities_are_finite_non_negative_and_reproducible() {
    let (model, batch) = fixture();
    let a = mqe_sensitivity(&model, &batch, 0.5, 11).unwrap();
    let b = mqe_sensitivity(&model, &batch, 0.5, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.omega.len(), 3);
    assert!(a.omega.iter().all(|w| w.is_finite() && *w >= 0.0));
    assert_eq!((a.alpha, a.seed, a.batch_size), (Some(0.5), Some(11), 8));
}

#[test]
fn duplicating_the_batch_leaves_sensitivity_unchanged() {
    let (model, batch) = fixture();
    let mut data = batch.data().to_vec();
    data.extend_from_slice(batch.data());
    let mut shape = batch.shape().to_vec();
    shape[0] *= 2;
    let doubled = Tensor::new(shape, data).unwrap();
    let a = mqe_sensitivity(&model, &batch, 0.5, 0).unwrap();
    let b = mqe_sensitivity(&model, &doubled, 0.5, 0).unwrap();
    for (x, y) in a.omega.iter().zip(&b.omega) {
        assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    }
}

#[test]
fn masking_one_layer_leaves_the_others_alone() {
    let (model, batch) = fixture();
    let q = quantize_model(&model, &BitConfig::uniform(3, 8), &batch).unwrap();
    let before = q.clone();
    for k in 0..3 {
        let spec = MaskSpec { alpha: 0.5, seed: 1, layer: k };
        let got = masked_forward(&q, &batch, &spec).unwrap();
        let parts = q
            .layers()
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let ints = l.weights.clone().map(|w| if j == k { mask_weights(&w, &spec).unwrap() } else { w });
                (l.weight_params, l.activation_params, ints)
            })
            .collect();
        let rebuilt = QuantizedModel::from_parts(model.clone(), parts).unwrap();
        assert_eq!(got.data(), quantized_forward(&rebuilt, &batch).unwrap().data());
    }
    assert_eq!(q, before);
}

#[test]
fn counters_show_one_quantization_for_mqe_and_l_for_naive() {
    let model = toy::bundled_model().unwrap();
    let batch = toy::bundled_eval_set(8, 4).inputs;
    let l = model.quantizable_layers().len();
    let mqe = mqe_sensitivity(&model, &batch, 0.5, 0).unwrap();
    assert_eq!((mqe.stats.quantizations, mqe.stats.mask_operations), (1, l));
    assert_eq!(mqe.stats.forward_passes, l + 1);
    let naive = naive_sensitivity(&model, &batch, 8).unwrap();
    assert_eq!((naive.stats.quantizations, naive.stats.mask_operations), (l, 0));
}

#[test]
fn naive_at_full_precision_is_zero() {
    let (model, batch) = fixture();
    assert!(naive_sensitivity(&model, &batch, 32).unwrap().omega.iter().all(|&w| w == 0.0));
}

#[test]
fn naive_on_single_layer_model_is_whole_model_divergence() {
    let w = random_tensor(vec![4, 12], 3);
    let model = ModelGraph::new(vec![Layer::Linear(Linear::new(12, 4, w, None).unwrap())], vec![12], 4).unwrap();
    let batch = random_tensor(vec![6, 12], 4);
    let report = naive_sensitivity(&model, &batch, 4).unwrap();
    assert_eq!(report.omega.len(), 1);
    let q = quantize_model(&model, &BitConfig::uniform(1, 4), &batch).unwrap();
    let fp = softmax_rows(&forward(&model, &batch, false).unwrap().0);
    let want = mean_kl(&fp, &softmax_rows(&quantized_forward(&q, &batch).unwrap())).unwrap();
    assert_eq!(report.omega[0], want);
}

#[test]
fn mqe_and_naive_rankings_on_the_toy_cnn() {
    let model = toy::bundled_model().unwrap();
    let batch = toy::bundled_eval_set(16, 8).inputs;
    let mqe = mqe_sensitivity(&model, &batch, 0.5, 0).unwrap();
    let naive = naive_sensitivity(&model, &batch, 4).unwrap();
    let rho = rank_correlation(&mqe.omega, &naive.omega);
    println!("mqe   {:?}", mqe.omega);
    println!("naive {:?}", naive.omega);
    println!("spearman rank correlation: {rho:.3}");
    assert!((-1.0..=1.0).contains(&rho));
}
