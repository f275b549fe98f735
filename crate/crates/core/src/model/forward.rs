use serde::{Deserialize, Serialize};

use super::{ops, Layer, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Observed statistics of the input to one BatchNorm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    /// Model-layer index of the BatchNorm.
    pub layer: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardTrace {
    /// One entry per BatchNorm layer, in layer order.
    pub bn_stats: Vec<BnStats>,
    /// Inputs to every layer followed by the model output, when requested.
    pub activations: Option<Vec<Tensor>>,
}

/// Per-call substitutions used by quantized and masked inference.
pub(crate) trait Hooks: Sync {
    fn weight<'a>(&'a self, _layer: usize, original: &'a Tensor) -> &'a Tensor {
        original
    }

    /// Replacement for the input of `layer`, if any.
    fn input(&self, _layer: usize, _x: &Tensor) -> Option<Tensor> {
        None
    }
}

pub(crate) struct NoHooks;

impl Hooks for NoHooks {}

pub(crate) struct RunOutput {
    pub logits: Tensor,
    /// `a[0] ..= a[L]`.
    pub activations: Vec<Tensor>,
    pub bn_stats: Vec<BnStats>,
}

pub(crate) fn run(
    model: &ModelGraph,
    batch: &Tensor,
    hooks: &dyn Hooks,
    record: bool,
) -> Result<RunOutput> {
    model.check_batch(batch)?;
    if !batch.all_finite() {
        return Err(Error::NumericFailure {
            layer: 0,
            what: "input batch contains non-finite values".into(),
        });
    }
    let n = batch.batch();
    let mut acts: Vec<Tensor> = Vec::with_capacity(model.layers().len() + 1);
    acts.push(batch.clone());
    let mut bn_stats = Vec::new();

    for (i, layer) in model.layers().iter().enumerate() {
        let raw = &acts[i];
        let substituted = hooks.input(i, raw);
        let x = substituted.as_ref().unwrap_or(raw);
        let y = match layer {
            Layer::Conv2d(conv) => ops::conv2d(x, conv, hooks.weight(i, &conv.weight)),
            Layer::BatchNorm(bn) => {
                if record {
                    let (mean, std) = ops::channel_stats(x);
                    bn_stats.push(BnStats { layer: i, mean, std });
                }
                Ok(ops::batch_norm(x, bn))
            }
            Layer::Relu => Ok(ops::relu(x)),
            Layer::AvgPool(p) => ops::avg_pool(x, p),
            Layer::Linear(l) => ops::linear(x, l, hooks.weight(i, &l.weight)),
            Layer::ResidualAdd { source } => ops::add(x, &acts[source + 1]),
        }
        .map_err(|e| e.at_layer(i))?;
        if !y.all_finite() {
            return Err(Error::NumericFailure {
                layer: i,
                what: format!("{} output is not finite", layer.kind()),
            });
        }
        acts.push(y);
    }

    let logits = acts
        .last()
        .cloned()
        .expect("model has at least one layer")
        .reshape(vec![n, model.class_count()])?;
    Ok(RunOutput {
        logits,
        activations: acts,
        bn_stats,
    })
}

/// Full-precision forward pass. Returns logits `(N, class_count)` and, when
/// `record` is set, the BatchNorm input statistics of this batch.
pub fn forward(
    model: &ModelGraph,
    batch: &Tensor,
    record: bool,
) -> Result<(Tensor, Option<ForwardTrace>)> {
    let out = run(model, batch, &NoHooks, record)?;
    let trace = record.then_some(ForwardTrace {
        bn_stats: out.bn_stats,
        activations: Some(out.activations),
    });
    Ok((out.logits, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BatchNorm, Conv2d, Linear};

    #[test]
    fn identity_conv_passes_input_through() {
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let conv = Conv2d::new(1, 1, (1, 1), 1, 0, w, None).unwrap();
        let m = ModelGraph::new(vec![Layer::Conv2d(conv)], vec![1, 2, 2], 4).unwrap();
        let x = Tensor::from_fn(vec![2, 1, 2, 2], |i| i as f64 - 3.5);
        let (logits, _) = forward(&m, &x, false).unwrap();
        assert_eq!(logits.data(), x.data());
        assert_eq!(logits.shape(), &[2, 4]);
    }

    #[test]
    fn identity_batch_norm_passes_input_through() {
        let m = ModelGraph::new(vec![Layer::BatchNorm(BatchNorm::identity(3))], vec![3], 3).unwrap();
        let x = Tensor::from_fn(vec![4, 3], |i| (i as f64).cos());
        let (logits, trace) = forward(&m, &x, true).unwrap();
        assert_eq!(logits.data(), x.data());
        assert_eq!(trace.unwrap().bn_stats.len(), 1);
    }

    #[test]
    fn wrong_batch_shape_is_rejected() {
        let m = ModelGraph::new(vec![Layer::Relu], vec![3], 3).unwrap();
        assert!(matches!(
            forward(&m, &Tensor::zeros(vec![2, 4]), false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn overflow_reports_layer_index() {
        let w = Tensor::full(vec![1, 1], 1e308);
        let l = Linear::new(1, 1, w, None).unwrap();
        let m = ModelGraph::new(
            vec![Layer::Relu, Layer::Linear(l.clone()), Layer::Linear(l)],
            vec![1],
            1,
        )
        .unwrap();
        let x = Tensor::full(vec![1, 1], 10.0);
        match forward(&m, &x, false) {
            Err(Error::NumericFailure { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }
}
