//! Input-gradient backpropagation for the BatchNorm-statistic loss.
//!
//! Weights are never differentiated; only `d loss / d input` is produced.

use super::forward::{run, NoHooks};
use super::{ops, Layer, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Target `(mean, std)` per BatchNorm layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct BnTarget {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BnTarget {
    /// Stored running statistics of every BatchNorm layer in `model`.
    pub fn from_model(model: &ModelGraph) -> Vec<BnTarget> {
        model
            .layers()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::BatchNorm(bn) => Some(BnTarget {
                    layer: i,
                    mean: bn.running_mean.clone(),
                    std: bn.running_std(),
                }),
                _ => None,
            })
            .collect()
    }
}

/// Gradient of the summed BatchNorm statistic loss with respect to `batch`.
pub fn input_gradient(model: &ModelGraph, batch: &Tensor, targets: &[BnTarget]) -> Result<Tensor> {
    loss_and_gradient(model, batch, targets).map(|(_, g)| g)
}

pub(crate) fn loss_and_gradient(
    model: &ModelGraph,
    batch: &Tensor,
    targets: &[BnTarget],
) -> Result<(f64, Tensor)> {
    if model.batch_norm_count() == 0 {
        return Err(Error::Unsupported(
            "input gradient needs at least one batch norm layer".into(),
        ));
    }
    let out = run(model, batch, &NoHooks, true)?;
    let acts = &out.activations;
    let layers = model.layers();

    // grads[k] is d loss / d a[k]
    let mut grads: Vec<Option<Tensor>> = vec![None; acts.len()];
    let mut loss = 0.0;
    for t in targets {
        let layer = t.layer;
        let x = &acts[layer];
        if !matches!(layers.get(layer), Some(Layer::BatchNorm(_))) {
            return Err(Error::InvalidArgument(format!(
                "target refers to layer {layer}, which is not a batch norm"
            )));
        }
        let stats = out
            .bn_stats
            .iter()
            .find(|s| s.layer == layer)
            .expect("every batch norm is recorded");
        loss += squared_gap(&stats.mean, &t.mean) + squared_gap(&stats.std, &t.std);
        accumulate(&mut grads[layer], ops::stat_loss_gradient(x, &t.mean, &t.std));
    }

    let last = targets.iter().map(|t| t.layer).max().unwrap_or(0);
    for i in (0..last).rev() {
        let Some(g_out) = grads[i + 1].take() else {
            continue;
        };
        let input = &acts[i];
        let g_in = match &layers[i] {
            Layer::Conv2d(conv) => ops::conv2d_backward(&g_out, input.shape(), conv)?,
            Layer::BatchNorm(bn) => ops::batch_norm_backward(&g_out, bn),
            Layer::Relu => ops::relu_backward(&g_out, input),
            Layer::AvgPool(p) => ops::avg_pool_backward(&g_out, input.shape(), p),
            Layer::Linear(l) => ops::linear_backward(&g_out, input.shape(), l),
            Layer::ResidualAdd { source } => {
                accumulate(&mut grads[source + 1], g_out.clone());
                g_out
            }
        };
        if !g_in.all_finite() {
            return Err(Error::NumericFailure {
                layer: i,
                what: "input gradient is not finite".into(),
            });
        }
        accumulate(&mut grads[i], g_in);
    }

    let grad = grads[0]
        .take()
        .unwrap_or_else(|| Tensor::zeros(batch.shape().to_vec()));
    Ok((loss, grad))
}

fn squared_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => ops::add_assign(acc, &g),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_without_batch_norm_is_unsupported() {
        let m = ModelGraph::new(vec![Layer::Relu], vec![2], 2).unwrap();
        let x = Tensor::zeros(vec![1, 2]);
        assert!(matches!(
            input_gradient(&m, &x, &[]),
            Err(Error::Unsupported(_))
        ));
    }
}
