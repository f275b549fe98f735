//! Data-free calibration batches.
//!
//! A batch is initialised from a seeded standard normal and refined by plain
//! gradient descent on the BatchNorm statistic loss
//! `sum_i ||mean_i(x) - u_i||^2 + ||std_i(x) - sigma_i||^2`, where the
//! observed statistics are taken at the input of every BatchNorm layer.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, BnTarget, ForwardTrace, Layer, ModelGraph};
use crate::tensor::Tensor;

/// Consecutive steps above `DIVERGENCE_FACTOR * initial loss` before giving up.
pub const DIVERGENCE_PATIENCE: usize = 50;
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub batch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            steps: 500,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("distill.batch", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("distill.steps", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("distill.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub data: Tensor,
    pub final_loss: f64,
    /// Loss after each update step.
    pub loss_history: Vec<f64>,
    pub seed: u64,
}

/// Statistic loss of a recorded forward pass against the model's stored
/// BatchNorm running statistics.
pub fn bn_stat_loss(trace: &ForwardTrace, model: &ModelGraph) -> Result<f64> {
    let mut loss = 0.0;
    for stats in &trace.bn_stats {
        let Some(Layer::BatchNorm(bn)) = model.layers().get(stats.layer) else {
            return Err(Error::InvalidArgument(format!(
                "trace entry for layer {} does not match a batch norm",
                stats.layer
            )));
        };
        if stats.mean.len() != bn.channels || stats.std.len() != bn.channels {
            return Err(Error::Shape(format!(
                "trace for layer {} has {} channels, expected {}",
                stats.layer,
                stats.mean.len(),
                bn.channels
            )));
        }
        for c in 0..bn.channels {
            let dm = stats.mean[c] - bn.running_mean[c];
            let ds = stats.std[c] - bn.running_var[c].sqrt();
            loss += dm * dm + ds * ds;
        }
    }
    Ok(loss)
}

/// Seeded standard-normal batch of `n` samples shaped like the model input.
pub fn normal_batch(model: &ModelGraph, n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![n];
    shape.extend_from_slice(model.input_shape());
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

pub fn synthesize(model: &ModelGraph, config: &DistillConfig) -> Result<SyntheticBatch> {
    config.validate()?;
    if model.batch_norm_count() == 0 {
        return Err(Error::Unsupported(
            "data synthesis needs at least one batch norm layer".into(),
        ));
    }
    let targets = BnTarget::from_model(model);
    let mut x = normal_batch(model, config.batch, config.seed);
    let (initial, mut grad) = model::loss_and_gradient(model, &x, &targets)?;
    log::debug!("distill: initial loss {initial:.6e}");

    let mut history = Vec::with_capacity(config.steps);
    let mut above = 0usize;
    for step in 0..config.steps {
        for (v, g) in x.data_mut().iter_mut().zip(grad.data()) {
            *v -= config.learning_rate * g;
        }
        let (loss, next) = match model::loss_and_gradient(model, &x, &targets) {
            Ok(r) => r,
            Err(Error::NumericFailure { .. }) => {
                return Err(Error::Divergence {
                    step,
                    loss: f64::INFINITY,
                    initial,
                })
            }
            Err(e) => return Err(e),
        };
        history.push(loss);
        grad = next;
        if loss > DIVERGENCE_FACTOR * initial {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence { step, loss, initial });
            }
        } else {
            above = 0;
        }
    }
    let final_loss = *history.last().expect("steps >= 1");
    log::debug!("distill: final loss {final_loss:.6e} after {} steps", config.steps);
    Ok(SyntheticBatch {
        data: x,
        final_loss,
        loss_history: history,
        seed: config.seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchManifest {
    format: String,
    shape: Vec<usize>,
    seed: u64,
    final_loss: f64,
    loss_history: Vec<f64>,
    blob: String,
}

const BATCH_FORMAT: &str = "bitplan-batch";

/// Writes the batch as a JSON manifest plus an `f32` blob next to it.
pub fn save_batch(batch: &SyntheticBatch, path: &Path) -> Result<()> {
    let blob = path.with_extension("bin");
    model::write_f32_blob(&blob, batch.data.data())?;
    let manifest = BatchManifest {
        format: BATCH_FORMAT.into(),
        shape: batch.data.shape().to_vec(),
        seed: batch.seed,
        final_loss: batch.final_loss,
        loss_history: batch.loss_history.clone(),
        blob: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_batch(path: &Path) -> Result<SyntheticBatch> {
    let manifest: BatchManifest = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format != BATCH_FORMAT {
        return Err(Error::Format(format!("unexpected format tag `{}`", manifest.format)));
    }
    let blob = path.parent().unwrap_or_else(|| Path::new(".")).join(&manifest.blob);
    let values = model::read_f32_blob(&blob)?;
    let expected: usize = manifest.shape.iter().product();
    if values.len() != expected {
        return Err(Error::BlobLength {
            expected,
            actual: values.len(),
        });
    }
    Ok(SyntheticBatch {
        data: Tensor::new(manifest.shape, values)?,
        final_loss: manifest.final_loss,
        loss_history: manifest.loss_history,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BatchNorm, BnStats};

    fn single_bn(mean: f64, var: f64) -> ModelGraph {
        let bn = BatchNorm::new(vec![mean], vec![var], vec![1.0], vec![0.0], 0.0).unwrap();
        ModelGraph::new(vec![Layer::BatchNorm(bn)], vec![1], 1).unwrap()
    }

    #[test]
    fn loss_is_zero_at_stored_stats() {
        let m = single_bn(0.5, 4.0);
        let trace = ForwardTrace {
            bn_stats: vec![BnStats { layer: 0, mean: vec![0.5], std: vec![2.0] }],
            activations: None,
        };
        assert_eq!(bn_stat_loss(&trace, &m).unwrap(), 0.0);
    }

    #[test]
    fn loss_of_mean_offset() {
        let m = single_bn(0.0, 1.0);
        let trace = ForwardTrace {
            bn_stats: vec![BnStats { layer: 0, mean: vec![0.3], std: vec![1.0] }],
            activations: None,
        };
        assert!((bn_stat_loss(&trace, &m).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn step_count_validation() {
        let m = single_bn(0.0, 1.0);
        let zero = DistillConfig { steps: 0, ..Default::default() };
        assert!(matches!(synthesize(&m, &zero), Err(Error::Config { .. })));
        let one = DistillConfig { steps: 1, batch: 4, ..Default::default() };
        let b = synthesize(&m, &one).unwrap();
        assert_eq!(b.loss_history.len(), 1);
        assert_eq!(b.final_loss, b.loss_history[0]);
    }

    #[test]
    fn model_without_batch_norm_is_rejected() {
        let m = ModelGraph::new(vec![Layer::Relu], vec![2], 2).unwrap();
        assert!(matches!(
            synthesize(&m, &DistillConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let m = single_bn(0.0, 1.0);
        let cfg = DistillConfig { batch: 2, steps: 200, learning_rate: 1e3, seed: 1 };
        assert!(matches!(synthesize(&m, &cfg), Err(Error::Divergence { .. })));
    }
}
