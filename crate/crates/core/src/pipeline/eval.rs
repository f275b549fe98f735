use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::error::Result;
use crate::hwsim::{plan_costs, HwConfig};
use crate::model::{forward, ModelGraph};
use crate::quant::{model_size, quantize_model, quantized_forward, BitConfig, QuantizedModel, FULL_PRECISION};
use crate::tensor::Tensor;
use crate::toy::{LabeledSet, SyntheticTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    /// `fp32`, `all8`, `all4` or `planned`.
    pub name: String,
    pub weight_bits: Vec<u8>,
    pub activation_bits: Vec<u8>,
    /// Top-1 accuracy against the dataset labels.
    pub accuracy: f64,
    /// Top-1 agreement with the full-precision model.
    pub agreement: f64,
    pub misclassified: usize,
    /// Simulated cycles per sample (32-bit layers are costed as 8-bit).
    pub cycles: u64,
    pub energy: f64,
    pub size_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub samples: usize,
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    pub fn entry(&self, name: &str) -> Option<&EvalEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub fn eval_dataset(cfg: &PipelineConfig, model: &ModelGraph) -> Result<(String, LabeledSet)> {
    let e = &cfg.eval;
    match &e.dataset {
        Some(path) => Ok((path.display().to_string(), LabeledSet::load(path)?)),
        None => {
            let task = SyntheticTask::new(model.input_shape(), model.class_count(), e.noise, e.task_seed)?;
            Ok((
                format!("synthetic(task_seed={}, seed={}, noise={})", e.task_seed, e.seed, e.noise),
                task.sample(e.samples, e.seed),
            ))
        }
    }
}

/// Accuracy, agreement, simulated cost and size of one configuration.
pub fn score(
    name: &str,
    model: &ModelGraph,
    logits: &Tensor,
    reference: &[usize],
    data: &LabeledSet,
    bits: &BitConfig,
    hw: &HwConfig,
) -> Result<EvalEntry> {
    let pred = logits.argmax_rows();
    let agree = pred.iter().zip(reference).filter(|(a, b)| a == b).count();
    let wrong = pred.iter().zip(&data.labels).filter(|(a, b)| a != b).count();
    let costs = plan_costs(model, bits, hw)?;
    Ok(EvalEntry {
        name: name.to_string(),
        weight_bits: bits.weight_bits.clone(),
        activation_bits: bits.activation_bits.clone(),
        accuracy: data.accuracy(logits),
        agreement: agree as f64 / pred.len().max(1) as f64,
        misclassified: wrong,
        cycles: costs.iter().map(|c| c.total).sum(),
        energy: costs.iter().map(|c| c.energy).sum(),
        size_bits: model_size(model, bits)?.weight_bits,
    })
}

/// Scores full precision, uniform 8 and 4 bits (calibrated on `calib`) and
/// the planned model.
pub fn evaluate(model: &ModelGraph, planned: &QuantizedModel, calib: &Tensor, cfg: &PipelineConfig) -> Result<EvalReport> {
    let (name, data) = eval_dataset(cfg, model)?;
    let n = model.quantizable_layers().len();
    let (fp_logits, _) = forward(model, &data.inputs, false)?;
    let reference = fp_logits.argmax_rows();

    let mut entries = vec![score(
        "fp32",
        model,
        &fp_logits,
        &reference,
        &data,
        &BitConfig::uniform(n, FULL_PRECISION),
        &cfg.hw,
    )?];
    for (label, bits) in [("all8", 8u8), ("all4", 4)] {
        let config = BitConfig::uniform(n, bits);
        let q = quantize_model(model, &config, calib)?;
        let logits = quantized_forward(&q, &data.inputs)?;
        entries.push(score(label, model, &logits, &reference, &data, &config, &cfg.hw)?);
    }
    let logits = quantized_forward(planned, &data.inputs)?;
    entries.push(score(
        "planned",
        model,
        &logits,
        &reference,
        &data,
        &planned.bit_config(),
        &cfg.hw,
    )?);
    Ok(EvalReport {
        dataset: name,
        samples: data.len(),
        entries,
    })
}
