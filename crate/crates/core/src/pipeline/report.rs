use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ActivationBits, PipelineConfig};
use super::eval::EvalReport;
use super::stages::plan_bit_config;
use crate::distill::SyntheticBatch;
use crate::error::{Error, Result};
use crate::hwsim::{plan_costs, HwProfile};
use crate::model::ModelGraph;
use crate::planner::Plan;
use crate::quant::{layer_size_bits, model_size, BitConfig};
use crate::sensitivity::{Method, SensitivityReport};

pub const REPORT_FORMAT: &str = "bitplan-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepCycles {
    pub compute: u64,
    pub transfer: u64,
    pub write_back: u64,
    pub post_process: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub layer: usize,
    pub model_layer: usize,
    pub kind: String,
    pub weight_count: usize,
    pub sensitivity: f64,
    /// 8-bit cost, the one that enters the merit.
    pub cycles: StepCycles,
    pub energy: f64,
    pub omega_hat: f64,
    pub cycles_hat: f64,
    pub energy_hat: f64,
    pub merit: f64,
    pub bits: u8,
    pub activation_bits: u8,
    pub size_bits: u64,
    /// Cost at the planned widths.
    pub planned_cycles: u64,
    pub planned_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub method: Method,
    pub alpha: f64,
    pub sensitivity_seed: u64,
    pub distill_seed: u64,
    pub batch_size: usize,
    pub distill_steps: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub gamma: f64,
    pub ratio: f64,
    pub bits_activations: ActivationBits,
    pub candidates: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hardware {
    pub lanes: u32,
    pub bram_total: u64,
    pub bram_blocks: [u64; 3],
    pub max_tile_side: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Totals {
    pub size4_bits: u64,
    pub size8_bits: u64,
    pub limit_bits: u64,
    pub planned_size_bits: u64,
    /// Unquantized parameters (biases, BatchNorm) at 32 bits.
    pub fixed_bits: u64,
    pub objective: f64,
    pub planned_cycles: u64,
    pub all8_cycles: u64,
    pub all4_cycles: u64,
    pub planned_energy: f64,
    pub all8_energy: f64,
    pub all4_energy: f64,
    pub distill_initial_loss: f64,
    pub distill_final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub format: String,
    pub version: u32,
    /// Seconds since the Unix epoch; excluded from `canonical_sha256`.
    pub generated_at: u64,
    /// SHA-256 of the report serialized with `generated_at = 0` and this
    /// field empty.
    pub canonical_sha256: String,
    pub model: String,
    pub settings: Settings,
    pub hardware: Hardware,
    pub layers: Vec<ReportRow>,
    pub totals: Totals,
    pub eval: EvalReport,
}

/// Flat per-layer CSV record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCsvRow {
    pub layer: usize,
    pub model_layer: usize,
    pub kind: String,
    pub weight_count: usize,
    pub sensitivity: f64,
    pub compute: u64,
    pub transfer: u64,
    pub write_back: u64,
    pub post_process: u64,
    pub cycles: u64,
    pub energy: f64,
    pub omega_hat: f64,
    pub cycles_hat: f64,
    pub energy_hat: f64,
    pub merit: f64,
    pub bits: u8,
    pub size_bits: u64,
}

impl Report {
    pub fn canonical_hash(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.generated_at = 0;
        copy.canonical_sha256.clear();
        let bytes = serde_json::to_vec(&copy)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn csv_rows(&self) -> Vec<ReportCsvRow> {
        self.layers
            .iter()
            .map(|r| ReportCsvRow {
                layer: r.layer,
                model_layer: r.model_layer,
                kind: r.kind.clone(),
                weight_count: r.weight_count,
                sensitivity: r.sensitivity,
                compute: r.cycles.compute,
                transfer: r.cycles.transfer,
                write_back: r.cycles.write_back,
                post_process: r.cycles.post_process,
                cycles: r.cycles.total,
                energy: r.energy,
                omega_hat: r.omega_hat,
                cycles_hat: r.cycles_hat,
                energy_hat: r.energy_hat,
                merit: r.merit,
                bits: r.bits,
                size_bits: r.size_bits,
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in self.csv_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn build_report(
    cfg: &PipelineConfig,
    model: &ModelGraph,
    batch: &SyntheticBatch,
    sensitivity: &SensitivityReport,
    profile: &HwProfile,
    plan: &Plan,
    eval: &EvalReport,
) -> Result<Report> {
    let n = model.quantizable_layers().len();
    if sensitivity.omega.len() != n || plan.bits().len() != n {
        return Err(Error::InvalidArgument(format!(
            "artifacts disagree on the layer count: model {n}, sensitivity {}, plan {}",
            sensitivity.omega.len(),
            plan.bits().len()
        )));
    }
    let bits = plan_bit_config(plan.bits(), cfg.planner.bits_activations);
    let planned = plan_costs(model, &bits, &cfg.hw)?;
    let all8 = plan_costs(model, &BitConfig::uniform(n, 8), &cfg.hw)?;
    let all4 = plan_costs(model, &BitConfig::uniform(n, 4), &cfg.hw)?;
    let rows8 = profile.rows_at(8)?;
    let m = &plan.metrics;

    let layers = (0..n)
        .map(|k| {
            let r = rows8[k];
            ReportRow {
                layer: k,
                model_layer: r.model_layer,
                kind: r.kind.clone(),
                weight_count: r.weight_count,
                sensitivity: sensitivity.omega[k],
                cycles: StepCycles {
                    compute: r.cost.compute,
                    transfer: r.cost.transfer,
                    write_back: r.cost.write_back,
                    post_process: r.cost.post_process,
                    total: r.cost.total,
                },
                energy: r.cost.energy,
                omega_hat: m.omega_hat[k],
                cycles_hat: m.cycles_hat[k],
                energy_hat: m.energy_hat[k],
                merit: m.merit[k],
                bits: bits.weight_bits[k],
                activation_bits: bits.activation_bits[k],
                size_bits: layer_size_bits(r.weight_count, bits.weight_bits[k]),
                planned_cycles: planned[k].total,
                planned_energy: planned[k].energy,
            }
        })
        .collect();

    let sum_cycles = |c: &[crate::hwsim::LayerCost]| c.iter().map(|x| x.total).sum::<u64>();
    let sum_energy = |c: &[crate::hwsim::LayerCost]| c.iter().map(|x| x.energy).sum::<f64>();
    let size = model_size(model, &bits)?;
    let mut report = Report {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        generated_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        canonical_sha256: String::new(),
        model: cfg
            .model
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        settings: Settings {
            method: sensitivity.method,
            alpha: cfg.sensitivity.alpha,
            sensitivity_seed: cfg.sensitivity.seed,
            distill_seed: batch.seed,
            batch_size: sensitivity.batch_size,
            distill_steps: batch.loss_history.len(),
            learning_rate: cfg.distill.learning_rate,
            beta: plan.config.beta,
            gamma: plan.config.gamma,
            ratio: cfg.planner.ratio,
            bits_activations: cfg.planner.bits_activations,
            candidates: plan.config.candidates.clone(),
        },
        hardware: Hardware {
            lanes: profile.config.lanes,
            bram_total: profile.config.bram_total,
            bram_blocks: [
                profile.bram.weight_blocks,
                profile.bram.feature_blocks,
                profile.bram.output_blocks,
            ],
            max_tile_side: profile.bram.max_side,
        },
        layers,
        totals: Totals {
            size4_bits: plan.result.size4_bits,
            size8_bits: plan.result.size8_bits,
            limit_bits: plan.result.limit_bits,
            planned_size_bits: size.weight_bits,
            fixed_bits: size.fixed_bits,
            objective: plan.result.objective,
            planned_cycles: sum_cycles(&planned),
            all8_cycles: sum_cycles(&all8),
            all4_cycles: sum_cycles(&all4),
            planned_energy: sum_energy(&planned),
            all8_energy: sum_energy(&all8),
            all4_energy: sum_energy(&all4),
            distill_initial_loss: batch.loss_history.first().copied().unwrap_or(batch.final_loss),
            distill_final_loss: batch.final_loss,
        },
        eval: eval.clone(),
    };
    report.canonical_sha256 = report.canonical_hash()?;
    Ok(report)
}
