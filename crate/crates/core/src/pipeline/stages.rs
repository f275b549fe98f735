use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use super::config::{ActivationBits, PipelineConfig};
use super::eval::{evaluate, EvalReport};
use super::report::{build_report, Report};
use crate::distill::{load_batch, save_batch, synthesize, SyntheticBatch};
use crate::error::{Error, Result};
use crate::hwsim::{profile_model, HwProfile};
use crate::model::{load_model, ModelGraph};
use crate::planner::{plan_pipeline, Plan};
use crate::quant::{load_quantized, quantize_model, save_quantized, BitConfig, QuantizedModel, PLAN_BITS};
use crate::sensitivity::{mqe_sensitivity, naive_sensitivity, Method, SensitivityReport};

pub const BATCH_FILE: &str = "batch.json";
pub const SENSITIVITY_FILE: &str = "sensitivity.json";
pub const PROFILE_CSV: &str = "profile.csv";
pub const PROFILE_JSON: &str = "profile.json";
pub const PLAN_FILE: &str = "plan.json";
pub const QUANTIZED_FILE: &str = "quantized.json";
pub const EVAL_FILE: &str = "eval.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Path of an artifact produced by `stage`, or an error naming that stage.
fn require(cfg: &PipelineConfig, name: &str, stage: &'static str) -> Result<PathBuf> {
    let path = cfg.artifact(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { stage, path })
    }
}

fn out_dir(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

pub fn load_config_model(cfg: &PipelineConfig) -> Result<ModelGraph> {
    if !cfg.model.is_file() {
        return Err(Error::config("model", format!("{} does not exist", cfg.model.display())));
    }
    load_model(&cfg.model)
}

/// The bit configuration a plan implies under the activation policy.
pub fn plan_bit_config(plan: &[u8], activations: ActivationBits) -> BitConfig {
    match activations {
        ActivationBits::Plan => BitConfig::from_plan(plan),
        ActivationBits::Eight => BitConfig::with_pinned_activations(plan, 8),
    }
}

pub fn cmd_distill(cfg: &PipelineConfig) -> Result<SyntheticBatch> {
    let model = load_config_model(cfg)?;
    let t = Instant::now();
    let batch = synthesize(&model, &cfg.distill)?;
    log::info!(
        "distilled {} samples in {:.2?}: loss {:.4e} -> {:.4e}",
        cfg.distill.batch,
        t.elapsed(),
        batch.loss_history[0],
        batch.final_loss
    );
    out_dir(cfg)?;
    save_batch(&batch, &cfg.artifact(BATCH_FILE))?;
    Ok(batch)
}

pub fn cmd_sense(cfg: &PipelineConfig) -> Result<SensitivityReport> {
    let model = load_config_model(cfg)?;
    let batch = load_batch(&require(cfg, BATCH_FILE, "distill")?)?;
    let s = &cfg.sensitivity;
    let report = match s.method {
        Method::Mqe => mqe_sensitivity(&model, &batch.data, s.alpha, s.seed)?,
        Method::Naive => naive_sensitivity(&model, &batch.data, s.naive_bits)?,
    };
    log::info!("sensitivity ({:?}): {:?}", s.method, report.omega);
    out_dir(cfg)?;
    report.save(&cfg.artifact(SENSITIVITY_FILE))?;
    Ok(report)
}

pub fn cmd_profile(cfg: &PipelineConfig) -> Result<HwProfile> {
    let model = load_config_model(cfg)?;
    let profile = profile_model(&model, &PLAN_BITS, &cfg.hw)?;
    out_dir(cfg)?;
    profile.write_csv(&cfg.artifact(PROFILE_CSV))?;
    profile.save_json(&cfg.artifact(PROFILE_JSON))?;
    Ok(profile)
}

pub fn cmd_plan(cfg: &PipelineConfig) -> Result<Plan> {
    let report = SensitivityReport::load(&require(cfg, SENSITIVITY_FILE, "sense")?)?;
    let profile = HwProfile::load_json(&require(cfg, PROFILE_JSON, "profile")?)?;
    let plan = plan_pipeline(&report, &profile, &cfg.planner.planner_config())?;
    out_dir(cfg)?;
    plan.save(&cfg.artifact(PLAN_FILE))?;
    Ok(plan)
}

pub fn cmd_quantize(cfg: &PipelineConfig) -> Result<QuantizedModel> {
    let model = load_config_model(cfg)?;
    let plan = Plan::load(&require(cfg, PLAN_FILE, "plan")?)?;
    let batch = load_batch(&require(cfg, BATCH_FILE, "distill")?)?;
    let bits = plan_bit_config(plan.bits(), cfg.planner.bits_activations);
    let qmodel = quantize_model(&model, &bits, &batch.data)?;
    out_dir(cfg)?;
    save_quantized(&qmodel, &cfg.artifact(QUANTIZED_FILE))?;
    Ok(qmodel)
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    let model = load_config_model(cfg)?;
    let planned = load_quantized(&require(cfg, QUANTIZED_FILE, "quantize")?, model.clone())?;
    let batch = load_batch(&require(cfg, BATCH_FILE, "distill")?)?;
    let report = evaluate(&model, &planned, &batch.data, cfg)?;
    out_dir(cfg)?;
    fs::write(cfg.artifact(EVAL_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Assembles report.json / report.csv from the stage artifacts.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<Report> {
    let model = load_config_model(cfg)?;
    let batch = load_batch(&require(cfg, BATCH_FILE, "distill")?)?;
    let sensitivity = SensitivityReport::load(&require(cfg, SENSITIVITY_FILE, "sense")?)?;
    let profile = HwProfile::load_json(&require(cfg, PROFILE_JSON, "profile")?)?;
    let plan = Plan::load(&require(cfg, PLAN_FILE, "plan")?)?;
    let eval: EvalReport = serde_json::from_str(&fs::read_to_string(require(cfg, EVAL_FILE, "eval")?)?)?;
    let report = build_report(cfg, &model, &batch, &sensitivity, &profile, &plan, &eval)?;
    report.save(&cfg.artifact(REPORT_JSON))?;
    report.write_csv(&cfg.artifact(REPORT_CSV))?;
    Ok(report)
}

/// Every stage in order, then the report.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<Report> {
    cfg.validate()?;
    cmd_distill(cfg)?;
    cmd_sense(cfg)?;
    cmd_profile(cfg)?;
    cmd_plan(cfg)?;
    cmd_quantize(cfg)?;
    cmd_eval(cfg)?;
    cmd_report(cfg)
}
