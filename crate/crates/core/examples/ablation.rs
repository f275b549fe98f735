//! Sensitivity-only, hardware-only and balanced plans on the bundled model,
//! compared by accuracy and simulated cycles.
//!
//! cargo run --release --example ablation

use bitplan::distill::{synthesize, DistillConfig};
use bitplan::hwsim::{plan_costs, profile_model, HwConfig};
use bitplan::planner::{plan_pipeline, PlannerConfig, SizeLimit};
use bitplan::quant::{quantize_model, quantized_forward, BitConfig, PLAN_BITS};
use bitplan::sensitivity::mqe_sensitivity;
use bitplan::toy;

fn main() -> bitplan::Result<()> {
    let model = toy::bundled_model()?;
    let batch = synthesize(&model, &DistillConfig::default())?;
    let report = mqe_sensitivity(&model, &batch.data, 0.5, 0)?;
    let hw = HwConfig::default();
    let profile = profile_model(&model, &PLAN_BITS, &hw)?;
    let eval = toy::bundled_eval_set(500, 1234);
    let n = report.omega.len();

    println!("sensitivity  {:?}", report.omega);
    println!("cycles @8    {:?}", profile.rows_at(8)?.iter().map(|r| r.cost.total).collect::<Vec<_>>());
    println!("weights      {:?}", profile.rows_at(8)?.iter().map(|r| r.weight_count).collect::<Vec<_>>());

    let run = |name: &str, bits: BitConfig| -> bitplan::Result<()> {
        let q = quantize_model(&model, &bits, &batch.data)?;
        let acc = eval.accuracy(&quantized_forward(&q, &eval.inputs)?);
        let cycles: u64 = plan_costs(&model, &bits, &hw)?.iter().map(|c| c.total).sum();
        println!("{name:>14}  {:?}  acc {acc:.3}  cycles {cycles}", bits.weight_bits);
        Ok(())
    };
    run("fp32", BitConfig::uniform(n, 32))?;
    run("all 8", BitConfig::uniform(n, 8))?;
    run("all 4", BitConfig::uniform(n, 4))?;
    for beta in [1.0, 0.5, 0.0] {
        let cfg = PlannerConfig {
            beta,
            gamma: 1.0 - beta,
            limit: SizeLimit::Ratio(0.5),
            ..PlannerConfig::default()
        };
        let plan = plan_pipeline(&report, &profile, &cfg)?;
        run(&format!("beta={beta}"), BitConfig::from_plan(plan.bits()))?;
    }
    Ok(())
}
