//! Every stage through the file-based pipeline, as the `bitplan` binary runs it.
//!
//! cargo run --release --example full_pipeline [out_dir]

use std::path::PathBuf;

use bitplan::model::save_model;
use bitplan::pipeline::{cmd_pipeline, PipelineConfig, REPORT_CSV, REPORT_JSON};
use bitplan::toy;

fn main() -> bitplan::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("bitplan-demo"));
    std::fs::create_dir_all(&dir)?;
    save_model(&toy::bundled_model()?, &dir.join("toy_model.json"))?;
    let cfg = PipelineConfig::new(dir.join("toy_model.json"), dir.join("out"));

    let report = cmd_pipeline(&cfg)?;
    println!("layer  kind     omega     cycles  merit   bits");
    for r in &report.layers {
        println!(
            "{:>5}  {:<7}  {:<8.4} {:>7}  {:>6.3}  {}",
            r.layer, r.kind, r.sensitivity, r.cycles.total, r.merit, r.bits
        );
    }
    for e in &report.eval.entries {
        println!("{:<8} acc {:.3}  cycles {:>6}  size {:>6} bits", e.name, e.accuracy, e.cycles, e.size_bits);
    }
    println!("wrote {} and {}", cfg.artifact(REPORT_JSON).display(), cfg.artifact(REPORT_CSV).display());
    Ok(())
}
