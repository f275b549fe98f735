//! Synthesizes a calibration batch from BatchNorm statistics alone.
//!
//! cargo run --release --example distill_calibration

use bitplan::distill::{synthesize, DistillConfig};
use bitplan::toy;

fn main() -> bitplan::Result<()> {
    let model = toy::bundled_model()?;
    let cfg = DistillConfig { steps: 200, ..DistillConfig::default() };
    let batch = synthesize(&model, &cfg)?;
    for (i, loss) in batch.loss_history.iter().enumerate().step_by(25) {
        println!("step {i:>4}  loss {loss:.4}");
    }
    println!("final loss {:.4}, batch {:?}", batch.final_loss, batch.data.shape());

    // one BN layer with known targets converges to them exactly
    let simple = toy::bn_passthrough(&[0.5, -1.0], &[2.0, 0.5], 1)?;
    let b = synthesize(&simple, &DistillConfig { batch: 32, steps: 100, learning_rate: 4.0, seed: 0 })?;
    println!("closed-form fixture: loss {:.3e} after {} steps", b.final_loss, b.loss_history.len());
    Ok(())
}
