//! Mask-based sensitivity next to the per-layer quantization baseline.
//!
//! cargo run --release --example mqe_sensitivity

use bitplan::distill::{synthesize, DistillConfig};
use bitplan::sensitivity::{mqe_sensitivity, naive_sensitivity, rank_correlation};
use bitplan::toy;

fn main() -> bitplan::Result<()> {
    let model = toy::bundled_model()?;
    let batch = synthesize(&model, &DistillConfig::default())?.data;

    let mqe = mqe_sensitivity(&model, &batch, 0.5, 0)?;
    let naive = naive_sensitivity(&model, &batch, 4)?;
    println!("layer  kind     mqe        naive@4");
    for (k, &mi) in mqe.layers.iter().enumerate() {
        println!(
            "{k:>5}  {:<7}  {:<9.5}  {:.5}",
            model.layers()[mi].kind(),
            mqe.omega[k],
            naive.omega[k]
        );
    }
    println!("mqe:   {:?}", mqe.stats);
    println!("naive: {:?}", naive.stats);
    println!("rank correlation {:.3}", rank_correlation(&mqe.omega, &naive.omega));
    Ok(())
}
