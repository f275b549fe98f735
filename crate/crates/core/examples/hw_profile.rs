//! Per-layer cycle and energy profile from the accelerator model.
//!
//! cargo run --example hw_profile

use bitplan::hwsim::{bram_allocate, min_tile_side, profile_model, HwConfig};
use bitplan::toy;

fn main() -> bitplan::Result<()> {
    let hw = HwConfig::default();
    let bram = bram_allocate(&hw)?;
    println!(
        "BRAM blocks w/f/o {}/{}/{} of {}, tile side {}..{}",
        bram.weight_blocks,
        bram.feature_blocks,
        bram.output_blocks,
        hw.bram_total,
        min_tile_side(bram.max_side),
        bram.max_side
    );

    let model = toy::bundled_model()?;
    let profile = profile_model(&model, &[4, 8], &hw)?;
    println!("layer bits  compute transfer writeback  post    total     energy  tile");
    for r in &profile.rows {
        let c = &r.cost;
        println!(
            "{:>5} {:>4} {:>8} {:>8} {:>9} {:>5} {:>8} {:>10.1}  {}",
            r.layer,
            r.bits,
            c.compute,
            c.transfer,
            c.write_back,
            c.post_process,
            c.total,
            c.energy,
            c.tile.map_or(0, |t| t.tile)
        );
    }

    let pair = toy::decorrelation_pair(0)?;
    let p = profile_model(&pair, &[8], &hw)?;
    for r in &p.rows {
        println!("{:<7} {:>5} weights {:>7} cycles", r.kind, r.weight_count, r.cost.total);
    }
    Ok(())
}
