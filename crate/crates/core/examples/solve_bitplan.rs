//! The exact 4/8-bit assignment solver on hand-made inputs.
//!
//! cargo run --example solve_bitplan

use bitplan::planner::{normalize, omega, solve_bitplan, SizeLimit};

fn main() -> bitplan::Result<()> {
    let sensitivity = [0.9, 0.2, 0.05, 0.6, 0.3];
    let cycles = [12_000.0, 30_000.0, 8_000.0, 2_000.0, 15_000.0];
    let energy = [700.0, 1_900.0, 500.0, 90.0, 800.0];
    let weights = [432u64, 4608, 9216, 640, 2304];

    let sizes4: Vec<u64> = weights.iter().map(|w| 4 * w).collect();
    let sizes8: Vec<u64> = weights.iter().map(|w| 8 * w).collect();
    for beta in [1.0, 0.5, 0.0] {
        let merit = omega(&normalize(&sensitivity), &normalize(&cycles), &normalize(&energy), beta, 1.0 - beta)?;
        for ratio in [0.25, 0.5, 1.0] {
            let limit = SizeLimit::Ratio(ratio).resolve(sizes4.iter().sum(), sizes8.iter().sum())?;
            let plan = solve_bitplan(&merit, &sizes4, &sizes8, limit)?;
            println!(
                "beta {beta:.1} ratio {ratio:.2}: {:?}  objective {:>7.3}  size {}/{}",
                plan.bits, plan.objective, plan.size_bits, limit
            );
        }
    }
    Ok(())
}
