//! Min-max calibration and the quantize / dequantize round trip.
//!
//! cargo run --example quantize_tensor

use bitplan::quant::{calibrate_minmax, dequantize, quantize};
use bitplan::{toy, Tensor};

fn main() -> bitplan::Result<()> {
    let values = toy::uniform_values(12, -1.5, 3.0, 7);
    let x = Tensor::new(vec![values.len()], values.clone())?;

    for (label, symmetric) in [("symmetric (weights)", true), ("asymmetric (activations)", false)] {
        for bits in [8u8, 4] {
            let p = calibrate_minmax(&values, bits, symmetric)?;
            let q = quantize(&x, &p)?;
            let back = dequantize(&q, &p);
            let worst = back
                .data()
                .iter()
                .zip(&values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            println!("{label}, {bits}-bit: scale {:.5}, zero {}", p.scale, p.zero_point);
            println!("  ints  {:?}", q.data());
            println!("  max |error| {worst:.5} (half step {:.5})", p.scale / 2.0);
        }
    }
    Ok(())
}
