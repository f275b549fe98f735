//! A convolution lowered to one matrix product, checked against the direct
//! forward pass.
//!
//! cargo run --example conv_lowering

use bitplan::model::{conv_via_matmul, forward, im2col, kernel_matrix, Layer, ModelGraph};
use bitplan::toy;

fn main() -> bitplan::Result<()> {
    let model = toy::bundled_model()?;
    let Layer::Conv2d(conv) = &model.layers()[0] else {
        unreachable!("first layer is a convolution")
    };
    let x = toy::bundled_eval_set(1, 3).inputs;

    let features = im2col(&x, conv)?;
    let kernels = kernel_matrix(conv);
    println!("feature matrix {}x{}", features.rows, features.cols);
    println!("kernel matrix  {}x{}", kernels.rows, kernels.cols);

    let lowered = conv_via_matmul(&x, conv)?;
    let outputs = lowered.len() / lowered.batch();
    let single = ModelGraph::new(vec![Layer::Conv2d(conv.clone())], model.input_shape().to_vec(), outputs)?;
    let (direct, _) = forward(&single, &x, false)?;
    let diff = lowered
        .data()
        .iter()
        .zip(direct.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("output {:?}, max difference to direct conv {diff:.2e}", lowered.shape());
    Ok(())
}
