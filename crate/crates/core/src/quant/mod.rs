//! Uniform quantization, min-max calibration, fake-quantized inference and
//! model-size accounting.

mod io;
mod model;
mod params;
mod size;

pub use io::{load_quantized, save_quantized};
pub use model::{quantize_model, quantized_forward, BitConfig, QuantizedLayer, QuantizedModel};
pub(crate) use model::QuantHooks;
pub use params::{
    calibrate_minmax, dequantize, fake_quantize, qrange, quantize, QuantParams, FULL_PRECISION, PLAN_BITS,
};
pub use size::{layer_size_bits, model_size, ModelSize, FIXED_PARAM_BITS};
