//! Hardware-aware mixed-precision quantization planning for small CNNs.
//!
//! The pipeline has five stages, each usable on its own:
//!
//! - [`distill`] synthesizes a calibration batch from BatchNorm statistics,
//!   so no training data is needed.
//! - [`sensitivity`] ranks layers by how much the output distribution moves
//!   when a fraction of their 8-bit weights is masked to zero.
//! - [`hwsim`] estimates per-layer clock cycles and energy on a parametric
//!   FPGA matrix-multiply accelerator.
//! - [`planner`] fuses both signals and solves the 4/8-bit assignment exactly
//!   under a model-size budget.
//! - [`pipeline`] wires the stages together around artifact files.
//!
//! [`model`] and [`quant`] provide the inference engine and fake-quantized
//! execution underneath. Runnable walkthroughs live in `examples/`.

// `!(x > y)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distill;
pub mod error;
pub mod hwsim;
pub mod model;
pub mod pipeline;
pub mod planner;
pub mod quant;
pub mod sensitivity;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use tensor::{IntTensor, Tensor};
