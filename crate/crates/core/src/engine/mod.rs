//! Minimal dense-tensor numerics with reverse-mode differentiation.
//!
//! Everything is 64-bit and single-threaded per tape; trained parameter sets
//! are immutable afterwards and safe to share across threads for inference.

mod adam;
mod checker;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checker::{grad_check, GradCheckReport, FD_STEP};
pub use ops::Activation;
pub use params::{Param, ParamSet};
pub use tape::{Mode, RunningStats, Src, Tape};
pub use tensor::Tensor;

use rand::Rng;

/// Glorot-uniform init: U(±√(6/(fan_in+fan_out))).
pub fn glorot_uniform(fan_in: usize, fan_out: usize, shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit).collect();
    Tensor::new(shape, values).expect("shape matches count")
}
