//! Dense tensors, tape-based reverse-mode differentiation and Adam.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradient_check, Differentiable, GradCheckOptions, TapeFn};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))` for a
/// `[fan_in, fan_out]` matrix.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
}
