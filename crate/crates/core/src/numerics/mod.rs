//! Dense FP32 tensors, reverse-mode differentiation and AdamW.

pub(crate) mod kernels;
mod linear;
mod optim;
mod rng;
mod tape;
mod tensor;

pub use linear::{uniform_fan_in, Linear, LinearVars};
pub use optim::{AdamW, AdamWConfig};
pub use rng::RngState;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Copies each trainable leaf's gradient from `tape` into the matching
/// parameter tensor. `params` and `vars` must be in the same order.
pub fn collect_grads(tape: &Tape, params: &mut [&mut Tensor], vars: &[Var]) -> crate::Result<()> {
    debug_assert_eq!(params.len(), vars.len());
    for (p, &v) in params.iter_mut().zip(vars) {
        if let Some(g) = tape.grad(v) {
            p.accumulate_grad(g)?;
        }
    }
    Ok(())
}
