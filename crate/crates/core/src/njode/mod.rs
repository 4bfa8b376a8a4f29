//! The Neural Jump ODE.
//!
//! A latent state `h` jumps to `ρ(x_i)` at every observation, evolves
//! between observations by explicit Euler steps of the field
//! `f(h, x_last, τ, t − τ)`, and is read out as `y = g(h)`. With incomplete
//! observations the unobserved coordinates are filled with the model's own
//! pre-jump prediction and the mask is appended to the jump input.

mod forward;
mod model;

pub use forward::{
    evolve_latent, forward_path, jump_update, readout, record_forward, ForwardTrace, LatentCarry,
    RecordedTrace,
};
pub use model::{ModelParams, NjodeConfig, NjodeModel};
