//! Reverse-mode differentiation for dense MLPs, with support for
//! gradients of gradients, and the Adam optimizer.

pub mod adam;
pub mod network;
pub mod serial;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use network::{
    grad_input, grad_params, grad_penalty_wrt_params, penalty_on_tape, Activation, Dense,
    DropoutMasks, Gradient, Network, OutputHead, ParamVars,
};
pub use serial::{NetworkDocument, Standardization};
pub use tape::{Tape, Var};
