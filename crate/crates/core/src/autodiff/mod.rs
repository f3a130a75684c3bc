//! Differentiable computation: a reverse-mode tape over dense tensors,
//! time-derivative jets built on top of it, feed-forward networks and Adam.

mod adam;
mod jet;
mod mlp;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use jet::{Jet3, TapeJet};
pub use mlp::{
    bias_name, forward_with_jets, init_mlp, layer_widths, mlp_forward, mlp_jets_tape, mlp_tape,
    weight_name, Activation,
};
pub(crate) use params::{read_param_block, write_param_block};
pub use params::{BoundParams, ParamStore, PARAMS_MAGIC, PARAMS_VERSION};
pub use tape::{Gradients, Tape, Var};
