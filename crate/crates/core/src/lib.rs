//! Model-free physics-informed DeepONet for low-order nonlinear ODE systems.
//!
//! The crate learns the map from (initial state, control signal) to the
//! state trajectory of an order-`n` system from a handful of simulated
//! runs. A feed-forward surrogate is first fitted to the system's
//! short-term dependency (highest derivative as a function of the current
//! state and the last `n` controls). That frozen surrogate then supplies a
//! residual penalty while a branch/trunk operator network is trained on the
//! trajectories, with time-derivatives of the operator output obtained by
//! jet propagation through the trunk.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`], [`autodiff`]: dense tensors, reverse-mode tape, jets, Adam.
//! - [`systems`]: pendulum, driven oscillator and chaotic jerk benchmarks
//!   with their explicit-Euler simulator and dataset grids.
//! - [`data`]: noise injection, Savitzky–Golay filtering, sample builders.
//! - [`surrogate`]: the short-term-dependency network.
//! - [`deeponet`]: operator network, losses, training and evaluation.
//! - [`experiment`]: config-driven staged runs behind the `mfpi` binary.

pub mod autodiff;
pub mod data;
pub mod deeponet;
pub mod error;
pub mod experiment;
pub mod io;
pub mod surrogate;
pub mod systems;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
