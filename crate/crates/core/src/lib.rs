//! Generative modeling with twin endpoint predictors.
//!
//! A shared trunk produces features for one noise-endpoint head `J` and one
//! data-endpoint head `K` per class. The sampling velocity is never trained
//! directly; it emerges as `v = K - J` and is integrated with a plain ODE
//! solver. Because the `K` heads are independent, velocity fields can be
//! blended, chained and cycled at inference time (see [`transport`]).
//!
//! Module map:
//!
//! - [`diffcore`]: dense arrays, a reverse-mode tape and Adam.
//! - [`model`]: trunk, heads and the velocity query surface.
//! - [`objective`]: bridges, swap operators and the three loss terms.
//! - [`trainer`]: minibatch training loop and the binary checkpoint format.
//! - [`sampler`]: Euler and Heun integration over linear or cosine grids.
//! - [`transport`]: generation, cross-class transport, interpolation,
//!   cycles and barycentric grids.
//! - [`data`]: labeled synthetic 2D datasets and their file format.
//! - [`metrics`]: energy distance, sliced Wasserstein and model diagnostics.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod trainer;
pub mod transport;

pub use diffcore::{AdamConfig, AdamState, DenseArray, Gradients, Primitive, Real, Tape, Var};
pub use error::{Error, Result};
pub use model::{GafConfig, GafModel, HeadKind, TwinOutput, VelocityField, VelocityQuery};
pub use objective::{BridgeConfig, BridgeSample, LossBreakdown, SwapKind};
pub use sampler::{Direction, Schedule, TimeGrid, Trajectory};
pub use trainer::{Checkpoint, TrainConfig, Trainer};

/// Default time clamp keeping training and sampling inside `(0, 1)`.
pub const T_EPS: f64 = 1e-3;
