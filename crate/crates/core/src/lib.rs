//! Gaussian-equivalence laboratory: generative data models, the spectral ODE for
//! online SGD in two-layer networks, replica fixed points for learning on random
//! features, and direct simulations of each.
//!
//! The dynamics and sampling code is generic over [`Scalar`] (`f32` or `f64`);
//! moment estimation, bound audits, the replica solver and ERM work in `f64`.

pub mod activations;
pub mod erm;
pub mod error;
pub mod generators;
pub mod get_audit;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod ode;
pub mod quadrature;
pub mod replica;
pub mod rng;
pub mod scalar;
pub mod sgd;
pub mod trajectory;

pub use activations::{hermite_coefficients, ActivationKind, HermiteTriple, McEstimate};
pub use error::{Error, Result};
pub use generators::{Generator, Teacher, WeightLaw};
pub use moments::MomentSet;
pub use ode::{OdeConfig, OdeState, OrderParams};
pub use replica::{ChannelSpec, Loss, ReplicaState, SpectralInputs};
pub use scalar::Scalar;
pub use sgd::{RunConfig, Student};
pub use trajectory::{RecordSchedule, Trajectory};

pub type Generator32 = Generator<f32>;
pub type Generator64 = Generator<f64>;
pub type Teacher32 = Teacher<f32>;
pub type Teacher64 = Teacher<f64>;
pub type Student32 = Student<f32>;
pub type Student64 = Student<f64>;
pub type OdeState32 = OdeState<f32>;
pub type OdeState64 = OdeState<f64>;
pub type OrderParams32 = OrderParams<f32>;
pub type OrderParams64 = OrderParams<f64>;
