//! Spectral exterior calculus and moment-map gradient flows of
//! diffeomorphisms of the flat tori `T^2` and `T^4`.
//!
//! Everything is generic over the scalar through [`Real`]; the `*64` and
//! `*32` aliases below fix the common choices.

pub mod error;
pub mod flow;
pub mod forms;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod maps;
pub mod moment;
pub mod perturb;
pub mod scalar;
pub mod symbol;
pub mod verify;

pub use error::{Error, Result};
pub use flow::{run, FlowState, Integrator, RunConfig, RunOutcome, RunSummary, StepOptions};
pub use forms::{ConstantForm, ConstantStructures, KForm, Structure, VectorField};
pub use grid::{ScalarField, Spectrum, TorusGrid};
pub use maps::{JacobianField, TangentField, TorusMap};
pub use scalar::Real;
pub use symbol::SymbolMatrix;

pub type ScalarField64 = ScalarField<f64>;
pub type ScalarField32 = ScalarField<f32>;
pub type KForm64 = KForm<f64>;
pub type KForm32 = KForm<f32>;
pub type VectorField64 = VectorField<f64>;
pub type VectorField32 = VectorField<f32>;
pub type TorusMap64 = TorusMap<f64>;
pub type TorusMap32 = TorusMap<f32>;
pub type FlowState64 = FlowState<f64>;
pub type FlowState32 = FlowState<f32>;
