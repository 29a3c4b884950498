//! Polynomial-chaos uncertainty quantification for parametric ODE and DAE
//! systems, with stochastic Galerkin and collocation full-order models,
//! POD model order reduction and low-dimensional output representations.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`);
//! the aliases below fix it to `f64`, which is what the pipeline uses.

pub mod analysis;
pub mod collocation;
pub mod error;
pub mod fom;
pub mod galerkin;
pub mod linalg;
pub mod lowdim;
pub mod models;
pub mod mor;
pub mod pcbasis;
pub mod pipeline;
pub mod quadrature;
pub mod scalar;
pub mod timeint;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ParameterBox = pcbasis::ParameterBox<f64>;
pub type BasisSpec = pcbasis::BasisSpec<f64>;
pub type QuadratureRule = quadrature::QuadratureRule<f64>;
pub type ParametricSystem = models::ParametricSystem<f64>;
pub type GalerkinSystem = galerkin::GalerkinSystem<f64>;
pub type CollocationSystem = collocation::CollocationSystem<f64>;
pub type Trajectory = timeint::Trajectory<f64>;
pub type PodResult = mor::PodResult<f64>;
pub type Representation = lowdim::Representation<f64>;
pub type ErrorReport = analysis::ErrorReport<f64>;
pub type Statistics = analysis::Statistics<f64>;
