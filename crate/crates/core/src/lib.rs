// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod edmdc;
pub mod config;
pub mod error;
pub mod footstep;
pub mod gait;
pub mod geom;
pub mod harness;
pub mod lifting;
pub mod mpc;
pub mod nominal;
pub mod plant;
pub mod qp;
pub mod residual;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` instantiations used by the controller and the harness.
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Rotation = geom::Rotation<f64>;
pub type State = nominal::TemplateState<f64>;
pub type PlantState = plant::PlantState<f64>;
pub type SrbParams = plant::SrbParams<f64>;
pub type Plant = plant::SrbPlant<f64>;
pub type LiftedModel = edmdc::LiftedModel<f64>;
pub type ResidualModel = residual::ResidualModel<f64>;
pub type QpProblem = qp::QpProblem<f64>;
