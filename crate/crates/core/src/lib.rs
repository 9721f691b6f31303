//! Data-driven robust control invariant sets for LPV systems.
//!
//! The core is generic over the scalar type. `f64` aliases live at the crate root.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cc_template;
pub mod dataset;
pub mod linops;
pub mod lp;
pub mod polytope;
pub mod runtime;
pub mod scalar;
pub mod synthesis;

pub use scalar::Scalar;

pub type Mat = linops::Matrix<f64>;
pub type Poly = polytope::Polytope<f64>;
pub type Template = cc_template::CcTemplate<f64>;
pub type Trajectory = dataset::TrajectoryData<f64>;
pub type ModelSet = dataset::FeasibleModelSet<f64>;
pub type Problem = synthesis::SynthesisProblem<f64>;
pub type Solution = synthesis::RciSolution<f64>;
pub type Plant = runtime::PlantModel<f64>;

pub type Mat32 = linops::Matrix<f32>;
pub type Poly32 = polytope::Polytope<f32>;
pub type Template32 = cc_template::CcTemplate<f32>;
