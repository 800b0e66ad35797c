//! Whole-body trajectory optimization for floating-base multi-contact
//! robots, built around a contact-stability soft-constrained Box-FDDP
//! solver, plus a PD-tracked replay simulator to verify the physical
//! consistency of the optimized motions.

pub mod costs;
pub mod gaitplan;
pub mod dynamics;
pub mod math;
pub mod model;
pub mod replay;
pub mod solver;
pub mod trajio;
