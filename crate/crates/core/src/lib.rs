//! Sparse camera-radar fusion with multi-modal planning on synthetic
//! driving scenes.

pub mod autodiff;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod model;
pub mod planner;
pub mod world;
