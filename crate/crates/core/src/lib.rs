//! Disentangled task/embodiment video generation with rectified flow.

pub mod encoders;
pub mod generator;
pub mod geometry;
pub mod harness;
pub mod numerics;
pub mod objectives;
pub mod synthworld;
