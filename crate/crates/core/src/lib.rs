//! Solid-state dewetting of axisymmetric thin films on axisymmetric curved
//! substrates, discretized with parametric finite elements.

pub mod anisotropy;
pub mod banded;
pub mod cli;
pub mod diagnostics;
pub mod geometry;
pub mod mesh;
pub mod presets;
pub mod quadrature;
pub mod solver;
pub mod vector;
