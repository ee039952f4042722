//! Numerical toolkit for Maupertuis-Jacobi pairs
//! of 2-D Hamiltonians: paired flows, torus reparametrisation, action-angle
//! charts, Bohr-Sommerfeld-Maslov lattices and direct spectral oracles.

pub mod action_angle;
pub mod bsm;
pub mod error;
pub mod flow;
pub mod katok;
pub mod larmor;
pub mod mj;
pub mod models;
pub mod ode;
pub mod quadrature;
pub mod spectral;
pub mod trig;

pub use error::{Error, Result};
