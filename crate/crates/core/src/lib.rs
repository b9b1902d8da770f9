//! Joint location and velocity estimation of a moving user and its scatterers
//! from hybrid TDOA/FDOA/AOA measurements at distributed remote radio heads.

pub mod cli;
pub mod crlb;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod noise;
pub mod par;
pub mod rng;
pub mod scenario;
pub mod scatterer_wls;
pub mod selection;
pub mod ue_wls;

pub use error::{Error, Result};
pub use geometry::{ScattererState, UeState, Vec3};
