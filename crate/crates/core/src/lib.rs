//! Atomistic, homogenized and heterogeneous quasicontinuum models of
//! multilattice crystals and random media.

pub mod atomistic;
pub mod dynamics;
pub mod error;
pub mod fem;
pub mod homog;
pub mod hqc;
pub mod lattice;
pub mod linalg;
pub mod mqc;
pub mod par;
pub mod potential;

pub use error::{Error, Result};
