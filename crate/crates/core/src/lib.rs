//! Classification and simulation toolkit for nearest-neighbour random walks
//! in random environment on regular coloured trees.
//!
//! The walk's regime (ergodic / null-recurrent / transient) is decided by a
//! spectral quantity lambda: the infimum over x in [0,1] of f(x) = E sum
//! eta_i^x for the uncoloured model, or of the Perron root rho(x) of the
//! moment matrix m(x) for the coloured model. Every analytic verdict can be
//! cross-checked against quenched Monte Carlo simulation ([`walk`]) and exact
//! multiplicative-chaos computations on truncated trees ([`chaos`]).

pub mod analytics;
pub mod chaos;
pub mod chromatic;
pub mod config;
pub mod env;
pub mod error;
pub mod ldp;
pub mod numerics;
pub mod rng;
pub mod walk;

pub use error::{Error, Result};
