//! Identifiability analysis for spatial confounding models.
//!
//! The crate covers five families of joint Gaussian models for a treatment
//! field `Z` and an unmeasured confounder `U` observed through
//! `Y = Z beta + U + eps`:
//!
//! * CAR with a cross-precision term,
//! * Leroux CAR (non-parsimonious and parsimonious cross-covariance),
//! * linear model of coregionalization,
//! * bivariate stationary covariance families,
//! * parsimonious bivariate Matérn.
//!
//! [`models`] maps parameters to observed moments, [`identify`] checks the
//! sufficient conditions for identifiability of `beta`, [`forge`] builds
//! explicit observationally equivalent alternatives where those conditions
//! fail, and [`mc`] samples, evaluates likelihoods and fits by maximum
//! likelihood.

pub mod error;
pub mod forge;
pub mod graph;
pub mod identify;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod models;
pub mod optim;
pub mod scenarios;
pub mod specfun;

pub use error::{Error, Result};
