//! Globally optimal value function and feedback controller for pendulum
//! swing-up.
//!
//! The pipeline: solve the upright-linearization Riccati equation for the
//! local value function and a terminal ellipse; integrate the state/costate
//! optimality ODEs backward from densely sampled ellipse points; extract the
//! nonsmooth curve where 2pi-shifted value sheets meet; clip trajectories to
//! their own sheet; interpolate the clipped samples into a queryable value
//! field and controller; certify the result through its HJB residuals; and
//! optionally distill the field into a small network.

pub mod baselines;
pub mod certify;
pub mod config;
pub mod distill;
pub mod export;
pub mod pipeline;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod lqr;
pub mod nonsmooth;
pub mod ode;
pub mod pmp;
pub mod valuefield;

pub use dynamics::{Costate, CostParams, PendulumParams, State};
pub use error::Error;
