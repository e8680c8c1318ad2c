//! Proprioceptive sensing of mud and depth-adaptive flipper locomotion.
//!
//! A flipper-driven robot reads its own motor currents and joint angles to
//! estimate three mud coefficients, penetration resistance `k_p`, shear
//! strength `k_s` and extraction resistance `k_e`, then picks an insertion
//! depth that neither slips nor gets stuck. The terrain is a resistive-force
//! model with a yield cap ([`mud`]); everything the estimator sees passes
//! through the motor model ([`actuator`]) and force map ([`kinematics`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuator;
pub mod config;
pub mod error;
pub mod estimator;
pub mod gait;
pub mod harness;
pub mod kinematics;
pub mod mud;
pub mod par;
pub mod plot;
pub mod sim;

pub use error::{Error, Result};
