//! Rigid-body freefall dynamics for a skydiver with a time-varying posture.

pub mod aero;
pub mod body;
pub mod cli;
pub mod dynamics;
pub mod estimator;
pub mod ingest;
pub mod kinematics;
pub mod maneuvers;
pub mod spatial;
