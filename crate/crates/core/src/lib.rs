//! Deterministic simulation engine for RIS-aided localization and sensing.
//!
//! The crate models beacons, reconfigurable intelligent surfaces (RISs),
//! access points and user equipments (UEs) in a local Cartesian frame,
//! synthesizes pilot observations through RIS-reflected channels, computes
//! Fisher-information position error bounds, runs position estimators for
//! the single-RIS (A1), multi-RIS (A2), cooperative (B1) and monostatic (C1)
//! scenarios, and simulates the AP-coordinated and self-coordinated
//! localization protocols.

// `!(x > 0.0)` is how NaN-rejecting validation reads here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod estimators;
pub mod fim;
pub mod geometry;
pub mod profiles;
pub mod protocol;
pub mod scenario_file;
pub mod scene;

mod util;

pub use error::{Error, Result};
pub use geometry::{AngularDirection, Pose, Rotation, Vec3, SPEED_OF_LIGHT};
pub use scene::{ApSpec, BeaconSpec, CoverageClass, Obstacle, RisSpec, Scenario, UeSpec};

pub use num_complex::Complex64;
