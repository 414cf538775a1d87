//! Geometry-free observers for pose and constant velocity bias on matrix Lie
//! groups.
//!
//! The observers never see the group element directly. They are driven by a
//! linear measurement `A = F g` or `A = g⁻¹ F` built from landmark observations,
//! and by a velocity reading corrupted with a constant bias. Both the
//! measurement estimate and the bias estimate converge exponentially from any
//! initial condition once the proportional gain clears a floor set by the
//! velocity and bias magnitudes.
//!
//! Module layout, bottom up:
//!
//! * [`matcore`]: dense matrices, exponential, SVD helpers, polar projection.
//! * [`liegroup`]: group descriptions, algebra elements, projection onto the algebra.
//! * [`kinematics`]: landmarks, measurement models, reference trajectories, bounds.
//! * [`observers`]: observer variants and their vector fields, gain checks.
//! * [`integrate`]: RK4 simulation of truth and observer together.
//! * [`analysis`]: error signals, Lyapunov certificates, exponential fits.
//! * [`cli`]: JSON configs, presets, CSV/JSON output.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod integrate;
pub mod kinematics;
pub mod liegroup;
pub mod matcore;
pub mod observers;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use integrate::{simulate, SimConfig, SimRecord};
pub use kinematics::{Bounds, LandmarkSet, MeasurementModel, Side};
pub use liegroup::{AlgebraElement, GroupSpec};
pub use matcore::Mat;
pub use observers::{Gains, ObserverKind, ObserverState};
