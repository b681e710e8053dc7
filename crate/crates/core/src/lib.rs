//! Quadrotor flight simulation with cascade nonlinear PID control.
//!
//! The crate covers the 12-state rigid-body model, the position/attitude
//! cascade with linear and nonlinear PID laws, reference trajectories, a
//! fixed-step closed-loop simulator, performance indices, Hurwitz
//! certification of gain sets and a genetic-algorithm tuner.

pub mod control;
pub mod dynamics;
pub mod metrics;
pub mod presets;
pub mod sim;
pub mod stability;
pub mod trajectories;
pub mod tuning;

pub use control::{
    CascadeController, CascadeSettings, Channel, ControllerGains, ControllerKind, LpidGains, NlpidGains, PerChannel,
};
pub use dynamics::{AltitudeConvention, ControlInputs, QuadParams, RigidBodyState, RotorSpeeds, WindDisturbance};
pub use metrics::{MetricsReport, OpiWeights};
pub use sim::{simulate, Scenario, SimLog, Termination};
pub use stability::HurwitzReport;
pub use trajectories::{ReferenceSample, TrajectoryKind, TrajectorySpec};
pub use tuning::{GaConfig, GainVector};
