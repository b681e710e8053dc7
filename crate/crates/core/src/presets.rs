//! Built-in gain sets and scenarios.

use crate::control::{ControllerGains, LpidGains, NlpidGains, PerChannel};
use crate::sim::Scenario;
use crate::trajectories::TrajectorySpec;

pub const PAPER_LPID: &str = "paper-lpid";
pub const PAPER_NLPID: &str = "paper-nlpid";

pub const STEP: &str = "step";
pub const CASE1_CIRCLE: &str = "case1-circle";
pub const CASE2_HELIX: &str = "case2-helix";
pub const CASE3_SQUARE: &str = "case3-square";

pub const CONTROLLER_PRESETS: [&str; 2] = [PAPER_LPID, PAPER_NLPID];
pub const TRAJECTORY_PRESETS: [&str; 4] = [STEP, CASE1_CIRCLE, CASE2_HELIX, CASE3_SQUARE];

/// Horizon of the unit-step scenario, s.
pub const STEP_T_FINAL: f64 = 50.0;

pub fn preset_lpid_gains() -> PerChannel<LpidGains> {
    let g = |kp, ki, kd| LpidGains { kp, ki, kd };
    PerChannel {
        x: g(0.28, 2.73e-6, 0.63),
        y: g(0.36, 1.56e-5, 0.88),
        z: g(184.02, 103.73, 22.5),
        phi: g(0.88, 0.9, 0.3),
        theta: g(0.62, 0.81, 0.05),
        psi: g(0.99, 0.49, 0.56),
    }
}

pub fn preset_nlpid_gains() -> PerChannel<NlpidGains> {
    // Rows k11 k12 k21 k22 k31 k32 mu1 mu2 mu3 a1 a2 a3; columns x y z phi theta psi.
    const TABLE: [[f64; 6]; 12] = [
        [1.51, 1.38, 27.5, 0.77, 0.48, 0.76],
        [0.04, 0.03, 8.76, 0.06, 0.03, 0.16],
        [1.13, 2.51, 8.8, 0.2, 0.08, 0.17],
        [0.18, 0.04, 4.71, 0.04, 0.12, 0.11],
        [1.81e-6, 5.72e-5, 18.49, 1.08, 0.88, 0.27],
        [1e-6, 8.69e-6, 10.02, 0.08, 0.11, 0.08],
        [0.11, 0.08, 0.31, 0.07, 0.84, 0.25],
        [0.08, 0.36, 0.36, 0.56, 1.43, 0.46],
        [0.18, 0.6, 0.98, 0.58, 0.28, 0.81],
        [0.93, 0.93, 0.96, 0.96, 0.96, 0.98],
        [0.93, 0.92, 0.97, 0.96, 1.0, 0.95],
        [0.95, 0.93, 0.97, 0.97, 0.97, 0.92],
    ];
    let column = |c: usize| NlpidGains::from_array(std::array::from_fn(|row| TABLE[row][c]));
    PerChannel {
        x: column(0),
        y: column(1),
        z: column(2),
        phi: column(3),
        theta: column(4),
        psi: column(5),
    }
}

pub fn controller(name: &str) -> Option<ControllerGains> {
    match name {
        PAPER_LPID => Some(ControllerGains::Lpid(preset_lpid_gains())),
        PAPER_NLPID => Some(ControllerGains::Nlpid(preset_nlpid_gains())),
        _ => None,
    }
}

pub fn trajectory(name: &str) -> Option<TrajectorySpec> {
    match name {
        STEP => Some(TrajectorySpec::unit_step(STEP_T_FINAL)),
        CASE1_CIRCLE => Some(TrajectorySpec::circular(50.0)),
        CASE2_HELIX => Some(TrajectorySpec::helical(100.0)),
        CASE3_SQUARE => Some(TrajectorySpec::square(100.0)),
        _ => None,
    }
}

/// Reference airframe and initial offset with a named controller and trajectory.
pub fn scenario(controller_name: &str, trajectory_name: &str) -> Option<Scenario> {
    Some(Scenario::new(controller(controller_name)?, trajectory(trajectory_name)?))
}
