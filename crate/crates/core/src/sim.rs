//! Fixed-step closed-loop simulation.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{AttitudeReference, CascadeController, CascadeSettings, ControllerGains, GainError};
use crate::dynamics::{self, ControlInputs, DynamicsError, QuadParams, RigidBodyState, RotorSpeeds, WindDisturbance};
use crate::trajectories::{self, ReferenceSample, TrajectoryError, TrajectorySpec};

/// Any state component beyond this magnitude ends the run as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Params(#[from] DynamicsError),
    #[error(transparent)]
    Gains(#[from] GainError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Classical fourth-order Runge-Kutta step with the inputs held constant.
pub fn rk4_step(
    state: &RigidBodyState,
    inputs: &ControlInputs,
    wind: &WindDisturbance,
    params: &QuadParams,
    dt: f64,
) -> Result<RigidBodyState, DynamicsError> {
    let f = |s: &RigidBodyState| dynamics::derivatives(s, inputs, wind, params);
    let k1 = f(state)?;
    let k2 = f(&state.offset(&k1, 0.5 * dt))?;
    let k3 = f(&state.offset(&k2, 0.5 * dt))?;
    let k4 = f(&state.offset(&k3, dt))?;
    let mut next = state.to_array();
    for i in 0..RigidBodyState::DIM {
        next[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(RigidBodyState::from_array(next))
}

/// A complete closed-loop experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: QuadParams,
    pub controller: ControllerGains,
    #[serde(default)]
    pub cascade: CascadeSettings,
    pub trajectory: TrajectorySpec,
    pub initial_state: RigidBodyState,
    pub dt: f64,
    pub t_final: f64,
    /// Controller updates every `controller_rate` integration steps.
    pub controller_rate: u32,
    #[serde(default)]
    pub wind: WindDisturbance,
    /// Replace the commanded wrench with the nearest one the rotors can
    /// realise (squared speeds clipped at zero).
    #[serde(default)]
    pub feasibility_clamp: bool,
}

impl Scenario {
    /// Default integration step, s.
    pub const DEFAULT_DT: f64 = 1e-3;

    /// Reference airframe, the given gains and trajectory, starting from the
    /// `(0.1, 0.1, 0.1)` offset at rest.
    pub fn new(controller: ControllerGains, trajectory: TrajectorySpec) -> Self {
        Self {
            params: QuadParams::default(),
            controller,
            cascade: CascadeSettings::default(),
            t_final: trajectory.t_final,
            trajectory,
            initial_state: RigidBodyState::at_position(0.1, 0.1, 0.1),
            dt: Self::DEFAULT_DT,
            controller_rate: 1,
            wind: WindDisturbance::default(),
            feasibility_clamp: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        self.controller.validate()?;
        self.trajectory.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::InvalidScenario(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt) {
            return Err(SimError::InvalidScenario(format!(
                "t_final = {} must be at least dt = {}",
                self.t_final, self.dt
            )));
        }
        if self.t_final > self.trajectory.t_final + 1e-9 {
            return Err(SimError::InvalidScenario(format!(
                "t_final = {} exceeds the trajectory horizon {}",
                self.t_final, self.trajectory.t_final
            )));
        }
        if self.controller_rate == 0 {
            return Err(SimError::InvalidScenario("controller_rate must be at least 1".into()));
        }
        if !self.initial_state.is_finite() {
            return Err(SimError::InvalidScenario("initial state must be finite".into()));
        }
        if dynamics::euler_rate_matrix(self.initial_state.phi, self.initial_state.theta).is_err() {
            return Err(SimError::InvalidScenario("initial pitch is at the gimbal singularity".into()));
        }
        if !(self.cascade.angle_limit > 0.0) {
            return Err(SimError::InvalidScenario("angle_limit must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_len(&self) -> usize {
        trajectories::grid_len(self.t_final, self.dt)
    }
}

/// One logged grid point. `controls` and `attitude_ref` are the values
/// applied over `[t, t + dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: RigidBodyState,
    pub reference: ReferenceSample,
    /// `[Ux, Uy, Uz, Uphi, Utheta, Upsi]`.
    pub controls: [f64; 6],
    pub attitude_ref: AttitudeReference,
    /// Rotor speeds realising the applied wrench; `None` when infeasible.
    pub rotor_speeds: Option<RotorSpeeds>,
}

impl LogRow {
    pub fn applied_inputs(&self) -> ControlInputs {
        ControlInputs {
            ft: self.controls[2],
            tau_x: self.controls[3],
            tau_y: self.controls[4],
            tau_z: self.controls[5],
        }
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    /// A state component left `±DIVERGENCE_LIMIT` or became non-finite.
    Diverged { t: f64 },
    /// The Euler kinematics hit the gimbal singularity.
    Fault { t: f64, reason: String },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }

    /// Time at which the run stopped early, if it did.
    pub fn stop_time(&self) -> Option<f64> {
        match self {
            Termination::Completed => None,
            Termination::Diverged { t } | Termination::Fault { t, .. } => Some(*t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub dt: f64,
    pub t_final: f64,
    pub rows: Vec<LogRow>,
    pub termination: Termination,
    /// Controller ticks at which the thrust was too small to invert for
    /// attitude and the previous attitude reference was held instead.
    pub thrust_guard_ticks: usize,
}

/// Column names of the CSV export, in order.
pub const CSV_COLUMNS: [&str; 25] = [
    "t", "x", "y", "z", "phi", "theta", "psi", "u", "v", "w", "p", "q", "r", "x_de", "y_de", "z_de", "psi_de", "Ux",
    "Uy", "Uz", "Uphi", "Utheta", "Upsi", "phi_de", "theta_de",
];

impl SimLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn column(&self, f: impl Fn(&LogRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    /// Number of logged ticks whose wrench the rotors could not realise.
    pub fn infeasible_ticks(&self) -> usize {
        self.rows.iter().filter(|r| r.rotor_speeds.is_none()).count()
    }

    pub fn final_state(&self) -> Option<RigidBodyState> {
        self.rows.last().map(|r| r.state)
    }

    /// One header line, then one line per grid point with every value in
    /// scientific notation carrying nine significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        let mut line = String::with_capacity(25 * 16);
        for row in &self.rows {
            line.clear();
            let r = &row.reference;
            let values = std::iter::once(row.t)
                .chain(row.state.to_array())
                .chain([r.x_de, r.y_de, r.z_de, r.psi_de])
                .chain(row.controls)
                .chain([row.attitude_ref.phi_de, row.attitude_ref.theta_de]);
            for (i, v) in values.enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:.8e}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn realise(inputs: ControlInputs, params: &QuadParams, clamp: bool) -> (ControlInputs, Option<RotorSpeeds>) {
    match dynamics::unmix(&inputs, params) {
        Ok(speeds) => (inputs, Some(speeds)),
        Err(_) if clamp => {
            let collective = inputs.ft / params.b;
            let roll = inputs.tau_x / (params.b * params.l);
            let pitch = inputs.tau_y / (params.b * params.l);
            let yaw = inputs.tau_z / params.d;
            let pair13 = 0.5 * (collective - yaw);
            let pair24 = 0.5 * (collective + yaw);
            let squared = [
                0.5 * (pair13 - roll),
                0.5 * (pair24 - pitch),
                0.5 * (pair13 + roll),
                0.5 * (pair24 + pitch),
            ];
            let speeds = RotorSpeeds(squared.map(|s| s.max(0.0).sqrt()));
            (dynamics::mix(&speeds, params), None)
        }
        Err(_) => (inputs, None),
    }
}

/// Runs the scenario to `t_final` or until the run diverges or faults.
///
/// Configuration problems are errors; divergence and singularities are
/// reported through [`SimLog::termination`] with the log truncated at the
/// last good grid point.
pub fn simulate(scenario: &Scenario) -> Result<SimLog, SimError> {
    scenario.validate()?;
    let sc = scenario;
    let n = sc.grid_len();
    let control_dt = sc.dt * f64::from(sc.controller_rate);

    let mut controller = CascadeController::new(sc.controller, sc.cascade);
    let mut state = sc.initial_state;
    let mut rows = Vec::with_capacity(n);
    let mut held = (ControlInputs::default(), AttitudeReference::default(), [0.0; 6], None);
    let mut termination = Termination::Completed;
    let mut thrust_guard_ticks = 0;

    for k in 0..n {
        let t = k as f64 * sc.dt;
        let reference = trajectories::sample(&sc.trajectory, t)?;

        if k % sc.controller_rate as usize == 0 {
            match controller.step_guarded(&state, &reference, &sc.params, control_dt, held.1) {
                Ok((out, guarded)) => {
                    thrust_guard_ticks += usize::from(guarded);
                    let (applied, speeds) = realise(out.inputs, &sc.params, sc.feasibility_clamp);
                    let mut signals = out.signals();
                    signals[2] = applied.ft;
                    signals[3] = applied.tau_x;
                    signals[4] = applied.tau_y;
                    signals[5] = applied.tau_z;
                    held = (applied, out.attitude, signals, speeds);
                }
                Err(err) => {
                    termination = Termination::Fault { t, reason: err.to_string() };
                    break;
                }
            }
        }

        rows.push(LogRow {
            t,
            state,
            reference,
            controls: held.2,
            attitude_ref: held.1,
            rotor_speeds: held.3,
        });

        if k + 1 == n {
            break;
        }
        match rk4_step(&state, &held.0, &sc.wind, &sc.params, sc.dt) {
            Ok(next) if next.is_finite() && next.max_abs() <= DIVERGENCE_LIMIT => state = next,
            Ok(_) => {
                termination = Termination::Diverged { t: t + sc.dt };
                break;
            }
            Err(err) => {
                termination = Termination::Fault { t, reason: err.to_string() };
                break;
            }
        }
    }

    Ok(SimLog {
        dt: sc.dt,
        t_final: sc.t_final,
        rows,
        termination,
        thrust_guard_ticks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{LpidGains, PerChannel};
    use crate::presets;
    use approx::assert_abs_diff_eq;

    fn zero_gains() -> ControllerGains {
        ControllerGains::Lpid(PerChannel::from_fn(|_| LpidGains { kp: 0.0, ki: 0.0, kd: 0.0 }))
    }

    #[test]
    fn hover_trim_is_preserved_by_rk4() {
        let params = QuadParams::default();
        let inputs = ControlInputs {
            ft: params.hover_thrust(),
            ..Default::default()
        };
        let s0 = RigidBodyState::at_position(0.3, -0.2, 1.0);
        let s1 = rk4_step(&s0, &inputs, &WindDisturbance::default(), &params, 1e-3).unwrap();
        for (a, b) in s0.to_array().iter().zip(s1.to_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn free_fall_for_one_second() {
        let params = QuadParams::default();
        let mut s = RigidBodyState::default();
        for _ in 0..1000 {
            s = rk4_step(&s, &ControlInputs::default(), &WindDisturbance::default(), &params, 1e-3).unwrap();
        }
        assert_abs_diff_eq!(s.w, -9.81, epsilon = 1e-9);
        assert_abs_diff_eq!(s.z, -0.5 * 9.81, epsilon = 1e-9);
    }

    #[test]
    fn constant_yaw_torque_for_one_second() {
        let params = QuadParams::default();
        let inputs = ControlInputs {
            ft: params.hover_thrust(),
            tau_z: 0.01,
            ..Default::default()
        };
        let mut s = RigidBodyState::default();
        for _ in 0..1000 {
            s = rk4_step(&s, &inputs, &WindDisturbance::default(), &params, 1e-3).unwrap();
        }
        assert_abs_diff_eq!(s.r, 0.01 / 1.476e-2, epsilon = 1e-9);
        assert_abs_diff_eq!(s.r, 0.67751, epsilon = 1e-5);
        assert_abs_diff_eq!(s.psi, 0.5 * 0.01 / 1.476e-2, epsilon = 1e-9);
    }

    #[test]
    fn zero_gain_controller_falls_freely() {
        let mut sc = Scenario::new(zero_gains(), TrajectorySpec::unit_step(2.0));
        sc.initial_state = RigidBodyState::default();
        let log = simulate(&sc).unwrap();
        assert!(log.termination.is_completed());
        assert_eq!(log.len(), 2001);
        assert_eq!(log.thrust_guard_ticks, 2001);
        for row in log.rows.iter().step_by(250) {
            assert_abs_diff_eq!(row.state.w, -9.81 * row.t, epsilon = 1e-9);
            assert_abs_diff_eq!(row.state.z, -0.5 * 9.81 * row.t * row.t, epsilon = 1e-9);
            assert_eq!(row.controls, [0.0; 6]);
        }
    }

    #[test]
    fn grid_is_exact() {
        let mut sc = Scenario::new(ControllerGains::Nlpid(presets::preset_nlpid_gains()), TrajectorySpec::unit_step(1.0));
        sc.t_final = 0.95;
        sc.dt = 0.01;
        let log = simulate(&sc).unwrap();
        assert_eq!(log.len(), 96);
        for (k, row) in log.rows.iter().enumerate() {
            assert_eq!(row.t, k as f64 * 0.01);
        }
    }

    #[test]
    fn logged_controls_are_the_applied_ones() {
        let mut sc = Scenario::new(ControllerGains::Lpid(presets::preset_lpid_gains()), TrajectorySpec::unit_step(2.0));
        sc.controller_rate = 4;
        let log = simulate(&sc).unwrap();
        for pair in log.rows.windows(2) {
            let next = rk4_step(&pair[0].state, &pair[0].applied_inputs(), &sc.wind, &sc.params, sc.dt).unwrap();
            assert_eq!(next, pair[1].state);
        }
        // Held between controller ticks.
        for chunk in log.rows.chunks(4) {
            assert!(chunk.iter().all(|r| r.controls == chunk[0].controls));
        }
    }

    #[test]
    fn deterministic() {
        let sc = Scenario::new(ControllerGains::Nlpid(presets::preset_nlpid_gains()), TrajectorySpec::circular(3.0));
        assert_eq!(simulate(&sc).unwrap(), simulate(&sc).unwrap());
    }

    #[test]
    fn divergence_truncates_the_log() {
        let gains = ControllerGains::Lpid(PerChannel::from_fn(|c| match c {
            crate::control::Channel::Z => LpidGains { kp: 20.0, ki: 0.0, kd: 0.0 },
            _ => LpidGains { kp: 0.0, ki: 0.0, kd: 0.0 },
        }));
        let mut sc = Scenario::new(gains, TrajectorySpec::unit_step(10.0));
        sc.initial_state.u = 0.999e6;
        let log = simulate(&sc).unwrap();
        assert!(matches!(log.termination, Termination::Diverged { .. }), "{:?}", log.termination);
        assert!(log.len() < sc.grid_len());
        assert!(log.rows.iter().all(|r| r.state.max_abs() <= DIVERGENCE_LIMIT));
    }

    #[test]
    fn invalid_scenarios_are_errors() {
        let base = Scenario::new(zero_gains(), TrajectorySpec::unit_step(1.0));
        let mut sc = base.clone();
        sc.dt = 0.0;
        assert!(simulate(&sc).is_err());
        let mut sc = base.clone();
        sc.t_final = 2.0;
        assert!(simulate(&sc).is_err());
        let mut sc = base.clone();
        sc.controller_rate = 0;
        assert!(simulate(&sc).is_err());
        let mut sc = base;
        sc.params.m = -1.0;
        assert!(simulate(&sc).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut sc = Scenario::new(ControllerGains::Nlpid(presets::preset_nlpid_gains()), TrajectorySpec::unit_step(0.04));
        sc.dt = 0.01;
        let log = simulate(&sc).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 5);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines[0].starts_with("t,x,y,z,phi,theta,psi,u,v,w,p,q,r,x_de,y_de,z_de,psi_de,Ux,Uy,Uz,Uphi,Utheta,Upsi"));
        let first: Vec<_> = lines[1].split(',').collect();
        assert_eq!(first.len(), 25);
        assert_eq!(first[0], "0.00000000e0");
        assert_eq!(first[1], "1.00000000e-1");
        assert_eq!(first[0].parse::<f64>().unwrap(), 0.0);
    }
}
