//! Reference generators for the step, circular, helical and square scenarios.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("time {t} s is outside [0, {t_final}] s")]
    OutOfRange { t: f64, t_final: f64 },
    #[error("invalid trajectory: {0}")]
    Invalid(String),
}

/// Slack on the end of the horizon so that grid points computed as `k * dt`
/// are never rejected for round-off.
const TIME_SLACK: f64 = 1e-9;

/// Desired position and yaw plus their analytic time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub x_de: f64,
    pub y_de: f64,
    pub z_de: f64,
    pub psi_de: f64,
    pub x_de_dot: f64,
    pub y_de_dot: f64,
    pub z_de_dot: f64,
    pub psi_de_dot: f64,
}

fn default_omega() -> f64 {
    0.1 * PI
}
fn default_radius() -> f64 {
    1.0
}
fn default_start() -> f64 {
    5.0
}
fn default_one() -> f64 {
    1.0
}
fn default_climb() -> f64 {
    0.2
}

/// Shape of the reference path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectoryKind {
    /// Constant set-points applied from `t = 0`.
    Step {
        #[serde(default = "default_one")]
        x: f64,
        #[serde(default = "default_one")]
        y: f64,
        #[serde(default = "default_one")]
        z: f64,
        #[serde(default = "default_one")]
        psi: f64,
    },
    /// `(r cos(wt), r sin(wt))` from `start` on, zero before; constant `z`, `psi`.
    Circular {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_omega")]
        omega: f64,
        #[serde(default = "default_start")]
        start: f64,
        #[serde(default = "default_one")]
        z: f64,
        #[serde(default = "default_one")]
        psi: f64,
    },
    /// The circular lateral path with altitude `climb_rate * t`.
    Helical {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_omega")]
        omega: f64,
        #[serde(default = "default_start")]
        start: f64,
        #[serde(default = "default_climb")]
        climb_rate: f64,
        #[serde(default = "default_one")]
        psi: f64,
    },
    /// Rectangular pulses: `x` high on `[x_on, x_off)`, `y` high on `[y_on, y_off)`.
    Square {
        #[serde(default = "default_one")]
        amplitude: f64,
        x_on: f64,
        x_off: f64,
        y_on: f64,
        y_off: f64,
        #[serde(default = "default_one")]
        z: f64,
        #[serde(default = "default_one")]
        psi: f64,
    },
}

/// Unknown keys are rejected by the flattened [`TrajectoryKind`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(flatten)]
    pub kind: TrajectoryKind,
    pub t_final: f64,
}

impl TrajectorySpec {
    pub fn unit_step(t_final: f64) -> Self {
        Self {
            kind: TrajectoryKind::Step { x: 1.0, y: 1.0, z: 1.0, psi: 1.0 },
            t_final,
        }
    }

    pub fn circular(t_final: f64) -> Self {
        Self {
            kind: TrajectoryKind::Circular {
                radius: 1.0,
                omega: default_omega(),
                start: 5.0,
                z: 1.0,
                psi: 1.0,
            },
            t_final,
        }
    }

    pub fn helical(t_final: f64) -> Self {
        Self {
            kind: TrajectoryKind::Helical {
                radius: 1.0,
                omega: default_omega(),
                start: 5.0,
                climb_rate: 0.2,
                psi: 1.0,
            },
            t_final,
        }
    }

    pub fn square(t_final: f64) -> Self {
        Self {
            kind: TrajectoryKind::Square {
                amplitude: 1.0,
                x_on: 10.0,
                x_off: 50.0,
                y_on: 30.0,
                y_off: 70.0,
                z: 1.0,
                psi: 1.0,
            },
            t_final,
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(TrajectoryError::Invalid(format!("t_final must be positive, got {}", self.t_final)));
        }
        // Switching times past the horizon are allowed and simply never fire.
        let within = |name: &str, t: f64| {
            if t.is_finite() && t >= 0.0 {
                Ok(())
            } else {
                Err(TrajectoryError::Invalid(format!("{name} = {t} s must be a non-negative time")))
            }
        };
        match self.kind {
            TrajectoryKind::Step { .. } => Ok(()),
            TrajectoryKind::Circular { start, .. } | TrajectoryKind::Helical { start, .. } => within("start", start),
            TrajectoryKind::Square { x_on, x_off, y_on, y_off, .. } => {
                within("x_on", x_on)?;
                within("x_off", x_off)?;
                within("y_on", y_on)?;
                within("y_off", y_off)?;
                if x_on > x_off || y_on > y_off {
                    return Err(TrajectoryError::Invalid("square edges must be ordered on <= off".into()));
                }
                Ok(())
            }
        }
    }

    /// Number of samples on the grid `{0, dt, ..., t_final}`.
    pub fn grid_len(&self, dt: f64) -> usize {
        grid_len(self.t_final, dt)
    }
}

/// `floor(t_final / dt) + 1`, tolerant of representation error in the ratio.
pub fn grid_len(t_final: f64, dt: f64) -> usize {
    ((t_final / dt) * (1.0 + 1e-12)).floor() as usize + 1
}

fn circle(radius: f64, omega: f64, start: f64, t: f64) -> (f64, f64, f64, f64) {
    if t < start {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let (s, c) = (omega * t).sin_cos();
    (radius * c, radius * s, -radius * omega * s, radius * omega * c)
}

fn pulse(on: f64, off: f64, t: f64) -> f64 {
    if t >= on && t < off {
        1.0
    } else {
        0.0
    }
}

/// Reference at time `t`.
pub fn sample(spec: &TrajectorySpec, t: f64) -> Result<ReferenceSample, TrajectoryError> {
    if !(t >= 0.0 && t <= spec.t_final + TIME_SLACK) {
        return Err(TrajectoryError::OutOfRange { t, t_final: spec.t_final });
    }
    Ok(match spec.kind {
        TrajectoryKind::Step { x, y, z, psi } => ReferenceSample {
            x_de: x,
            y_de: y,
            z_de: z,
            psi_de: psi,
            ..Default::default()
        },
        TrajectoryKind::Circular { radius, omega, start, z, psi } => {
            let (x, y, xd, yd) = circle(radius, omega, start, t);
            ReferenceSample {
                x_de: x,
                y_de: y,
                z_de: z,
                psi_de: psi,
                x_de_dot: xd,
                y_de_dot: yd,
                ..Default::default()
            }
        }
        TrajectoryKind::Helical { radius, omega, start, climb_rate, psi } => {
            let (x, y, xd, yd) = circle(radius, omega, start, t);
            ReferenceSample {
                x_de: x,
                y_de: y,
                z_de: climb_rate * t,
                psi_de: psi,
                x_de_dot: xd,
                y_de_dot: yd,
                z_de_dot: climb_rate,
                psi_de_dot: 0.0,
            }
        }
        TrajectoryKind::Square { amplitude, x_on, x_off, y_on, y_off, z, psi } => ReferenceSample {
            x_de: amplitude * pulse(x_on, x_off, t),
            y_de: amplitude * pulse(y_on, y_off, t),
            z_de: z,
            psi_de: psi,
            ..Default::default()
        },
    })
}

/// Samples on the uniform grid `t_k = k * dt`.
pub fn sample_series(spec: &TrajectorySpec, dt: f64) -> Result<Vec<ReferenceSample>, TrajectoryError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TrajectoryError::Invalid(format!("dt must be positive, got {dt}")));
    }
    (0..spec.grid_len(dt)).map(|k| sample(spec, k as f64 * dt)).collect()
}
