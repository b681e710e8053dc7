//! Linear and nonlinear PID laws and the inner/outer cascade.
//!
//! Every channel computes `e = reference - measured` and
//! `e_dot = reference_rate - measured_rate`, where the measured rates are the
//! earth-frame velocities for `x, y, z` and the Euler angle rates for
//! `phi, theta, psi`. The attitude references produced by the outer loop
//! carry no rate, so their error derivative is just the negated angle rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, AltitudeConvention, ControlInputs, DynamicsError, QuadParams, RigidBodyState};
use crate::trajectories::ReferenceSample;

/// Default saturation of the commanded roll and pitch, rad.
pub const ANGLE_LIMIT: f64 = 0.5;
/// Collective thrust below which the tilt inversion is refused, N.
pub const THRUST_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ControlError {
    #[error("collective thrust {uz:e} N is too small to invert for attitude")]
    ThrustTooSmall { uz: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid gain {channel}.{name} = {value}: {reason}")]
pub struct GainError {
    pub channel: &'static str,
    pub name: &'static str,
    pub value: f64,
    pub reason: &'static str,
}

/// The six controlled degrees of freedom, in tuning-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    X,
    Y,
    Z,
    Phi,
    Theta,
    Psi,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::X,
        Channel::Y,
        Channel::Z,
        Channel::Phi,
        Channel::Theta,
        Channel::Psi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Z => "z",
            Channel::Phi => "phi",
            Channel::Theta => "theta",
            Channel::Psi => "psi",
        }
    }
}

/// One value per channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerChannel<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub phi: T,
    pub theta: T,
    pub psi: T,
}

impl<T> PerChannel<T> {
    pub fn from_fn(mut f: impl FnMut(Channel) -> T) -> Self {
        Self {
            x: f(Channel::X),
            y: f(Channel::Y),
            z: f(Channel::Z),
            phi: f(Channel::Phi),
            theta: f(Channel::Theta),
            psi: f(Channel::Psi),
        }
    }

    pub fn get(&self, channel: Channel) -> &T {
        match channel {
            Channel::X => &self.x,
            Channel::Y => &self.y,
            Channel::Z => &self.z,
            Channel::Phi => &self.phi,
            Channel::Theta => &self.theta,
            Channel::Psi => &self.psi,
        }
    }

    pub fn get_mut(&mut self, channel: Channel) -> &mut T {
        match channel {
            Channel::X => &mut self.x,
            Channel::Y => &mut self.y,
            Channel::Z => &mut self.z,
            Channel::Phi => &mut self.phi,
            Channel::Theta => &mut self.theta,
            Channel::Psi => &mut self.psi,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Channel, &T) -> U) -> PerChannel<U> {
        PerChannel::from_fn(|c| f(c, self.get(c)))
    }
}

/// Twelve-parameter nonlinear PID gains for one channel.
///
/// Term `i` (proportional, derivative, integral) applies the gain
/// `k_i1 + k_i2 / (1 + exp(mu_i * beta^2))` to `|beta|^alpha_i * sign(beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlpidGains {
    pub k11: f64,
    pub k12: f64,
    pub k21: f64,
    pub k22: f64,
    pub k31: f64,
    pub k32: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl NlpidGains {
    pub const LEN: usize = 12;

    /// Parameters in tuning order `[k11 k12 k21 k22 k31 k32 mu1 mu2 mu3 a1 a2 a3]`.
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.k11, self.k12, self.k21, self.k22, self.k31, self.k32, self.mu1, self.mu2, self.mu3,
            self.alpha1, self.alpha2, self.alpha3,
        ]
    }

    pub fn from_array(a: [f64; 12]) -> Self {
        Self {
            k11: a[0],
            k12: a[1],
            k21: a[2],
            k22: a[3],
            k31: a[4],
            k32: a[5],
            mu1: a[6],
            mu2: a[7],
            mu3: a[8],
            alpha1: a[9],
            alpha2: a[10],
            alpha3: a[11],
        }
    }

    /// The nonlinear law that reproduces a linear PID exactly.
    pub fn from_lpid(g: &LpidGains) -> Self {
        Self {
            k11: g.kp,
            k12: 0.0,
            k21: g.kd,
            k22: 0.0,
            k31: g.ki,
            k32: 0.0,
            mu1: 0.0,
            mu2: 0.0,
            mu3: 0.0,
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
        }
    }

    pub fn validate(&self, channel: &'static str) -> Result<(), GainError> {
        const NAMES: [&str; 12] = [
            "k11", "k12", "k21", "k22", "k31", "k32", "mu1", "mu2", "mu3", "alpha1", "alpha2", "alpha3",
        ];
        for (i, (&value, name)) in self.to_array().iter().zip(NAMES).enumerate() {
            if !value.is_finite() {
                return Err(GainError { channel, name, value, reason: "must be finite" });
            }
            if i >= 9 {
                if !(value > 0.0 && value <= 2.0) {
                    return Err(GainError { channel, name, value, reason: "exponent must lie in (0, 2]" });
                }
            } else if value < 0.0 {
                return Err(GainError { channel, name, value, reason: "must be non-negative" });
            }
        }
        Ok(())
    }
}

/// Linear PID gains for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl LpidGains {
    pub const LEN: usize = 3;

    /// Parameters in tuning order `[kp kd ki]`.
    pub fn to_array(&self) -> [f64; 3] {
        [self.kp, self.kd, self.ki]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { kp: a[0], kd: a[1], ki: a[2] }
    }

    pub fn validate(&self, channel: &'static str) -> Result<(), GainError> {
        for (name, value) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(GainError { channel, name, value, reason: "must be finite and non-negative" });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Lpid,
    Nlpid,
}

impl ControllerKind {
    pub fn params_per_channel(self) -> usize {
        match self {
            ControllerKind::Lpid => LpidGains::LEN,
            ControllerKind::Nlpid => NlpidGains::LEN,
        }
    }
}

/// A complete bank of six per-channel gain sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "gains", rename_all = "lowercase")]
pub enum ControllerGains {
    Lpid(PerChannel<LpidGains>),
    Nlpid(PerChannel<NlpidGains>),
}

impl ControllerGains {
    pub fn kind(&self) -> ControllerKind {
        match self {
            ControllerGains::Lpid(_) => ControllerKind::Lpid,
            ControllerGains::Nlpid(_) => ControllerKind::Nlpid,
        }
    }

    pub fn validate(&self) -> Result<(), GainError> {
        for c in Channel::ALL {
            match self {
                ControllerGains::Lpid(g) => g.get(c).validate(c.name())?,
                ControllerGains::Nlpid(g) => g.get(c).validate(c.name())?,
            }
        }
        Ok(())
    }

    /// Per-channel gains viewed through the nonlinear parameterisation.
    pub fn as_nlpid(&self) -> PerChannel<NlpidGains> {
        match self {
            ControllerGains::Lpid(g) => g.map(|_, l| NlpidGains::from_lpid(l)),
            ControllerGains::Nlpid(g) => *g,
        }
    }

    fn update(&self, channel: Channel, state: &mut ChannelState, e: f64, e_dot: f64, dt: f64) -> f64 {
        match self {
            ControllerGains::Lpid(g) => lpid_update(state, e, e_dot, dt, g.get(channel)),
            ControllerGains::Nlpid(g) => nlpid_update(state, e, e_dot, dt, g.get(channel)),
        }
    }
}

/// Integrator memory of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelState {
    pub integral_of_error: f64,
    pub previous_error: f64,
    /// False until the first sample has been seen.
    pub primed: bool,
    /// Symmetric clamp on the integral; `None` leaves it free.
    pub integral_limit: Option<f64>,
}

impl ChannelState {
    pub fn reset(&mut self) {
        self.integral_of_error = 0.0;
        self.previous_error = 0.0;
        self.primed = false;
    }

    /// Trapezoidal accumulation of `e`. The first sample opens the interval
    /// and contributes nothing.
    fn accumulate(&mut self, e: f64, dt: f64) -> f64 {
        if self.primed {
            self.integral_of_error += 0.5 * (self.previous_error + e) * dt;
        }
        if let Some(limit) = self.integral_limit {
            self.integral_of_error = self.integral_of_error.clamp(-limit, limit);
        }
        self.previous_error = e;
        self.primed = true;
        self.integral_of_error
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sector-bounded gain `ka + kb / (1 + exp(mu * beta^2))`, always in `[ka, ka + kb/2]`.
pub fn nl_gain(beta: f64, ka: f64, kb: f64, mu: f64) -> f64 {
    // exp overflows to +inf for large arguments and the quotient goes to 0.
    ka + kb / (1.0 + (mu * beta * beta).exp())
}

/// `nl_gain(beta) * |beta|^alpha * sign(beta)`.
pub fn nl_term(beta: f64, ka: f64, kb: f64, mu: f64, alpha: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    let magnitude = if alpha == 1.0 { beta.abs() } else { beta.abs().powf(alpha) };
    nl_gain(beta, ka, kb, mu) * magnitude * sign(beta)
}

pub fn nlpid_update(chan: &mut ChannelState, e: f64, e_dot: f64, dt: f64, gains: &NlpidGains) -> f64 {
    let integral = chan.accumulate(e, dt);
    let g = gains;
    nl_term(e, g.k11, g.k12, g.mu1, g.alpha1)
        + nl_term(e_dot, g.k21, g.k22, g.mu2, g.alpha2)
        + nl_term(integral, g.k31, g.k32, g.mu3, g.alpha3)
}

pub fn lpid_update(chan: &mut ChannelState, e: f64, e_dot: f64, dt: f64, gains: &LpidGains) -> f64 {
    let integral = chan.accumulate(e, dt);
    gains.kp * e + gains.kd * e_dot + gains.ki * integral
}

/// Commanded roll and pitch, rad.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AttitudeReference {
    pub phi_de: f64,
    pub theta_de: f64,
}

/// Tilt needed to realise lateral accelerations `(ux, uy)` at collective
/// thrust `uz`, before saturation.
///
/// Small-angle translational dynamics give
/// `x_ddot = -(uz/m)(phi sin(psi) + theta cos(psi))` and
/// `y_ddot = -(uz/m)(theta sin(psi) - phi cos(psi))`; the coefficient matrix
/// has unit determinant and its inverse is applied here.
pub fn tilt_demand(ux: f64, uy: f64, uz: f64, psi: f64, m: f64) -> Result<(f64, f64), ControlError> {
    if !(uz.abs() > THRUST_EPSILON) {
        return Err(ControlError::ThrustTooSmall { uz });
    }
    let (s, c) = psi.sin_cos();
    let scale = m / uz;
    Ok((scale * (-s * ux + c * uy), scale * (-c * ux - s * uy)))
}

/// [`tilt_demand`] saturated to `±angle_limit`.
pub fn outer_loop_angles_limited(
    ux: f64,
    uy: f64,
    uz: f64,
    psi: f64,
    m: f64,
    angle_limit: f64,
) -> Result<AttitudeReference, ControlError> {
    let (phi, theta) = tilt_demand(ux, uy, uz, psi, m)?;
    Ok(AttitudeReference {
        phi_de: phi.clamp(-angle_limit, angle_limit),
        theta_de: theta.clamp(-angle_limit, angle_limit),
    })
}

pub fn outer_loop_angles(ux: f64, uy: f64, uz: f64, psi: f64, m: f64) -> Result<AttitudeReference, ControlError> {
    outer_loop_angles_limited(ux, uy, uz, psi, m, ANGLE_LIMIT)
}

/// Tunables of the cascade that are not gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeSettings {
    pub angle_limit: f64,
    pub integral_limit: Option<f64>,
}

impl Default for CascadeSettings {
    fn default() -> Self {
        Self {
            angle_limit: ANGLE_LIMIT,
            integral_limit: None,
        }
    }
}

/// Everything one cascade evaluation produces.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CascadeOutput {
    pub inputs: ControlInputs,
    pub attitude: AttitudeReference,
    /// Virtual lateral accelerations `(Ux, Uy)`, m/s².
    pub ux: f64,
    pub uy: f64,
}

impl CascadeOutput {
    /// `[Ux, Uy, Uz, Uphi, Utheta, Upsi]`.
    pub fn signals(&self) -> [f64; 6] {
        [
            self.ux,
            self.uy,
            self.inputs.ft,
            self.inputs.tau_x,
            self.inputs.tau_y,
            self.inputs.tau_z,
        ]
    }
}

/// One evaluation of the full cascade: altitude, lateral virtual controls,
/// tilt inversion, then the three attitude loops.
pub fn cascade_step(
    state: &RigidBodyState,
    refs: &ReferenceSample,
    chans: &mut PerChannel<ChannelState>,
    gains: &ControllerGains,
    settings: &CascadeSettings,
    params: &QuadParams,
    dt: f64,
) -> Result<CascadeOutput, ControlError> {
    run_cascade(state, refs, chans, gains, settings, params, dt, None).map(|(out, _)| out)
}

/// Like [`cascade_step`], but when the collective thrust is too small to
/// invert, the attitude loops track `fallback` instead of failing. The flag
/// reports whether the fallback was used.
#[allow(clippy::too_many_arguments)]
pub fn cascade_step_guarded(
    state: &RigidBodyState,
    refs: &ReferenceSample,
    chans: &mut PerChannel<ChannelState>,
    gains: &ControllerGains,
    settings: &CascadeSettings,
    params: &QuadParams,
    dt: f64,
    fallback: AttitudeReference,
) -> Result<(CascadeOutput, bool), ControlError> {
    run_cascade(state, refs, chans, gains, settings, params, dt, Some(fallback))
}

#[allow(clippy::too_many_arguments)]
fn run_cascade(
    state: &RigidBodyState,
    refs: &ReferenceSample,
    chans: &mut PerChannel<ChannelState>,
    gains: &ControllerGains,
    settings: &CascadeSettings,
    params: &QuadParams,
    dt: f64,
    fallback: Option<AttitudeReference>,
) -> Result<(CascadeOutput, bool), ControlError> {
    let velocity = dynamics::earth_velocity(state, AltitudeConvention::ZUp);
    let rates = dynamics::euler_rates(state)?;

    let mut loop_for = |channel: Channel, e: f64, e_dot: f64| gains.update(channel, chans.get_mut(channel), e, e_dot, dt);

    let uz = loop_for(Channel::Z, refs.z_de - state.z, refs.z_de_dot - velocity.z);
    let ux = loop_for(Channel::X, refs.x_de - state.x, refs.x_de_dot - velocity.x);
    let uy = loop_for(Channel::Y, refs.y_de - state.y, refs.y_de_dot - velocity.y);

    let (attitude, guarded) = match (outer_loop_angles_limited(ux, uy, uz, state.psi, params.m, settings.angle_limit), fallback) {
        (Ok(a), _) => (a, false),
        (Err(ControlError::ThrustTooSmall { .. }), Some(held)) => (held, true),
        (Err(e), _) => return Err(e),
    };

    let tau_x = loop_for(Channel::Phi, attitude.phi_de - state.phi, -rates.x);
    let tau_y = loop_for(Channel::Theta, attitude.theta_de - state.theta, -rates.y);
    let tau_z = loop_for(Channel::Psi, refs.psi_de - state.psi, refs.psi_de_dot - rates.z);

    let out = CascadeOutput {
        inputs: ControlInputs { ft: uz, tau_x, tau_y, tau_z },
        attitude,
        ux,
        uy,
    };
    Ok((out, guarded))
}

/// Gains plus the integrator memory of all six channels for one run.
#[derive(Debug, Clone)]
pub struct CascadeController {
    gains: ControllerGains,
    settings: CascadeSettings,
    channels: PerChannel<ChannelState>,
}

impl CascadeController {
    pub fn new(gains: ControllerGains, settings: CascadeSettings) -> Self {
        let channels = PerChannel::from_fn(|_| ChannelState {
            integral_limit: settings.integral_limit,
            ..ChannelState::default()
        });
        Self { gains, settings, channels }
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn channels(&self) -> &PerChannel<ChannelState> {
        &self.channels
    }

    pub fn reset(&mut self) {
        for c in Channel::ALL {
            self.channels.get_mut(c).reset();
        }
    }

    pub fn step(
        &mut self,
        state: &RigidBodyState,
        refs: &ReferenceSample,
        params: &QuadParams,
        dt: f64,
    ) -> Result<CascadeOutput, ControlError> {
        cascade_step(state, refs, &mut self.channels, &self.gains, &self.settings, params, dt)
    }

    /// [`cascade_step_guarded`] on this controller's state.
    pub fn step_guarded(
        &mut self,
        state: &RigidBodyState,
        refs: &ReferenceSample,
        params: &QuadParams,
        dt: f64,
        fallback: AttitudeReference,
    ) -> Result<(CascadeOutput, bool), ControlError> {
        cascade_step_guarded(state, refs, &mut self.channels, &self.gains, &self.settings, params, dt, fallback)
    }
}
