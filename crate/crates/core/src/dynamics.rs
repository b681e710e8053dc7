//! Rigid-body quadrotor model: rotor mixing, Euler kinematics and the
//! twelve-state Newton-Euler equations of motion.
//!
//! The state stores altitude positive up. Internally the translational
//! equations are the usual north-east-down body model; the vertical position
//! and the body-axis vertical velocity are stored with flipped sign so that
//! positive collective thrust raises `z`. [`AltitudeConvention::ZDown`]
//! evaluates the same equations without the flip.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound on `cos(theta)` before the Euler kinematics are declared singular.
pub const GIMBAL_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DynamicsError {
    #[error("gimbal singularity: cos(theta) = {cos_theta:e} is within {GIMBAL_EPSILON:e} of zero")]
    GimbalSingularity { cos_theta: f64 },
    #[error("infeasible command: solved squared rotor speed {rotor} is {value:e} < 0")]
    InfeasibleCommand { rotor: usize, value: f64 },
    #[error("invalid parameter {name} = {value}: must be finite and strictly positive")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Physical constants of the vehicle. Defaults are the reference airframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadParams {
    pub ix: f64,
    pub iy: f64,
    pub iz: f64,
    pub g: f64,
    pub m: f64,
    /// Thrust coefficient, N·s².
    pub b: f64,
    /// Drag (yaw moment) coefficient, N·m·s².
    pub d: f64,
    /// Motor-to-centre arm length, m.
    pub l: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            ix: 8.5532e-3,
            iy: 8.5532e-3,
            iz: 1.476e-2,
            g: 9.81,
            m: 0.964,
            b: 7.66e-5,
            d: 5.63e-6,
            l: 0.22,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("ix", self.ix),
            ("iy", self.iy),
            ("iz", self.iz),
            ("g", self.g),
            ("m", self.m),
            ("b", self.b),
            ("d", self.d),
            ("l", self.l),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(DynamicsError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    /// Collective thrust that balances gravity at level attitude.
    pub fn hover_thrust(&self) -> f64 {
        self.m * self.g
    }
}

/// Twelve-dimensional vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigidBodyState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl RigidBodyState {
    pub const DIM: usize = 12;

    pub fn at_position(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            ..Self::default()
        }
    }

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.x, self.y, self.z, self.phi, self.theta, self.psi, self.u, self.v, self.w, self.p,
            self.q, self.r,
        ]
    }

    pub fn from_array(a: [f64; 12]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            z: a[2],
            phi: a[3],
            theta: a[4],
            psi: a[5],
            u: a[6],
            v: a[7],
            w: a[8],
            p: a[9],
            q: a[10],
            r: a[11],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self + scale * rate`, element-wise.
    pub fn offset(&self, rate: &[f64; 12], scale: f64) -> Self {
        let mut a = self.to_array();
        for (ai, ri) in a.iter_mut().zip(rate) {
            *ai += scale * ri;
        }
        Self::from_array(a)
    }
}

/// Collective thrust and body torques.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInputs {
    pub ft: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub tau_z: f64,
}

impl ControlInputs {
    pub fn is_finite(&self) -> bool {
        self.ft.is_finite() && self.tau_x.is_finite() && self.tau_y.is_finite() && self.tau_z.is_finite()
    }
}

/// External wind wrench. Always zero in the shipped scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindDisturbance {
    pub fwx: f64,
    pub fwy: f64,
    pub fwz: f64,
    pub twx: f64,
    pub twy: f64,
    pub twz: f64,
}

/// Rotor angular speeds in rad/s, numbered as in the mixer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RotorSpeeds(pub [f64; 4]);

/// Sign convention for the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AltitudeConvention {
    /// `z` is altitude and `w` the body velocity along the thrust axis.
    #[default]
    ZUp,
    /// The equations exactly as written for a down-pointing `z` axis;
    /// positive thrust drives `z` negative.
    ZDown,
}

/// Body-to-earth rotation (Z-Y-X Euler sequence).
pub fn rotation_matrix(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Matrix3::new(
        cp * ct,
        cp * sf * st - cf * sp,
        sf * sp + cf * cp * st,
        ct * sp,
        cf * cp + sf * sp * st,
        cf * sp * st - cp * sf,
        -st,
        ct * sf,
        cf * ct,
    )
}

/// Maps body rates `(p, q, r)` to Euler angle rates.
pub fn euler_rate_matrix(phi: f64, theta: f64) -> Result<Matrix3<f64>, DynamicsError> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    if ct.abs() <= GIMBAL_EPSILON {
        return Err(DynamicsError::GimbalSingularity { cos_theta: ct });
    }
    let tt = st / ct;
    Ok(Matrix3::new(
        1.0,
        sf * tt,
        cf * tt,
        0.0,
        cf,
        -sf,
        0.0,
        sf / ct,
        cf / ct,
    ))
}

/// Earth-frame translational velocity `(x_dot, y_dot, z_dot)` of a state.
pub fn earth_velocity(state: &RigidBodyState, convention: AltitudeConvention) -> Vector3<f64> {
    let rot = rotation_matrix(state.phi, state.theta, state.psi);
    match convention {
        AltitudeConvention::ZDown => rot * Vector3::new(state.u, state.v, state.w),
        AltitudeConvention::ZUp => {
            let mut vel = rot * Vector3::new(state.u, state.v, -state.w);
            vel.z = -vel.z;
            vel
        }
    }
}

/// Euler angle rates `(phi_dot, theta_dot, psi_dot)` of a state.
pub fn euler_rates(state: &RigidBodyState) -> Result<Vector3<f64>, DynamicsError> {
    Ok(euler_rate_matrix(state.phi, state.theta)? * Vector3::new(state.p, state.q, state.r))
}

/// State derivative with altitude positive up.
pub fn derivatives(
    state: &RigidBodyState,
    inputs: &ControlInputs,
    wind: &WindDisturbance,
    params: &QuadParams,
) -> Result<[f64; 12], DynamicsError> {
    derivatives_with(AltitudeConvention::ZUp, state, inputs, wind, params)
}

pub fn derivatives_with(
    convention: AltitudeConvention,
    state: &RigidBodyState,
    inputs: &ControlInputs,
    wind: &WindDisturbance,
    params: &QuadParams,
) -> Result<[f64; 12], DynamicsError> {
    let s = state;
    let attitude_rates = euler_rates(s)?;

    // Work in the down-pointing body frame, then flip back if needed.
    let flip = match convention {
        AltitudeConvention::ZUp => -1.0,
        AltitudeConvention::ZDown => 1.0,
    };
    let w_down = flip * s.w;

    let rot = rotation_matrix(s.phi, s.theta, s.psi);
    let position_rates = rot * Vector3::new(s.u, s.v, w_down);

    let (sf, cf) = s.phi.sin_cos();
    let (st, ct) = s.theta.sin_cos();
    let g = params.g;
    let m = params.m;
    let u_dot = s.r * s.v - s.q * w_down - g * st + wind.fwx / m;
    let v_dot = -s.r * s.u + s.p * w_down + g * sf * ct + wind.fwy / m;
    let w_down_dot = s.q * s.u - s.p * s.v + g * cf * ct + (wind.fwz - inputs.ft) / m;

    let p_dot = (params.iy - params.iz) / params.ix * s.r * s.q + (inputs.tau_x + wind.twx) / params.ix;
    let q_dot = (params.iz - params.ix) / params.iy * s.p * s.r + (inputs.tau_y + wind.twy) / params.iy;
    let r_dot = (params.ix - params.iy) / params.iz * s.p * s.q + (inputs.tau_z + wind.twz) / params.iz;

    Ok([
        position_rates.x,
        position_rates.y,
        flip * position_rates.z,
        attitude_rates.x,
        attitude_rates.y,
        attitude_rates.z,
        u_dot,
        v_dot,
        flip * w_down_dot,
        p_dot,
        q_dot,
        r_dot,
    ])
}

/// Collective thrust and torques produced by the four rotors.
pub fn mix(omegas: &RotorSpeeds, params: &QuadParams) -> ControlInputs {
    let [s1, s2, s3, s4] = omegas.0.map(|o| o * o);
    ControlInputs {
        ft: params.b * (s1 + s2 + s3 + s4),
        tau_x: params.b * params.l * (s3 - s1),
        tau_y: params.b * params.l * (s4 - s2),
        tau_z: params.d * (s2 + s4 - s1 - s3),
    }
}

/// Rotor speeds realising a wrench; the exact inverse of [`mix`].
pub fn unmix(inputs: &ControlInputs, params: &QuadParams) -> Result<RotorSpeeds, DynamicsError> {
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

    // Cancellation in the sums above leaves round-off around exact zeros.
    let noise = 1e-12 * (collective.abs() + roll.abs() + pitch.abs() + yaw.abs());
    let mut omegas = [0.0; 4];
    for (i, &sq) in squared.iter().enumerate() {
        if sq < -noise || sq.is_nan() {
            return Err(DynamicsError::InfeasibleCommand { rotor: i + 1, value: sq });
        }
        omegas[i] = sq.max(0.0).sqrt();
    }
    Ok(RotorSpeeds(omegas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rest() -> RigidBodyState {
        RigidBodyState::default()
    }

    fn elementary(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, phi.cos(), -phi.sin(), 0.0, phi.sin(), phi.cos());
        let ry = Matrix3::new(theta.cos(), 0.0, theta.sin(), 0.0, 1.0, 0.0, -theta.sin(), 0.0, theta.cos());
        let rz = Matrix3::new(psi.cos(), -psi.sin(), 0.0, psi.sin(), psi.cos(), 0.0, 0.0, 0.0, 1.0);
        rz * ry * rx
    }

    #[test]
    fn rotation_at_zero_is_identity() {
        assert_eq!(rotation_matrix(0.0, 0.0, 0.0), Matrix3::identity());
    }

    #[test]
    fn rotation_matches_composed_elementary_rotations() {
        let r = rotation_matrix(0.1, 0.2, 0.3);
        let oracle = elementary(0.1, 0.2, 0.3);
        for (a, b) in r.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn euler_rate_matrix_cases() {
        assert_eq!(euler_rate_matrix(0.0, 0.0).unwrap(), Matrix3::identity());
        let m = euler_rate_matrix(0.1, 0.2).unwrap();
        let col = m * Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(col, Vector3::new(1.0, 0.0, 0.0));
        assert!(matches!(
            euler_rate_matrix(0.3, std::f64::consts::FRAC_PI_2),
            Err(DynamicsError::GimbalSingularity { .. })
        ));
    }

    #[test]
    fn hover_trim_is_an_equilibrium() {
        let params = QuadParams::default();
        let inputs = ControlInputs {
            ft: 0.964 * 9.81,
            ..Default::default()
        };
        assert_abs_diff_eq!(inputs.ft, 9.45684, epsilon = 1e-12);
        let d = derivatives(&rest(), &inputs, &WindDisturbance::default(), &params).unwrap();
        for v in d {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn free_fall_accelerates_downward() {
        let params = QuadParams::default();
        let d = derivatives(&rest(), &ControlInputs::default(), &WindDisturbance::default(), &params).unwrap();
        for (i, v) in d.iter().enumerate() {
            let expected = if i == 8 { -9.81 } else { 0.0 };
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn z_down_convention_is_the_mirror_image() {
        let params = QuadParams::default();
        let d = derivatives_with(
            AltitudeConvention::ZDown,
            &rest(),
            &ControlInputs::default(),
            &WindDisturbance::default(),
            &params,
        )
        .unwrap();
        assert_abs_diff_eq!(d[8], 9.81, epsilon = 1e-15);
        let climb = RigidBodyState { w: 2.0, ..rest() };
        let up = derivatives(&climb, &ControlInputs::default(), &WindDisturbance::default(), &params).unwrap();
        assert_abs_diff_eq!(up[2], 2.0, epsilon = 1e-15);
        let down = derivatives_with(
            AltitudeConvention::ZDown,
            &climb,
            &ControlInputs::default(),
            &WindDisturbance::default(),
            &params,
        )
        .unwrap();
        assert_abs_diff_eq!(down[2], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn pure_yaw_torque() {
        let params = QuadParams::default();
        let inputs = ControlInputs {
            ft: params.hover_thrust(),
            tau_z: 0.01,
            ..Default::default()
        };
        let d = derivatives(&rest(), &inputs, &WindDisturbance::default(), &params).unwrap();
        assert_abs_diff_eq!(d[11], 0.01 / 1.476e-2, epsilon = 1e-12);
        assert_abs_diff_eq!(d[11], 0.677_507, epsilon = 1e-6);
        for v in &d[..11] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gyroscopic_coefficients_cancel_for_symmetric_airframe() {
        let p = QuadParams::default();
        assert_eq!((p.iy - p.iz) / p.ix, -((p.iz - p.ix) / p.iy));
    }

    #[test]
    fn mixer_examples() {
        let params = QuadParams::default();
        assert_eq!(mix(&RotorSpeeds([0.0; 4]), &params), ControlInputs::default());

        let all = mix(&RotorSpeeds([100.0; 4]), &params);
        assert_abs_diff_eq!(all.ft, 3.064, epsilon = 1e-12);
        assert_abs_diff_eq!(all.tau_x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(all.tau_y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(all.tau_z, 0.0, epsilon = 1e-15);

        let roll = mix(&RotorSpeeds([0.0, 0.0, 1000f64.sqrt(), 0.0]), &params);
        assert_abs_diff_eq!(roll.tau_x, 7.66e-5 * 0.22 * 1000.0, epsilon = 1e-15);
        assert_abs_diff_eq!(roll.tau_x, 1.6852e-2, epsilon = 1e-7);
    }

    #[test]
    fn unmix_examples() {
        let params = QuadParams::default();
        let hover = unmix(
            &ControlInputs {
                ft: 3.064,
                ..Default::default()
            },
            &params,
        )
        .unwrap();
        for o in hover.0 {
            assert_abs_diff_eq!(o, 100.0, epsilon = 1e-9);
        }
        assert_eq!(unmix(&ControlInputs::default(), &params).unwrap(), RotorSpeeds([0.0; 4]));
        assert!(matches!(
            unmix(
                &ControlInputs {
                    ft: -1.0,
                    ..Default::default()
                },
                &params
            ),
            Err(DynamicsError::InfeasibleCommand { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(QuadParams::default().validate().is_ok());
        let bad = QuadParams {
            m: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(DynamicsError::InvalidParameter { name: "m", .. })));
    }

    fn angle() -> impl Strategy<Value = f64> {
        -std::f64::consts::PI..std::f64::consts::PI
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rotation_is_orthonormal(phi in angle(), theta in angle(), psi in angle()) {
            let r = rotation_matrix(phi, theta, psi);
            let err = (r.transpose() * r - Matrix3::identity()).abs().max();
            prop_assert!(err < 1e-10);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn derivatives_superpose_in_torque(
            phi in -1.0..1.0f64, theta in -1.0..1.0f64, psi in angle(),
            p in -3.0..3.0f64, q in -3.0..3.0f64, r in -3.0..3.0f64,
            u in -3.0..3.0f64, v in -3.0..3.0f64, w in -3.0..3.0f64,
            a in prop::array::uniform3(-0.1..0.1f64),
            b in prop::array::uniform3(-0.1..0.1f64),
        ) {
            let params = QuadParams::default();
            let wind = WindDisturbance::default();
            let s = RigidBodyState { phi, theta, psi, p, q, r, u, v, w, ..Default::default() };
            let with = |t: [f64; 3]| {
                let inputs = ControlInputs { ft: 9.0, tau_x: t[0], tau_y: t[1], tau_z: t[2] };
                derivatives(&s, &inputs, &wind, &params).unwrap()
            };
            let base = with([0.0; 3]);
            let da = with(a);
            let db = with(b);
            let dab = with([a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
            for i in 0..12 {
                let superposed = da[i] + db[i] - base[i];
                prop_assert!((dab[i] - superposed).abs() < 1e-10 * (1.0 + dab[i].abs()));
            }
        }

        #[test]
        fn unmix_inverts_mix(omegas in prop::array::uniform4(0.0..1000.0f64)) {
            let params = QuadParams::default();
            let back = unmix(&mix(&RotorSpeeds(omegas), &params), &params).unwrap();
            for (a, b) in omegas.iter().zip(back.0) {
                prop_assert!((a - b).abs() <= 1e-9 * 1000.0);
            }
        }

        #[test]
        fn mix_inverts_unmix_when_feasible(
            ft in 0.0..30.0f64, tx in -0.5..0.5f64, ty in -0.5..0.5f64, tz in -0.05..0.05f64,
        ) {
            let params = QuadParams::default();
            let inputs = ControlInputs { ft, tau_x: tx, tau_y: ty, tau_z: tz };
            if let Ok(speeds) = unmix(&inputs, &params) {
                let back = mix(&speeds, &params);
                let scale = 1.0 + ft;
                prop_assert!((back.ft - ft).abs() <= 1e-9 * scale);
                prop_assert!((back.tau_x - tx).abs() <= 1e-9 * scale);
                prop_assert!((back.tau_y - ty).abs() <= 1e-9 * scale);
                prop_assert!((back.tau_z - tz).abs() <= 1e-9 * scale);
            }
        }
    }
}
