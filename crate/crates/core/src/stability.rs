//! Hurwitz certification of the linearised closed loops.
//!
//! Each subsystem is a double integrator `ẍ = h U` under a PID-type law
//! whose gains stay inside the sector box `[k_i1, k_i1 + k_i2/2]`. With the
//! exponents taken as 1 the error dynamics are third order with
//! characteristic polynomial `λ³ + h k2 λ² + h k1 λ + h k3`.

use nalgebra::{Complex, Matrix3};
use serde::{Deserialize, Serialize};

use crate::control::{Channel, ControllerGains, NlpidGains, PerChannel};
use crate::dynamics::QuadParams;

/// A linearised double-integrator subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub channel: Channel,
    /// Input effectiveness.
    pub h: f64,
}

impl SubsystemSpec {
    /// `1/Ix`, `1/Iy`, `1/Iz` for attitude, 1 for `x` and `y`, `1/m` for altitude.
    pub fn for_channel(channel: Channel, params: &QuadParams) -> Self {
        let h = match channel {
            Channel::X | Channel::Y => 1.0,
            Channel::Z => 1.0 / params.m,
            Channel::Phi => 1.0 / params.ix,
            Channel::Theta => 1.0 / params.iy,
            Channel::Psi => 1.0 / params.iz,
        };
        Self { channel, h }
    }

    pub fn all(params: &QuadParams) -> PerChannel<SubsystemSpec> {
        PerChannel::from_fn(|c| Self::for_channel(c, params))
    }
}

/// Monic cubic `λ³ + a2 λ² + a1 λ + a0`, stored highest power first.
pub type Cubic = [f64; 4];

pub fn char_poly(k1: f64, k2: f64, k3: f64, h: f64) -> Cubic {
    [1.0, h * k2, h * k1, h * k3]
}

/// Hurwitz minors of a monic cubic: `Δ1 = a2`, `Δ2 = a2 a1 - a0`, `Δ3 = a0 Δ2`.
pub fn hurwitz_minors(c: &Cubic) -> (f64, f64, f64) {
    let [_, a2, a1, a0] = *c;
    let d2 = a2 * a1 - a0;
    (a2, d2, a0 * d2)
}

/// Name of the first non-positive minor, if any.
pub fn failing_minor(minors: (f64, f64, f64)) -> Option<&'static str> {
    match minors {
        (d1, _, _) if !(d1 > 0.0) => Some("delta1"),
        (_, d2, _) if !(d2 > 0.0) => Some("delta2"),
        (_, _, d3) if !(d3 > 0.0) => Some("delta3"),
        _ => None,
    }
}

/// Roots of a monic cubic as eigenvalues of its companion matrix.
pub fn roots(c: &Cubic) -> [Complex<f64>; 3] {
    let [_, a2, a1, a0] = *c;
    #[rustfmt::skip]
    let companion = Matrix3::new(
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
        -a0, -a1, -a2,
    );
    let ev = companion.complex_eigenvalues();
    [ev[0], ev[1], ev[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerResult {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub stable: bool,
}

/// The closed-form bound on the derivative gain that keeps `Δ2 > 0` when the
/// proportional gain sits at its sector maximum and the integral gain at
/// its nominal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBound {
    /// `k21`.
    pub k21: f64,
    /// `k31 / (h (k11 + k12/2))`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurwitzReport {
    pub channel: Channel,
    pub h: f64,
    /// Minors at the corner minimising `Δ2` (lowest `k1`, `k2`, highest `k3`).
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub stable: bool,
    /// First non-positive minor over the corners, when unstable.
    pub failing_minor: Option<String>,
    pub corner_results: Vec<CornerResult>,
    pub derivative_bound: DerivativeBound,
    /// Largest `|alpha_i - 1|`; the certificate assumes all exponents are 1.
    pub max_alpha_deviation: f64,
}

fn corner(k1: f64, k2: f64, k3: f64, h: f64) -> CornerResult {
    let (delta1, delta2, delta3) = hurwitz_minors(&char_poly(k1, k2, k3, h));
    CornerResult {
        k1,
        k2,
        k3,
        delta1,
        delta2,
        delta3,
        stable: failing_minor((delta1, delta2, delta3)).is_none(),
    }
}

/// Checks the minors at all eight corners of the sector box.
pub fn verify_sector(channel: Channel, gains: &NlpidGains, h: f64) -> HurwitzReport {
    let g = gains;
    let range = |lo: f64, extra: f64| [lo, lo + extra / 2.0];
    let (r1, r2, r3) = (range(g.k11, g.k12), range(g.k21, g.k22), range(g.k31, g.k32));

    let mut corner_results = Vec::with_capacity(8);
    for k1 in r1 {
        for k2 in r2 {
            for k3 in r3 {
                corner_results.push(corner(k1, k2, k3, h));
            }
        }
    }
    let stable = corner_results.iter().all(|c| c.stable);
    let failing = corner_results.iter().find_map(|c| failing_minor((c.delta1, c.delta2, c.delta3)));
    let worst = corner(r1[0], r2[0], r3[1], h);

    let bound = g.k31 / (h * (g.k11 + g.k12 / 2.0));
    let max_alpha_deviation = [g.alpha1, g.alpha2, g.alpha3]
        .iter()
        .fold(0.0_f64, |m, a| m.max((a - 1.0).abs()));

    HurwitzReport {
        channel,
        h,
        delta1: worst.delta1,
        delta2: worst.delta2,
        delta3: worst.delta3,
        stable,
        failing_minor: failing.map(str::to_string),
        corner_results,
        derivative_bound: DerivativeBound {
            k21: g.k21,
            bound,
            holds: g.k21 > bound,
        },
        max_alpha_deviation,
    }
}

/// Certifies every channel of a gain bank. Linear gains are checked as the
/// nonlinear law with zero sector width.
pub fn verify_controller(gains: &ControllerGains, params: &QuadParams) -> PerChannel<HurwitzReport> {
    let nl = gains.as_nlpid();
    PerChannel::from_fn(|c| verify_sector(c, nl.get(c), SubsystemSpec::for_channel(c, params).h))
}

/// Fixed-width text table, one row per subsystem.
pub fn render_reports(reports: &PerChannel<HurwitzReport>) -> String {
    let mut out = format!(
        "{:<7}{:>12}{:>14}{:>14}{:>14}{:>9}{:>11}  {}\n",
        "channel", "h", "delta1", "delta2", "delta3", "stable", "max|a-1|", "failing"
    );
    for c in Channel::ALL {
        let r = reports.get(c);
        out.push_str(&format!(
            "{:<7}{:>12.5}{:>14.6e}{:>14.6e}{:>14.6e}{:>9}{:>11.3}  {}\n",
            c.name(),
            r.h,
            r.delta1,
            r.delta2,
            r.delta3,
            if r.stable { "yes" } else { "NO" },
            r.max_alpha_deviation,
            r.failing_minor.as_deref().unwrap_or("-"),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset_nlpid_gains;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn polynomial_examples() {
        assert_eq!(char_poly(0.0, 0.0, 0.0, 1.0), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(char_poly(1.0, 2.0, 3.0, 1.0), [1.0, 2.0, 1.0, 3.0]);
        assert_eq!(char_poly(1.0, 1.0, 1.0, 2.0), [1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn minor_examples() {
        assert_eq!(hurwitz_minors(&char_poly(2.0, 2.0, 1.0, 1.0)), (2.0, 3.0, 3.0));
        let m = hurwitz_minors(&char_poly(1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.1, 0.0);
        assert_eq!(failing_minor(m), Some("delta2"));
        let m = hurwitz_minors(&char_poly(2.0, 2.0, 0.0, 1.0));
        assert_eq!(m.2, 0.0);
        assert_eq!(failing_minor(m), Some("delta3"));
    }

    #[test]
    fn minors_follow_gain_form() {
        let (k1, k2, k3, h) = (1.3, 0.7, 0.4, 2.5);
        let (d1, d2, d3) = hurwitz_minors(&char_poly(k1, k2, k3, h));
        assert_eq!(d1, h * k2);
        assert!((d2 - (h * h * k1 * k2 - h * k3)).abs() < 1e-12);
        assert_eq!(d3, h * k3 * d2);
    }

    #[test]
    fn preset_altitude_column_is_certified() {
        let p = QuadParams::default();
        let r = verify_sector(Channel::Z, &preset_nlpid_gains().z, 1.0 / p.m);
        assert!(r.stable);
        assert_eq!(r.corner_results.len(), 8);
        assert!(r.derivative_bound.holds);
        assert!((r.max_alpha_deviation - 0.04).abs() < 1e-12);
    }

    #[test]
    fn huge_integral_gain_fails_delta2() {
        let p = QuadParams::default();
        let mut g = preset_nlpid_gains().z;
        g.k31 = 1e6;
        let r = verify_sector(Channel::Z, &g, 1.0 / p.m);
        assert!(!r.stable);
        assert!(r.delta2 < 0.0);
        assert_eq!(r.failing_minor.as_deref(), Some("delta2"));
        assert!(!r.derivative_bound.holds);
    }

    #[test]
    fn collapsed_box_is_a_point_check() {
        let g = NlpidGains::from_array([2.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let r = verify_sector(Channel::X, &g, 1.0);
        assert!(r.corner_results.iter().all(|c| c.delta2 == 3.0));
        assert_eq!((r.delta1, r.delta2, r.delta3), (2.0, 3.0, 3.0));
    }

    #[test]
    fn certified_sets_have_left_half_plane_roots() {
        let p = QuadParams::default();
        let reports = verify_controller(&ControllerGains::Nlpid(preset_nlpid_gains()), &p);
        for c in Channel::ALL {
            let r = reports.get(c);
            assert!(r.stable, "{}", c.name());
            for k in &r.corner_results {
                for root in roots(&char_poly(k.k1, k.k2, k.k3, r.h)) {
                    assert!(root.re < -1e-9, "{}: {root}", c.name());
                }
            }
        }
    }

    #[test]
    fn increasing_integral_gain_eventually_destabilises() {
        let mut last = true;
        let mut flipped = false;
        for e in 0..12 {
            let k3 = 10f64.powi(e - 4);
            let s = failing_minor(hurwitz_minors(&char_poly(1.0, 1.0, k3, 1.0))).is_none();
            if last && !s {
                flipped = true;
            }
            assert!(last || !s, "verdict must not recover");
            last = s;
        }
        assert!(flipped);
    }

    /// Interior points of a corner-certified box must also be stable, checked
    /// with an independent root solver.
    #[test]
    fn interior_samples_agree_with_corners() {
        let p = QuadParams::default();
        let gains = preset_nlpid_gains();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for c in Channel::ALL {
            let g = gains.get(c);
            let h = SubsystemSpec::for_channel(c, &p).h;
            assert!(verify_sector(c, g, h).stable);
            for _ in 0..10_000 {
                let k1 = g.k11 + rng.gen::<f64>() * g.k12 / 2.0;
                let k2 = g.k21 + rng.gen::<f64>() * g.k22 / 2.0;
                let k3 = g.k31 + rng.gen::<f64>() * g.k32 / 2.0;
                let cubic = char_poly(k1, k2, k3, h);
                assert!(failing_minor(hurwitz_minors(&cubic)).is_none());
                assert!(roots(&cubic).iter().all(|r| r.re < 0.0));
            }
        }
    }

    #[test]
    fn linear_gains_use_point_boxes() {
        let reports = verify_controller(&ControllerGains::Lpid(crate::presets::preset_lpid_gains()), &QuadParams::default());
        for c in Channel::ALL {
            let r = reports.get(c);
            assert_eq!(r.max_alpha_deviation, 0.0);
            let first = r.corner_results[0];
            assert!(r.corner_results.iter().all(|k| k.delta2 == first.delta2));
        }
    }

    #[test]
    fn table_names_failures() {
        let mut g = preset_nlpid_gains();
        g.z.k31 = 1e6;
        let text = render_reports(&verify_controller(&ControllerGains::Nlpid(g), &QuadParams::default()));
        assert!(text.lines().any(|l| l.starts_with("z ") && l.contains("NO") && l.contains("delta2")));
    }
}
