//! Performance indices over simulation logs: ITAE, USQR, step-response
//! figures, peaks, steady-state tracking error and the weighted OPI.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimLog, Termination};

/// Fraction of the run, counted from the end, over which steady-state
/// tracking error is averaged.
pub const STEADY_STATE_WINDOW: f64 = 0.2;
/// Settling band half-width as a fraction of the reference level.
pub const SETTLING_BAND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("cannot integrate an empty series")]
    EmptySeries,
    #[error("invalid weights for {channel}: {reason}")]
    InvalidWeights { channel: &'static str, reason: String },
    #[error("window fraction {0} must lie in (0, 1]")]
    InvalidWindow(f64),
}

fn trapezoid(values: impl Iterator<Item = f64>, dt: f64) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut first = None;
    let mut last = 0.0;
    let mut n = 0usize;
    for v in values {
        if first.is_none() {
            first = Some(v);
        }
        sum += v;
        last = v;
        n += 1;
    }
    let first = first.ok_or(MetricsError::EmptySeries)?;
    if n == 1 {
        return Ok(0.0);
    }
    Ok(dt * (sum - 0.5 * (first + last)))
}

/// `∫ t |e(t)| dt` by the trapezoidal rule on the grid `t_k = k dt`.
pub fn itae(errors: &[f64], dt: f64) -> Result<f64, MetricsError> {
    trapezoid(errors.iter().enumerate().map(|(k, e)| k as f64 * dt * e.abs()), dt)
}

/// `∫ u(t)^2 dt` by the trapezoidal rule.
pub fn usqr(controls: &[f64], dt: f64) -> Result<f64, MetricsError> {
    trapezoid(controls.iter().map(|u| u * u), dt)
}

/// Step-response figures. Levels are fractions of the reference value itself,
/// so an output already past 10 % at `t = 0` has its 10 % crossing at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 10 % to 90 % rise time; `None` if 90 % is never reached.
    pub rise_time: Option<f64>,
    /// Time of the last entry into the ±2 % band; `None` if the run ends outside it.
    pub settling_time: Option<f64>,
    /// Peak excursion beyond the reference, percent of the reference.
    pub overshoot_pct: f64,
}

/// First time the (sign-normalised) output reaches `level`, interpolated
/// linearly between grid points.
fn first_crossing(y: &[f64], level: f64, dt: f64) -> Option<f64> {
    let k = y.iter().position(|&v| v >= level)?;
    if k == 0 {
        return Some(0.0);
    }
    let (a, b) = (y[k - 1], y[k]);
    Some(dt * ((k - 1) as f64 + (level - a) / (b - a)))
}

pub fn step_metrics(output: &[f64], reference: f64, dt: f64) -> StepMetrics {
    if output.is_empty() || reference == 0.0 {
        return StepMetrics::default();
    }
    let dir = reference.signum();
    let level = reference.abs();
    let y: Vec<f64> = output.iter().map(|v| v * dir).collect();

    let rise_time = match (first_crossing(&y, 0.1 * level, dt), first_crossing(&y, 0.9 * level, dt)) {
        (Some(t10), Some(t90)) => Some(t90 - t10),
        _ => None,
    };

    let band = SETTLING_BAND * level;
    let excess: Vec<f64> = y.iter().map(|v| (v - level).abs() - band).collect();
    let settling_time = match excess.iter().rposition(|&d| d > 0.0) {
        None => Some(0.0),
        Some(k) if k + 1 == excess.len() => None,
        Some(k) => {
            let (a, b) = (excess[k], excess[k + 1]);
            Some(dt * (k as f64 + a / (a - b)))
        }
    };

    let peak = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let overshoot_pct = (100.0 * (peak - level) / level).max(0.0);

    StepMetrics {
        rise_time,
        settling_time,
        overshoot_pct,
    }
}

/// Global `(min, max)` of a series; `(NaN, NaN)` when empty.
pub fn peak_extrema(series: &[f64]) -> (f64, f64) {
    if series.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Mean `|reference - output|` over the final `window_fraction` of the run,
/// as a percentage of the reference amplitude (largest `|reference|` over
/// the run; taken as 1 for an all-zero reference).
pub fn steady_state_error_pct(output: &[f64], reference: &[f64], window_fraction: f64) -> Result<f64, MetricsError> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(MetricsError::InvalidWindow(window_fraction));
    }
    let n = output.len().min(reference.len());
    if n == 0 {
        return Err(MetricsError::EmptySeries);
    }
    let amplitude = reference[..n].iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let amplitude = if amplitude > 0.0 { amplitude } else { 1.0 };
    let window = ((n as f64 * window_fraction).ceil() as usize).clamp(1, n);
    let start = n - window;
    let mean = output[start..n]
        .iter()
        .zip(&reference[start..n])
        .map(|(o, r)| (r - o).abs())
        .sum::<f64>()
        / window as f64;
    Ok(100.0 * mean / amplitude)
}

/// The four channels that enter the performance index.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpiChannels<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub psi: T,
}

impl<T> OpiChannels<T> {
    pub const NAMES: [&'static str; 4] = ["x", "y", "z", "psi"];

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &T)> {
        Self::NAMES.into_iter().zip([&self.x, &self.y, &self.z, &self.psi])
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> OpiChannels<U> {
        OpiChannels {
            x: f(&self.x),
            y: f(&self.y),
            z: f(&self.z),
            psi: f(&self.psi),
        }
    }
}

/// Weights and normalisers of one channel's objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    /// Weight on ITAE.
    pub w1: f64,
    /// Weight on USQR.
    pub w2: f64,
    /// Weight of this channel in the total.
    pub w_hat: f64,
    /// ITAE normaliser.
    pub n1: f64,
    /// USQR normaliser.
    pub n2: f64,
}

pub type OpiWeights = OpiChannels<ObjectiveWeights>;

impl OpiWeights {
    /// `w1 = 0.6`, `w2 = 0.4`, `w_hat = 0.25` everywhere; all normalisers 1
    /// except the altitude USQR normaliser of 4500.
    pub fn standard() -> Self {
        let w = |n2| ObjectiveWeights {
            w1: 0.6,
            w2: 0.4,
            w_hat: 0.25,
            n1: 1.0,
            n2,
        };
        OpiChannels {
            x: w(1.0),
            y: w(1.0),
            z: w(4500.0),
            psi: w(1.0),
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for (channel, w) in self.iter() {
            let bad = |reason: String| Err(MetricsError::InvalidWeights { channel, reason });
            if (w.w1 + w.w2 - 1.0).abs() > 1e-9 {
                return bad(format!("w1 + w2 = {} must equal 1", w.w1 + w.w2));
            }
            if !(w.n1 > 0.0 && w.n2 > 0.0) {
                return bad("normalisers must be positive".into());
            }
            if [w.w1, w.w2, w.w_hat].iter().any(|v| !v.is_finite()) {
                return bad("weights must be finite".into());
            }
        }
        Ok(())
    }
}

impl Default for OpiWeights {
    fn default() -> Self {
        Self::standard()
    }
}

/// Per-channel `opi_i` and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpiBreakdown {
    pub channels: OpiChannels<f64>,
    pub total: f64,
}

/// `opi_i = w1 ITAE/N1 + w2 USQR/N2`, `OPI = Σ w_hat_i opi_i`, from
/// per-channel `(ITAE, USQR)` pairs.
pub fn opi(values: &OpiChannels<(f64, f64)>, weights: &OpiWeights) -> Result<OpiBreakdown, MetricsError> {
    weights.validate()?;
    let per = |(itae, usqr): (f64, f64), w: &ObjectiveWeights| w.w1 * itae / w.n1 + w.w2 * usqr / w.n2;
    let channels = OpiChannels {
        x: per(values.x, &weights.x),
        y: per(values.y, &weights.y),
        z: per(values.z, &weights.z),
        psi: per(values.psi, &weights.psi),
    };
    let total = weights.x.w_hat * channels.x
        + weights.y.w_hat * channels.y
        + weights.z.w_hat * channels.z
        + weights.psi.w_hat * channels.psi;
    Ok(OpiBreakdown { channels, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub itae: f64,
    pub usqr: f64,
    /// Present only when the channel's reference is constant over the run.
    pub step: Option<StepMetrics>,
    pub ss_error_pct: f64,
    pub min_peak: f64,
    pub max_peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakPair {
    pub min_peak: f64,
    pub max_peak: f64,
}

/// Everything the metrics module derives from one run, laid out like the
/// result tables: per-channel indices, roll/pitch peaks, OPI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub termination: Termination,
    pub samples: usize,
    pub dt: f64,
    pub channels: OpiChannels<ChannelMetrics>,
    pub phi: PeakPair,
    pub theta: PeakPair,
    pub opi: OpiBreakdown,
}

impl MetricsReport {
    pub fn from_log(log: &SimLog, weights: &OpiWeights) -> Result<Self, MetricsError> {
        if log.is_empty() {
            return Err(MetricsError::EmptySeries);
        }
        let dt = log.dt;
        let channel = |out: fn(&crate::sim::LogRow) -> f64,
                       reference: fn(&crate::sim::LogRow) -> f64,
                       control: usize|
         -> Result<ChannelMetrics, MetricsError> {
            let y = log.column(out);
            let r = log.column(reference);
            let u = log.column(|row| row.controls[control]);
            let e: Vec<f64> = r.iter().zip(&y).map(|(r, y)| r - y).collect();
            let constant = r.iter().all(|v| *v == r[0]);
            let (min_peak, max_peak) = peak_extrema(&y);
            Ok(ChannelMetrics {
                itae: itae(&e, dt)?,
                usqr: usqr(&u, dt)?,
                step: constant.then(|| step_metrics(&y, r[0], dt)),
                ss_error_pct: steady_state_error_pct(&y, &r, STEADY_STATE_WINDOW)?,
                min_peak,
                max_peak,
            })
        };
        let channels = OpiChannels {
            x: channel(|r| r.state.x, |r| r.reference.x_de, 0)?,
            y: channel(|r| r.state.y, |r| r.reference.y_de, 1)?,
            z: channel(|r| r.state.z, |r| r.reference.z_de, 2)?,
            psi: channel(|r| r.state.psi, |r| r.reference.psi_de, 5)?,
        };
        let peaks = |f: fn(&crate::sim::LogRow) -> f64| {
            let (min_peak, max_peak) = peak_extrema(&log.column(f));
            PeakPair { min_peak, max_peak }
        };
        let opi = opi(&channels.map(|c| (c.itae, c.usqr)), weights)?;
        Ok(Self {
            termination: log.termination.clone(),
            samples: log.len(),
            dt,
            channels,
            phi: peaks(|r| r.state.phi),
            theta: peaks(|r| r.state.theta),
            opi,
        })
    }

    /// Plain-text rendering with one row per channel.
    pub fn to_table(&self) -> String {
        render_tables(&[("run", self)])
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Side-by-side text tables for one or more labelled reports.
pub fn render_tables(reports: &[(&str, &MetricsReport)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Position and yaw responses");
    let _ = writeln!(s, "{:<8}{:<10}{:>10}{:>10}{:>10}", "channel", "column", "tr(s)", "ts(s)", "Mp%");
    for name in OpiChannels::<()>::NAMES {
        for (label, r) in reports {
            let c = pick(&r.channels, name);
            let step = c.step.unwrap_or_default();
            let mp = c.step.map(|s| format!("{:.3}", s.overshoot_pct)).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<8}{:<10}{:>10}{:>10}{:>10}",
                name,
                label,
                opt(step.rise_time),
                opt(step.settling_time),
                mp
            );
        }
    }
    let _ = writeln!(s, "\nRoll and pitch peaks");
    let _ = writeln!(s, "{:<8}{:<10}{:>14}{:>14}", "angle", "column", "min", "max");
    for (name, get) in [("phi", 0usize), ("theta", 1)] {
        for (label, r) in reports {
            let p = if get == 0 { r.phi } else { r.theta };
            let _ = writeln!(s, "{:<8}{:<10}{:>14.4e}{:>14.4e}", name, label, p.min_peak, p.max_peak);
        }
    }
    let _ = writeln!(s, "\nPerformance indices");
    let _ = writeln!(s, "{:<8}{:<10}{:>14}{:>14}{:>12}", "channel", "column", "ITAE", "USQR", "ss_err%");
    for name in OpiChannels::<()>::NAMES {
        for (label, r) in reports {
            let c = pick(&r.channels, name);
            let _ = writeln!(s, "{:<8}{:<10}{:>14.6}{:>14.6}{:>12.3}", name, label, c.itae, c.usqr, c.ss_error_pct);
        }
    }
    for (label, r) in reports {
        let status = match &r.termination {
            Termination::Completed => "completed".to_string(),
            Termination::Diverged { t } => format!("DIVERGED at t = {t:.3} s"),
            Termination::Fault { t, reason } => format!("FAULT at t = {t:.3} s: {reason}"),
        };
        let _ = writeln!(s, "{:<8}{:<10}{:>14.4}   {}", "OPI", label, r.opi.total, status);
    }
    s
}

fn pick<'a>(c: &'a OpiChannels<ChannelMetrics>, name: &str) -> &'a ChannelMetrics {
    match name {
        "x" => &c.x,
        "y" => &c.y,
        "z" => &c.z,
        _ => &c.psi,
    }
}
