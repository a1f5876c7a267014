//! Analytic electret-microphone response.
//!
//! The microphone is modeled as a first-order electronic high-pass stage
//! (corner `f2`) cascaded with two second-order acoustic low-pass stages
//! (resonances `f3`, `f4`, damping `xi3`, `xi4`):
//!
//! ```text
//! H(f) = j(f/f2) / (1 + j(f/f2))
//!        * 1 / (1 - (f/f3)^2 + 2j*xi3*(f/f3))
//!        * 1 / (1 - (f/f4)^2 + 2j*xi4*(f/f4))
//! ```
//!
//! Phases are reported as the sum of the per-stage arguments, so a sweep is
//! continuous without any unwrapping pass: the high-pass contributes
//! `[0, pi/2]` and each low-pass stage `(-pi, 0]`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Complex transfer-function value.
pub type ComplexValue = Complex64;

/// Microphone type label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum MicClass {
    Ecm30b = 0,
    Ecm60 = 1,
    Wm66 = 2,
}

impl MicClass {
    pub const ALL: [MicClass; 3] = [MicClass::Ecm30b, MicClass::Ecm60, MicClass::Wm66];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(MicClass::Ecm30b),
            1 => Ok(MicClass::Ecm60),
            2 => Ok(MicClass::Wm66),
            other => Err(Error::Schema(format!("class label {other} is not one of 0, 1, 2"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MicClass::Ecm30b => "ECM30B",
            MicClass::Ecm60 => "ECM60",
            MicClass::Wm66 => "WM66",
        }
    }
}

impl fmt::Display for MicClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<MicClass> for u8 {
    fn from(c: MicClass) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for MicClass {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        MicClass::from_index(v as usize)
    }
}

/// One microphone parameterization. Frequencies in Hz, dampings dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicParams {
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
    pub xi3: f64,
    pub xi4: f64,
}

impl MicParams {
    pub fn new(f2: f64, f3: f64, f4: f64, xi3: f64, xi4: f64) -> Result<Self> {
        let p = MicParams { f2, f3, f4, xi3, xi4 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("f2", self.f2), ("f3", self.f3), ("f4", self.f4)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [("xi3", self.xi3), ("xi4", self.xi4)] {
            if !(v.is_finite() && v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Equally spaced sample frequencies, both endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub f_min: f64,
    pub f_max: f64,
    pub count: usize,
    pub points: Vec<f64>,
}

impl FrequencyGrid {
    /// Linear grid of `count` points on `[f_min, f_max]`.
    pub fn linear(f_min: f64, f_max: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("grid count must be positive".into()));
        }
        if !(f_min.is_finite() && f_max.is_finite() && f_min >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must be finite and non-negative, got [{f_min}, {f_max}]"
            )));
        }
        if count == 1 && f_min != f_max || count > 1 && f_min >= f_max {
            return Err(Error::InvalidParameter(format!(
                "grid [{f_min}, {f_max}] with {count} points is not strictly increasing"
            )));
        }
        let points = if count == 1 {
            vec![f_min]
        } else {
            let span = f_max - f_min;
            let last = (count - 1) as f64;
            let mut pts: Vec<f64> = (0..count).map(|i| f_min + span * (i as f64) / last).collect();
            pts[count - 1] = f_max;
            pts
        };
        Ok(FrequencyGrid { f_min, f_max, count, points })
    }

    /// 150 points on 20 Hz to 20 kHz (300 features).
    pub fn full_range() -> Self {
        FrequencyGrid::linear(20.0, 20_000.0, 150).expect("static grid")
    }

    /// 70 points on 800 Hz to 20 kHz (140 features), the band where the
    /// amplitude curves of all three types overlap.
    pub fn restricted_range() -> Self {
        FrequencyGrid::linear(800.0, 20_000.0, 70).expect("static grid")
    }

    /// Checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Schema(format!("frequency grid: {msg}")));
        if self.count == 0 || self.points.len() != self.count {
            return bad(format!("count {} does not match {} points", self.count, self.points.len()));
        }
        if self.points[0] != self.f_min || self.points[self.count - 1] != self.f_max {
            return bad("endpoints do not match f_min/f_max".into());
        }
        if self.points.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("points must be finite and non-negative".into());
        }
        if self.count > 1 {
            let step = (self.f_max - self.f_min) / (self.count - 1) as f64;
            for w in self.points.windows(2) {
                let d = w[1] - w[0];
                if d <= 0.0 {
                    return bad("points are not strictly increasing".into());
                }
                if ((d - step) / step).abs() > 1e-9 {
                    return bad(format!("spacing {d} deviates from {step}"));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

fn check_frequency(f: f64) -> Result<()> {
    if f.is_finite() && f >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("frequency must be finite and >= 0, got {f}")))
    }
}

/// First-order high-pass `ju / (1 + ju)`, `u = f / f2`.
pub fn hp_response(f: f64, f2: f64) -> Result<ComplexValue> {
    check_frequency(f)?;
    if !(f2.is_finite() && f2 > 0.0) {
        return Err(Error::InvalidParameter(format!("f2 must be finite and > 0, got {f2}")));
    }
    let ju = Complex64::new(0.0, f / f2);
    Ok(ju / (1.0 + ju))
}

/// Second-order low-pass `1 / (1 - u^2 + 2j*xi*u)`, `u = f / f0`.
pub fn lp2_response(f: f64, f0: f64, xi: f64) -> Result<ComplexValue> {
    check_frequency(f)?;
    if !(f0.is_finite() && f0 > 0.0) {
        return Err(Error::InvalidParameter(format!("f0 must be finite and > 0, got {f0}")));
    }
    if !(xi.is_finite() && xi > 0.0) {
        return Err(Error::InvalidParameter(format!("damping must be finite and > 0, got {xi}")));
    }
    let u = f / f0;
    Ok(Complex64::new(1.0 - u * u, 2.0 * xi * u).inv())
}

/// The three stage responses, in cascade order.
fn stages(p: &MicParams, f: f64) -> Result<[ComplexValue; 3]> {
    p.validate()?;
    Ok([
        hp_response(f, p.f2)?,
        lp2_response(f, p.f3, p.xi3)?,
        lp2_response(f, p.f4, p.xi4)?,
    ])
}

/// Full cascade `hp * lp3 * lp4`.
pub fn mic_response(p: &MicParams, f: f64) -> Result<ComplexValue> {
    let [hp, lp3, lp4] = stages(p, f)?;
    Ok(hp * lp3 * lp4)
}

/// Amplitude and phase of one stage triple. Amplitude is the product of
/// stage magnitudes, phase the sum of stage arguments.
fn amp_phase(s: &[ComplexValue; 3]) -> (f64, f64) {
    let amp = s[0].norm() * s[1].norm() * s[2].norm();
    let phase = s[0].arg() + s[1].arg() + s[2].arg();
    (amp, phase)
}

/// Amplitudes and phases (radians) of `p` at every grid point.
pub fn amplitude_phase_sweep(p: &MicParams, grid: &FrequencyGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut amps = Vec::with_capacity(grid.count);
    let mut phases = Vec::with_capacity(grid.count);
    for &f in &grid.points {
        let (a, ph) = amp_phase(&stages(p, f)?);
        amps.push(a);
        phases.push(ph);
    }
    Ok((amps, phases))
}

/// Writes a sweep as one feature row: `grid.count` amplitudes followed by
/// `grid.count` phases.
pub(crate) fn sweep_into(p: &MicParams, grid: &FrequencyGrid, row: &mut [f64]) -> Result<()> {
    let n = grid.count;
    debug_assert_eq!(row.len(), 2 * n);
    let (amps, phases) = row.split_at_mut(n);
    for (i, &f) in grid.points.iter().enumerate() {
        let (a, ph) = amp_phase(&stages(p, f)?);
        amps[i] = a;
        phases[i] = ph;
    }
    Ok(())
}
