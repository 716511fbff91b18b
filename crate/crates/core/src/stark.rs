//! Linear Stark control of the two crystallographic subclasses.
//!
//! An applied field `E` shifts subclass A by `+κE` and subclass B by `-κE`.
//! Rectangular pulses therefore imprint piecewise-linear phases of opposite
//! sign on the two subclasses; a relative phase of π silences the comb
//! re-emission and a reversed pulse restores it.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, AfcError, AfcResult};

/// Material and electrode parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarkConfig {
    /// Stark coefficient κ, Hz per (V/cm).
    pub coefficient: f64,
    /// Field produced per applied volt, (V/cm)/V.
    pub field_scale: f64,
    /// Fractional rms spread of κE across the ensemble.
    pub inhomogeneity: f64,
}

impl StarkConfig {
    /// κ = 11.68 kHz/(V/cm); 1.2 kV/cm at 4.825 V.
    pub fn erbium_waveguide() -> Self {
        Self { coefficient: 11.68e3, field_scale: 1200.0 / 4.825, inhomogeneity: 0.0 }
    }

    pub fn validate(&self) -> AfcResult<()> {
        if !(self.coefficient.is_finite() && self.coefficient > 0.0) {
            return Err(AfcError::InvalidParameter(format!("Stark coefficient must be > 0, got {}", self.coefficient)));
        }
        ensure_finite("field scale", self.field_scale)?;
        if !(self.inhomogeneity.is_finite() && self.inhomogeneity >= 0.0) {
            return Err(AfcError::InvalidParameter(format!("inhomogeneity must be >= 0, got {}", self.inhomogeneity)));
        }
        Ok(())
    }

    pub fn field_from_voltage(&self, volts: f64) -> f64 {
        self.field_scale * volts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subclass {
    A,
    B,
}

impl Subclass {
    pub fn sign(self) -> f64 {
        match self {
            Subclass::A => 1.0,
            Subclass::B => -1.0,
        }
    }
}

/// Magnitude of the subclass frequency shift, Ω = κ|E|.
pub fn omega_from_field(config: &StarkConfig, field: f64) -> f64 {
    config.coefficient * field.abs()
}

/// A rectangular field pulse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectricPulse {
    /// Start time, s.
    pub start: f64,
    /// Duration `T_p`, s.
    pub duration: f64,
    /// Signed field, V/cm.
    pub field: f64,
}

impl ElectricPulse {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarkSchedule {
    pub config: StarkConfig,
    pub pulses: Vec<ElectricPulse>,
}

impl StarkSchedule {
    pub fn new(config: StarkConfig, pulses: Vec<ElectricPulse>) -> AfcResult<Self> {
        let schedule = Self { config, pulses };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn empty(config: StarkConfig) -> Self {
        Self { config, pulses: Vec::new() }
    }

    pub fn validate(&self) -> AfcResult<()> {
        self.config.validate()?;
        for p in &self.pulses {
            ensure_finite("pulse start", p.start)?;
            ensure_finite("pulse field", p.field)?;
            if !(p.duration.is_finite() && p.duration > 0.0) {
                return Err(AfcError::InvalidParameter(format!("pulse duration must be > 0, got {}", p.duration)));
            }
        }
        for w in self.pulses.windows(2) {
            if w[1].start < w[0].end() {
                return Err(AfcError::Scheduling(format!(
                    "pulses at {:.3e} s and {:.3e} s overlap or are out of order",
                    w[0].start, w[1].start
                )));
            }
        }
        Ok(())
    }

    /// Same pulses delayed by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        let pulses = self.pulses.iter().map(|p| ElectricPulse { start: p.start + offset, ..*p }).collect();
        Self { config: self.config, pulses }
    }

    /// ∫₀ᵗ κE(t') dt' (signed, cycles).
    pub fn integrated_shift(&self, t: f64) -> f64 {
        self.pulses
            .iter()
            .map(|p| self.config.coefficient * p.field * (t - p.start).clamp(0.0, p.duration))
            .sum()
    }

    pub fn is_idle(&self) -> bool {
        self.pulses.iter().all(|p| p.field == 0.0)
    }
}

/// Stark phase accumulated by `subclass` up to time `t`, radians.
pub fn subclass_phase(schedule: &StarkSchedule, t: f64, subclass: Subclass) -> f64 {
    subclass.sign() * TAU * schedule.integrated_shift(t)
}

/// Relative phase φ_A − φ_B at `t`.
pub fn relative_phase(schedule: &StarkSchedule, t: f64) -> f64 {
    subclass_phase(schedule, t, Subclass::A) - subclass_phase(schedule, t, Subclass::B)
}

/// Two-pulse on-demand schedule with ΩT_p = 1/4.
///
/// Times are measured from the arrival of the stored pulse. The first pulse
/// is centered in `(0, 1/Δ)`, the reversed second pulse in
/// `((n-1)/Δ, n/Δ)`, so the echo is read out at `n/Δ`.
pub fn design_retrieval_schedule(delta: f64, n_target: u32, config: StarkConfig, t_p: f64) -> AfcResult<StarkSchedule> {
    config.validate()?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(AfcError::InvalidParameter(format!("delta must be > 0, got {delta}")));
    }
    if n_target < 2 {
        return Err(AfcError::InvalidParameter(format!("readout order must be >= 2, got {n_target}")));
    }
    if !(t_p.is_finite() && t_p > 0.0) {
        return Err(AfcError::InvalidParameter(format!("pulse duration must be > 0, got {t_p}")));
    }
    let period = 1.0 / delta;
    if t_p >= period {
        return Err(AfcError::Scheduling(format!(
            "pulse duration {t_p:.3e} s does not fit the {period:.3e} s window between echoes"
        )));
    }
    let field = 1.0 / (4.0 * config.coefficient * t_p);
    let first = ElectricPulse { start: 0.5 * (period - t_p), duration: t_p, field };
    let second = ElectricPulse { start: (f64::from(n_target) - 0.5) * period - 0.5 * t_p, duration: t_p, field: -field };
    StarkSchedule::new(config, vec![first, second])
}

/// Per-pulse diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseReport {
    pub start: f64,
    pub omega_tp: f64,
    /// `k` such that the pulse lies in `(k/Δ, (k+1)/Δ)`; `None` if it
    /// straddles an echo time.
    pub window: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub n: u32,
    /// φ_A − φ_B at `n/Δ`, wrapped to (−π, π].
    pub relative_phase: f64,
    /// Subclass-averaged emission amplitude factor, cos(φ_A).
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    OrdinaryAfc,
    OnDemand { recovered_at: u32 },
    SilencedIndefinitely,
    Irregular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub pulses: Vec<PulseReport>,
    pub orders: Vec<OrderReport>,
    pub verdict: Verdict,
}

impl fmt::Display for ScheduleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.verdict {
            Verdict::OrdinaryAfc => write!(f, "ordinary AFC, emission at every n/Δ"),
            Verdict::OnDemand { recovered_at: k } => {
                write!(f, "silenced at n=1..{}, recovered at n={k}", k - 1)
            }
            Verdict::SilencedIndefinitely => write!(f, "silenced indefinitely"),
            Verdict::Irregular => write!(f, "irregular: partial silencing or recovery"),
        }
    }
}

fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Amplitude tolerance for classifying an order as silenced or emitting.
const CLASSIFY_TOL: f64 = 1e-3;

/// Reports ΩT_p per pulse, window membership and the relative phase at each
/// echo time `n/Δ` for `n = 1..=max_order`.
pub fn validate_schedule(schedule: &StarkSchedule, delta: f64, max_order: u32) -> ScheduleReport {
    let period = 1.0 / delta;
    let pulses = schedule
        .pulses
        .iter()
        .map(|p| {
            let k = (p.start / period).floor();
            let window = (k >= 0.0 && p.end() <= (k + 1.0) * period && p.start > k * period).then_some(k as u32);
            PulseReport { start: p.start, omega_tp: omega_from_field(&schedule.config, p.field) * p.duration, window }
        })
        .collect();
    let orders: Vec<OrderReport> = (1..=max_order)
        .map(|n| {
            let t = f64::from(n) * period;
            let phi_a = subclass_phase(schedule, t, Subclass::A);
            OrderReport { n, relative_phase: wrap_phase(2.0 * phi_a), amplitude: phi_a.cos() }
        })
        .collect();

    let emits = |o: &OrderReport| o.amplitude.abs() > 1.0 - CLASSIFY_TOL;
    let silent = |o: &OrderReport| o.amplitude.abs() < CLASSIFY_TOL;
    let verdict = if schedule.is_idle() || orders.iter().all(emits) {
        Verdict::OrdinaryAfc
    } else if orders.iter().all(silent) {
        Verdict::SilencedIndefinitely
    } else {
        match orders.iter().position(|o| !silent(o)) {
            Some(k) if k > 0 && emits(&orders[k]) => Verdict::OnDemand { recovered_at: orders[k].n },
            _ => Verdict::Irregular,
        }
    };
    ScheduleReport { pulses, orders, verdict }
}
