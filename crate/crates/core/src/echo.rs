//! Time-domain linear-response propagation through a frequency-binned
//! ensemble.
//!
//! Each spectral bin `j` at detuning `f_j` with optical depth `d_j` is a
//! damped-free oscillator driven by the field. Its forward re-emission,
//! summed over bins, is the causal response
//!
//! ```text
//! (K E)(t) = Σ_p w_p e^{-iφ_p(t)} ∫₀^∞ h(τ) e^{iφ_p(t-τ)} E(t-τ) dτ,
//! h(τ)     = Σ_j d_j δf e^{-i2π f_j τ},
//! ```
//!
//! where `p` runs over the two Stark subclasses (and, with field
//! inhomogeneity, over Gauss-Hermite samples of the field spread) with
//! weights `w_p` summing to one. The medium is uniform along the
//! propagation axis, so the output is `E_out = exp(-K) E_in`. The real part
//! of the spectral response is `d(f)/2`, giving the transmitted attenuation
//! `e^{-d/2}` in amplitude; for a Gaussian comb the first echo and every
//! Stark-recalled echo carry intensity `d̃² e^{-d̃} e^{-γ̃²t²} e^{-d0}`.
//!
//! The field is the slowly varying envelope in the frame of zero detuning.

use std::f64::consts::{LN_2, PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{TimeBinQubit, TimeBinState};
use crate::comb::{superimpose, CombParams, DoubleCombParams, POINTS_PER_TOOTH};
use crate::error::{ensure_finite, AfcError, AfcResult};
use crate::spectral::{AbsorptionSpectrum, FrequencyGrid};
use crate::stark::StarkSchedule;

/// Fraction of the frequency grid at each edge over which bin weights are
/// tapered to zero. Hard edges would ring in the time-domain kernel.
pub const EDGE_TAPER: f64 = 0.05;
/// Gauss-Hermite order used to average over the static field spread.
pub const INHOMOGENEITY_NODES: usize = 9;
const TAYLOR_TOL: f64 = 1e-13;
const TAYLOR_MAX_TERMS: usize = 80;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(start: f64, step: f64, count: usize) -> AfcResult<Self> {
        ensure_finite("time grid start", start)?;
        if !(step.is_finite() && step > 0.0) {
            return Err(AfcError::InvalidParameter(format!("time step must be > 0, got {step}")));
        }
        if count < 2 {
            return Err(AfcError::InvalidParameter(format!("time grid needs >= 2 points, got {count}")));
        }
        Ok(Self { start, step, count })
    }

    /// Grid from `start` to `end` with spacing at most `max_step`.
    pub fn spanning(start: f64, end: f64, max_step: f64) -> AfcResult<Self> {
        if !(end > start && max_step > 0.0) {
            return Err(AfcError::InvalidParameter(format!("bad time span [{start}, {end}] / step {max_step}")));
        }
        let count = ((end - start) / max_step).ceil() as usize + 1;
        Self::new(start, (end - start) / (count - 1) as f64, count)
    }

    /// Largest step that resolves every bin of `grid`.
    pub fn max_step_for(grid: &FrequencyGrid) -> f64 {
        1.0 / (8.0 * grid.start.abs().max(grid.end().abs()))
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn end(&self) -> f64 {
        self.time(self.count - 1)
    }

    pub fn duration(&self) -> f64 {
        self.step * (self.count - 1) as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.time(i))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    /// `amplitude · exp(-2 ln2 (t - center)² / fwhm²)`; `fwhm` is the
    /// intensity FWHM.
    Gaussian { center: f64, fwhm: f64, amplitude: f64 },
    /// Complex samples on the simulation time grid.
    Sampled(Vec<Complex64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPulse {
    pub envelope: Envelope,
    /// Carrier offset from zero detuning, Hz.
    pub carrier_detuning: f64,
}

/// Energy `∫|E|²dt` of a Gaussian envelope.
pub fn gaussian_energy(fwhm: f64, amplitude: f64) -> f64 {
    amplitude * amplitude * fwhm * (PI / (4.0 * LN_2)).sqrt()
}

pub(crate) fn gaussian_amplitude(t: f64, center: f64, fwhm: f64) -> f64 {
    let x = (t - center) / fwhm;
    (-2.0 * LN_2 * x * x).exp()
}

impl InputPulse {
    pub fn gaussian(center: f64, fwhm: f64, amplitude: f64) -> Self {
        Self { envelope: Envelope::Gaussian { center, fwhm, amplitude }, carrier_detuning: 0.0 }
    }

    /// Gaussian pulse normalized to unit energy (one photon per trace unit).
    pub fn unit_energy(center: f64, fwhm: f64) -> Self {
        Self::gaussian(center, fwhm, 1.0 / gaussian_energy(fwhm, 1.0).sqrt())
    }

    pub fn validate(&self) -> AfcResult<()> {
        ensure_finite("carrier detuning", self.carrier_detuning)?;
        match &self.envelope {
            Envelope::Gaussian { center, fwhm, amplitude } => {
                ensure_finite("pulse center", *center)?;
                ensure_finite("pulse amplitude", *amplitude)?;
                if !(fwhm.is_finite() && *fwhm > 0.0) {
                    return Err(AfcError::InvalidParameter(format!("pulse FWHM must be > 0, got {fwhm}")));
                }
            }
            Envelope::Sampled(s) => {
                if s.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(AfcError::InvalidParameter("sampled envelope is not finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Intensity FWHM of the spectrum for Gaussian envelopes.
    pub fn spectral_fwhm(&self) -> Option<f64> {
        match self.envelope {
            Envelope::Gaussian { fwhm, .. } => Some(2.0 * LN_2 / (PI * fwhm)),
            Envelope::Sampled(_) => None,
        }
    }

    pub fn sample(&self, grid: &TimeGrid) -> AfcResult<Vec<Complex64>> {
        self.validate()?;
        let carrier = |t: f64| Complex64::from_polar(1.0, -TAU * self.carrier_detuning * t);
        match &self.envelope {
            Envelope::Gaussian { center, fwhm, amplitude } => Ok(grid
                .times()
                .map(|t| carrier(t) * (amplitude * gaussian_amplitude(t, *center, *fwhm)))
                .collect()),
            Envelope::Sampled(s) => {
                if s.len() != grid.count {
                    return Err(AfcError::InvalidParameter(format!(
                        "sampled envelope has {} points for a {}-point grid",
                        s.len(),
                        grid.count
                    )));
                }
                Ok(s.iter().zip(grid.times()).map(|(z, t)| z * carrier(t)).collect())
            }
        }
    }
}

/// Zero-centered frequency grid resolving every tooth of `combs`, with the
/// tapered edges kept clear of all comb bands.
pub fn comb_frequency_grid(combs: &[CombParams]) -> AfcResult<FrequencyGrid> {
    let mut reach = 0.0f64;
    let mut step = f64::INFINITY;
    for c in combs {
        c.validate()?;
        let g = c.gamma();
        reach = reach.max((c.center_offset - 0.5 * c.bandwidth - 3.0 * g).abs());
        reach = reach.max((c.center_offset + 0.5 * c.bandwidth + 3.0 * g).abs());
        step = step.min(g / POINTS_PER_TOOTH);
    }
    if combs.is_empty() {
        return Err(AfcError::InvalidParameter("no combs given".into()));
    }
    FrequencyGrid::centered(2.02 * reach / (1.0 - 2.0 * EDGE_TAPER), step)
}

/// Rectangle-rule energy of sampled field.
pub fn field_energy(field: &[Complex64], step: f64) -> f64 {
    field.iter().map(|z| z.norm_sqr()).sum::<f64>() * step
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityTrace {
    pub grid: TimeGrid,
    pub field: Vec<Complex64>,
    pub intensity: Vec<f64>,
}

impl IntensityTrace {
    pub fn from_field(grid: TimeGrid, field: Vec<Complex64>) -> AfcResult<Self> {
        if field.len() != grid.count {
            return Err(AfcError::InvalidParameter("field length does not match grid".into()));
        }
        if field.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(AfcError::Numerical("output field is not finite".into()));
        }
        let intensity = field.iter().map(|z| z.norm_sqr()).collect();
        Ok(Self { grid, field, intensity })
    }

    pub fn energy(&self) -> f64 {
        self.intensity.iter().sum::<f64>() * self.grid.step
    }

    /// Samples with `lo <= t < hi`.
    fn window_indices(&self, window: (f64, f64)) -> AfcResult<std::ops::Range<usize>> {
        let (lo, hi) = window;
        let g = &self.grid;
        let tol = 1e-9 * g.step;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < g.start - tol || hi > g.end() + tol {
            return Err(AfcError::Range(format!(
                "window [{lo:.4e}, {hi:.4e}] s not within trace [{:.4e}, {:.4e}] s",
                g.start,
                g.end()
            )));
        }
        let first = ((lo - g.start) / g.step - 1e-9).ceil().max(0.0) as usize;
        let stop = (((hi - g.start) / g.step - 1e-9).ceil().max(0.0) as usize).min(g.count);
        if first >= stop {
            return Err(AfcError::Range(format!("window [{lo:.4e}, {hi:.4e}] s contains no samples")));
        }
        Ok(first..stop)
    }

    /// Integrated intensity over `window`.
    pub fn window_energy(&self, window: (f64, f64)) -> AfcResult<f64> {
        let idx = self.window_indices(window)?;
        Ok(self.intensity[idx].iter().sum::<f64>() * self.grid.step)
    }

    /// Time of maximum intensity inside `window`.
    pub fn peak_time_in(&self, window: (f64, f64)) -> AfcResult<f64> {
        let idx = self.window_indices(window)?;
        let start = idx.start;
        let (k, _) = self.intensity[idx]
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
        Ok(self.grid.time(start + k))
    }
}

/// Integrated output intensity in `window` over the input energy.
pub fn echo_efficiency(trace: &IntensityTrace, window: (f64, f64), input_energy: f64) -> AfcResult<f64> {
    if !(input_energy.is_finite() && input_energy > 0.0) {
        return Err(AfcError::InvalidParameter(format!("input energy must be > 0, got {input_energy}")));
    }
    Ok(trace.window_energy(window)? / input_energy)
}

/// `∫₀¹(1-v) e^{-iθv} dv`.
fn head_weight(theta: f64) -> Complex64 {
    if theta.abs() < 1e-3 {
        let t2 = theta * theta;
        Complex64::new(0.5 - t2 / 24.0, -theta / 6.0 + theta * t2 / 120.0)
    } else {
        let i_theta = Complex64::new(0.0, theta);
        1.0 / i_theta + (1.0 - Complex64::from_polar(1.0, -theta)) / (theta * theta)
    }
}

/// `∫₋₁¹(1-|v|) e^{-iθv} dv`.
fn body_weight(theta: f64) -> f64 {
    if theta.abs() < 1e-3 {
        let t2 = theta * theta;
        1.0 - t2 / 12.0 + t2 * t2 / 360.0
    } else {
        2.0 * (1.0 - theta.cos()) / (theta * theta)
    }
}

fn edge_taper(j: usize, count: usize) -> f64 {
    let edge = ((EDGE_TAPER * count as f64).round() as usize).max(1);
    let from_edge = j.min(count - 1 - j);
    if from_edge >= edge {
        1.0
    } else {
        0.5 * (1.0 - (PI * (from_edge as f64 + 0.5) / edge as f64).cos())
    }
}

/// Kernel taps for a field interpolated linearly between samples.
fn kernel_taps(spectrum: &AbsorptionSpectrum, dt: f64, n: usize) -> Vec<Complex64> {
    let g = spectrum.grid;
    let bins: Vec<(f64, f64)> = spectrum
        .optical_depth
        .iter()
        .enumerate()
        .filter_map(|(j, &d)| {
            let w = d * g.step * edge_taper(j, g.count);
            (w != 0.0).then(|| (w * dt, TAU * g.value(j) * dt))
        })
        .collect();
    (0..n)
        .into_par_iter()
        .map(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            if m == 0 {
                for &(w, theta) in &bins {
                    acc += w * head_weight(theta);
                }
            } else {
                let mf = m as f64;
                for &(w, theta) in &bins {
                    acc += Complex64::from_polar(w * body_weight(theta), -theta * mf);
                }
            }
            acc
        })
        .collect()
}

fn causal_convolve(taps: &[Complex64], u: &[Complex64]) -> Vec<Complex64> {
    (0..u.len())
        .into_par_iter()
        .map(|i| {
            let mut s = Complex64::new(0.0, 0.0);
            for m in 0..=i {
                s += taps[m] * u[i - m];
            }
            s
        })
        .collect()
}

/// Probabilists' Gauss-Hermite nodes and weights (weights sum to 1).
pub fn gauss_hermite(order: usize) -> Vec<(f64, f64)> {
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut nodes: Vec<(f64, f64)> =
        (0..order).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes
}

struct PhaseProfile {
    weight: f64,
    rotor: Option<Vec<Complex64>>,
}

fn phase_profiles(schedule: &StarkSchedule, tgrid: &TimeGrid) -> Vec<PhaseProfile> {
    if schedule.is_idle() {
        return vec![PhaseProfile { weight: 1.0, rotor: None }];
    }
    let base: Vec<f64> = tgrid.times().map(|t| TAU * schedule.integrated_shift(t)).collect();
    let sigma = schedule.config.inhomogeneity;
    let spread = if sigma > 0.0 { gauss_hermite(INHOMOGENEITY_NODES) } else { vec![(0.0, 1.0)] };
    let mut out = Vec::with_capacity(2 * spread.len());
    for sign in [1.0, -1.0] {
        for &(x, w) in &spread {
            let scale = sign * (1.0 + sigma * x);
            let rotor = base.iter().map(|phi| Complex64::from_polar(1.0, scale * phi)).collect();
            out.push(PhaseProfile { weight: 0.5 * w, rotor: Some(rotor) });
        }
    }
    out
}

fn apply_response(taps: &[Complex64], profiles: &[PhaseProfile], v: &[Complex64]) -> Vec<Complex64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); v.len()];
    for p in profiles {
        match &p.rotor {
            None => {
                for (a, y) in acc.iter_mut().zip(causal_convolve(taps, v)) {
                    *a += p.weight * y;
                }
            }
            Some(r) => {
                let u: Vec<Complex64> = v.iter().zip(r).map(|(x, z)| x * z).collect();
                let y = causal_convolve(taps, &u);
                for ((a, y), z) in acc.iter_mut().zip(y).zip(r) {
                    *a += p.weight * y * z.conj();
                }
            }
        }
    }
    acc
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn check_resolution(spectrum: &AbsorptionSpectrum, tgrid: &TimeGrid) -> AfcResult<()> {
    let max_step = TimeGrid::max_step_for(&spectrum.grid);
    if tgrid.step > max_step * (1.0 + 1e-9) {
        return Err(AfcError::Resolution(format!(
            "time step {:.4e} s exceeds {max_step:.4e} s needed for detunings up to {:.4e} Hz",
            tgrid.step,
            0.5 / (4.0 * max_step)
        )));
    }
    let revival = 1.0 / spectrum.grid.step;
    if tgrid.duration() >= revival {
        return Err(AfcError::Resolution(format!(
            "trace duration {:.4e} s reaches the {revival:.4e} s revival of a {:.4e} Hz frequency grid",
            tgrid.duration(),
            spectrum.grid.step
        )));
    }
    Ok(())
}

/// Propagates sampled input field through the medium.
pub fn propagate(
    spectrum: &AbsorptionSpectrum,
    input: &[Complex64],
    schedule: &StarkSchedule,
    tgrid: &TimeGrid,
) -> AfcResult<Vec<Complex64>> {
    if input.len() != tgrid.count {
        return Err(AfcError::InvalidParameter("input length does not match time grid".into()));
    }
    schedule.validate()?;
    check_resolution(spectrum, tgrid)?;
    if spectrum.max_depth() == 0.0 {
        return Ok(input.to_vec());
    }
    let taps = kernel_taps(spectrum, tgrid.step, tgrid.count);
    let profiles = phase_profiles(schedule, tgrid);
    let slices = (spectrum.max_depth() / 2.0).ceil().max(1.0) as usize;
    let inv = 1.0 / slices as f64;

    let mut state = input.to_vec();
    for _ in 0..slices {
        let mut term = state.clone();
        let mut sum = state;
        let mut converged = false;
        for k in 1..=TAYLOR_MAX_TERMS {
            let applied = apply_response(&taps, &profiles, &term);
            let scale = -inv / k as f64;
            term = applied.into_iter().map(|z| z * scale).collect();
            for (s, t) in sum.iter_mut().zip(&term) {
                *s += t;
            }
            let (tn, sn) = (norm(&term), norm(&sum));
            if !(tn.is_finite() && sn.is_finite()) {
                return Err(AfcError::Numerical("propagation produced non-finite field".into()));
            }
            if tn <= TAYLOR_TOL * sn.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(AfcError::Numerical(format!(
                "propagator series did not converge in {TAYLOR_MAX_TERMS} terms"
            )));
        }
        state = sum;
    }
    Ok(state)
}

/// Simulates the output trace for a single input pulse.
pub fn simulate_trace(
    spectrum: &AbsorptionSpectrum,
    pulse: &InputPulse,
    schedule: &StarkSchedule,
    tgrid: &TimeGrid,
) -> AfcResult<IntensityTrace> {
    if let Some(width) = pulse.spectral_fwhm() {
        let g = spectrum.grid;
        let margin = EDGE_TAPER * g.span();
        let (lo, hi) = (pulse.carrier_detuning - 3.0 * width, pulse.carrier_detuning + 3.0 * width);
        if lo < g.start + margin || hi > g.end() - margin {
            return Err(AfcError::Resolution(format!(
                "pulse spectrum [{lo:.4e}, {hi:.4e}] Hz does not fit inside the untapered grid"
            )));
        }
        if let Envelope::Gaussian { fwhm, .. } = pulse.envelope {
            if fwhm < 2.0 * tgrid.step {
                return Err(AfcError::Resolution(format!(
                    "pulse FWHM {fwhm:.4e} s is under-sampled by step {:.4e} s",
                    tgrid.step
                )));
            }
        }
    }
    let input = pulse.sample(tgrid)?;
    let output = propagate(spectrum, &input, schedule, tgrid)?;
    IntensityTrace::from_field(*tgrid, output)
}

/// Output of a time-bin storage run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeBinTrace {
    pub trace: IntensityTrace,
    /// Echo order `n` at which the two paths overlap.
    pub order: u32,
    /// Early bin delayed by the slow comb.
    pub interference_time: f64,
    /// Early bin delayed by the fast comb.
    pub early_side_time: f64,
    /// Late bin delayed by the slow comb.
    pub late_side_time: f64,
}

/// Order `n` with `separation = n (1/Δ_b - 1/Δ_a)`.
pub fn interference_order(double: &DoubleCombParams, separation: f64) -> AfcResult<u32> {
    let t_a = double.comb_a.storage_time();
    let t_b = double.comb_b.storage_time();
    let diff = t_b - t_a;
    let relation = format!(
        "time-bin separation must satisfy t_early + n/Δ_b = t_late + n/Δ_a, i.e. separation = n·(1/Δ_b - 1/Δ_a) \
         for integer n >= 1; got separation {separation:.6e} s, 1/Δ_a = {t_a:.6e} s, 1/Δ_b = {t_b:.6e} s"
    );
    if diff <= 0.0 {
        return Err(AfcError::Configuration(relation));
    }
    let n = separation / diff;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-6 * rounded {
        return Err(AfcError::Configuration(relation));
    }
    Ok(rounded as u32)
}

/// Stores a time-bin qubit in superimposed combs.
pub fn simulate_timebin(
    double: &DoubleCombParams,
    fgrid: FrequencyGrid,
    qubit: &TimeBinQubit,
    schedule: &StarkSchedule,
    tgrid: &TimeGrid,
) -> AfcResult<TimeBinTrace> {
    qubit.validate()?;
    let order = interference_order(double, qubit.separation)?;
    let spectrum = superimpose(double, fgrid)?;
    let input = qubit.field(tgrid);
    let output = propagate(&spectrum, &input, schedule, tgrid)?;
    let n = f64::from(order);
    let t_e = qubit.early_center;
    Ok(TimeBinTrace {
        trace: IntensityTrace::from_field(*tgrid, output)?,
        order,
        interference_time: t_e + n * double.comb_b.storage_time(),
        early_side_time: t_e + n * double.comb_a.storage_time(),
        late_side_time: t_e + qubit.separation + n * double.comb_b.storage_time(),
    })
}

/// Relative phase recovered from four intensities at Δα = 0, π/2, π, 3π/2
/// for a fringe `1 + V cos(Δα + Δβ)`.
pub fn four_step_phase(intensities: [f64; 4]) -> f64 {
    let [i0, i1, i2, i3] = intensities;
    (i3 - i1).atan2(i0 - i2)
}

/// Input phases used by [`four_step_phase`].
pub const FOUR_STEP_PHASES: [f64; 4] = [0.0, 0.5 * PI, PI, 1.5 * PI];

impl TimeBinState {
    /// Amplitudes of the early and late bins.
    pub fn amplitudes(&self) -> (Complex64, Complex64) {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match *self {
            TimeBinState::Early => (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)),
            TimeBinState::Late => (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
            TimeBinState::Superposition { delta_alpha } => {
                (Complex64::new(h, 0.0), Complex64::from_polar(h, -delta_alpha))
            }
        }
    }
}
