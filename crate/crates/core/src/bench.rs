//! Photon-counting Monte Carlo and the fidelity statistics used to
//! benchmark time-bin qubit storage.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comb::{carve_comb, CombParams, DoubleCombParams};
use crate::echo::{
    echo_efficiency, gaussian_amplitude, gaussian_energy, propagate, simulate_timebin, IntensityTrace, TimeGrid,
};
use crate::error::{ensure_finite, AfcError, AfcResult};
use crate::spectral::FrequencyGrid;
use crate::stark::StarkSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TimeBinState {
    Early,
    Late,
    /// `|e> + e^{iΔα}|l>`.
    Superposition { delta_alpha: f64 },
}

impl TimeBinState {
    pub const PLUS_I: TimeBinState = TimeBinState::Superposition { delta_alpha: 0.5 * PI };
    pub const MINUS_3PI_4: TimeBinState = TimeBinState::Superposition { delta_alpha: 0.75 * PI };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeBinQubit {
    pub state: TimeBinState,
    /// Intensity FWHM of each bin, s.
    pub pulse_fwhm: f64,
    /// Late minus early center, s.
    pub separation: f64,
    /// Mean photon number per qubit.
    pub mu: f64,
    /// Early-bin center, s.
    pub early_center: f64,
}

impl TimeBinQubit {
    pub fn validate(&self) -> AfcResult<()> {
        ensure_finite("early center", self.early_center)?;
        if let TimeBinState::Superposition { delta_alpha } = self.state {
            ensure_finite("delta alpha", delta_alpha)?;
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(AfcError::InvalidParameter(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.pulse_fwhm.is_finite() && self.pulse_fwhm > 0.0) {
            return Err(AfcError::InvalidParameter(format!("pulse FWHM must be > 0, got {}", self.pulse_fwhm)));
        }
        if !(self.separation.is_finite() && self.separation > self.pulse_fwhm) {
            return Err(AfcError::InvalidParameter(format!(
                "bin separation {} s must exceed the pulse FWHM {} s",
                self.separation, self.pulse_fwhm
            )));
        }
        Ok(())
    }

    pub fn late_center(&self) -> f64 {
        self.early_center + self.separation
    }

    /// Input envelope normalized to unit energy.
    pub fn field(&self, grid: &TimeGrid) -> Vec<num_complex::Complex64> {
        let (ae, al) = self.state.amplitudes();
        let norm = 1.0 / gaussian_energy(self.pulse_fwhm, 1.0).sqrt();
        grid.times()
            .map(|t| {
                norm * (ae * gaussian_amplitude(t, self.early_center, self.pulse_fwhm)
                    + al * gaussian_amplitude(t, self.late_center(), self.pulse_fwhm))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub detector_efficiency: f64,
    /// End-to-end optical transmission outside the memory.
    pub system_transmission: f64,
    /// Unconditional click probability per integration window.
    pub noise_prob_per_window: f64,
    /// Integration window, s.
    pub integration_window: f64,
    pub trials: u64,
    pub rng_seed: u64,
}

impl DetectionModel {
    pub fn validate(&self) -> AfcResult<()> {
        for (name, p) in [
            ("detector efficiency", self.detector_efficiency),
            ("system transmission", self.system_transmission),
            ("noise probability", self.noise_prob_per_window),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AfcError::InvalidParameter(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !(self.integration_window.is_finite() && self.integration_window > 0.0) {
            return Err(AfcError::InvalidParameter("integration window must be > 0".into()));
        }
        if self.trials == 0 {
            return Err(AfcError::InvalidParameter("trials must be >= 1".into()));
        }
        Ok(())
    }

    pub fn chain_efficiency(&self) -> f64 {
        self.detector_efficiency * self.system_transmission
    }
}

/// Threshold-detector histogram: each bin records at most one click per
/// trial, so every count is bounded by `trials`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountsHistogram {
    /// Bin edges, s.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub trials: u64,
}

impl CountsHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Mixes a tag into a seed (SplitMix64 finalizer).
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counts per bin over `model.trials` independent weak coherent inputs.
///
/// The trace must be the response to a unit-energy input, so its
/// windowed energy is the fraction of photons emitted there. Each trial
/// uses its own stream of a counter-seeded generator, which makes the
/// histogram independent of the worker count.
pub fn monte_carlo_counts(
    trace: &IntensityTrace,
    mu: f64,
    model: &DetectionModel,
    bin_edges: &[f64],
) -> AfcResult<CountsHistogram> {
    model.validate()?;
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(AfcError::InvalidParameter(format!("mu must be >= 0, got {mu}")));
    }
    if trace.energy() > 1.0 + 1e-6 {
        return Err(AfcError::Normalization(format!(
            "trace carries energy {:.6} > 1; simulate with a unit-energy input",
            trace.energy()
        )));
    }
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(AfcError::InvalidParameter("bin edges must be strictly increasing, >= 2 edges".into()));
    }
    let bins: Vec<(f64, f64)> = bin_edges
        .windows(2)
        .map(|w| {
            let fraction = trace.window_energy((w[0], w[1]))?;
            let mean = mu * fraction * model.chain_efficiency();
            let noise = (model.noise_prob_per_window * (w[1] - w[0]) / model.integration_window).min(1.0);
            Ok((mean, noise))
        })
        .collect::<AfcResult<_>>()?;
    let poisson: Vec<Option<Poisson<f64>>> = bins
        .iter()
        .map(|&(m, _)| if m > 0.0 { Poisson::new(m).ok() } else { None })
        .collect();

    let counts = (0..model.trials)
        .into_par_iter()
        .fold(
            || vec![0u64; bins.len()],
            |mut acc, trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
                rng.set_stream(trial);
                for (k, (&(_, noise), dist)) in bins.iter().zip(&poisson).enumerate() {
                    let photons = dist.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                    let dark = rng.random::<f64>() < noise;
                    if photons >= 1.0 || dark {
                        acc[k] += 1;
                    }
                }
                acc
            },
        )
        .reduce(|| vec![0u64; bins.len()], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    Ok(CountsHistogram { bin_edges: bin_edges.to_vec(), counts, trials: model.trials })
}

/// `(S + N) / (S + 2N)` with `S` the noise-subtracted signal.
pub fn fidelity_basis(signal: u64, noise: u64) -> AfcResult<f64> {
    let den = signal + 2 * noise;
    if den == 0 {
        return Err(AfcError::Undefined("basis fidelity with no counts".into()));
    }
    Ok((signal + noise) as f64 / den as f64)
}

/// Binomial standard error of `C / (C + N)` with `C = S + N` the raw
/// counts in the signal window.
pub fn fidelity_basis_stderr(signal_window: u64, noise: u64) -> f64 {
    let (c, n) = (signal_window as f64, noise as f64);
    if c + n == 0.0 {
        return 0.0;
    }
    (c * n / (c + n).powi(3)).sqrt()
}

/// `(max - min) / (max + min)`.
pub fn visibility(max: f64, min: f64) -> AfcResult<f64> {
    if !(min >= 0.0 && max >= min && max.is_finite()) {
        return Err(AfcError::InvalidParameter(format!("need max >= min >= 0, got max {max}, min {min}")));
    }
    if max == 0.0 {
        return Err(AfcError::Undefined("visibility with no counts".into()));
    }
    Ok((max - min) / (max + min))
}

pub fn visibility_stderr(max: f64, min: f64) -> f64 {
    let s = max + min;
    if s == 0.0 {
        return 0.0;
    }
    (4.0 * max * min / s.powi(3)).sqrt()
}

pub fn fidelity_superposition(v: f64) -> f64 {
    0.5 * (1.0 + v)
}

/// `F_T = F_el / 3 + 2 F_+- / 3`.
pub fn total_fidelity(f_e: f64, f_l: f64, f_plus: f64, f_minus: f64) -> f64 {
    (f_e + f_l) / 6.0 + (f_plus + f_minus) / 3.0
}

pub fn total_fidelity_stderr(s_e: f64, s_l: f64, s_plus: f64, s_minus: f64) -> f64 {
    ((s_e * s_e + s_l * s_l) / 36.0 + (s_plus * s_plus + s_minus * s_minus) / 9.0).sqrt()
}

/// Best measure-and-prepare fidelity for a photon-number distribution
/// `probs[N]` when the device emits with overall probability `eta`.
///
/// Optimal estimation from `N` copies gives `(N + 1) / (N + 2)`; the device
/// spends its output budget on the largest `N` first.
pub fn greedy_bound(probs: &[f64], eta: f64) -> AfcResult<f64> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(AfcError::InvalidParameter(format!("efficiency must be > 0, got {eta}")));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(AfcError::InvalidParameter("photon-number probabilities must be >= 0".into()));
    }
    let budget: f64 = probs.iter().sum();
    if eta > budget * (1.0 + 1e-12) {
        return Err(AfcError::Infeasible(format!(
            "efficiency {eta} exceeds the available output probability {budget}"
        )));
    }
    let mut remaining = eta;
    let mut weighted = 0.0;
    for (n, &p) in probs.iter().enumerate().rev() {
        if remaining <= 0.0 {
            break;
        }
        let take = p.min(remaining);
        weighted += take * (n as f64 + 1.0) / (n as f64 + 2.0);
        remaining -= take;
    }
    Ok(weighted / eta)
}

/// Poisson distribution conditioned on at least one photon, truncated at
/// `n_max` (or where the tail falls below 1e-12).
pub fn conditioned_poisson(mu: f64, n_max: Option<usize>) -> AfcResult<Vec<f64>> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(AfcError::InvalidParameter(format!("mu must be > 0, got {mu}")));
    }
    let norm = -(-mu).exp_m1();
    let mut probs = vec![0.0];
    let mut term = (-mu).exp();
    let mut cumulative = 0.0;
    let mut n = 0usize;
    loop {
        n += 1;
        term *= mu / n as f64;
        probs.push(term / norm);
        cumulative += term / norm;
        let tail = 1.0 - cumulative;
        match n_max {
            Some(max) if n >= max => {
                if tail > 1e-9 {
                    return Err(AfcError::InvalidParameter(format!(
                        "truncation at N = {max} leaves tail probability {tail:.3e} > 1e-9"
                    )));
                }
                break;
            }
            None if tail < 1e-12 && n as f64 > mu => break,
            _ => {}
        }
    }
    Ok(probs)
}

/// Classical measure-and-prepare bound for weak coherent inputs of mean
/// `mu` and storage efficiency `eta`.
///
/// Photon-number statistics are conditioned on a non-vacuum input, and
/// `eta` is the output probability per non-vacuum event.
pub fn classical_bound(mu: f64, eta: f64, n_max: Option<usize>) -> AfcResult<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(if eta > 1.0 {
            AfcError::Infeasible(format!("efficiency {eta} > 1"))
        } else {
            AfcError::InvalidParameter(format!("efficiency must be in (0, 1], got {eta}"))
        });
    }
    greedy_bound(&conditioned_poisson(mu, n_max)?, eta)
}

/// Signal-to-noise ratio in a detection window.
pub fn signal_to_noise(mu: f64, efficiency: f64, model: &DetectionModel) -> AfcResult<f64> {
    if model.noise_prob_per_window == 0.0 {
        return Err(AfcError::Undefined("SNR with zero noise".into()));
    }
    Ok(mu * efficiency * model.chain_efficiency() / model.noise_prob_per_window)
}

/// Everything the μ-sweep needs to simulate, count and score a qubit set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Single comb used for the basis states.
    pub basis_comb: CombParams,
    pub basis_schedule: StarkSchedule,
    /// Echo order read out for basis states.
    pub basis_order: u32,
    /// Superimposed combs used to project on superpositions. Its `delta_f`
    /// is overwritten per projection.
    pub interferometer: DoubleCombParams,
    pub interferometer_schedule: StarkSchedule,
    /// Systematic error added to the intended Δβ, rad.
    pub phase_error: f64,
    pub frequency_grid: FrequencyGrid,
    pub time_grid: TimeGrid,
    pub pulse_fwhm: f64,
    pub separation: f64,
    pub early_center: f64,
    pub detection: DetectionModel,
    /// States projected for the superposition fidelities.
    pub superpositions: [f64; 2],
}

/// Noise-free traces of a qubit set; independent of μ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTraces {
    pub early: IntensityTrace,
    pub late: IntensityTrace,
    /// `[state][max, min]`.
    pub superpositions: [[IntensityTrace; 2]; 2],
    pub early_signal_time: f64,
    pub late_signal_time: f64,
    pub interference_time: f64,
    /// Echo efficiency of the basis readout.
    pub storage_efficiency: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub mu: f64,
    pub f_e: f64,
    pub f_l: f64,
    pub f_plus: f64,
    pub f_minus: f64,
    pub f_total: f64,
    pub se_e: f64,
    pub se_l: f64,
    pub se_plus: f64,
    pub se_minus: f64,
    pub se_total: f64,
    pub classical_bound: f64,
    /// `(F_T - bound) / se_total`.
    pub violation_sigmas: f64,
    pub trials: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> AfcResult<()> {
        self.basis_comb.validate()?;
        self.interferometer.validate()?;
        self.detection.validate()?;
        self.basis_schedule.validate()?;
        self.interferometer_schedule.validate()?;
        ensure_finite("phase error", self.phase_error)?;
        if self.basis_order == 0 {
            return Err(AfcError::InvalidParameter("basis readout order must be >= 1".into()));
        }
        self.qubit(TimeBinState::Early, 0.0).validate()
    }

    fn qubit(&self, state: TimeBinState, mu: f64) -> TimeBinQubit {
        TimeBinQubit { state, pulse_fwhm: self.pulse_fwhm, separation: self.separation, mu, early_center: self.early_center }
    }

    /// Runs the noise-free simulations.
    pub fn simulate(&self) -> AfcResult<BenchTraces> {
        self.validate()?;
        let spectrum = carve_comb(&self.basis_comb, self.frequency_grid)?;
        let basis = |state| -> AfcResult<IntensityTrace> {
            let field = self.qubit(state, 0.0).field(&self.time_grid);
            let out = propagate(&spectrum, &field, &self.basis_schedule, &self.time_grid)?;
            IntensityTrace::from_field(self.time_grid, out)
        };
        let early = basis(TimeBinState::Early)?;
        let late = basis(TimeBinState::Late)?;
        let readout = f64::from(self.basis_order) * self.basis_comb.storage_time();
        let early_signal_time = self.early_center + readout;
        let late_signal_time = early_signal_time + self.separation;
        let half = 0.5 * self.separation;
        let storage_efficiency = echo_efficiency(&early, (early_signal_time - half, early_signal_time + half), 1.0)?;

        let t_fast = f64::from(crate::echo::interference_order(&self.interferometer, self.separation)?)
            * self.interferometer.comb_a.storage_time();
        let project = |delta_alpha: f64, offset: f64| -> AfcResult<(IntensityTrace, f64)> {
            let beta = -delta_alpha + offset + self.phase_error;
            let double = DoubleCombParams { delta_f: beta / (2.0 * PI * t_fast), ..self.interferometer };
            let qubit = self.qubit(TimeBinState::Superposition { delta_alpha }, 0.0);
            let run =
                simulate_timebin(&double, self.frequency_grid, &qubit, &self.interferometer_schedule, &self.time_grid)?;
            Ok((run.trace, run.interference_time))
        };
        let mut interference_time = 0.0;
        let mut pairs = Vec::with_capacity(2);
        for &alpha in &self.superpositions {
            let (max, t) = project(alpha, 0.0)?;
            let (min, _) = project(alpha, PI)?;
            interference_time = t;
            pairs.push([max, min]);
        }
        let superpositions: [[IntensityTrace; 2]; 2] =
            pairs.try_into().map_err(|_| AfcError::Configuration("expected two superposition states".into()))?;
        Ok(BenchTraces { early, late, superpositions, early_signal_time, late_signal_time, interference_time, storage_efficiency })
    }

    fn window(&self, center: f64) -> [f64; 2] {
        let h = 0.5 * self.detection.integration_window;
        [center - h, center + h]
    }

    /// Counts, fidelities and bound at mean photon number `mu`.
    pub fn score(&self, traces: &BenchTraces, mu: f64, mu_index: u64) -> AfcResult<FidelityRow> {
        let model = |tag: u64| DetectionModel { rng_seed: sub_seed(self.detection.rng_seed, mu_index * 16 + tag), ..self.detection };
        let early_w = self.window(traces.early_signal_time);
        let late_w = self.window(traces.late_signal_time);
        let edges = [early_w[0], early_w[1], late_w[0], late_w[1]];
        let basis_counts = |trace: &IntensityTrace, tag| -> AfcResult<(u64, u64)> {
            let h = monte_carlo_counts(trace, mu, &model(tag), &edges)?;
            Ok((h.counts[0], h.counts[2]))
        };
        let (e_sig, e_noise) = basis_counts(&traces.early, 0)?;
        let (l_noise, l_sig) = basis_counts(&traces.late, 1)?;
        let f_e = fidelity_basis(e_sig.saturating_sub(e_noise), e_noise)?;
        let f_l = fidelity_basis(l_sig.saturating_sub(l_noise), l_noise)?;

        let window = self.window(traces.interference_time);
        let mut sup = [(0.0, 0.0); 2];
        for (k, [max_t, min_t]) in traces.superpositions.iter().enumerate() {
            let max = monte_carlo_counts(max_t, mu, &model(2 + 2 * k as u64), &window)?.counts[0] as f64;
            let min = monte_carlo_counts(min_t, mu, &model(3 + 2 * k as u64), &window)?.counts[0] as f64;
            sup[k] = (fidelity_superposition(visibility(max, min)?), 0.5 * visibility_stderr(max, min));
        }
        let se_e = fidelity_basis_stderr(e_sig, e_noise);
        let se_l = fidelity_basis_stderr(l_sig, l_noise);
        let f_total = total_fidelity(f_e, f_l, sup[0].0, sup[1].0);
        let se_total = total_fidelity_stderr(se_e, se_l, sup[0].1, sup[1].1);
        let bound = classical_bound(mu, traces.storage_efficiency, None)?;
        Ok(FidelityRow {
            mu,
            f_e,
            f_l,
            f_plus: sup[0].0,
            f_minus: sup[1].0,
            f_total,
            se_e,
            se_l,
            se_plus: sup[0].1,
            se_minus: sup[1].1,
            se_total,
            classical_bound: bound,
            violation_sigmas: if se_total > 0.0 { (f_total - bound) / se_total } else { f64::INFINITY },
            trials: self.detection.trials,
        })
    }
}

/// Full simulate, count and score pipeline for each μ.
pub fn fidelity_vs_mu_sweep(mus: &[f64], config: &BenchConfig) -> AfcResult<Vec<FidelityRow>> {
    if let Some(bad) = mus.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(AfcError::InvalidParameter(format!("mu must be > 0, got {bad}")));
    }
    let traces = config.simulate()?;
    mus.iter().enumerate().map(|(i, &mu)| config.score(&traces, mu, i as u64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_hand_values() {
        assert!((greedy_bound(&[0.0, 1.0], 0.3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let b = classical_bound(0.8, 0.069, None).unwrap();
        assert!((b - 0.809).abs() < 0.002, "{b}");
        assert!(matches!(classical_bound(0.8, 1.2, None), Err(AfcError::Infeasible(_))));
        assert!(classical_bound(0.8, 0.069, Some(3)).is_err());
    }

    #[test]
    fn seeds_differ_by_tag() {
        assert_ne!(sub_seed(1, 0), sub_seed(1, 1));
        assert_eq!(sub_seed(7, 3), sub_seed(7, 3));
    }
}
