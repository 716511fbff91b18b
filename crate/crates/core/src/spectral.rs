//! Inhomogeneously broadened absorption spectra and the hyperfine
//! optical-pumping (spectral initialization) rate model.
//!
//! The ground state carries eight nuclear-spin levels `m_I = -7/2 ..= +7/2`.
//! Each level contributes one Gaussian sub-line to the optical depth, weighted
//! by its population. A chirped pump sweep excites every level at a rate set
//! by the fraction of its sub-line that falls inside the swept band, and the
//! excitation relaxes back to the ground manifold according to a branching
//! matrix. Excited-state lifetimes are short compared with the sweep and are
//! not tracked.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{ensure_finite, AfcError, AfcResult};

/// Number of ground-state hyperfine levels of a spin-7/2 nucleus.
pub const LEVEL_COUNT: usize = 8;

const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5; // 1 / (2 sqrt(2 ln 2))

/// Unit-peak Gaussian with the given full width at half maximum.
#[inline]
pub fn gaussian_fwhm(x: f64, fwhm: f64) -> f64 {
    (-4.0 * std::f64::consts::LN_2 * x * x / (fwhm * fwhm)).exp()
}

/// Uniform detuning axis, in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl FrequencyGrid {
    pub fn new(start: f64, step: f64, count: usize) -> AfcResult<Self> {
        ensure_finite("grid start", start)?;
        ensure_finite("grid step", step)?;
        if step <= 0.0 {
            return Err(AfcError::InvalidParameter(format!("grid step must be > 0, got {step}")));
        }
        if count < 2 {
            return Err(AfcError::InvalidParameter(format!("grid needs at least 2 points, got {count}")));
        }
        Ok(Self { start, step, count })
    }

    /// Grid symmetric about zero detuning covering at least `span`.
    pub fn centered(span: f64, step: f64) -> AfcResult<Self> {
        ensure_finite("grid span", span)?;
        if span <= 0.0 {
            return Err(AfcError::InvalidParameter(format!("grid span must be > 0, got {span}")));
        }
        let half = (0.5 * span / step).ceil() as usize;
        Self::new(-(half as f64) * step, step, 2 * half + 1)
    }

    #[inline]
    pub fn value(&self, index: usize) -> f64 {
        self.start + self.step * index as f64
    }

    pub fn end(&self) -> f64 {
        self.value(self.count - 1)
    }

    pub fn span(&self) -> f64 {
        self.step * (self.count - 1) as f64
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.value(i))
    }
}

/// One ground-state hyperfine level and its absorption sub-line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperfineLevel {
    /// Nuclear spin projection, stored as twice its value (-7 ..= 7, odd).
    pub twice_m: i8,
    /// Center of this level's inhomogeneous sub-line, Hz.
    pub center_offset: f64,
    pub population: f64,
}

impl HyperfineLevel {
    pub fn m_i(&self) -> f64 {
        f64::from(self.twice_m) / 2.0
    }
}

/// Optical depth sampled on a frequency grid.
///
/// `optical_depth` holds the total depth, background included;
/// `background_d0` records the flat background separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionSpectrum {
    pub grid: FrequencyGrid,
    pub optical_depth: Vec<f64>,
    pub background_d0: f64,
}

impl AbsorptionSpectrum {
    pub fn new(grid: FrequencyGrid, optical_depth: Vec<f64>, background_d0: f64) -> AfcResult<Self> {
        if optical_depth.len() != grid.count {
            return Err(AfcError::InvalidParameter(format!(
                "spectrum has {} samples for a {}-point grid",
                optical_depth.len(),
                grid.count
            )));
        }
        if !(background_d0.is_finite() && background_d0 >= 0.0) {
            return Err(AfcError::InvalidParameter(format!("background d0 must be finite and >= 0, got {background_d0}")));
        }
        if let Some(bad) = optical_depth.iter().find(|d| !d.is_finite() || **d < -1e-9) {
            return Err(AfcError::InvalidParameter(format!("optical depth must be finite and >= 0, found {bad}")));
        }
        Ok(Self { grid, optical_depth, background_d0 })
    }

    /// Flat spectrum of depth `d0` everywhere.
    pub fn flat(grid: FrequencyGrid, d0: f64) -> AfcResult<Self> {
        Self::new(grid, vec![d0; grid.count], d0)
    }

    /// Linear interpolation of the optical depth at `detuning`.
    pub fn optical_depth_at(&self, detuning: f64) -> AfcResult<f64> {
        ensure_finite("detuning", detuning)?;
        let g = &self.grid;
        let tol = 1e-9 * g.step;
        if detuning < g.start - tol || detuning > g.end() + tol {
            return Err(AfcError::Range(format!(
                "detuning {detuning} Hz outside grid [{}, {}]",
                g.start,
                g.end()
            )));
        }
        let x = ((detuning - g.start) / g.step).clamp(0.0, (g.count - 1) as f64);
        let i = (x.floor() as usize).min(g.count - 2);
        let frac = x - i as f64;
        Ok(self.optical_depth[i] * (1.0 - frac) + self.optical_depth[i + 1] * frac)
    }

    pub fn max_depth(&self) -> f64 {
        self.optical_depth.iter().copied().fold(0.0, f64::max)
    }

    /// Mean optical depth over the grid points inside `[lo, hi]`.
    pub fn mean_depth_in(&self, lo: f64, hi: f64) -> f64 {
        let (sum, n) = self
            .grid
            .values()
            .zip(&self.optical_depth)
            .filter(|(f, _)| *f >= lo && *f <= hi)
            .fold((0.0, 0usize), |(s, n), (_, d)| (s + d, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Trapezoidal integral of the optical depth over detuning, Hz.
    pub fn integrated_depth(&self) -> f64 {
        let d = &self.optical_depth;
        let inner: f64 = d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]);
        inner * self.grid.step
    }
}

/// A chirped pump sweep, repeated `repetitions` times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpSweep {
    /// Center of the swept band relative to the spectrum origin, Hz.
    pub center_offset: f64,
    /// Width of the swept band, Hz.
    pub bandwidth: f64,
    /// Duration of one chirp, s.
    pub duration: f64,
    pub repetitions: u32,
    /// Excitation rate of an ion whose transition lies inside the band, 1/s.
    pub pump_rate: f64,
}

/// Detuning at which the pumped band is used for comb preparation, Hz.
/// An assumed default; only its rough position is known.
pub const DEFAULT_PREPARATION_OFFSET: f64 = 360e6;

impl PumpSweep {
    /// 800 MHz chirp centered 500 MHz below the line center, 1 ms per chirp,
    /// 1500 repetitions.
    pub fn default_erbium() -> Self {
        Self { center_offset: -500e6, bandwidth: 800e6, duration: 1e-3, repetitions: 1500, pump_rate: 200.0 }
    }

    pub fn validate(&self) -> AfcResult<()> {
        ensure_finite("sweep center", self.center_offset)?;
        for (name, v) in [("sweep bandwidth", self.bandwidth), ("chirp duration", self.duration)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(AfcError::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.pump_rate.is_finite() && self.pump_rate >= 0.0) {
            return Err(AfcError::InvalidParameter(format!("pump rate must be >= 0, got {}", self.pump_rate)));
        }
        Ok(())
    }

    pub fn band(&self) -> (f64, f64) {
        (self.center_offset - 0.5 * self.bandwidth, self.center_offset + 0.5 * self.bandwidth)
    }

    pub fn total_time(&self) -> f64 {
        self.duration * f64::from(self.repetitions)
    }
}

/// Row-stochastic relaxation matrix: `rows[from][to]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchingMatrix {
    pub rows: [[f64; LEVEL_COUNT]; LEVEL_COUNT],
}

impl BranchingMatrix {
    pub fn identity() -> Self {
        let mut rows = [[0.0; LEVEL_COUNT]; LEVEL_COUNT];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { rows }
    }

    /// Relaxation favouring small changes of `m_I`: weights 0.4, 0.25, 0.05
    /// for |Δm| = 0, 1, 2, renormalized per row at the ladder ends.
    pub fn nearest_neighbor() -> Self {
        let weight = |dm: usize| match dm {
            0 => 0.4,
            1 => 0.25,
            2 => 0.05,
            _ => 0.0,
        };
        let mut rows = [[0.0; LEVEL_COUNT]; LEVEL_COUNT];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = weight(i.abs_diff(j));
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Self { rows }
    }

    pub fn validate(&self) -> AfcResult<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(AfcError::InvalidParameter(format!("branching row {i} has negative or non-finite entries")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(AfcError::InvalidParameter(format!("branching row {i} sums to {s}, expected 1")));
            }
        }
        Ok(())
    }
}

/// Hyperfine populations together with the sub-line shape parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub levels: [HyperfineLevel; LEVEL_COUNT],
    /// FWHM of each Gaussian sub-line, Hz.
    pub sub_linewidth: f64,
    /// Optical depth of a single sub-line holding the whole population.
    pub peak_d: f64,
}

impl Ensemble {
    /// Equal populations, centers `spacing * m_I` about zero.
    pub fn uniform(spacing: f64, sub_linewidth: f64, peak_d: f64) -> Self {
        let levels = std::array::from_fn(|k| {
            let twice_m = 2 * k as i8 - 7;
            HyperfineLevel {
                twice_m,
                center_offset: spacing * f64::from(twice_m) / 2.0,
                population: 1.0 / LEVEL_COUNT as f64,
            }
        });
        Self { levels, sub_linewidth, peak_d }
    }

    /// Default initialization model: 120 MHz level spacing (sub-lines from
    /// -420 MHz to +420 MHz), 300 MHz sub-line FWHM, so that the eight lines
    /// merge into one unresolved band.
    pub fn default_erbium(peak_d: f64) -> Self {
        Self::uniform(120e6, 300e6, peak_d)
    }

    pub fn populations(&self) -> [f64; LEVEL_COUNT] {
        std::array::from_fn(|k| self.levels[k].population)
    }

    pub fn total_population(&self) -> f64 {
        self.levels.iter().map(|l| l.population).sum()
    }

    pub fn spectrum(&self, grid: FrequencyGrid) -> AfcResult<AbsorptionSpectrum> {
        build_initial_spectrum(&self.levels, self.sub_linewidth, self.peak_d, grid)
    }
}

/// Sum of population-weighted Gaussian sub-lines.
///
/// A single level holding the whole population produces a line of peak
/// height `peak_d` at its center.
pub fn build_initial_spectrum(
    levels: &[HyperfineLevel],
    sub_linewidth: f64,
    peak_d: f64,
    grid: FrequencyGrid,
) -> AfcResult<AbsorptionSpectrum> {
    ensure_finite("sub-linewidth", sub_linewidth)?;
    ensure_finite("peak depth", peak_d)?;
    if sub_linewidth <= 0.0 {
        return Err(AfcError::InvalidParameter(format!("sub-linewidth must be > 0, got {sub_linewidth}")));
    }
    if peak_d < 0.0 {
        return Err(AfcError::InvalidParameter(format!("peak depth must be >= 0, got {peak_d}")));
    }
    for level in levels {
        ensure_finite("level center", level.center_offset)?;
        ensure_finite("level population", level.population)?;
        if level.population < -1e-9 {
            return Err(AfcError::InvalidParameter(format!(
                "level m_I={} has negative population {}",
                level.m_i(),
                level.population
            )));
        }
    }
    let depth = grid
        .values()
        .map(|f| {
            levels
                .iter()
                .map(|l| l.population.max(0.0) * gaussian_fwhm(f - l.center_offset, sub_linewidth))
                .sum::<f64>()
                * peak_d
        })
        .collect();
    AbsorptionSpectrum::new(grid, depth, 0.0)
}

/// Fraction of a Gaussian sub-line lying inside `[lo, hi]`.
fn line_fraction(center: f64, fwhm: f64, lo: f64, hi: f64) -> f64 {
    let s = fwhm * FWHM_TO_SIGMA * std::f64::consts::SQRT_2;
    0.5 * (erf((hi - center) / s) - erf((lo - center) / s))
}

/// Result of an optical-pumping run.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpOutcome {
    pub ensemble: Ensemble,
    pub spectrum: AbsorptionSpectrum,
    pub steps: usize,
}

/// Integrates the hyperfine rate equations over the full sweep sequence with
/// explicit Euler steps of length at most `dt`.
///
/// Each level `m` is excited at `pump_rate * f_m`, where `f_m` is the part
/// of its sub-line inside the swept band, and the excitation returns to the
/// ground manifold according to `branching`.
pub fn apply_pump_sweep(
    ensemble: &Ensemble,
    sweep: &PumpSweep,
    branching: &BranchingMatrix,
    dt: f64,
    grid: FrequencyGrid,
) -> AfcResult<PumpOutcome> {
    sweep.validate()?;
    branching.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(AfcError::InvalidParameter(format!("time step must be > 0, got {dt}")));
    }
    let (lo, hi) = sweep.band();
    let rates: [f64; LEVEL_COUNT] = std::array::from_fn(|k| {
        sweep.pump_rate * line_fraction(ensemble.levels[k].center_offset, ensemble.sub_linewidth, lo, hi)
    });

    let total = sweep.total_time();
    let steps = if total > 0.0 { (total / dt).ceil() as usize } else { 0 };
    let h = if steps > 0 { total / steps as f64 } else { 0.0 };

    let mut pop = ensemble.populations();
    for step in 0..steps {
        let excited: [f64; LEVEL_COUNT] = std::array::from_fn(|k| rates[k] * pop[k]);
        let mut next = pop;
        for from in 0..LEVEL_COUNT {
            next[from] -= h * excited[from];
            for (to, b) in branching.rows[from].iter().enumerate() {
                next[to] += h * excited[from] * b;
            }
        }
        if let Some(k) = (0..LEVEL_COUNT).find(|&k| next[k] < -1e-9) {
            return Err(AfcError::NumericalStep(format!(
                "population of m_I={} went negative ({:.3e}) at step {step}; reduce dt below {:.3e} s",
                ensemble.levels[k].m_i(),
                next[k],
                1.0 / rates.iter().copied().fold(0.0, f64::max)
            )));
        }
        pop = next;
    }

    let mut out = ensemble.clone();
    for (level, p) in out.levels.iter_mut().zip(pop) {
        level.population = p.max(0.0);
    }
    let spectrum = out.spectrum(grid)?;
    Ok(PumpOutcome { ensemble: out, spectrum, steps })
}
