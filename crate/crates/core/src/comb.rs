//! Atomic frequency comb construction, the analytic storage-efficiency law
//! and least-squares comb fitting.
//!
//! Finesse follows the convention `F = Δ / γ`: tooth spacing over tooth
//! FWHM. With it, the effective depth `d̃ = (d / F) sqrt(π / (4 ln 2))` is the
//! frequency-averaged depth of a Gaussian comb and falls with finesse.

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, AfcError, AfcResult};
use crate::spectral::{gaussian_fwhm, AbsorptionSpectrum, FrequencyGrid};

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

/// Minimum number of grid points across one tooth FWHM.
pub const POINTS_PER_TOOTH: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToothShape {
    #[default]
    Gaussian,
    /// Rectangular teeth of full width γ, kept for comparison runs.
    Square,
}

/// A single comb: teeth of depth `tooth_depth` on a flat background.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombParams {
    /// Tooth spacing Δ, Hz.
    pub delta: f64,
    pub finesse: f64,
    /// Band over which teeth are carved, Hz.
    pub bandwidth: f64,
    pub tooth_depth: f64,
    pub background_d0: f64,
    /// Center of the comb band, Hz.
    pub center_offset: f64,
    #[serde(default)]
    pub shape: ToothShape,
}

impl CombParams {
    pub fn gaussian(delta: f64, finesse: f64, bandwidth: f64, tooth_depth: f64, background_d0: f64) -> Self {
        Self { delta, finesse, bandwidth, tooth_depth, background_d0, center_offset: 0.0, shape: ToothShape::Gaussian }
    }

    pub fn validate(&self) -> AfcResult<()> {
        for (name, v) in [
            ("delta", self.delta),
            ("finesse", self.finesse),
            ("bandwidth", self.bandwidth),
            ("tooth depth", self.tooth_depth),
            ("background d0", self.background_d0),
            ("center offset", self.center_offset),
        ] {
            ensure_finite(name, v)?;
        }
        if self.delta <= 0.0 {
            return Err(AfcError::InvalidParameter(format!("delta must be > 0, got {}", self.delta)));
        }
        if self.finesse <= 1.0 {
            return Err(AfcError::InvalidParameter(format!("finesse must be > 1, got {}", self.finesse)));
        }
        if self.bandwidth < self.delta {
            return Err(AfcError::InvalidParameter(format!(
                "bandwidth {} must be >= delta {}",
                self.bandwidth, self.delta
            )));
        }
        if self.tooth_depth < 0.0 || self.background_d0 < 0.0 {
            return Err(AfcError::InvalidParameter("depths must be >= 0".into()));
        }
        Ok(())
    }

    /// Tooth FWHM γ = Δ / F.
    pub fn gamma(&self) -> f64 {
        self.delta / self.finesse
    }

    pub fn tooth_count(&self) -> usize {
        (self.bandwidth / self.delta + 1e-9).floor() as usize + 1
    }

    /// Tooth centers, symmetric about `center_offset`.
    pub fn tooth_centers(&self) -> Vec<f64> {
        let n = self.tooth_count();
        let first = self.center_offset - 0.5 * (n - 1) as f64 * self.delta;
        (0..n).map(|k| first + k as f64 * self.delta).collect()
    }

    pub fn effective_depth(&self) -> f64 {
        effective_depth(self.tooth_depth, self.finesse)
    }

    /// Storage time of the first echo, 1/Δ.
    pub fn storage_time(&self) -> f64 {
        1.0 / self.delta
    }

    pub fn shifted(&self, offset: f64) -> Self {
        Self { center_offset: self.center_offset + offset, ..*self }
    }

    /// Teeth only (no background) at detuning `f`.
    fn teeth_at(&self, f: f64) -> f64 {
        let n = self.tooth_count() as isize;
        let first = self.center_offset - 0.5 * (n - 1) as f64 * self.delta;
        let nearest = ((f - first) / self.delta).round() as isize;
        let gamma = self.gamma();
        let mut total = 0.0;
        for k in (nearest - 3).max(0)..=(nearest + 3).min(n - 1) {
            let x = f - (first + k as f64 * self.delta);
            total += match self.shape {
                ToothShape::Gaussian => gaussian_fwhm(x, gamma),
                ToothShape::Square => {
                    if x.abs() <= 0.5 * gamma {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
        self.tooth_depth * total
    }

    fn check_grid(&self, grid: &FrequencyGrid) -> AfcResult<()> {
        let gamma = self.gamma();
        if grid.step * POINTS_PER_TOOTH > gamma * (1.0 + 1e-9) {
            return Err(AfcError::Resolution(format!(
                "grid step {:.4e} Hz gives fewer than {POINTS_PER_TOOTH} points per tooth width {:.4e} Hz",
                grid.step, gamma
            )));
        }
        let centers = self.tooth_centers();
        let lo = centers[0] - 2.0 * gamma;
        let hi = centers[centers.len() - 1] + 2.0 * gamma;
        if lo < grid.start || hi > grid.end() {
            return Err(AfcError::Resolution(format!(
                "comb band [{lo:.4e}, {hi:.4e}] Hz does not fit the grid [{:.4e}, {:.4e}] Hz",
                grid.start,
                grid.end()
            )));
        }
        Ok(())
    }
}

/// Effective (frequency-averaged) depth of a Gaussian comb.
pub fn effective_depth(tooth_depth: f64, finesse: f64) -> f64 {
    tooth_depth / finesse * (std::f64::consts::PI / FOUR_LN2).sqrt()
}

/// Dephasing rate γ̃ = 2πγ / sqrt(8 ln 2) for Gaussian teeth of FWHM γ.
pub fn gamma_tilde(gamma: f64) -> f64 {
    2.0 * std::f64::consts::PI * gamma / (8.0 * std::f64::consts::LN_2).sqrt()
}

/// Carves a comb on `grid`.
pub fn carve_comb(params: &CombParams, grid: FrequencyGrid) -> AfcResult<AbsorptionSpectrum> {
    params.validate()?;
    params.check_grid(&grid)?;
    let depth = grid.values().map(|f| params.background_d0 + params.teeth_at(f)).collect();
    AbsorptionSpectrum::new(grid, depth, params.background_d0)
}

/// Two superimposed combs forming a built-in unbalanced interferometer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleCombParams {
    pub comb_a: CombParams,
    pub comb_b: CombParams,
    /// Frequency shift applied to comb A, Hz.
    pub delta_f: f64,
    pub weight_a: f64,
    pub weight_b: f64,
    /// Ceiling on the summed tooth depth. Defaults to the deeper single comb.
    #[serde(default)]
    pub clip_depth: Option<f64>,
}

impl DoubleCombParams {
    pub fn validate(&self) -> AfcResult<()> {
        self.comb_a.validate()?;
        self.comb_b.validate()?;
        ensure_finite("delta_f", self.delta_f)?;
        if !(self.weight_a >= 0.0 && self.weight_b >= 0.0) {
            return Err(AfcError::InvalidParameter("comb weights must be >= 0".into()));
        }
        if let Some(c) = self.clip_depth {
            if !(c.is_finite() && c >= 0.0) {
                return Err(AfcError::InvalidParameter(format!("clip depth must be >= 0, got {c}")));
            }
        }
        Ok(())
    }

    fn active(&self) -> impl Iterator<Item = (CombParams, f64)> {
        [(self.comb_a.shifted(self.delta_f), self.weight_a), (self.comb_b, self.weight_b)]
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
    }

    pub fn effective_clip(&self) -> f64 {
        self.clip_depth
            .unwrap_or_else(|| self.active().map(|(c, w)| w * c.tooth_depth).fold(0.0, f64::max))
    }

    pub fn background(&self) -> f64 {
        self.active().map(|(c, _)| c.background_d0).fold(0.0, f64::max)
    }
}

/// Pointwise sum of the two weighted combs (comb A shifted by `delta_f`),
/// teeth clipped at the configured maximum depth, on the larger background.
pub fn superimpose(params: &DoubleCombParams, grid: FrequencyGrid) -> AfcResult<AbsorptionSpectrum> {
    params.validate()?;
    let combs: Vec<(CombParams, f64)> = params.active().collect();
    for (c, _) in &combs {
        c.check_grid(&grid)?;
    }
    let clip = params.effective_clip();
    let d0 = params.background();
    let depth = grid
        .values()
        .map(|f| {
            let teeth: f64 = combs.iter().map(|(c, w)| w * c.teeth_at(f)).sum();
            d0 + teeth.min(clip)
        })
        .collect();
    AbsorptionSpectrum::new(grid, depth, d0)
}

/// Inputs to the analytic efficiency law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyInputs {
    pub d: f64,
    pub finesse: f64,
    pub d0: f64,
}

/// Storage efficiency of a Stark-modulated Gaussian comb read out at `t`:
/// `η = d̃² exp(-d̃) exp(-γ̃² t²) exp(-d0)`.
pub fn analytic_efficiency(inputs: EfficiencyInputs, gamma: f64, t: f64) -> AfcResult<f64> {
    let EfficiencyInputs { d, finesse, d0 } = inputs;
    for (name, v) in [("d", d), ("d0", d0), ("gamma", gamma), ("t", t)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(AfcError::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    if !(finesse.is_finite() && finesse > 1.0) {
        return Err(AfcError::InvalidParameter(format!("finesse must be > 1, got {finesse}")));
    }
    let dt = effective_depth(d, finesse);
    let g = gamma_tilde(gamma);
    Ok(dt * dt * (-dt).exp() * (-(g * t).powi(2)).exp() * (-d0).exp())
}

/// Tooth depth `d` for which the analytic efficiency at `t` equals `target`,
/// taking the branch with `d̃ <= 2`.
pub fn calibrate_depth(target: f64, finesse: f64, gamma: f64, t: f64, d0: f64) -> AfcResult<f64> {
    analytic_efficiency(EfficiencyInputs { d: 0.0, finesse, d0 }, gamma, t)?;
    if !(target.is_finite() && target > 0.0) {
        return Err(AfcError::InvalidParameter(format!("target efficiency must be > 0, got {target}")));
    }
    let need = target * d0.exp() * (gamma_tilde(gamma) * t).powi(2).exp();
    let ceiling = 4.0 * (-2.0f64).exp();
    if need > ceiling {
        return Err(AfcError::Infeasible(format!(
            "efficiency {target} unreachable: prefactor would need {need:.4} > {ceiling:.4}"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 2.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid * (-mid).exp() < need {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dt = 0.5 * (lo + hi);
    Ok(dt * finesse / (std::f64::consts::PI / FOUR_LN2).sqrt())
}

/// Result of a least-squares comb fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombFit {
    pub params: CombParams,
    /// Fitted tooth FWHM, Hz.
    pub gamma: f64,
    /// Root-mean-square residual over the grid.
    pub residual_rms: f64,
    pub teeth: usize,
}

fn detect_peaks(spectrum: &AbsorptionSpectrum, baseline: f64) -> Vec<usize> {
    let d = &spectrum.optical_depth;
    let top = spectrum.max_depth();
    let threshold = baseline + 0.5 * (top - baseline);
    let mut peaks: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < d.len() {
        if d[i] > threshold {
            let start = i;
            while i < d.len() && d[i] > threshold {
                i += 1;
            }
            let run = &d[start..i];
            let best = run
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |acc, (k, v)| if *v > acc.1 { (k, *v) } else { acc })
                .0;
            peaks.push(start + best);
        } else {
            i += 1;
        }
    }
    peaks
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

/// Fits spacing, tooth width, depth and background of a Gaussian comb.
///
/// Peaks are located first to fix the tooth count and seed the spacing;
/// Levenberg-Marquardt then refines `(origin, Δ, γ, d, d0)` over the whole
/// spectrum.
pub fn fit_comb(measured: &AbsorptionSpectrum) -> AfcResult<CombFit> {
    let grid = measured.grid;
    let baseline = percentile(&measured.optical_depth, 0.1);
    let peaks = detect_peaks(measured, baseline);
    if peaks.len() < 3 {
        return Err(AfcError::FitDegeneracy(format!("found {} teeth above background, need at least 3", peaks.len())));
    }
    let positions: Vec<f64> = peaks.iter().map(|&i| grid.value(i)).collect();
    let mut gaps: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let delta0 = gaps[gaps.len() / 2];
    let index: Vec<f64> = positions.iter().map(|p| ((p - positions[0]) / delta0).round()).collect();
    let n_teeth = index[index.len() - 1] as usize + 1;

    // Ordinary least squares of position against tooth index.
    let m = index.len() as f64;
    let (sx, sy) = (index.iter().sum::<f64>(), positions.iter().sum::<f64>());
    let sxx: f64 = index.iter().map(|x| x * x).sum();
    let sxy: f64 = index.iter().zip(&positions).map(|(x, y)| x * y).sum();
    let delta_ls = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let origin_ls = (sy - delta_ls * sx) / m;

    // Half-maximum width of the tallest tooth.
    let d = &measured.optical_depth;
    let &apex = peaks.iter().max_by(|a, b| d[**a].total_cmp(&d[**b])).unwrap();
    let half = baseline + 0.5 * (d[apex] - baseline);
    let crossing = |dir: isize| -> f64 {
        let mut i = apex as isize;
        while i + dir >= 0 && ((i + dir) as usize) < d.len() && d[(i + dir) as usize] > half {
            i += dir;
        }
        let j = i + dir;
        if j < 0 || j as usize >= d.len() {
            return grid.value(i as usize);
        }
        let (a, b) = (d[i as usize], d[j as usize]);
        grid.value(i as usize) + dir as f64 * grid.step * (a - half) / (a - b)
    };
    let gamma0 = (crossing(1) - crossing(-1)).max(2.0 * grid.step);

    let teeth_depth0 = peaks.iter().map(|&i| d[i] - baseline).sum::<f64>() / peaks.len() as f64;
    let mut theta = Vector5::new(origin_ls, delta_ls, gamma0, teeth_depth0, baseline);

    let residuals = |th: &Vector5<f64>| -> Vec<f64> {
        grid.values()
            .zip(d)
            .map(|(f, y)| {
                let model: f64 = (0..n_teeth)
                    .map(|k| th[3] * gaussian_fwhm(f - th[0] - k as f64 * th[1], th[2]))
                    .sum::<f64>()
                    + th[4];
                model - y
            })
            .collect()
    };
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();

    let mut r = residuals(&theta);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let mut jtj = Matrix5::<f64>::zeros();
        let mut jtr = Vector5::<f64>::zeros();
        for (idx, f) in grid.values().enumerate() {
            let mut row = Vector5::<f64>::zeros();
            row[4] = 1.0;
            for k in 0..n_teeth {
                let x = f - theta[0] - k as f64 * theta[1];
                let g = gaussian_fwhm(x, theta[2]);
                let dg_dx = -2.0 * FOUR_LN2 * x / (theta[2] * theta[2]) * g;
                row[0] -= theta[3] * dg_dx;
                row[1] -= theta[3] * dg_dx * k as f64;
                row[2] += theta[3] * g * 2.0 * FOUR_LN2 * x * x / theta[2].powi(3);
                row[3] += g;
            }
            jtj += row * row.transpose();
            jtr += row * r[idx];
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for i in 0..5 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = theta + step;
            if trial[2] <= 0.0 || trial[1] <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            let rt = residuals(&trial);
            let ct = cost(&rt);
            if ct < c {
                let rel = (c - ct) / c.max(1e-300);
                theta = trial;
                r = rt;
                c = ct;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let (origin, delta, gamma, depth, d0) = (theta[0], theta[1], theta[2], theta[3], theta[4]);
    if !(delta > 0.0 && gamma > 0.0 && delta.is_finite() && gamma.is_finite()) {
        return Err(AfcError::Numerical("comb fit diverged".into()));
    }
    let params = CombParams {
        delta,
        finesse: delta / gamma,
        bandwidth: (n_teeth - 1) as f64 * delta,
        tooth_depth: depth,
        background_d0: d0.max(0.0),
        center_offset: origin + 0.5 * (n_teeth - 1) as f64 * delta,
        shape: ToothShape::Gaussian,
    };
    Ok(CombFit { params, gamma, residual_rms: (c / grid.count as f64).sqrt(), teeth: n_teeth })
}
