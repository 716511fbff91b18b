//! Versioned scenario schema.
//!
//! Every physical key carries its unit in the name (`delta_MHz`,
//! `t_p_ns`, ...) and unknown keys are rejected. Conversion to library
//! types (SI units) happens here and reports the offending key path.

use std::f64::consts::PI;
use std::path::Path;

use afc_core::bench::{BenchConfig, DetectionModel};
use afc_core::comb::{calibrate_depth, CombParams, DoubleCombParams, ToothShape};
use afc_core::echo::{comb_frequency_grid, InputPulse, TimeGrid};
use afc_core::spectral::{BranchingMatrix, Ensemble, FrequencyGrid, PumpSweep};
use afc_core::stark::{design_retrieval_schedule, ElectricPulse, StarkConfig, StarkSchedule};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

const MHZ: f64 = 1e6;
const NS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comb: Option<CombSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stark: Option<StarkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<ReadoutSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump: Option<PumpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubit: Option<QubitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_comb: Option<CombSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub double_comb: Option<DoubleCombSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombSection {
    /// Tooth spacing; give this or `storage_ns`.
    #[serde(rename = "delta_MHz", default, skip_serializing_if = "Option::is_none")]
    pub delta_mhz: Option<f64>,
    /// `1/Δ`; give this or `delta_MHz`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_ns: Option<f64>,
    pub finesse: f64,
    #[serde(rename = "bandwidth_MHz")]
    pub bandwidth_mhz: f64,
    #[serde(default)]
    pub background_d0: f64,
    /// Peak tooth depth; give this or `[calibrate]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tooth_depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateSection>,
    #[serde(rename = "center_offset_MHz", default)]
    pub center_offset_mhz: f64,
    #[serde(default)]
    pub shape: ToothShape,
}

/// Chooses the tooth depth so the analytic efficiency at `time_ns` equals
/// `efficiency`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub efficiency: f64,
    pub time_ns: f64,
    /// Tooth width for the calibration law; defaults to `Δ/F`.
    #[serde(rename = "gamma_MHz", default, skip_serializing_if = "Option::is_none")]
    pub gamma_mhz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub center_ns: f64,
    pub fwhm_ns: f64,
    #[serde(rename = "carrier_MHz", default)]
    pub carrier_mhz: f64,
}

fn default_coefficient() -> f64 {
    11.68
}

fn default_field_scale() -> f64 {
    StarkConfig::erbium_waveguide().field_scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarkSection {
    #[serde(rename = "coefficient_kHz_per_V_cm", default = "default_coefficient")]
    pub coefficient_khz_per_v_cm: f64,
    #[serde(rename = "field_scale_V_cm_per_V", default = "default_field_scale")]
    pub field_scale_v_cm_per_v: f64,
    #[serde(default)]
    pub inhomogeneity: f64,
    /// Two-pulse on-demand schedule relative to the input pulse center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    /// Explicit pulses on the absolute time axis.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pulses: Vec<PulseEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub readout_order: u32,
    pub t_p_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseEntry {
    pub start_ns: f64,
    pub duration_ns: f64,
    #[serde(rename = "field_V_per_cm")]
    pub field_v_per_cm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default)]
    pub start_ns: f64,
    pub end_ns: f64,
    /// Upper bound on the step; the resolution limit of the spectrum
    /// applies regardless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_ns: Option<f64>,
}

fn default_orders() -> Vec<u32> {
    (1..=6).collect()
}

fn two() -> f64 {
    2.0
}

fn default_t_p_ns() -> f64 {
    18.0
}

/// Efficiency-versus-readout-time table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    /// Orders `n`; `n = 1` is the free first echo, `n >= 2` on-demand.
    #[serde(default = "default_orders")]
    pub orders: Vec<u32>,
    /// Window half-width in input FWHMs.
    #[serde(default = "two")]
    pub window_fwhm: f64,
    #[serde(default = "default_t_p_ns")]
    pub t_p_ns: f64,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        Self { orders: default_orders(), window_fwhm: 2.0, t_p_ns: 18.0 }
    }
}

macro_rules! default_fn {
    ($($name:ident: $ty:ty = $v:expr;)*) => { $(fn $name() -> $ty { $v })* };
}

default_fn! {
    d_sweep_center: f64 = -500.0;
    d_sweep_bw: f64 = 800.0;
    d_chirp_ms: f64 = 1.0;
    d_reps: u32 = 1500;
    d_rate: f64 = 200.0;
    d_spacing: f64 = 120.0;
    d_sub_lw: f64 = 300.0;
    d_peak: f64 = 1.0;
    d_prep: f64 = 360.0;
    d_dt_us: f64 = 100.0;
    d_span: f64 = 3000.0;
    d_step: f64 = 5.0;
    d_branching: String = "nearest_neighbor".into();
    d_fwhm12: f64 = 12.0;
    d_sep40: f64 = 40.0;
    d_phases: [f64; 2] = [0.5 * PI, 0.75 * PI];
    d_order2: u32 = 2;
    d_one: f64 = 1.0;
    d_noise: f64 = 2.4e-4;
    d_window: f64 = 20.0;
    d_trials: u64 = 100_000;
}

/// Spectral initialization by chirped optical pumping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSection {
    #[serde(rename = "sweep_center_MHz", default = "d_sweep_center")]
    pub sweep_center_mhz: f64,
    #[serde(rename = "sweep_bandwidth_MHz", default = "d_sweep_bw")]
    pub sweep_bandwidth_mhz: f64,
    #[serde(default = "d_chirp_ms")]
    pub chirp_ms: f64,
    #[serde(default = "d_reps")]
    pub repetitions: u32,
    #[serde(default = "d_rate")]
    pub pump_rate_per_s: f64,
    #[serde(rename = "level_spacing_MHz", default = "d_spacing")]
    pub level_spacing_mhz: f64,
    #[serde(rename = "sub_linewidth_MHz", default = "d_sub_lw")]
    pub sub_linewidth_mhz: f64,
    #[serde(default = "d_peak")]
    pub peak_depth: f64,
    #[serde(rename = "preparation_MHz", default = "d_prep")]
    pub preparation_mhz: f64,
    #[serde(default = "d_dt_us")]
    pub dt_us: f64,
    /// `nearest_neighbor` or `identity`.
    #[serde(default = "d_branching")]
    pub branching: String,
    #[serde(rename = "grid_span_MHz", default = "d_span")]
    pub grid_span_mhz: f64,
    #[serde(rename = "grid_step_MHz", default = "d_step")]
    pub grid_step_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSection {
    #[serde(default = "d_fwhm12")]
    pub pulse_fwhm_ns: f64,
    #[serde(default = "d_sep40")]
    pub separation_ns: f64,
    pub early_center_ns: f64,
    pub mu: Vec<f64>,
    #[serde(default = "d_phases")]
    pub superposition_phases_rad: [f64; 2],
    /// Echo order read out from the basis comb.
    #[serde(default = "d_order2")]
    pub basis_order: u32,
    #[serde(default)]
    pub phase_error_rad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleCombSection {
    pub comb_a: CombSection,
    pub comb_b: CombSection,
    #[serde(default = "d_one")]
    pub weight_a: f64,
    #[serde(default = "d_one")]
    pub weight_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_depth: Option<f64>,
    /// Shift of comb A for the interference-efficiency probe.
    #[serde(rename = "delta_f_MHz", default)]
    pub delta_f_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default = "d_one")]
    pub detector_efficiency: f64,
    #[serde(default = "d_one")]
    pub system_transmission: f64,
    #[serde(default = "d_noise")]
    pub noise_prob_per_window: f64,
    #[serde(default = "d_window")]
    pub integration_window_ns: f64,
    #[serde(default = "d_trials")]
    pub trials: u64,
}

fn at<T>(path: &str, r: afc_core::AfcResult<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::from(e).context(path))
}

fn need<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    section.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] section")))
}

impl CombSection {
    pub fn delta(&self, path: &str) -> Result<f64, CliError> {
        match (self.delta_mhz, self.storage_ns) {
            (Some(d), None) => Ok(d * MHZ),
            (None, Some(t)) if t > 0.0 => Ok(1.0 / (t * NS)),
            (None, Some(t)) => Err(CliError::Config(format!("{path}.storage_ns must be > 0, got {t}"))),
            _ => Err(CliError::Config(format!("{path}: give exactly one of delta_MHz and storage_ns"))),
        }
    }

    pub fn to_params(&self, path: &str) -> Result<CombParams, CliError> {
        let delta = self.delta(path)?;
        let tooth_depth = match (&self.tooth_depth, &self.calibrate) {
            (Some(d), None) => *d,
            (None, Some(c)) => {
                let gamma = c.gamma_mhz.map_or(delta / self.finesse, |g| g * MHZ);
                at(
                    &format!("{path}.calibrate"),
                    calibrate_depth(c.efficiency, self.finesse, gamma, c.time_ns * NS, self.background_d0),
                )?
            }
            _ => return Err(CliError::Config(format!("{path}: give exactly one of tooth_depth and [calibrate]"))),
        };
        let params = CombParams {
            delta,
            finesse: self.finesse,
            bandwidth: self.bandwidth_mhz * MHZ,
            tooth_depth,
            background_d0: self.background_d0,
            center_offset: self.center_offset_mhz * MHZ,
            shape: self.shape,
        };
        at(path, params.validate())?;
        Ok(params)
    }
}

impl StarkSection {
    pub fn config(&self) -> Result<StarkConfig, CliError> {
        let c = StarkConfig {
            coefficient: self.coefficient_khz_per_v_cm * 1e3,
            field_scale: self.field_scale_v_cm_per_v,
            inhomogeneity: self.inhomogeneity,
        };
        at("stark", c.validate())?;
        Ok(c)
    }

    fn explicit(&self, config: StarkConfig) -> Result<StarkSchedule, CliError> {
        let pulses = self
            .pulses
            .iter()
            .map(|p| ElectricPulse { start: p.start_ns * NS, duration: p.duration_ns * NS, field: p.field_v_per_cm })
            .collect();
        at("stark.pulses", StarkSchedule::new(config, pulses))
    }
}

/// Fully converted echo-simulation inputs.
#[derive(Clone, Debug)]
pub struct EchoSetup {
    pub comb: CombParams,
    pub frequency_grid: FrequencyGrid,
    pub pulse: InputPulse,
    pub pulse_center: f64,
    pub pulse_fwhm: f64,
    pub schedule: StarkSchedule,
    pub stark_config: StarkConfig,
    pub time_grid: TimeGrid,
    pub readout: ReadoutSection,
}

#[derive(Clone, Debug)]
pub struct PumpSetup {
    pub ensemble: Ensemble,
    pub sweep: PumpSweep,
    pub branching: BranchingMatrix,
    pub dt: f64,
    pub grid: FrequencyGrid,
    pub preparation: f64,
}

#[derive(Clone, Debug)]
pub struct TimebinSetup {
    pub bench: BenchConfig,
    pub mus: Vec<f64>,
    pub probe_delta_f: f64,
}

fn time_grid(section: &TimeSection, fgrid: &FrequencyGrid) -> Result<TimeGrid, CliError> {
    let limit = TimeGrid::max_step_for(fgrid);
    let step = section.step_ns.map_or(limit, |s| (s * NS).min(limit));
    at("time", TimeGrid::spanning(section.start_ns * NS, section.end_ns * NS, step))
}

impl Scenario {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, CliError> {
        let scenario: Scenario = toml::from_str(text)
            .map_err(|e| CliError::Parse { path: origin.display().to_string(), message: e.to_string() })?;
        scenario.check_version()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize scenario: {e}")))
    }

    fn check_version(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        Ok(())
    }

    pub fn has_echo(&self) -> bool {
        self.comb.is_some() || self.pulse.is_some()
    }

    pub fn has_timebin(&self) -> bool {
        self.qubit.is_some() || self.double_comb.is_some()
    }

    /// Converts every present section, surfacing all validation errors
    /// before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.check_version()?;
        if !self.has_echo() && !self.has_timebin() && self.pump.is_none() {
            return Err(CliError::Config("scenario defines neither an echo, a time-bin nor a pump run".into()));
        }
        if self.has_echo() {
            self.echo_setup()?;
        }
        if self.has_timebin() {
            self.timebin_setup()?;
        }
        if self.pump.is_some() {
            self.pump_setup()?;
        }
        Ok(())
    }

    pub fn echo_setup(&self) -> Result<EchoSetup, CliError> {
        let comb = need(&self.comb, "comb")?.to_params("comb")?;
        let pulse_section = need(&self.pulse, "pulse")?;
        let time = need(&self.time, "time")?;
        let frequency_grid = at("comb", comb_frequency_grid(&[comb]))?;
        let time_grid = time_grid(time, &frequency_grid)?;
        let pulse_center = pulse_section.center_ns * NS;
        let pulse_fwhm = pulse_section.fwhm_ns * NS;
        if !(pulse_fwhm > 0.0) {
            return Err(CliError::Config(format!("pulse.fwhm_ns must be > 0, got {}", pulse_section.fwhm_ns)));
        }
        let mut pulse = InputPulse::unit_energy(pulse_center, pulse_fwhm);
        pulse.carrier_detuning = pulse_section.carrier_mhz * MHZ;
        at("pulse", pulse.validate())?;

        let stark = self.stark.clone().unwrap_or(StarkSection {
            coefficient_khz_per_v_cm: default_coefficient(),
            field_scale_v_cm_per_v: default_field_scale(),
            inhomogeneity: 0.0,
            design: None,
            pulses: Vec::new(),
        });
        let stark_config = stark.config()?;
        let schedule = match (&stark.design, stark.pulses.is_empty()) {
            (Some(_), false) => {
                return Err(CliError::Config("stark: give either [stark.design] or pulses, not both".into()))
            }
            (Some(d), true) => at(
                "stark.design",
                design_retrieval_schedule(comb.delta, d.readout_order, stark_config, d.t_p_ns * NS),
            )?
            .shifted(pulse_center),
            (None, _) => stark.explicit(stark_config)?,
        };
        let readout = self.readout.clone().unwrap_or_default();
        if readout.orders.iter().any(|&n| n == 0) || !(readout.window_fwhm > 0.0) {
            return Err(CliError::Config("readout: orders must be >= 1 and window_fwhm > 0".into()));
        }
        Ok(EchoSetup { comb, frequency_grid, pulse, pulse_center, pulse_fwhm, schedule, stark_config, time_grid, readout })
    }

    pub fn pump_setup(&self) -> Result<PumpSetup, CliError> {
        let p = need(&self.pump, "pump")?;
        let mut ensemble = Ensemble::uniform(p.level_spacing_mhz * MHZ, p.sub_linewidth_mhz * MHZ, p.peak_depth);
        ensemble.peak_d = p.peak_depth;
        let sweep = PumpSweep {
            center_offset: p.sweep_center_mhz * MHZ,
            bandwidth: p.sweep_bandwidth_mhz * MHZ,
            duration: p.chirp_ms * 1e-3,
            repetitions: p.repetitions,
            pump_rate: p.pump_rate_per_s,
        };
        at("pump", sweep.validate())?;
        let branching = match p.branching.as_str() {
            "nearest_neighbor" => BranchingMatrix::nearest_neighbor(),
            "identity" => BranchingMatrix::identity(),
            other => {
                return Err(CliError::Config(format!(
                    "pump.branching must be \"nearest_neighbor\" or \"identity\", got \"{other}\""
                )))
            }
        };
        let grid = at("pump", FrequencyGrid::centered(p.grid_span_mhz * MHZ, p.grid_step_mhz * MHZ))?;
        if !(p.dt_us > 0.0 && p.sub_linewidth_mhz > 0.0 && p.peak_depth >= 0.0) {
            return Err(CliError::Config("pump: dt_us and sub_linewidth_MHz must be > 0, peak_depth >= 0".into()));
        }
        let preparation = p.preparation_mhz * MHZ;
        if preparation < grid.start || preparation > grid.end() {
            return Err(CliError::Config("pump.preparation_MHz lies outside the pump grid".into()));
        }
        Ok(PumpSetup { ensemble, sweep, branching, dt: p.dt_us * 1e-6, grid, preparation })
    }

    pub fn timebin_setup(&self) -> Result<TimebinSetup, CliError> {
        let q = need(&self.qubit, "qubit")?;
        let basis_comb = need(&self.basis_comb, "basis_comb")?.to_params("basis_comb")?;
        let dc = need(&self.double_comb, "double_comb")?;
        let det = need(&self.detection, "detection")?;
        let time = need(&self.time, "time")?;
        if let Some((i, bad)) = q.mu.iter().enumerate().find(|(_, m)| !(m.is_finite() && **m > 0.0)) {
            return Err(CliError::Config(format!("qubit.mu[{i}] must be > 0, got {bad}")));
        }
        if q.mu.is_empty() {
            return Err(CliError::Config("qubit.mu must list at least one value".into()));
        }
        let interferometer = DoubleCombParams {
            comb_a: dc.comb_a.to_params("double_comb.comb_a")?,
            comb_b: dc.comb_b.to_params("double_comb.comb_b")?,
            delta_f: 0.0,
            weight_a: dc.weight_a,
            weight_b: dc.weight_b,
            clip_depth: dc.clip_depth,
        };
        at("double_comb", interferometer.validate())?;
        let schedule = match &self.stark {
            Some(s) if s.design.is_some() => {
                return Err(CliError::Config(
                    "stark.design applies to single-pulse runs; give explicit pulses for time-bin runs".into(),
                ))
            }
            Some(s) => s.explicit(s.config()?)?,
            None => StarkSchedule::empty(StarkConfig::erbium_waveguide()),
        };
        let frequency_grid =
            at("double_comb", comb_frequency_grid(&[basis_comb, interferometer.comb_a, interferometer.comb_b]))?;
        let time_grid = time_grid(time, &frequency_grid)?;
        let detection = DetectionModel {
            detector_efficiency: det.detector_efficiency,
            system_transmission: det.system_transmission,
            noise_prob_per_window: det.noise_prob_per_window,
            integration_window: det.integration_window_ns * NS,
            trials: det.trials,
            rng_seed: self.seed,
        };
        let bench = BenchConfig {
            basis_comb,
            basis_schedule: schedule.clone(),
            basis_order: q.basis_order,
            interferometer,
            interferometer_schedule: schedule,
            phase_error: q.phase_error_rad,
            frequency_grid,
            time_grid,
            pulse_fwhm: q.pulse_fwhm_ns * NS,
            separation: q.separation_ns * NS,
            early_center: q.early_center_ns * NS,
            detection,
            superpositions: q.superposition_phases_rad,
        };
        at("qubit", bench.validate())?;
        at(
            "qubit.separation_ns",
            afc_core::echo::interference_order(&bench.interferometer, bench.separation).map(|_| ()),
        )?;
        Ok(TimebinSetup { bench, mus: q.mu.clone(), probe_delta_f: dc.delta_f_mhz * MHZ })
    }
}
