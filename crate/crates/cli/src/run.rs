//! Pipelines behind the subcommands. Every run builds its artifacts in
//! memory; nothing touches the output directory until all of them exist.

use std::fmt::Write as _;
use std::path::Path;

use afc_core::bench::{classical_bound, monte_carlo_counts, sub_seed, FidelityRow, TimeBinQubit, TimeBinState};
use afc_core::comb::{analytic_efficiency, carve_comb, EfficiencyInputs};
use afc_core::echo::{echo_efficiency, simulate_timebin, simulate_trace, IntensityTrace, TimeGrid};
use afc_core::export::{csv_table, fidelity_csv, fidelity_text_table, fmt_f64, histogram_csv, trace_csv, write_atomic};
use afc_core::spectral::{apply_pump_sweep, AbsorptionSpectrum};
use afc_core::stark::{design_retrieval_schedule, validate_schedule, StarkSchedule};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::scenario::{EchoSetup, PumpSetup, Scenario, TimebinSetup};
use crate::timeline::Timeline;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Named output files plus the run summary.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: serde_json::Map<String, Value>,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Numerical(format!("json: {e}")))?;
        self.add(name, bytes);
        Ok(())
    }

    /// Writes every file, then `summary.json`, each atomically.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
        }
        let summary = serde_json::to_vec_pretty(&self.summary).expect("summary is plain json");
        write_atomic(&dir.join("summary.json"), &summary)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRow {
    pub order: u32,
    pub readout_time: f64,
    pub efficiency: f64,
    pub analytic: f64,
}

#[derive(Clone, Debug)]
pub struct EchoRun {
    pub spectrum: AbsorptionSpectrum,
    pub trace: IntensityTrace,
    pub schedule_summary: String,
    pub transmitted: f64,
    pub readout: Vec<ReadoutRow>,
}

fn order_schedule(setup: &EchoSetup, n: u32) -> Result<StarkSchedule, CliError> {
    if n == 1 {
        return Ok(StarkSchedule::empty(setup.stark_config));
    }
    let t_p = setup.readout.t_p_ns * 1e-9;
    Ok(design_retrieval_schedule(setup.comb.delta, n, setup.stark_config, t_p)?.shifted(setup.pulse_center))
}

pub fn run_echo(setup: &EchoSetup) -> Result<EchoRun, CliError> {
    let spectrum = carve_comb(&setup.comb, setup.frequency_grid)?;
    let trace = simulate_trace(&spectrum, &setup.pulse, &setup.schedule, &setup.time_grid)?;
    let half = setup.readout.window_fwhm * setup.pulse_fwhm;
    let clip = |(lo, hi): (f64, f64)| (lo.max(setup.time_grid.start), hi.min(setup.time_grid.end()));
    let transmitted = echo_efficiency(&trace, clip((setup.pulse_center - half, setup.pulse_center + half)), 1.0)?;
    let storage = setup.comb.storage_time();
    let relative = setup.schedule.shifted(-setup.pulse_center);
    let max_order = ((setup.time_grid.end() - setup.pulse_center) / storage).floor().max(1.0) as u32;
    let schedule_summary = validate_schedule(&relative, setup.comb.delta, max_order).to_string();

    let inputs = EfficiencyInputs {
        d: setup.comb.tooth_depth,
        finesse: setup.comb.finesse,
        d0: setup.comb.background_d0,
    };
    let readout = setup
        .readout
        .orders
        .par_iter()
        .map(|&n| -> Result<ReadoutRow, CliError> {
            let t = f64::from(n) * storage;
            let center = setup.pulse_center + t;
            // Late orders get a longer grid with the same step.
            let grid = if center + half > setup.time_grid.end() {
                TimeGrid::spanning(setup.time_grid.start, center + half + setup.pulse_fwhm, setup.time_grid.step)?
            } else {
                setup.time_grid
            };
            let schedule = order_schedule(setup, n)?;
            let tr = simulate_trace(&spectrum, &setup.pulse, &schedule, &grid)?;
            Ok(ReadoutRow {
                order: n,
                readout_time: t,
                efficiency: echo_efficiency(&tr, (center - half, center + half), 1.0)?,
                analytic: analytic_efficiency(inputs, setup.comb.gamma(), t)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EchoRun { spectrum, trace, schedule_summary, transmitted, readout })
}

#[derive(Clone, Debug)]
pub struct PumpRun {
    pub initial: AbsorptionSpectrum,
    pub pumped: AbsorptionSpectrum,
    pub enhancement: f64,
    pub population_before: f64,
    pub population_after: f64,
}

pub fn run_pump(setup: &PumpSetup) -> Result<PumpRun, CliError> {
    let initial = setup.ensemble.spectrum(setup.grid)?;
    let outcome = apply_pump_sweep(&setup.ensemble, &setup.sweep, &setup.branching, setup.dt, setup.grid)?;
    let before = initial.optical_depth_at(setup.preparation)?;
    let after = outcome.spectrum.optical_depth_at(setup.preparation)?;
    if !(before > 0.0) {
        return Err(CliError::Numerical("initial optical depth at the preparation offset is zero".into()));
    }
    Ok(PumpRun {
        population_before: setup.ensemble.total_population(),
        population_after: outcome.ensemble.total_population(),
        initial,
        pumped: outcome.spectrum,
        enhancement: after / before,
    })
}

#[derive(Clone, Debug)]
pub struct TimebinRun {
    pub rows: Vec<FidelityRow>,
    pub early: IntensityTrace,
    pub late: IntensityTrace,
    pub superpositions: [[IntensityTrace; 2]; 2],
    pub storage_efficiency: f64,
    pub interference_efficiency: f64,
    pub histograms: [afc_core::bench::CountsHistogram; 2],
}

pub fn run_timebin(setup: &TimebinSetup) -> Result<TimebinRun, CliError> {
    let bench = &setup.bench;
    let traces = bench.simulate()?;
    let rows = setup
        .mus
        .par_iter()
        .enumerate()
        .map(|(i, &mu)| bench.score(&traces, mu, i as u64))
        .collect::<Result<Vec<_>, _>>()?;

    // Interference probe: |e> + |l> through the superimposed combs at the
    // configured comb shift.
    let mut double = bench.interferometer;
    double.delta_f = setup.probe_delta_f;
    let qubit = TimeBinQubit {
        state: TimeBinState::Superposition { delta_alpha: 0.0 },
        pulse_fwhm: bench.pulse_fwhm,
        separation: bench.separation,
        mu: 1.0,
        early_center: bench.early_center,
    };
    let probe = simulate_timebin(&double, bench.frequency_grid, &qubit, &bench.interferometer_schedule, &bench.time_grid)?;
    let w = bench.detection.integration_window / 2.0;
    let t = probe.interference_time;
    let interference_efficiency = echo_efficiency(&probe.trace, (t - w, t + w), 1.0)?;

    // Arrival histograms of the basis states at the first μ.
    let bin = 2e-9;
    let lo = bench.early_center - 2.0 * bench.pulse_fwhm;
    let hi = (traces.late_signal_time + 2.0 * bench.pulse_fwhm).min(bench.time_grid.end());
    let edges: Vec<f64> = (0..=((hi - lo) / bin).floor() as usize).map(|k| lo + bin * k as f64).collect();
    let mu0 = setup.mus[0];
    let mut model = bench.detection;
    model.rng_seed = sub_seed(bench.detection.rng_seed, 0xE0);
    let h_e = monte_carlo_counts(&traces.early, mu0, &model, &edges)?;
    model.rng_seed = sub_seed(bench.detection.rng_seed, 0xE1);
    let h_l = monte_carlo_counts(&traces.late, mu0, &model, &edges)?;

    Ok(TimebinRun {
        rows,
        storage_efficiency: traces.storage_efficiency,
        early: traces.early,
        late: traces.late,
        superpositions: traces.superpositions,
        interference_efficiency,
        histograms: [h_e, h_l],
    })
}

fn spectrum_pair_csv(a: &AbsorptionSpectrum, b: &AbsorptionSpectrum) -> String {
    csv_table(
        &["detuning_MHz", "initial_depth", "pumped_depth"],
        a.grid.values().zip(&a.optical_depth).zip(&b.optical_depth).map(|((f, &x), &y)| [f * 1e-6, x, y]),
    )
}

fn trace_json(trace: &IntensityTrace) -> Value {
    let t: Vec<f64> = trace.grid.times().map(|t| t * 1e9).collect();
    json!({ "time_ns": t, "intensity": trace.intensity })
}

/// `simulate`: echo train, readout table and optional pump run.
pub fn simulate_artifacts(scenario: &Scenario, format: Format) -> Result<Artifacts, CliError> {
    scenario.validate()?;
    if !scenario.has_echo() && scenario.pump.is_none() {
        return Err(CliError::Config("simulate needs [comb]/[pulse] or [pump]".into()));
    }
    let mut art = Artifacts::default();
    art.summary.insert("command".into(), json!("simulate"));
    art.summary.insert("seed".into(), json!(scenario.seed));
    if scenario.has_echo() {
        let setup = scenario.echo_setup()?;
        let run = run_echo(&setup)?;
        let rows: Vec<[f64; 4]> = run
            .readout
            .iter()
            .map(|r| [f64::from(r.order), r.readout_time * 1e9, r.efficiency, r.analytic])
            .collect();
        match format {
            Format::Csv => {
                art.add("trace.csv", trace_csv(&run.trace));
                art.add(
                    "spectrum.csv",
                    csv_table(
                        &["detuning_MHz", "optical_depth"],
                        run.spectrum.grid.values().zip(&run.spectrum.optical_depth).map(|(f, &d)| [f * 1e-6, d]),
                    ),
                );
                art.add("efficiency.csv", csv_table(&["order", "readout_time_ns", "efficiency", "analytic"], &rows));
            }
            Format::Json => {
                art.add_json("trace.json", &trace_json(&run.trace))?;
                art.add_json("spectrum.json", &run.spectrum)?;
                art.add_json("efficiency.json", &run.readout)?;
            }
        }
        art.summary.insert(
            "echo".into(),
            json!({
                "tooth_depth": setup.comb.tooth_depth,
                "storage_time_ns": setup.comb.storage_time() * 1e9,
                "schedule": run.schedule_summary,
                "transmitted_fraction": run.transmitted,
                "readout": run.readout,
            }),
        );
    }
    if scenario.pump.is_some() {
        let run = run_pump(&scenario.pump_setup()?)?;
        match format {
            Format::Csv => art.add("pump_spectrum.csv", spectrum_pair_csv(&run.initial, &run.pumped)),
            Format::Json => art.add_json("pump_spectrum.json", &json!({ "initial": run.initial, "pumped": run.pumped }))?,
        }
        art.summary.insert(
            "pump".into(),
            json!({
                "enhancement": run.enhancement,
                "population_before": run.population_before,
                "population_after": run.population_after,
            }),
        );
    }
    Ok(art)
}

/// `timebin`: fidelity table versus μ.
pub fn timebin_artifacts(scenario: &Scenario, format: Format) -> Result<Artifacts, CliError> {
    scenario.validate()?;
    let setup = scenario.timebin_setup()?;
    let run = run_timebin(&setup)?;
    let mut art = Artifacts::default();
    match format {
        Format::Csv => {
            art.add("fidelity.csv", fidelity_csv(&run.rows));
            let [[pm, pn], [mm, mn]] = &run.superpositions;
            let cols = [&run.early, &run.late, pm, pn, mm, mn];
            art.add(
                "traces.csv",
                csv_table(
                    &["time_ns", "early", "late", "s1_max", "s1_min", "s2_max", "s2_min"],
                    run.early.grid.times().enumerate().map(|(i, t)| {
                        let mut row = vec![t * 1e9];
                        row.extend(cols.iter().map(|c| c.intensity[i]));
                        row
                    }),
                ),
            );
            art.add("histogram_early.csv", histogram_csv(&run.histograms[0]));
            art.add("histogram_late.csv", histogram_csv(&run.histograms[1]));
        }
        Format::Json => {
            art.add_json("fidelity.json", &run.rows)?;
            art.add_json("traces.json", &json!({ "early": trace_json(&run.early), "late": trace_json(&run.late) }))?;
            art.add_json("histograms.json", &run.histograms)?;
        }
    }
    art.add("fidelity.txt", fidelity_text_table(&run.rows));
    art.summary.insert("command".into(), json!("timebin"));
    art.summary.insert("seed".into(), json!(scenario.seed));
    art.summary.insert(
        "timebin".into(),
        json!({
            "storage_efficiency": run.storage_efficiency,
            "interference_efficiency": run.interference_efficiency,
            "rows": run.rows,
        }),
    );
    Ok(art)
}

/// `bound`: classical fidelity bound over a μ list.
pub fn bound_artifacts(mus: &[f64], eta: f64, format: Format) -> Result<Artifacts, CliError> {
    if mus.is_empty() {
        return Err(CliError::Config("bound needs at least one mu".into()));
    }
    let rows = mus
        .iter()
        .map(|&mu| classical_bound(mu, eta, None).map(|b| [mu, eta, b]))
        .collect::<Result<Vec<_>, _>>()?;
    let mut art = Artifacts::default();
    match format {
        Format::Csv => art.add("bound.csv", csv_table(&["mu", "eta", "bound"], &rows)),
        Format::Json => art.add_json(
            "bound.json",
            &rows.iter().map(|r| json!({"mu": r[0], "eta": r[1], "bound": r[2]})).collect::<Vec<_>>(),
        )?,
    }
    art.summary.insert("command".into(), json!("bound"));
    art.summary.insert("rows".into(), json!(rows));
    Ok(art)
}

pub fn timeline_artifacts(timeline: &Timeline, format: Format) -> Result<Artifacts, CliError> {
    let mut art = Artifacts::default();
    match format {
        Format::Csv => {
            let mut out = String::from("phase,start_ms,period_ms,repetitions,duration_ms,end_ms\n");
            for p in &timeline.phases {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    p.name,
                    fmt_f64(p.start * 1e3),
                    fmt_f64(p.period * 1e3),
                    p.repetitions,
                    fmt_f64(p.duration() * 1e3),
                    fmt_f64(p.end() * 1e3)
                );
            }
            art.add("timeline.csv", out);
        }
        Format::Json => art.add_json("timeline.json", timeline)?,
    }
    art.summary.insert("command".into(), json!("timeline"));
    art.summary.insert("total_duration_s".into(), json!(timeline.total_duration()));
    Ok(art)
}

/// Sets `value` at a dotted `path` (`comb.finesse`, `qubit.mu`). Every
/// parent table must already exist; the leaf may be new, in which case
/// schema validation decides whether it is a known key. A scalar assigned
/// to a list-valued key becomes a one-element list.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), CliError> {
    let unknown = || CliError::Config(format!("unknown parameter path \"{path}\""));
    let mut keys: Vec<&str> = path.split('.').collect();
    let leaf = keys.pop().filter(|k| !k.is_empty()).ok_or_else(unknown)?;
    let mut cur = root;
    for k in keys {
        cur = cur.get_mut(k).ok_or_else(unknown)?;
    }
    let table = cur.as_table_mut().ok_or_else(unknown)?;
    let value = match (table.get(leaf), value) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (Some(toml::Value::Array(_)), v) if !v.is_array() => toml::Value::Array(vec![v]),
        (_, v) => v,
    };
    table.insert(leaf.to_string(), value);
    Ok(())
}

/// Parses one sweep value as a TOML literal; bare words become strings.
pub fn parse_sweep_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Splits a comma-separated list while keeping bracketed arrays intact.
pub fn split_values(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in list.chars() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Builds the scenario for each sweep point, validating all of them first.
pub fn sweep_scenarios(base_text: &str, param: &str, values: &[String]) -> Result<Vec<Scenario>, CliError> {
    let base: toml::Value =
        toml::from_str(base_text).map_err(|e| CliError::Parse { path: "scenario".into(), message: e.to_string() })?;
    let base_scenario: Scenario = base
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Parse { path: "scenario".into(), message: e.to_string() })?;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut doc = base.clone();
            set_path(&mut doc, param, parse_sweep_value(v))?;
            let mut s: Scenario = doc.try_into().map_err(|e: toml::de::Error| {
                if e.to_string().contains("unknown field") {
                    CliError::Config(format!("unknown parameter path \"{param}\""))
                } else {
                    CliError::Config(format!("{param} = {v}: {e}"))
                }
            })?;
            s.seed = sub_seed(base_scenario.seed, i as u64);
            s.validate().map_err(|e| e.context(&format!("{param} = {v}")))?;
            Ok(s)
        })
        .collect()
}

/// `sweep`: one run per value, aggregated in input order.
pub fn sweep_artifacts(base_text: &str, param: &str, values: &[String], format: Format) -> Result<Artifacts, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let scenarios = sweep_scenarios(base_text, param, values)?;
    let timebin = scenarios[0].has_timebin();
    let per_point: Vec<Artifacts> = scenarios
        .par_iter()
        .map(|s| if timebin { timebin_artifacts(s, format) } else { simulate_artifacts(s, format) })
        .collect::<Result<_, _>>()?;

    let mut art = Artifacts::default();
    let mut table = String::new();
    let mut points = Vec::new();
    if timebin {
        table.push_str("value,mu,F_e,F_l,F_plus,F_minus,F_T,se_T,classical_bound,interference_efficiency\n");
    } else {
        table.push_str("value,order,readout_time_ns,efficiency,analytic\n");
    }
    for (i, (value, point)) in values.iter().zip(&per_point).enumerate() {
        for (name, bytes) in &point.files {
            art.add(format!("points/{i:03}/{name}"), bytes.clone());
        }
        let quoted = format!("\"{}\"", value.replace('"', "\"\""));
        if timebin {
            let tb = &point.summary["timebin"];
            let rows: Vec<FidelityRow> = serde_json::from_value(tb["rows"].clone()).expect("rows round-trip");
            let ie = tb["interference_efficiency"].as_f64().unwrap_or(f64::NAN);
            for r in rows {
                let cells = [r.mu, r.f_e, r.f_l, r.f_plus, r.f_minus, r.f_total, r.se_total, r.classical_bound, ie];
                let cells: Vec<String> = cells.iter().map(|&x| fmt_f64(x)).collect();
                let _ = writeln!(table, "{quoted},{}", cells.join(","));
            }
        } else if let Some(echo) = point.summary.get("echo") {
            let rows: Vec<ReadoutRow> = serde_json::from_value(echo["readout"].clone()).expect("rows round-trip");
            for r in rows {
                let _ = writeln!(
                    table,
                    "{quoted},{},{},{},{}",
                    r.order,
                    fmt_f64(r.readout_time * 1e9),
                    fmt_f64(r.efficiency),
                    fmt_f64(r.analytic)
                );
            }
        }
        points.push(json!({ "value": value, "summary": point.summary }));
    }
    art.add(format!("sweep.{}", Format::Csv.ext()), table);
    art.summary.insert("command".into(), json!("sweep"));
    art.summary.insert("parameter".into(), json!(param));
    art.summary.insert("points".into(), json!(points));
    Ok(art)
}
