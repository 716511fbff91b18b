//! Experimental time sequences.

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TimelineKind {
    SingleAfc,
    DoubleAfc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub start: f64,
    /// Duration of one repetition, s.
    pub period: f64,
    pub repetitions: u32,
}

impl Phase {
    pub fn duration(&self) -> f64 {
        self.period * f64::from(self.repetitions)
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub kind: TimelineKind,
    pub phases: Vec<Phase>,
}

impl Timeline {
    pub fn total_duration(&self) -> f64 {
        self.phases.last().map_or(0.0, Phase::end)
    }

    pub fn phase(&self, name: &str) -> Option<&Phase> {
        self.phases.iter().find(|p| p.name == name)
    }
}

pub const PHASE_NAMES: [&str; 4] = ["initialization", "afc_preparation", "wait", "storage_trials"];

fn defaults(kind: TimelineKind) -> [(f64, u32); 4] {
    let init = (1e-3, 1500);
    let wait = (200e-3, 1);
    let trials = (50e-6, 5000);
    match kind {
        TimelineKind::SingleAfc => [init, (5e-3, 250), wait, trials],
        // 30 pits, each burnt by 300 pulses of 50 us.
        TimelineKind::DoubleAfc => [init, (50e-6, 30 * 300), wait, trials],
    }
}

pub fn build_timeline(kind: TimelineKind) -> Timeline {
    build_timeline_with(kind, &[]).expect("defaults are valid")
}

/// Builds the sequence with repetition overrides; zero-repetition phases
/// are dropped and the remaining ones stay in order, back to back.
pub fn build_timeline_with(kind: TimelineKind, overrides: &[(String, u32)]) -> Result<Timeline, CliError> {
    let mut reps = defaults(kind);
    for (name, n) in overrides {
        let k = PHASE_NAMES
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| CliError::Config(format!("unknown timeline phase \"{name}\"; expected one of {PHASE_NAMES:?}")))?;
        reps[k].1 = *n;
    }
    let mut start = 0.0;
    let mut phases = Vec::new();
    for (name, (period, repetitions)) in PHASE_NAMES.iter().zip(reps) {
        if repetitions == 0 {
            continue;
        }
        let phase = Phase { name: (*name).to_string(), start, period, repetitions };
        start = phase.end();
        phases.push(phase);
    }
    Ok(Timeline { kind, phases })
}

/// Parses `phase=repetitions`.
pub fn parse_override(text: &str) -> Result<(String, u32), CliError> {
    let (name, value) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override \"{text}\" must look like phase=repetitions")))?;
    let n = value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("override \"{text}\": repetitions must be a non-negative integer")))?;
    Ok((name.trim().to_string(), n))
}
