//! Plain-text writers for traces, spectra, histograms and fidelity tables.
//!
//! Floats use a fixed scientific format so repeated runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::bench::{CountsHistogram, FidelityRow};
use crate::echo::IntensityTrace;
use crate::error::AfcResult;
use crate::spectral::AbsorptionSpectrum;

/// Fixed-precision float formatting used by every writer.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.9e}")
}

/// Renders rows of floats as CSV under `header`.
pub fn csv_table<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.as_ref().iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn trace_csv(trace: &IntensityTrace) -> String {
    csv_table(
        &["time_ns", "intensity"],
        trace.grid.times().zip(&trace.intensity).map(|(t, &i)| [t * 1e9, i]),
    )
}

pub fn spectrum_csv(spectrum: &AbsorptionSpectrum) -> String {
    csv_table(
        &["detuning_Hz", "optical_depth"],
        spectrum.grid.values().zip(&spectrum.optical_depth).map(|(f, &d)| [f, d]),
    )
}

pub fn histogram_csv(hist: &CountsHistogram) -> String {
    let mut out = String::from("bin_start_ns,bin_end_ns,counts\n");
    for (w, c) in hist.bin_edges.windows(2).zip(&hist.counts) {
        let _ = writeln!(out, "{},{},{c}", fmt_f64(w[0] * 1e9), fmt_f64(w[1] * 1e9));
    }
    out
}

pub fn fidelity_csv(rows: &[FidelityRow]) -> String {
    csv_table(
        &["mu", "F_e", "F_l", "F_plus", "F_minus", "F_T", "se_T", "classical_bound", "violation_sigma"],
        rows.iter().map(|r| {
            [r.mu, r.f_e, r.f_l, r.f_plus, r.f_minus, r.f_total, r.se_total, r.classical_bound, r.violation_sigmas]
        }),
    )
}

/// Aligned text table: one row per μ, one column per input state.
pub fn fidelity_text_table(rows: &[FidelityRow]) -> String {
    let pct = |f: f64, se: f64| format!("{:6.2}% ± {:4.2}%", 100.0 * f, 100.0 * se);
    let mut out = format!(
        "{:>6} | {:>17} | {:>17} | {:>17} | {:>17} | {:>17} | {:>7}\n",
        "mu", "|e>", "|l>", "|e>+i|l>", "|e>+e^i3pi/4|l>", "F_T", "bound"
    );
    out.push_str(&"-".repeat(out.chars().count() - 1));
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6.2} | {:>17} | {:>17} | {:>17} | {:>17} | {:>17} | {:>6.2}%",
            r.mu,
            pct(r.f_e, r.se_e),
            pct(r.f_l, r.se_l),
            pct(r.f_plus, r.se_plus),
            pct(r.f_minus, r.se_minus),
            pct(r.f_total, r.se_total),
            100.0 * r.classical_bound
        );
    }
    out
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> AfcResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
