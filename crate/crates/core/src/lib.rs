//! Simulation and analysis toolkit for Stark-modulated atomic frequency comb
//! (AFC) quantum memories.
//!
//! The crate is organised bottom-up:
//!
//! - [`spectral`]: inhomogeneous absorption spectra on a uniform detuning grid
//!   and the hyperfine optical-pumping rate model used for spectral
//!   initialization.
//! - [`comb`]: single and superimposed comb carving, the analytic storage
//!   efficiency law and comb fitting.
//! - [`stark`]: linear Stark shifts, subclass phase bookkeeping and
//!   on-demand retrieval schedules.
//! - [`echo`]: time-domain linear-response propagation of pulses through the
//!   frequency-binned ensemble, producing output intensity traces.
//! - [`bench`]: Monte Carlo photon counting and the fidelity, visibility and
//!   classical-bound statistics used to benchmark time-bin qubit storage.
//! - [`export`]: CSV/JSON writers shared by the command-line front end.
//!
//! Units are SI throughout the library (Hz, s, V/cm). Configuration files
//! use explicit unit suffixes and are converted at the boundary.

pub mod bench;
pub mod comb;
pub mod echo;
pub mod error;
pub mod export;
pub mod spectral;
pub mod stark;

pub use error::{AfcError, AfcResult};
