//! Localization of forced-oscillation sources in power networks from
//! bus-frequency (PMU) measurements.
//!
//! The toolkit is built around the frequency-divider relation between
//! generator rotor speeds and bus frequencies:
//!
//! - [`case`]: network case model and JSON case files.
//! - [`divider`]: susceptance matrices, pseudo-inverse and the bus-response map.
//! - [`signal`]: rotor oscillation trajectories, measurement noise and
//!   parameter perturbation.
//! - [`single`]: magnitude-based localization of a single source.
//! - [`multi`]: per-sample total least squares estimation of rotor speeds
//!   for multiple sources.
//! - [`experiment`] and [`export`]: the benchmark harness and its CSV/SVG output.

pub mod case;
pub mod divider;
pub mod experiment;
pub mod export;
pub mod multi;
pub mod signal;
pub mod single;

pub use case::{parse_case, validate_case, BusId, NetworkCase};
pub use divider::{build_matrices, bus_response, dominance_report, pseudo_inverse, DividerMatrices};
pub use experiment::{monte_carlo, run_experiment, ExperimentConfig, ExperimentReport};
pub use multi::{detect_sources, estimate_rotor_trajectory, tls_closed_form, tls_solve};
pub use signal::{generate_rotor, NoiseSpec, OscillationSpec, TimeGrid, Trajectory};
pub use single::{dominance_check, localize_single, LocalizationResult, Method};
