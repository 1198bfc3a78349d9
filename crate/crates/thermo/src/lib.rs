//! Classical thermodynamics for binary and multi-component liquid mixtures.
//!
//! * [`antoine`]: vapor pressures and coefficient files.
//! * [`vle`]: extended Raoult's law in both directions.
//! * [`mixing`]: Gibbs energy of mixing curves and the stability scan.
//! * [`models`]: Margules and NRTL excess-Gibbs oracles.
//! * [`cem`]: convex-envelope detection and refinement of binary miscibility gaps.
//!
//! Temperatures are in kelvin, pressures in kPa, and excess Gibbs energies
//! are dimensionless (`g^E / RT`).

pub mod antoine;
pub mod cem;
pub mod consistency;
pub mod mixing;
pub mod models;
pub mod state;
pub mod vle;

pub use antoine::{antoine_vapor_pressure, AntoineCoefficients, VaporPressure};
pub use cem::{
    binodal_scan, detect_gaps, lower_convex_envelope, refine_common_tangent, BinaryPhaseSplit,
    BinodalRow, BinodalScan, ConsoluteBracket, ConsoluteKind,
};
pub use consistency::ln_gamma_by_identities;
pub use mixing::{delta_g_mix_curve, grid_x, ideal_mixing, stability_scan, DGmixCurve, StabilityScan, GRID_POINTS};
pub use models::{BinaryModel, ExcessFn, Margules, NrtlParams};
pub use state::{ComponentId, MixtureState};
pub use vle::{bubble_point, gamma_from_vle, BubblePoint};

use gibbsnet_autodiff::AdError;

#[derive(Debug, thiserror::Error)]
pub enum ThermoError {
    #[error("antoine singularity: C + T = {0} <= 0")]
    AntoineSingularity(f64),
    #[error("invalid antoine coefficients: {0}")]
    InvalidAntoine(String),
    #[error("infinite dilution; use ACI path")]
    InfiniteDilution,
    #[error("invalid mixture state: {0}")]
    InvalidState(String),
    #[error("convex envelope needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("no stable split")]
    NoStableSplit,
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ThermoError> = std::result::Result<T, E>;
