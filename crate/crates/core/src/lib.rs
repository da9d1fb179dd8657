//! Dissipative quantum Rabi model: worldline cluster Monte Carlo on the
//! mapped spin-boson action, an exact-diagonalization oracle for small
//! discretized baths, and Berezinskii-Kosterlitz-Thouless finite-β scaling.
//!
//! Energies are measured in units of the qubit gap Δ unless a caller chooses
//! otherwise; ħ = k_B = 1 throughout.

pub mod bkt;
pub mod ed;
pub mod error;
pub mod harness;
pub mod spectral;
pub mod wlmc;

pub use error::{Error, Result};
pub use spectral::{KernelTable, ModelParams, SpectralDensity};
pub use wlmc::{ChainState, MCEstimate, ObservableSample, Worldline};
pub use bkt::{CriticalFit, PsiPoint};
pub use harness::{ResultRow, RunConfig};
