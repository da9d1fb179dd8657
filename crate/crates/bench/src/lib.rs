//! Fixtures shared by the benchmarks.

use dissrabi::spectral::{GridSpec, KernelTable, ModelParams, SpectralDensity};
use dissrabi::wlmc::{ChainState, Schedule, UpdateKind};

/// Kernel table of the structured reference bath at coupling `g`.
pub fn reference_table(g: f64, beta: f64) -> (ModelParams, KernelTable) {
    let p = ModelParams::reference(g, beta);
    let table = KernelTable::build(&SpectralDensity::structured(&p), beta, &GridSpec::default())
        .expect("reference table builds");
    (p, table)
}

/// A chain that has already run `warmup` sweeps, so benchmarks start from a
/// typical configuration.
pub fn warm_chain(p: &ModelParams, table: &KernelTable, update: UpdateKind, warmup: u64) -> ChainState {
    let schedule = Schedule { n_therm: u64::MAX / 4, n_sweeps: 2, bin_len: 1, seed: 1, update };
    let mut s = ChainState::new(p, &schedule, 0).expect("valid schedule");
    s.advance(table, Some(warmup)).expect("matching table");
    s
}
