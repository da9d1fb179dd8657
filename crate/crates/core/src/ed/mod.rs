//! Exact diagonalization of the qubit coupled to a few discrete bath modes,
//!
//! H = −(Δ/2) σ_x + Σ_i ω_i b_i†b_i + σ_z Σ_i l_i (b_i + b_i†),
//!
//! in the product basis qubit ⊗ truncated Fock spaces. The eigenbasis feeds
//! the Lehmann sums in [`lehmann`] and the real-time evolution in [`relax`].

pub mod lehmann;
pub mod relax;

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::quad::{integrate, integrate_to_infinity, QuadConfig};
use crate::spectral::{BathMode, SpectralDensity};

pub use lehmann::{
    static_response_fd, sum_rule, susceptibility, thermal_observables, verify_eq5, SusceptibilityPoint,
    ThermalObservables,
};
pub use relax::{relax_sigma_z, RelaxationTrace};

/// Default largest Hilbert-space dimension handled by the dense solver.
pub const DEFAULT_DIM_BUDGET: usize = 16384;

const BATH_TAG: &str = "# dissrabi-bath v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Every bin carries the same spectral weight.
    EqualWeight,
    /// Equal-width bins on [0, ω_c].
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedBath {
    pub modes: Vec<BathMode>,
    pub provenance: String,
}

impl DiscretizedBath {
    pub fn from_modes(modes: Vec<BathMode>, provenance: &str) -> Result<Self> {
        SpectralDensity::discrete(modes.clone())?;
        Ok(Self { modes, provenance: provenance.to_string() })
    }

    /// The same bath seen as a spectral density, for the worldline kernel.
    pub fn spectral_density(&self) -> SpectralDensity {
        SpectralDensity::Discrete(self.modes.clone())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{BATH_TAG}")?;
        writeln!(out, "# provenance = {}", self.provenance)?;
        writeln!(out, "omega\tcoupling")?;
        for m in &self.modes {
            writeln!(out, "{:?}\t{:?}", m.omega, m.coupling)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            key: None,
            message,
        };
        let mut provenance = String::new();
        let mut modes = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if i == 0 {
                if line.trim_end() != BATH_TAG {
                    return Err(err(1, format!("expected '{BATH_TAG}'")));
                }
                continue;
            }
            if let Some(p) = line.strip_prefix("# provenance = ") {
                provenance = p.to_string();
                continue;
            }
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t == "omega\tcoupling" {
                continue;
            }
            let mut cols = t.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                cols.next()
                    .ok_or_else(|| err(n, format!("missing {what}")))?
                    .parse()
                    .map_err(|_| err(n, format!("cannot parse {what}")))
            };
            let omega = next("omega")?;
            let coupling = next("coupling")?;
            if !(omega > 0.0) {
                return Err(err(n, format!("mode frequency {omega} must be positive")));
            }
            modes.push(BathMode { omega, coupling });
        }
        Self::from_modes(modes, &provenance)
    }
}

/// Integrates J over [lo, hi] with its own quadrature.
fn weight(sd: &SpectralDensity, lo: f64, hi: f64, moment: i32) -> Result<f64> {
    let f = |w: f64| sd.eval(w).unwrap_or(0.0) * w.powi(moment);
    let bps = breakpoints(sd, lo, hi);
    let cfg = QuadConfig { rel_tol: 1e-12, abs_tol: 1e-15, ..QuadConfig::default() };
    if hi.is_infinite() {
        let split = bps.last().copied().unwrap_or(lo).max(lo);
        let head = if split > lo { integrate(f, lo, split, &bps, &cfg)?.value } else { 0.0 };
        Ok(head + integrate_to_infinity(f, split, &cfg)?.value)
    } else {
        Ok(integrate(f, lo, hi, &bps, &cfg)?.value)
    }
}

fn breakpoints(sd: &SpectralDensity, lo: f64, hi: f64) -> Vec<f64> {
    let mut v = Vec::new();
    if let SpectralDensity::Structured { params, .. } = sd {
        let w = std::f64::consts::PI * params.alpha_cav * params.omega0;
        for k in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            v.push(params.omega0 + k * w);
        }
        v.push(params.omega_c);
    }
    v.retain(|&x| x > lo && x < hi && x.is_finite());
    v.sort_by(f64::total_cmp);
    v
}

fn support_end(sd: &SpectralDensity) -> f64 {
    match sd {
        SpectralDensity::Structured { truncate: false, .. } => f64::INFINITY,
        other => other.cutoff().unwrap_or(f64::INFINITY),
    }
}

/// Replaces a continuous density by `n_modes` discrete modes. Each bin's
/// coupling satisfies l² = ∫_bin J and its frequency is the J-weighted mean.
pub fn discretize_bath(sd: &SpectralDensity, n_modes: usize, scheme: Scheme) -> Result<DiscretizedBath> {
    if n_modes == 0 {
        return Err(Error::InvalidParams("n_modes must be at least 1".into()));
    }
    if matches!(sd, SpectralDensity::Discrete(_)) {
        return Err(Error::Unsupported("discretizing an already discrete bath".into()));
    }
    let end = support_end(sd);
    let total = weight(sd, 0.0, end, 0)?;
    if !(total > 0.0) {
        return Err(Error::InvalidParams("spectral density has zero total weight".into()));
    }
    let edges: Vec<f64> = match scheme {
        Scheme::Linear => {
            if !end.is_finite() {
                return Err(Error::Unsupported("linear scheme needs a finite cutoff".into()));
            }
            (0..=n_modes).map(|i| end * i as f64 / n_modes as f64).collect()
        }
        Scheme::EqualWeight => {
            let mut edges = vec![0.0];
            let mut lo = 0.0;
            for _ in 1..n_modes {
                let target = total / n_modes as f64;
                // Bisection for the upper edge of bin i.
                let mut a = lo;
                let mut b = if end.is_finite() { end } else { (lo + 1.0) * 2.0 };
                while !end.is_finite() && weight(sd, lo, b, 0)? < target {
                    b *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if weight(sd, lo, mid, 0)? < target {
                        a = mid;
                    } else {
                        b = mid;
                    }
                    if b - a <= 1e-14 * b {
                        break;
                    }
                }
                lo = 0.5 * (a + b);
                edges.push(lo);
            }
            edges.push(end);
            edges
        }
    };
    let mut modes = Vec::with_capacity(n_modes);
    for w in edges.windows(2) {
        let l2 = weight(sd, w[0], w[1], 0)?;
        if l2 <= 0.0 {
            continue;
        }
        let mean = weight(sd, w[0], w[1], 1)? / l2;
        modes.push(BathMode { omega: mean, coupling: l2.sqrt() });
    }
    if modes.is_empty() {
        return Err(Error::InvalidParams("no bin carries spectral weight".into()));
    }
    DiscretizedBath::from_modes(modes, &format!("{scheme:?} n_modes={n_modes} of {}", serde_json::to_string(sd)?))
}

/// Boson truncation per mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockSpec {
    pub n_max: Vec<usize>,
    pub budget: usize,
}

impl FockSpec {
    pub fn new(n_max: Vec<usize>) -> Self {
        Self { n_max, budget: DEFAULT_DIM_BUDGET }
    }

    /// 2·Π(n_max + 1), or `None` on overflow.
    pub fn dimension(&self) -> Option<usize> {
        self.n_max.iter().try_fold(2usize, |acc, &n| acc.checked_mul(n + 1))
    }

    fn check(&self, n_modes: usize) -> Result<usize> {
        if self.n_max.len() != n_modes {
            return Err(Error::InvalidParams(format!(
                "Fock spec has {} modes, bath has {n_modes}",
                self.n_max.len()
            )));
        }
        match self.dimension() {
            Some(d) if d <= self.budget => Ok(d),
            d => Err(Error::Resource(format!(
                "Hilbert-space dimension {} exceeds budget {}",
                d.map_or("overflow".to_string(), |d| d.to_string()),
                self.budget
            ))),
        }
    }

    /// Doubles each truncation in turn and reports whether M² and ⟨σ_x⟩
    /// change by less than `tol`.
    pub fn is_converged(&self, delta: f64, bath: &DiscretizedBath, beta: f64, tol: f64) -> Result<bool> {
        let base = thermal_observables(&diagonalize(delta, bath, self)?, beta)?;
        for i in 0..self.n_max.len() {
            let mut bigger = self.clone();
            bigger.n_max[i] = 2 * bigger.n_max[i].max(1);
            let obs = thermal_observables(&diagonalize(delta, bath, &bigger)?, beta)?;
            if (obs.m2 - base.m2).abs() >= tol || (obs.sigma_x - base.sigma_x).abs() >= tol {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Dense Hamiltonian. Basis index = qubit · F + Fock index, with qubit 0
/// the σ_z = +1 state and mode 0 the slowest-varying Fock digit.
pub fn build_hamiltonian(delta: f64, bath: &DiscretizedBath, spec: &FockSpec) -> Result<DMatrix<f64>> {
    build_with_field(delta, bath, spec, 0.0)
}

pub(crate) fn build_with_field(delta: f64, bath: &DiscretizedBath, spec: &FockSpec, h: f64) -> Result<DMatrix<f64>> {
    let dim = spec.check(bath.modes.len())?;
    let f = dim / 2;
    let mut strides = vec![1usize; bath.modes.len()];
    for i in (0..bath.modes.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * (spec.n_max[i + 1] + 1);
    }
    let mut hm = DMatrix::<f64>::zeros(dim, dim);
    for s in 0..f {
        hm[(s, s + f)] = -0.5 * delta;
        hm[(s + f, s)] = -0.5 * delta;
    }
    for q in 0..2 {
        let sz = if q == 0 { 1.0 } else { -1.0 };
        for s in 0..f {
            let i = q * f + s;
            let mut diag = h * sz;
            for (k, m) in bath.modes.iter().enumerate() {
                let n = (s / strides[k]) % (spec.n_max[k] + 1);
                diag += m.omega * n as f64;
                if n < spec.n_max[k] {
                    let j = i + strides[k];
                    let v = sz * m.coupling * ((n + 1) as f64).sqrt();
                    hm[(i, j)] += v;
                    hm[(j, i)] += v;
                }
            }
            hm[(i, i)] += diag;
        }
    }
    Ok(hm)
}

/// Eigen-decomposition with qubit operators in the eigenbasis.
#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub delta: f64,
    /// Ascending eigenvalues.
    pub energies: DVector<f64>,
    /// ⟨m|σ_z|n⟩ (real symmetric).
    pub sigma_z: DMatrix<f64>,
    /// ⟨m|σ_y|n⟩ = i·Y_mn with Y real antisymmetric; this field stores Y.
    pub sigma_y_imag: DMatrix<f64>,
    /// ⟨n|σ_x|n⟩.
    pub sigma_x_diag: DVector<f64>,
    /// Eigenvectors as columns, in the product basis.
    pub vectors: DMatrix<f64>,
}

impl SpectrumResult {
    /// Largest deviation of Σ_m |⟨m|σ_z|n⟩|² from 1.
    pub fn completeness_residual(&self) -> f64 {
        let n = self.energies.len();
        (0..n)
            .map(|j| (self.sigma_z.column(j).norm_squared() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Tolerance below which two levels are treated as degenerate.
    pub fn degeneracy_tol(&self) -> f64 {
        let n = self.energies.len();
        1e-12 * (self.energies[n - 1] - self.energies[0]).max(1.0)
    }
}

pub(crate) fn eigen(hm: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(hm);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let e = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let v = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (e, v)
}

pub fn diagonalize(delta: f64, bath: &DiscretizedBath, spec: &FockSpec) -> Result<SpectrumResult> {
    let hm = build_hamiltonian(delta, bath, spec)?;
    let dim = hm.nrows();
    let f = dim / 2;
    let (energies, v) = eigen(hm);
    // σ_z V flips the sign of the lower block; σ_y-imag V swaps blocks.
    let mut zv = v.clone();
    zv.rows_mut(f, f).scale_mut(-1.0);
    let sigma_z = v.transpose() * zv;
    let mut yv = DMatrix::<f64>::zeros(dim, dim);
    // Y = [[0, −1], [1, 0]] ⊗ I
    yv.rows_mut(0, f).copy_from(&(-v.rows(f, f)));
    yv.rows_mut(f, f).copy_from(&v.rows(0, f));
    let sigma_y_imag = v.transpose() * yv;
    let sigma_x_diag =
        DVector::from_iterator(dim, (0..dim).map(|n| 2.0 * v.column(n).rows(0, f).dot(&v.column(n).rows(f, f))));
    Ok(SpectrumResult { delta, energies, sigma_z, sigma_y_imag, sigma_x_diag, vectors: v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ModelParams;

    fn one_mode(omega: f64, l: f64) -> DiscretizedBath {
        DiscretizedBath::from_modes(vec![BathMode { omega, coupling: l }], "test").unwrap()
    }

    #[test]
    fn bare_qubit_spectrum() {
        let bath = DiscretizedBath::from_modes(vec![], "none").unwrap();
        let s = diagonalize(1.3, &bath, &FockSpec::new(vec![])).unwrap();
        assert_eq!(s.energies.len(), 2);
        assert!((s.energies[0] + 0.65).abs() < 1e-15 && (s.energies[1] - 0.65).abs() < 1e-15);
    }

    #[test]
    fn decoupled_mode_is_a_ladder() {
        let s = diagonalize(1.0, &one_mode(0.7, 0.0), &FockSpec::new(vec![4])).unwrap();
        let mut expected: Vec<f64> = (0..5).flat_map(|n| [-0.5 + 0.7 * n as f64, 0.5 + 0.7 * n as f64]).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in s.energies.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn polaron_shift_at_zero_gap() {
        let (w, l) = (0.8, 0.5);
        let s = diagonalize(0.0, &one_mode(w, l), &FockSpec::new(vec![40])).unwrap();
        assert!((s.energies[0] + l * l / w).abs() < 1e-12, "{}", s.energies[0]);
    }

    #[test]
    fn sigma_z_completeness() {
        let s = diagonalize(1.0, &one_mode(0.75, 0.4), &FockSpec::new(vec![12])).unwrap();
        assert!(s.completeness_residual() < 1e-10);
        let y = &s.sigma_y_imag;
        assert!((y + y.transpose()).amax() < 1e-12);
    }

    #[test]
    fn budget_is_enforced_before_allocation() {
        let bath = DiscretizedBath::from_modes(vec![BathMode { omega: 1.0, coupling: 0.1 }; 3], "t").unwrap();
        let spec = FockSpec { n_max: vec![40, 40, 40], budget: DEFAULT_DIM_BUDGET };
        assert!(matches!(build_hamiltonian(1.0, &bath, &spec), Err(Error::Resource(_))));
    }

    #[test]
    fn equal_weight_discretization_conserves_weight() {
        let sd = SpectralDensity::structured(&ModelParams::reference(0.5, 10.0));
        let total = weight(&sd, 0.0, 10.0, 0).unwrap();
        for n in [1, 3, 8] {
            let b = discretize_bath(&sd, n, Scheme::EqualWeight).unwrap();
            assert_eq!(b.modes.len(), n);
            let s: f64 = b.modes.iter().map(|m| m.coupling * m.coupling).sum();
            assert!((s - total).abs() < 1e-9 * total, "{s} vs {total}");
            for m in &b.modes {
                assert!((m.coupling * m.coupling - total / n as f64).abs() < 1e-8 * total);
            }
        }
        let lin = discretize_bath(&sd, 5, Scheme::Linear).unwrap();
        let s: f64 = lin.modes.iter().map(|m| m.coupling * m.coupling).sum();
        assert!((s - total).abs() < 1e-9 * total);
    }

    #[test]
    fn narrow_lorentzian_gives_the_cavity_mode() {
        let mut p = ModelParams::reference(0.3, 10.0);
        p.alpha_cav = 1e-3;
        let b = discretize_bath(&SpectralDensity::structured(&p), 1, Scheme::EqualWeight).unwrap();
        let m = b.modes[0];
        assert!((m.omega - p.omega0).abs() < 0.01, "{m:?}");
        assert!((m.coupling * m.coupling - p.g * p.g).abs() < 0.01 * p.g * p.g, "{m:?}");
    }

    #[test]
    fn zero_density_cannot_be_discretized() {
        let sd = SpectralDensity::structured(&ModelParams::reference(0.0, 10.0));
        assert!(matches!(discretize_bath(&sd, 2, Scheme::EqualWeight), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn bath_file_roundtrip() {
        let b = DiscretizedBath::from_modes(
            vec![BathMode { omega: 0.75, coupling: 0.3 }, BathMode { omega: 1.0 / 3.0, coupling: 0.1 }],
            "two modes",
        )
        .unwrap();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(DiscretizedBath::read_from(&buf[..], "mem").unwrap(), b);
    }
}
