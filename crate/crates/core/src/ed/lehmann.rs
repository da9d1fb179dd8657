//! Thermal averages, Mori products and dynamical susceptibilities as exact
//! sums over eigenstates.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use super::{build_with_field, eigen, DiscretizedBath, FockSpec, SpectrumResult};
use crate::error::{Error, Result};

type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalObservables {
    pub beta: f64,
    pub m2: f64,
    pub sigma_x: f64,
    pub hq: f64,
    /// Δ·sqrt[(σ_y,σ_y)/(σ_z,σ_z)].
    pub delta_eff: f64,
    pub mori_yy: f64,
    pub mori_zz: f64,
    /// ln Z relative to the ground-state energy: ln Σ exp(−β(E − E₀)).
    pub log_z_shifted: f64,
}

/// Boltzmann weights exp(−β(E − E₀)) and their sum.
fn weights(s: &SpectrumResult, beta: f64) -> (Vec<f64>, f64) {
    let e0 = s.energies[0];
    let p: Vec<f64> = s.energies.iter().map(|e| (-beta * (e - e0)).exp()).collect();
    let z = p.iter().sum();
    (p, z)
}

/// Mori kernel (p_n − p_m)/(E_m − E_n), with its limit β p_m on degenerate
/// pairs. Written through expm1 so that it is accurate for any gap.
fn mori_kernel(pm: f64, pn: f64, em: f64, en: f64, beta: f64, tol: f64) -> Result<f64> {
    let d = en - em;
    if d.abs() < tol {
        let limit = beta * pm;
        if d != 0.0 {
            let finite = if d > 0.0 { pm * -(-beta * d).exp_m1() / d } else { pn * -(beta * d).exp_m1() / -d };
            if (finite - limit).abs() > 1e-6 * limit.max(f64::MIN_POSITIVE) {
                return Err(Error::Internal(format!(
                    "degenerate Lehmann branches disagree: {finite} vs {limit} at gap {d}"
                )));
            }
        }
        Ok(limit)
    } else if d > 0.0 {
        Ok(pm * -(-beta * d).exp_m1() / d)
    } else {
        Ok(pn * -(beta * d).exp_m1() / -d)
    }
}

/// (1/(βZ)) Σ |A_mn|² f_mn for a real matrix A.
fn mori(s: &SpectrumResult, a: &nalgebra::DMatrix<f64>, p: &[f64], z: f64, beta: f64) -> Result<f64> {
    let n = p.len();
    let tol = s.degeneracy_tol();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let w = a[(i, j)] * a[(i, j)];
            if w == 0.0 {
                continue;
            }
            acc += w * mori_kernel(p[i], p[j], s.energies[i], s.energies[j], beta, tol)?;
        }
    }
    Ok(acc / (beta * z))
}

pub fn thermal_observables(s: &SpectrumResult, beta: f64) -> Result<ThermalObservables> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParams(format!("beta = {beta}")));
    }
    let (p, z) = weights(s, beta);
    let mori_zz = mori(s, &s.sigma_z, &p, z, beta)?;
    let mori_yy = mori(s, &s.sigma_y_imag, &p, z, beta)?;
    let sigma_x = p.iter().zip(s.sigma_x_diag.iter()).map(|(a, b)| a * b).sum::<f64>() / z;
    let delta_eff = if mori_zz > 0.0 { s.delta * (mori_yy / mori_zz).sqrt() } else { f64::NAN };
    Ok(ThermalObservables {
        beta,
        m2: mori_zz,
        sigma_x,
        hq: -0.5 * s.delta * sigma_x,
        delta_eff,
        mori_yy,
        mori_zz,
        log_z_shifted: z.ln(),
    })
}

/// χ(z) and Σ_z(z) at one complex frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SusceptibilityPoint {
    pub re_z: f64,
    pub im_z: f64,
    pub re_chi: f64,
    pub im_chi: f64,
    pub re_sigma_z: f64,
    pub im_sigma_z: f64,
}

struct Lehmann {
    /// (|A_mn|² (p_m − p_n)/Z, E_n − E_m) over non-degenerate pairs.
    terms: Vec<(f64, f64)>,
}

impl Lehmann {
    fn new(s: &SpectrumResult, a: &nalgebra::DMatrix<f64>, beta: f64) -> Self {
        let (p, z) = weights(s, beta);
        let tol = s.degeneracy_tol();
        let n = p.len();
        let mut terms = Vec::new();
        for m in 0..n {
            for k in 0..n {
                let w = a[(m, k)] * a[(m, k)];
                let gap = s.energies[k] - s.energies[m];
                if w == 0.0 || gap.abs() < tol {
                    continue;
                }
                terms.push((w * (p[m] - p[k]) / z, gap));
            }
        }
        Self { terms }
    }

    fn chi(&self, z: C64) -> C64 {
        self.terms.iter().map(|&(w, gap)| w / (z - gap)).sum()
    }

    fn chi0(&self) -> f64 {
        self.terms.iter().map(|&(w, gap)| -w / gap).sum()
    }
}

fn check_upper(z: &[C64]) -> Result<()> {
    if let Some(bad) = z.iter().find(|z| !(z.im > 0.0)) {
        return Err(Error::Domain(format!("frequency {bad} must have a positive imaginary part")));
    }
    Ok(())
}

/// χ(z) = (1/Z) Σ |⟨m|σ_z|n⟩|² (e^{−βE_m} − e^{−βE_n})/(z − (E_n − E_m)) and
/// Σ_z(z) = i(χ(z) − χ(0))/(M²βz) on a grid in the upper half plane.
pub fn susceptibility(s: &SpectrumResult, beta: f64, z_grid: &[C64]) -> Result<Vec<SusceptibilityPoint>> {
    check_upper(z_grid)?;
    let obs = thermal_observables(s, beta)?;
    let l = Lehmann::new(s, &s.sigma_z, beta);
    let chi0 = l.chi0();
    Ok(z_grid
        .iter()
        .map(|&z| {
            let chi = l.chi(z);
            let sz = C64::i() * (chi - chi0) / (obs.m2 * beta * z);
            SusceptibilityPoint {
                re_z: z.re,
                im_z: z.im,
                re_chi: chi.re,
                im_chi: chi.im,
                re_sigma_z: sz.re,
                im_sigma_z: sz.im,
            }
        })
        .collect())
}

/// Both sides of the sum rule −(2/π)∫₀^∞ Im χ(ω)/ω dω = βM².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumRule {
    pub lhs: f64,
    pub rhs: f64,
    /// Part of βM² carried by degenerate (zero-frequency) pairs, which the
    /// dynamical susceptibility cannot see.
    pub elastic: f64,
    pub residual: f64,
}

/// The frequency integral is done exactly: Im χ is a sum of δ-peaks at the
/// Bohr frequencies, so the integral collapses to a sum over pairs.
pub fn sum_rule(s: &SpectrumResult, beta: f64) -> Result<SumRule> {
    let obs = thermal_observables(s, beta)?;
    let l = Lehmann::new(s, &s.sigma_z, beta);
    // −(2/π)·(−π)·Σ_{gap>0} w/gap
    let lhs: f64 = l.terms.iter().filter(|t| t.1 > 0.0).map(|&(w, gap)| 2.0 * w / gap).sum();
    let rhs = beta * obs.m2;
    let (p, z) = weights(s, beta);
    let tol = s.degeneracy_tol();
    let n = p.len();
    let mut elastic = 0.0;
    for m in 0..n {
        for k in 0..n {
            if (s.energies[k] - s.energies[m]).abs() < tol {
                elastic += s.sigma_z[(m, k)].powi(2) * p[m] / z;
            }
        }
    }
    Ok(SumRule { lhs, rhs, elastic, residual: (lhs - rhs).abs() })
}

/// Laplace transform of the σ_y relaxation function,
/// Σ_y(z) = (1/((σ_y,σ_y)βZ)) Σ |⟨m|σ_y|n⟩|² f_mn · i/(z − (E_n − E_m)).
fn sigma_y_relaxation(s: &SpectrumResult, beta: f64, z: C64, mori_yy: f64) -> Result<C64> {
    let (p, zsum) = weights(s, beta);
    let tol = s.degeneracy_tol();
    let n = p.len();
    let mut acc = C64::new(0.0, 0.0);
    for m in 0..n {
        for k in 0..n {
            let w = s.sigma_y_imag[(m, k)].powi(2);
            if w == 0.0 {
                continue;
            }
            let f = mori_kernel(p[m], p[k], s.energies[m], s.energies[k], beta, tol)?;
            acc += w * f * C64::i() / (z - (s.energies[k] - s.energies[m]));
        }
    }
    Ok(acc / (mori_yy * beta * zsum))
}

/// Largest |Σ_z(z) − i/z − Δ_eff² Σ_y(z)/z²| over the grid, with Σ_z taken
/// from the susceptibility and Σ_y from its own Lehmann sum.
pub fn verify_eq5(s: &SpectrumResult, beta: f64, z_grid: &[C64]) -> Result<f64> {
    let obs = thermal_observables(s, beta)?;
    let pts = susceptibility(s, beta, z_grid)?;
    let mut worst: f64 = 0.0;
    for (pt, &z) in pts.iter().zip(z_grid) {
        let lhs = C64::new(pt.re_sigma_z, pt.im_sigma_z);
        let sy = sigma_y_relaxation(s, beta, z, obs.mori_yy)?;
        let rhs = C64::i() / z + obs.delta_eff * obs.delta_eff * sy / (z * z);
        worst = worst.max((lhs - rhs).norm());
    }
    Ok(worst)
}

/// ∂⟨σ_z⟩/∂h for H + hσ_z by a central difference at ±h.
pub fn static_response_fd(delta: f64, bath: &DiscretizedBath, spec: &FockSpec, beta: f64, h: f64) -> Result<f64> {
    let mag = |field: f64| -> Result<f64> {
        let hm = build_with_field(delta, bath, spec, field)?;
        let f = hm.nrows() / 2;
        let (e, v) = eigen(hm);
        let e0 = e[0];
        let mut num = 0.0;
        let mut z = 0.0;
        for n in 0..e.len() {
            let p = (-beta * (e[n] - e0)).exp();
            let col = v.column(n);
            let sz = col.rows(0, f).norm_squared() - col.rows(f, f).norm_squared();
            num += p * sz;
            z += p;
        }
        Ok(num / z)
    };
    Ok((mag(h)? - mag(-h)?) / (2.0 * h))
}
