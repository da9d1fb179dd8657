//! Real-time relaxation of σ_z after a weak static field is switched off.

use serde::{Deserialize, Serialize};

use super::{build_with_field, eigen, DiscretizedBath, FockSpec};
use crate::error::{Error, Result};

/// Largest tolerated |Σ_z^{(h)} − Σ_z^{(h/2)}| on the time grid.
pub const LINEARITY_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationTrace {
    pub h: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub linearity_residual: f64,
    /// False when the residual exceeds [`LINEARITY_THRESHOLD`].
    pub linear: bool,
}

fn trace(delta: f64, bath: &DiscretizedBath, spec: &FockSpec, h: f64, times: &[f64]) -> Result<Vec<f64>> {
    let (_, vh) = eigen(build_with_field(delta, bath, spec, h)?);
    let psi = vh.column(0).into_owned();
    let hm = build_with_field(delta, bath, spec, 0.0)?;
    let f = hm.nrows() / 2;
    let (e, v) = eigen(hm);
    let c = v.transpose() * &psi;
    let mut zc = v.clone();
    zc.rows_mut(f, f).scale_mut(-1.0);
    // a_mn = c_m c_n ⟨m|σ_z|n⟩
    let zmat = v.transpose() * zc;
    let n = e.len();
    let sz_at = |t: f64| {
        let mut acc = 0.0;
        for m in 0..n {
            for k in 0..n {
                let a = c[m] * c[k] * zmat[(m, k)];
                if a != 0.0 {
                    acc += a * ((e[m] - e[k]) * t).cos();
                }
            }
        }
        acc
    };
    let s0 = sz_at(0.0);
    if s0 == 0.0 {
        return Err(Error::Domain("field produces no σ_z polarization".into()));
    }
    Ok(times.iter().map(|&t| sz_at(t) / s0).collect())
}

/// Σ_z(t) = ⟨σ_z(t)⟩/⟨σ_z(0)⟩ starting from the ground state of H + hσ_z and
/// evolving under H. A second run at h/2 measures the nonlinearity.
pub fn relax_sigma_z(
    delta: f64,
    bath: &DiscretizedBath,
    spec: &FockSpec,
    h: f64,
    times: &[f64],
) -> Result<RelaxationTrace> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParams(format!("field h = {h} must be positive")));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParams("non-finite time".into()));
    }
    let values = trace(delta, bath, spec, h, times)?;
    let half = trace(delta, bath, spec, 0.5 * h, times)?;
    let residual = values.iter().zip(&half).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(RelaxationTrace {
        h,
        times: times.to_vec(),
        values,
        linearity_residual: residual,
        linear: residual <= LINEARITY_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::BathMode;

    #[test]
    fn free_qubit_oscillates_at_the_gap() {
        let bath = DiscretizedBath::from_modes(vec![], "none").unwrap();
        let times: Vec<f64> = (0..=200).map(|i| 0.1 * i as f64).collect();
        let tr = relax_sigma_z(1.0, &bath, &FockSpec::new(vec![]), 1e-3, &times).unwrap();
        assert_eq!(tr.values[0], 1.0);
        for (t, v) in times.iter().zip(&tr.values) {
            assert!((v - t.cos()).abs() < 1e-6, "t={t}: {v}");
        }
        assert!(tr.linear);
    }

    #[test]
    fn weak_coupling_trace_oscillates() {
        let bath = DiscretizedBath::from_modes(vec![BathMode { omega: 0.75, coupling: 0.1 }], "one").unwrap();
        let times: Vec<f64> = (0..=400).map(|i| 0.05 * i as f64).collect();
        let tr = relax_sigma_z(1.0, &bath, &FockSpec::new(vec![8]), 1e-3, &times).unwrap();
        assert_eq!(tr.values[0], 1.0);
        let d: Vec<f64> = tr.values.windows(2).map(|w| w[1] - w[0]).collect();
        let turns = d.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
        assert!(turns >= 2);
    }

    #[test]
    fn nonpositive_field_is_rejected() {
        let bath = DiscretizedBath::from_modes(vec![], "none").unwrap();
        assert!(relax_sigma_z(1.0, &bath, &FockSpec::new(vec![]), 0.0, &[0.0]).is_err());
    }
}
