use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ModelParams;

/// Piecewise-constant σ_z(τ) on the imaginary-time circle [0, β).
///
/// `base_sign` is the value on [0, first kink); the sign alternates at every
/// kink. The kink count is even because the path is periodic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worldline {
    pub beta: f64,
    pub base_sign: i8,
    pub kinks: Vec<f64>,
}

impl Worldline {
    /// Kink-free path with σ_z = +1.
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            base_sign: 1,
            kinks: Vec::new(),
        }
    }

    pub fn n_kinks(&self) -> usize {
        self.kinks.len()
    }

    /// σ_z at time τ ∈ [0, β); a kink at τ belongs to the segment it starts.
    pub fn sign_at(&self, tau: f64) -> i8 {
        let before = self.kinks.partition_point(|&k| k <= tau);
        if before % 2 == 0 {
            self.base_sign
        } else {
            -self.base_sign
        }
    }

    /// (1/β)∫σ_z dτ.
    pub fn magnetization(&self) -> f64 {
        let mut s = self.base_sign as f64;
        let mut prev = 0.0;
        let mut acc = 0.0;
        for &k in &self.kinks {
            acc += s * (k - prev);
            s = -s;
            prev = k;
        }
        acc += s * (self.beta - prev);
        acc / self.beta
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_sign != 1 && self.base_sign != -1 {
            return Err(Error::Internal(format!("base sign {}", self.base_sign)));
        }
        if self.kinks.len() % 2 != 0 {
            return Err(Error::Internal(format!("odd kink count {}", self.kinks.len())));
        }
        if let Some(&first) = self.kinks.first() {
            if first < 0.0 {
                return Err(Error::Internal(format!("kink at {first} < 0")));
            }
        }
        if let Some(&last) = self.kinks.last() {
            if last >= self.beta {
                return Err(Error::Internal(format!("kink at {last} >= beta")));
            }
        }
        if self.kinks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Internal("kinks not strictly increasing".into()));
        }
        Ok(())
    }
}

/// Per-sweep estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableSample {
    pub m: f64,
    pub m2: f64,
    pub n_kinks: usize,
    /// 2n/(βΔ); zero when Δ = 0.
    pub sigma_x_est: f64,
    /// −(Δ/2)·sigma_x_est, equal to −n/β.
    pub hq_est: f64,
}

pub fn measure(worldline: &Worldline, params: &ModelParams) -> ObservableSample {
    let m = worldline.magnetization();
    let n = worldline.n_kinks();
    let sigma_x_est = if params.delta > 0.0 {
        2.0 * n as f64 / (worldline.beta * params.delta)
    } else {
        0.0
    };
    ObservableSample {
        m,
        m2: m * m,
        n_kinks: n,
        sigma_x_est,
        hq_est: -0.5 * params.delta * sigma_x_est,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_worldline() {
        let w = Worldline::new(7.0);
        assert!(w.kinks.is_empty());
        assert_eq!(w.base_sign, 1);
        assert_eq!(w.magnetization(), 1.0);
        let s = measure(&w, &ModelParams::reference(0.3, 7.0));
        assert_eq!((s.n_kinks, s.sigma_x_est, s.m2), (0, 0.0, 1.0));
    }

    #[test]
    fn quarter_kinks_cancel() {
        let w = Worldline { beta: 8.0, base_sign: 1, kinks: vec![2.0, 6.0] };
        assert_eq!(w.magnetization(), 0.0);
        let s = measure(&w, &ModelParams::reference(0.3, 8.0));
        assert_eq!(s.n_kinks, 2);
        assert_eq!(s.hq_est, -0.5 * s.sigma_x_est);
        assert!((s.hq_est + 2.0 / 8.0).abs() < 1e-15);
        assert_eq!(w.sign_at(1.0), 1);
        assert_eq!(w.sign_at(2.0), -1);
        assert_eq!(w.sign_at(7.0), 1);
    }

    #[test]
    fn validation_catches_bad_paths() {
        assert!(Worldline { beta: 1.0, base_sign: 1, kinks: vec![0.2] }.validate().is_err());
        assert!(Worldline { beta: 1.0, base_sign: 1, kinks: vec![0.5, 0.2] }.validate().is_err());
        assert!(Worldline { beta: 1.0, base_sign: 1, kinks: vec![0.5, 1.0] }.validate().is_err());
        assert!(Worldline { beta: 1.0, base_sign: 0, kinks: vec![] }.validate().is_err());
        assert!(Worldline { beta: 1.0, base_sign: -1, kinks: vec![0.0, 0.5] }.validate().is_ok());
    }

    #[test]
    fn zero_gap_has_no_sigma_x() {
        let mut p = ModelParams::reference(0.3, 4.0);
        p.delta = 0.0;
        let s = measure(&Worldline::new(4.0), &p);
        assert_eq!(s.sigma_x_est, 0.0);
        assert_eq!(s.hq_est, 0.0);
    }
}
