//! Binning, autocorrelation and resampling error analysis for Markov-chain
//! time series.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Post-processed observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Integrated autocorrelation time in sweeps (≥ 0.5).
    pub tau_int: f64,
    pub n_samples: u64,
    pub n_therm: u64,
    pub bin_len: u64,
    /// Set when the bin length or the thermalization is short compared with
    /// `tau_int`, or when the autocorrelation window hit its limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl MCEstimate {
    /// Same estimate scaled by a constant factor.
    pub fn scaled(&self, factor: f64) -> MCEstimate {
        MCEstimate {
            mean: factor * self.mean,
            std_error: factor.abs() * self.std_error,
            ..self.clone()
        }
    }

    /// |mean − value| in units of the standard error combined with `err`.
    pub fn pull(&self, value: f64, err: f64) -> f64 {
        let s = (self.std_error * self.std_error + err * err).sqrt();
        if s == 0.0 {
            if self.mean == value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - value).abs() / s
        }
    }
}

/// A derived quantity that may be undefined for a given data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DerivedEstimate {
    Defined(MCEstimate),
    Undefined { reason: String },
}

impl DerivedEstimate {
    pub fn value(&self) -> Option<&MCEstimate> {
        match self {
            DerivedEstimate::Defined(e) => Some(e),
            DerivedEstimate::Undefined { .. } => None,
        }
    }
}

/// Streaming autocorrelation sums Σ x_t x_{t+k} for lags k < `max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoCorr {
    max_lag: usize,
    ring: Vec<f64>,
    head: usize,
    filled: usize,
    lag_sums: Vec<f64>,
    lag_counts: Vec<u64>,
    sum: f64,
    n: u64,
}

impl AutoCorr {
    pub fn new(max_lag: usize) -> Self {
        Self {
            max_lag,
            ring: vec![0.0; max_lag],
            head: 0,
            filled: 0,
            lag_sums: vec![0.0; max_lag],
            lag_counts: vec![0; max_lag],
            sum: 0.0,
            n: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        let cap = self.max_lag;
        self.ring[self.head] = x;
        // lag 0 is the value itself; lag k is the value pushed k steps ago
        for k in 0..=self.filled.min(cap - 1) {
            let idx = (self.head + cap - k) % cap;
            self.lag_sums[k] += x * self.ring[idx];
            self.lag_counts[k] += 1;
        }
        self.head = (self.head + 1) % cap;
        self.filled = (self.filled + 1).min(cap);
        self.sum += x;
        self.n += 1;
    }

    /// Adds the lag sums of another (independent) series.
    pub fn merge(&mut self, other: &AutoCorr) {
        for k in 0..self.max_lag.min(other.max_lag) {
            self.lag_sums[k] += other.lag_sums[k];
            self.lag_counts[k] += other.lag_counts[k];
        }
        self.sum += other.sum;
        self.n += other.n;
    }

    /// Integrated autocorrelation time with Sokal's automatic window
    /// (smallest W with W ≥ 6 τ_int(W)). The flag reports that the window
    /// reached `max_lag` before the criterion was met.
    pub fn tau_int(&self) -> (f64, bool) {
        if self.n < 2 {
            return (0.5, false);
        }
        let mean = self.sum / self.n as f64;
        let c = |k: usize| {
            if self.lag_counts[k] == 0 {
                0.0
            } else {
                self.lag_sums[k] / self.lag_counts[k] as f64 - mean * mean
            }
        };
        let c0 = c(0);
        if !(c0 > 1e-14 * mean * mean) || c0 <= 0.0 {
            return (0.5, false);
        }
        let mut tau: f64 = 0.5;
        for w in 1..self.max_lag {
            if self.lag_counts[w] == 0 {
                return (tau.max(0.5), true);
            }
            tau += c(w) / c0;
            if w as f64 >= 6.0 * tau {
                return (tau.max(0.5), false);
            }
        }
        (tau.max(0.5), true)
    }
}

/// Fixed-length bins of a vector-valued series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binner<const K: usize> {
    pub bin_len: u64,
    #[serde(with = "arrays")]
    current: [f64; K],
    count: u64,
    #[serde(with = "array_vec")]
    pub bins: Vec<[f64; K]>,
}

impl<const K: usize> Binner<K> {
    pub fn new(bin_len: u64) -> Self {
        Self {
            bin_len: bin_len.max(1),
            current: [0.0; K],
            count: 0,
            bins: Vec::new(),
        }
    }

    pub fn push(&mut self, x: [f64; K]) {
        for (c, v) in self.current.iter_mut().zip(x) {
            *c += v;
        }
        self.count += 1;
        if self.count == self.bin_len {
            let n = self.bin_len as f64;
            self.bins.push(self.current.map(|c| c / n));
            self.current = [0.0; K];
            self.count = 0;
        }
    }

    pub fn n_samples(&self) -> u64 {
        self.bins.len() as u64 * self.bin_len
    }
}

/// Jackknife mean and standard error of `f` applied to bin averages.
pub fn jackknife<const K: usize>(bins: &[[f64; K]], f: impl Fn(&[f64; K]) -> f64) -> (f64, f64) {
    let n = bins.len();
    let mut total = [0.0; K];
    for b in bins {
        for (t, v) in total.iter_mut().zip(b) {
            *t += v;
        }
    }
    let full = f(&total.map(|t| t / n as f64));
    if n < 2 {
        return (full, f64::INFINITY);
    }
    let loo: Vec<f64> = bins
        .iter()
        .map(|b| {
            let mut m = [0.0; K];
            for k in 0..K {
                m[k] = (total[k] - b[k]) / (n - 1) as f64;
            }
            f(&m)
        })
        .collect();
    let mean_loo = loo.iter().sum::<f64>() / n as f64;
    let var = loo.iter().map(|x| (x - mean_loo).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (full, var.sqrt())
}

/// Bootstrap standard error of `f` applied to resampled bin averages. The
/// central value is `f` of the full-sample averages.
pub fn bootstrap<const K: usize, R: Rng + ?Sized>(
    bins: &[[f64; K]],
    f: impl Fn(&[f64; K]) -> f64,
    n_resamples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let n = bins.len();
    let avg = |pick: &mut dyn FnMut() -> usize| {
        let mut m = [0.0; K];
        for _ in 0..n {
            let b = &bins[pick()];
            for k in 0..K {
                m[k] += b[k];
            }
        }
        m.map(|v| v / n as f64)
    };
    let mut seq = 0;
    let full = f(&avg(&mut || {
        seq += 1;
        seq - 1
    }));
    if n < 2 {
        return (full, f64::INFINITY);
    }
    let mut vals = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        vals.push(f(&avg(&mut || rng.gen_range(0..n))));
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    (full, var.sqrt())
}

mod arrays {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const K: usize>(a: &[f64; K], s: S) -> Result<S::Ok, S::Error> {
        a.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const K: usize>(d: D) -> Result<[f64; K], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"fixed-size array"))
    }
}

mod array_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const K: usize>(a: &[[f64; K]], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<&[f64]> = a.iter().map(|x| x.as_slice()).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const K: usize>(d: D) -> Result<Vec<[f64; K]>, D::Error> {
        let v = Vec::<Vec<f64>>::deserialize(d)?;
        v.into_iter()
            .map(|row| {
                row.try_into().map_err(|r: Vec<f64>| {
                    serde::de::Error::invalid_length(r.len(), &"fixed-size array")
                })
            })
            .collect()
    }
}
