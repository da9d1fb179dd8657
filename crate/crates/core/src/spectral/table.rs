use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::SpectralDensity;
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "# dissrabi-kernel-table v1";
const INTERP: &str = "hermite5-w/hermite3-k";

/// Layout of the τ grid: a node at 0 followed by geometric spacing from
/// `tau_min` to β/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub tau_min: f64,
    pub n_points: usize,
    /// Largest acceptable certified error on W, relative to max(1, max|W|).
    pub target_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            tau_min: 1e-4,
            n_points: 2048,
            target_tol: 1e-8,
        }
    }
}

/// Tabulated K(τ) and W(τ) on [0, β/2], extended to [0, β] by the symmetry
/// K(τ) = K(β − τ).
///
/// W is the double antiderivative of K with W(0) = W'(0) = 0. The interaction
/// of two disjoint imaginary-time intervals follows from second differences of
/// W, see [`KernelTable::pair_integral`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub beta: f64,
    pub tau_grid: Vec<f64>,
    pub k_values: Vec<f64>,
    pub w_values: Vec<f64>,
    /// dK/dτ at the nodes (cubic Hermite data for K).
    pub k_slopes: Vec<f64>,
    /// F = W' at the nodes (quintic Hermite data for W).
    pub f_values: Vec<f64>,
    pub interp_order: String,
    /// Certified bound on |W_interp − W| over [0, β].
    pub tol: f64,
    /// Certified bound on |K_interp − K| over [0, β].
    pub tol_k: f64,
    /// Serialized description of the generating density.
    pub source: String,
    log_ratio: f64,
    zero: bool,
}

impl KernelTable {
    /// Tabulates the kernel of `sd` at inverse temperature `beta` and
    /// certifies the interpolation against direct quadrature at every
    /// interval midpoint.
    pub fn build(sd: &SpectralDensity, beta: f64, grid: &GridSpec) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta = {beta}")));
        }
        if grid.n_points < 4 {
            return Err(Error::InvalidParams("kernel grid needs at least 4 points".into()));
        }
        let half = 0.5 * beta;
        let tau_min = grid.tau_min.min(half / 16.0);
        let n_geo = grid.n_points - 1;
        let log_ratio = (half / tau_min).ln() / (n_geo - 1) as f64;
        let mut tau_grid = Vec::with_capacity(grid.n_points);
        tau_grid.push(0.0);
        for i in 0..n_geo {
            tau_grid.push(tau_min * (log_ratio * i as f64).exp());
        }
        *tau_grid.last_mut().expect("grid") = half;

        let source = serde_json::to_string(sd)?;
        let zero = sd.is_zero();
        let n = tau_grid.len();
        let (mut k_values, mut k_slopes, mut f_values, mut w_values) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        if !zero {
            k_values[0] = sd.kernel_at_zero(beta)?;
            k_slopes[0] = sd.kernel_slope_at_zero(beta)?;
            for i in 1..n {
                let t = tau_grid[i];
                k_values[i] = sd.kernel_value(beta, t)?;
                k_slopes[i] = if i == n - 1 { 0.0 } else { sd.kernel_derivative(beta, t)? };
                f_values[i] = sd.kernel_integral(beta, t)?;
                w_values[i] = sd.kernel_double_integral(beta, t)?;
            }
        }

        let mut table = KernelTable {
            beta,
            tau_grid,
            k_values,
            w_values,
            k_slopes,
            f_values,
            interp_order: INTERP.to_string(),
            tol: 0.0,
            tol_k: 0.0,
            source,
            log_ratio,
            zero,
        };

        if !zero {
            let (mut dev_w, mut dev_k) = (0.0f64, 0.0f64);
            for i in 0..n - 1 {
                let t = 0.5 * (table.tau_grid[i] + table.tau_grid[i + 1]);
                dev_w = dev_w.max((table.w(t) - sd.kernel_double_integral(beta, t)?).abs());
                dev_k = dev_k.max((table.k(t) - sd.kernel_value(beta, t)?).abs());
            }
            let w_scale = table.w_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let k_scale = table.k_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            // Twice the worst midpoint deviation, floored at the quadrature
            // accuracy of the reference values.
            table.tol = (2.0 * dev_w).max(1e-12 * w_scale.max(1.0));
            table.tol_k = (2.0 * dev_k).max(1e-12 * k_scale.max(1.0));
            if table.tol > grid.target_tol * w_scale.max(1.0) {
                return Err(Error::NumericalAccuracy {
                    achieved: table.tol / w_scale.max(1.0),
                    requested: grid.target_tol,
                    context: format!("kernel table with {} points at beta = {beta}", grid.n_points),
                });
            }
        }
        Ok(table)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// F(β/2) = ½∫₀^β K.
    fn f_half(&self) -> f64 {
        *self.f_values.last().expect("grid")
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.tau_grid.len();
        let tau_min = self.tau_grid[1];
        if t < tau_min {
            return 0;
        }
        let mut i = 1 + ((t / tau_min).ln() / self.log_ratio) as usize;
        i = i.min(n - 2);
        while i > 1 && self.tau_grid[i] > t {
            i -= 1;
        }
        while i < n - 2 && self.tau_grid[i + 1] < t {
            i += 1;
        }
        i
    }

    /// Interpolated K(τ) for τ ∈ [0, β].
    pub fn k(&self, tau: f64) -> f64 {
        if self.zero {
            return 0.0;
        }
        let t = if tau > 0.5 * self.beta { self.beta - tau } else { tau };
        let i = self.locate(t);
        let (x0, x1) = (self.tau_grid[i], self.tau_grid[i + 1]);
        let h = x1 - x0;
        let s = (t - x0) / h;
        let (h00, h10, h01, h11) = cubic_basis(s);
        h00 * self.k_values[i]
            + h10 * h * self.k_slopes[i]
            + h01 * self.k_values[i + 1]
            + h11 * h * self.k_slopes[i + 1]
    }

    fn w_half_range(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let (x0, x1) = (self.tau_grid[i], self.tau_grid[i + 1]);
        let h = x1 - x0;
        let s = (t - x0) / h;
        let b = quintic_basis(s);
        b[0] * self.w_values[i]
            + b[1] * h * self.f_values[i]
            + b[2] * h * h * self.k_values[i]
            + b[3] * self.w_values[i + 1]
            + b[4] * h * self.f_values[i + 1]
            + b[5] * h * h * self.k_values[i + 1]
    }

    /// Interpolated W(τ) for τ ∈ [0, β].
    #[inline]
    pub fn w(&self, tau: f64) -> f64 {
        if self.zero || tau <= 0.0 {
            return 0.0;
        }
        let half = 0.5 * self.beta;
        if tau <= half {
            self.w_half_range(tau)
        } else {
            let u = (self.beta - tau).max(0.0);
            self.w_half_range(u) + self.f_half() * (2.0 * tau - self.beta)
        }
    }

    /// ∫_a^b dt ∫_c^d dt' K(t' − t) for a ≤ b ≤ c ≤ d inside [0, β].
    #[inline]
    pub fn pair_integral(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        if self.zero {
            return 0.0;
        }
        let v = self.w(d - a) - self.w(c - a) - self.w(d - b) + self.w(c - b);
        v.max(0.0)
    }

    /// Writes the versioned columnar text form.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "{FORMAT_TAG}").ok();
        writeln!(s, "# beta = {:?}", self.beta).ok();
        writeln!(s, "# source = {}", self.source).ok();
        writeln!(s, "# interp = {}", self.interp_order).ok();
        writeln!(s, "# tol_w = {:?}", self.tol).ok();
        writeln!(s, "# tol_k = {:?}", self.tol_k).ok();
        writeln!(s, "# points = {}", self.tau_grid.len()).ok();
        writeln!(s, "tau\tK\tW\tdK\tF").ok();
        for i in 0..self.tau_grid.len() {
            writeln!(
                s,
                "{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
                self.tau_grid[i], self.k_values[i], self.w_values[i], self.k_slopes[i], self.f_values[i]
            )
            .ok();
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, key: Option<&str>, msg: String| Error::Parse {
            source_name: "kernel table".into(),
            line: line + 1,
            key: key.map(str::to_string),
            message: msg,
        };
        match lines.next() {
            Some((_, Ok(l))) if l.trim() == FORMAT_TAG => {}
            Some((i, _)) => return Err(parse_err(i, None, format!("expected `{FORMAT_TAG}`"))),
            None => return Err(parse_err(0, None, "empty file".into())),
        }
        let mut beta = None;
        let mut source = String::new();
        let mut interp = String::new();
        let (mut tol, mut tol_k) = (None, None);
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for (i, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with("tau") {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let Some((k, v)) = rest.split_once('=') else { continue };
                let (k, v) = (k.trim(), v.trim());
                let num = || v.parse::<f64>().map_err(|e| parse_err(i, Some(k), e.to_string()));
                match k {
                    "beta" => beta = Some(num()?),
                    "source" => source = v.to_string(),
                    "interp" => interp = v.to_string(),
                    "tol_w" => tol = Some(num()?),
                    "tol_k" => tol_k = Some(num()?),
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(parse_err(i, None, format!("expected 5 columns, found {}", fields.len())));
            }
            for (c, f) in cols.iter_mut().zip(&fields) {
                c.push(f.parse::<f64>().map_err(|e| parse_err(i, None, e.to_string()))?);
            }
        }
        let beta = beta.ok_or_else(|| parse_err(0, Some("beta"), "missing".into()))?;
        if interp != INTERP {
            return Err(parse_err(0, Some("interp"), format!("unsupported scheme `{interp}`")));
        }
        let [tau_grid, k_values, w_values, k_slopes, f_values]: [Vec<f64>; 5] =
            cols.try_into().expect("five columns");
        if tau_grid.len() < 4 || tau_grid[0] != 0.0 {
            return Err(parse_err(0, None, "grid must start at 0 with at least 4 points".into()));
        }
        let n_geo = tau_grid.len() - 1;
        let log_ratio = (tau_grid[n_geo] / tau_grid[1]).ln() / (n_geo - 1) as f64;
        let zero = k_values.iter().all(|&k| k == 0.0) && w_values.iter().all(|&w| w == 0.0);
        Ok(KernelTable {
            beta,
            tau_grid,
            k_values,
            w_values,
            k_slopes,
            f_values,
            interp_order: interp,
            tol: tol.unwrap_or(f64::INFINITY),
            tol_k: tol_k.unwrap_or(f64::INFINITY),
            source,
            log_ratio,
            zero,
        })
    }
}

fn cubic_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

/// Quintic Hermite basis on [0, 1] for (p0, p0', p0'', p1, p1', p1'').
fn quintic_basis(s: f64) -> [f64; 6] {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    [
        1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
        s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
        0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
        10.0 * s3 - 15.0 * s4 + 6.0 * s5,
        -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
        0.5 * s3 - s4 + 0.5 * s5,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{BathMode, ModelParams};

    fn small_grid() -> GridSpec {
        GridSpec { n_points: 400, ..GridSpec::default() }
    }

    #[test]
    fn quintic_basis_reproduces_polynomials() {
        // p(s) = s^5 with p(0)=p'(0)=p''(0)=0, p(1)=1, p'(1)=5, p''(1)=20.
        for s in [0.1, 0.37, 0.5, 0.93] {
            let b = quintic_basis(s);
            let v = b[3] + 5.0 * b[4] + 20.0 * b[5];
            assert!((v - s.powi(5)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_density_gives_zero_table() {
        let sd = SpectralDensity::structured(&ModelParams::reference(0.0, 10.0));
        let t = KernelTable::build(&sd, 10.0, &small_grid()).unwrap();
        assert!(t.is_zero());
        assert!(t.w_values.iter().all(|&w| w == 0.0));
        assert_eq!(t.pair_integral(0.0, 1.0, 2.0, 3.0), 0.0);
    }

    #[test]
    fn w_is_convex_and_increasing() {
        let sd = SpectralDensity::structured(&ModelParams::reference(0.6, 20.0));
        let t = KernelTable::build(&sd, 20.0, &small_grid()).unwrap();
        let pts: Vec<f64> = (0..=200).map(|i| 10.0 * i as f64 / 200.0).collect();
        let w: Vec<f64> = pts.iter().map(|&p| t.w(p)).collect();
        for i in 1..w.len() {
            assert!(w[i] >= w[i - 1]);
        }
        for i in 1..w.len() - 1 {
            assert!(w[i + 1] - w[i] >= w[i] - w[i - 1] - 1e-12);
        }
    }

    #[test]
    fn w_extension_matches_direct_beyond_half() {
        let sd = SpectralDensity::structured(&ModelParams::reference(0.6, 20.0));
        let t = KernelTable::build(&sd, 20.0, &small_grid()).unwrap();
        for tau in [10.5, 13.0, 19.0, 19.99] {
            let direct = sd.kernel_double_integral(20.0, tau).unwrap();
            assert!((t.w(tau) - direct).abs() < 10.0 * t.tol, "{} vs {direct}", t.w(tau));
        }
        assert!((t.k(15.0) - t.k(5.0)).abs() < 1e-15);
    }

    #[test]
    fn discrete_table_text_roundtrip() {
        let sd = SpectralDensity::discrete(vec![
            BathMode { omega: 0.75, coupling: 0.4 },
            BathMode { omega: 2.5, coupling: 0.5 },
        ])
        .unwrap();
        let t = KernelTable::build(&sd, 5.0, &small_grid()).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = KernelTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_malformed_table() {
        let bad = format!("{FORMAT_TAG}\n# beta = 2.0\n# interp = {INTERP}\n0.0\t1.0\n");
        let err = KernelTable::read_from(bad.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn coarse_grid_fails_tolerance() {
        let sd = SpectralDensity::structured(&ModelParams::reference(0.8, 100.0));
        let grid = GridSpec { n_points: 8, target_tol: 1e-10, ..GridSpec::default() };
        assert!(matches!(
            KernelTable::build(&sd, 100.0, &grid),
            Err(Error::NumericalAccuracy { .. })
        ));
    }
}
