//! Bath description: spectral densities, the imaginary-time retarded kernel
//! K(τ), and its tabulated antiderivatives.
//!
//! The qubit couples through σ_z to a bath with spectral density J(ω). After
//! the bath is traced out the worldline weight is `exp(½∬ σ(τ) K(τ−τ') σ(τ'))`
//! with
//!
//! ```text
//! K(τ) = ∫ dω J(ω) cosh[ω(β/2 − τ)] / sinh(βω/2)
//!      = ∫ dω J(ω) (e^{−ωτ} + e^{−ω(β−τ)}) / (1 − e^{−βω}).
//! ```
//!
//! The second form is the one evaluated; it never overflows.

pub mod quad;
mod table;

pub use table::{GridSpec, KernelTable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use quad::{integrate, integrate_to_infinity, QuadConfig};

/// Physical parameters of one simulation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Qubit tunnelling gap Δ.
    pub delta: f64,
    /// Cavity frequency ω₀.
    pub omega0: f64,
    /// Qubit-cavity coupling g.
    pub g: f64,
    /// Cavity-bath Ohmic coupling α_cav.
    pub alpha_cav: f64,
    /// Direct qubit-bath Ohmic coupling α_q.
    pub alpha_q: f64,
    /// Hard cutoff ω_c of the bath.
    pub omega_c: f64,
    /// Inverse temperature β.
    pub beta: f64,
}

impl ModelParams {
    /// Working point used throughout: Δ = 1, ω₀ = 0.75, α_cav = 0.2, ω_c = 10.
    pub fn reference(g: f64, beta: f64) -> Self {
        Self {
            delta: 1.0,
            omega0: 0.75,
            g,
            alpha_cav: 0.2,
            alpha_q: 0.0,
            omega_c: 10.0,
            beta,
        }
    }

    /// Checks the parameter invariants. Δ = 0 is accepted as the classical
    /// (no-tunnelling) limit.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.delta,
            self.omega0,
            self.g,
            self.alpha_cav,
            self.alpha_q,
            self.omega_c,
            self.beta,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParams(format!("non-finite entry in {self:?}")));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidParams(format!("delta = {} < 0", self.delta)));
        }
        if self.omega0 <= 0.0 {
            return Err(Error::InvalidParams(format!("omega0 = {} must be > 0", self.omega0)));
        }
        if self.beta <= 0.0 {
            return Err(Error::InvalidParams(format!("beta = {} must be > 0", self.beta)));
        }
        if self.omega_c <= self.omega0 {
            return Err(Error::InvalidParams(format!(
                "omega_c = {} must exceed omega0 = {}",
                self.omega_c, self.omega0
            )));
        }
        if self.g < 0.0 || self.alpha_cav < 0.0 || self.alpha_q < 0.0 {
            return Err(Error::InvalidParams(
                "g, alpha_cav and alpha_q must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Total low-frequency Ohmic slope α_eff + α_q.
    pub fn alpha_total(&self) -> f64 {
        alpha_eff(self) + self.alpha_q
    }
}

/// Low-frequency Ohmic coupling of the cavity-mediated bath, 4g²α_cav/ω₀².
pub fn alpha_eff(params: &ModelParams) -> f64 {
    4.0 * params.g * params.g * params.alpha_cav / (params.omega0 * params.omega0)
}

/// One discrete bath mode coupled as `l σ_z (b + b†)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathMode {
    pub omega: f64,
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpectralDensity {
    /// Cavity-mediated Lorentzian-Ohmic density plus an optional direct
    /// Ohmic term `(α_q/2) ω Θ(ω_c − ω)`.
    Structured {
        params: ModelParams,
        /// Cut the Lorentzian term at ω_c as well (default). When false it is
        /// integrated to infinity.
        truncate: bool,
    },
    /// `(α/2) ω Θ(ω_c − ω)`.
    PureOhmic { alpha: f64, omega_c: f64 },
    /// Finite list of modes, `J = Σ l_i² δ(ω − ω_i)`.
    Discrete(Vec<BathMode>),
}

impl SpectralDensity {
    pub fn structured(params: &ModelParams) -> Self {
        SpectralDensity::Structured {
            params: *params,
            truncate: true,
        }
    }

    pub fn pure_ohmic(alpha: f64, omega_c: f64) -> Self {
        SpectralDensity::PureOhmic { alpha, omega_c }
    }

    pub fn discrete(modes: Vec<BathMode>) -> Result<Self> {
        for m in &modes {
            if !(m.omega > 0.0 && m.omega.is_finite() && m.coupling.is_finite()) {
                return Err(Error::InvalidParams(format!("bath mode {m:?}")));
            }
        }
        Ok(SpectralDensity::Discrete(modes))
    }

    /// Upper edge of the support for continuous kinds.
    pub fn cutoff(&self) -> Option<f64> {
        match self {
            SpectralDensity::Structured { params, .. } => Some(params.omega_c),
            SpectralDensity::PureOhmic { omega_c, .. } => Some(*omega_c),
            SpectralDensity::Discrete(_) => None,
        }
    }

    /// Low-frequency Ohmic slope α, defined through J(ω) → (α/2) ω.
    pub fn ohmic_alpha(&self) -> f64 {
        match self {
            SpectralDensity::Structured { params, .. } => params.alpha_total(),
            SpectralDensity::PureOhmic { alpha, .. } => *alpha,
            SpectralDensity::Discrete(_) => 0.0,
        }
    }

    /// True when the density vanishes identically.
    pub fn is_zero(&self) -> bool {
        match self {
            SpectralDensity::Structured { params, .. } => {
                (params.g == 0.0 || params.alpha_cav == 0.0) && params.alpha_q == 0.0
            }
            SpectralDensity::PureOhmic { alpha, .. } => *alpha == 0.0,
            SpectralDensity::Discrete(modes) => modes.iter().all(|m| m.coupling == 0.0),
        }
    }

    /// Pointwise value J(ω) for the continuous kinds.
    pub fn eval(&self, omega: f64) -> Result<f64> {
        if !(omega >= 0.0) {
            return Err(Error::Domain(format!("spectral density at omega = {omega}")));
        }
        match self {
            SpectralDensity::Structured { params, truncate } => {
                let beyond = omega > params.omega_c;
                let lorentz = if beyond && *truncate {
                    0.0
                } else {
                    lorentzian_part(params, omega)
                };
                let direct = if beyond {
                    0.0
                } else {
                    0.5 * params.alpha_q * omega
                };
                Ok(lorentz + direct)
            }
            SpectralDensity::PureOhmic { alpha, omega_c } => {
                Ok(if omega > *omega_c { 0.0 } else { 0.5 * alpha * omega })
            }
            SpectralDensity::Discrete(_) => Err(Error::Unsupported(
                "pointwise evaluation of a discrete spectral density".into(),
            )),
        }
    }

    /// K(τ) for 0 < τ < β.
    pub fn kernel_value(&self, beta: f64, tau: f64) -> Result<f64> {
        check_tau(beta, tau)?;
        self.transform(beta, tau, Propagator::Kernel, &kernel_quad())
    }

    /// dK/dτ for 0 < τ < β.
    pub fn kernel_derivative(&self, beta: f64, tau: f64) -> Result<f64> {
        check_tau(beta, tau)?;
        self.transform(beta, tau, Propagator::Slope, &kernel_quad())
    }

    /// F(τ) = ∫₀^τ K, for 0 ≤ τ ≤ β.
    pub fn kernel_integral(&self, beta: f64, tau: f64) -> Result<f64> {
        check_tau_closed(beta, tau)?;
        if tau == 0.0 {
            return Ok(0.0);
        }
        self.transform(beta, tau, Propagator::Integral, &kernel_quad())
    }

    /// W(τ) = ∫₀^τ F, so that W(0) = W'(0) = 0 and W'' = K, for 0 ≤ τ ≤ β.
    pub fn kernel_double_integral(&self, beta: f64, tau: f64) -> Result<f64> {
        check_tau_closed(beta, tau)?;
        if tau == 0.0 {
            return Ok(0.0);
        }
        self.transform(beta, tau, Propagator::DoubleIntegral, &kernel_quad())
    }

    /// K(0⁺) = ∫ J(ω) coth(βω/2) dω, finite for continuous kinds with a
    /// cutoff and for discrete baths.
    pub fn kernel_at_zero(&self, beta: f64) -> Result<f64> {
        self.transform(beta, 0.0, Propagator::Kernel, &kernel_quad())
    }

    /// dK/dτ at τ = 0⁺, equal to −∫ ω J(ω) dω.
    pub fn kernel_slope_at_zero(&self, beta: f64) -> Result<f64> {
        self.transform(beta, 0.0, Propagator::Slope, &kernel_quad())
    }

    fn transform(&self, beta: f64, tau: f64, prop: Propagator, cfg: &QuadConfig) -> Result<f64> {
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("beta = {beta}")));
        }
        if self.is_zero() {
            return Ok(0.0);
        }
        match self {
            SpectralDensity::Discrete(modes) => Ok(modes
                .iter()
                .map(|m| m.coupling * m.coupling * prop.mode(m.omega, tau, beta))
                .sum()),
            SpectralDensity::PureOhmic { alpha, omega_c } => {
                let a = 0.5 * alpha;
                let f = |w: f64| a * prop.ohmic(w, tau, beta);
                let bps = breakpoints(beta, tau, *omega_c, None);
                Ok(integrate(f, 0.0, *omega_c, &bps, cfg)?.value)
            }
            SpectralDensity::Structured { params, truncate } => {
                let p = *params;
                let f = |w: f64| {
                    let base = 0.5 * p.alpha_q + lorentzian_over_omega(&p, w);
                    base * prop.ohmic(w, tau, beta)
                };
                let bps = breakpoints(beta, tau, p.omega_c, Some(&p));
                let mut total = integrate(f, 0.0, p.omega_c, &bps, cfg)?.value;
                if !truncate && p.g > 0.0 && p.alpha_cav > 0.0 {
                    let tail = |w: f64| lorentzian_over_omega(&p, w) * prop.ohmic(w, tau, beta);
                    total += integrate_to_infinity(tail, p.omega_c, cfg)?.value;
                }
                Ok(total)
            }
        }
    }
}

/// τ ↦ α/(2τ²), the large-β, long-time limit of K with α the total
/// low-frequency Ohmic slope (α_eff + α_q).
pub fn asymptotic_kernel(params: &ModelParams) -> impl Fn(f64) -> f64 {
    let alpha = params.alpha_total();
    move |tau: f64| alpha / (2.0 * tau * tau)
}

fn kernel_quad() -> QuadConfig {
    QuadConfig {
        rel_tol: 1e-9,
        abs_tol: 1e-300,
        max_panels: 4000,
    }
}

fn check_tau(beta: f64, tau: f64) -> Result<()> {
    if tau > 0.0 && tau < beta {
        Ok(())
    } else {
        Err(Error::Domain(format!("tau = {tau} outside (0, {beta})")))
    }
}

fn check_tau_closed(beta: f64, tau: f64) -> Result<()> {
    if (0.0..=beta).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Domain(format!("tau = {tau} outside [0, {beta}]")))
    }
}

fn lorentzian_part(p: &ModelParams, omega: f64) -> f64 {
    omega * lorentzian_over_omega(p, omega)
}

/// Lorentzian term of the structured density divided by ω; finite at ω = 0.
fn lorentzian_over_omega(p: &ModelParams, omega: f64) -> f64 {
    let w0 = p.omega0;
    let d = omega * omega - w0 * w0;
    let damp = std::f64::consts::PI * p.alpha_cav * w0 * omega;
    let den = d * d + damp * damp;
    if den == 0.0 {
        return 0.0;
    }
    2.0 * p.g * p.g * w0 * w0 * p.alpha_cav / den
}

fn breakpoints(beta: f64, tau: f64, omega_c: f64, structured: Option<&ModelParams>) -> Vec<f64> {
    let mut bps = vec![1.0 / beta, 4.0 / beta, 16.0 / beta];
    if tau > 0.0 {
        bps.push(1.0 / tau);
        bps.push(4.0 / tau);
    }
    if beta - tau > 0.0 {
        bps.push(1.0 / (beta - tau));
    }
    if let Some(p) = structured {
        let width = std::f64::consts::PI * p.alpha_cav * p.omega0;
        for k in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            bps.push(p.omega0 + k * width);
        }
    }
    bps.retain(|&x| x > 0.0 && x < omega_c);
    bps
}

/// The ω-dependent factor multiplying J(ω) in K and its antiderivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Propagator {
    Kernel,
    Slope,
    Integral,
    DoubleIntegral,
}

impl Propagator {
    /// Factor multiplying l² for a delta-function mode at `omega`.
    fn mode(self, omega: f64, tau: f64, beta: f64) -> f64 {
        self.ohmic(omega, tau, beta) / omega
    }

    /// Factor times ω, so that a density enters as `(J/ω)·this`; finite as
    /// ω → 0.
    fn ohmic(self, omega: f64, tau: f64, beta: f64) -> f64 {
        if omega == 0.0 {
            return self.zero_frequency_limit(tau, beta);
        }
        let x = omega * tau;
        let y = omega * (beta - tau);
        let d = -(-omega * beta).exp_m1();
        match self {
            Propagator::Kernel => omega * ((-x).exp() + (-y).exp()) / d,
            Propagator::Slope => -omega * omega * ((-x).exp() - (-y).exp()) / d,
            Propagator::Integral => -(-x).exp_m1() * (1.0 + (-y).exp()) / d,
            Propagator::DoubleIntegral => {
                let bw = x * (-y).exp() * (-(-x).exp_m1()) + x_plus_expm1_neg(x) * (-(-y).exp_m1());
                bw / (omega * d)
            }
        }
    }

    fn zero_frequency_limit(self, tau: f64, beta: f64) -> f64 {
        match self {
            Propagator::Kernel => 2.0 / beta,
            Propagator::Slope => 0.0,
            Propagator::Integral => 2.0 * tau / beta,
            Propagator::DoubleIntegral => tau * tau / beta,
        }
    }
}

/// x + e^{−x} − 1 without cancellation for small x.
fn x_plus_expm1_neg(x: f64) -> f64 {
    if x < 0.05 {
        // x²/2 − x³/6 + x⁴/24 − x⁵/120 + x⁶/720 − x⁷/5040
        let mut term = x * x / 2.0;
        let mut sum = term;
        for k in 3..12 {
            term *= -x / k as f64;
            sum += term;
        }
        sum
    } else {
        x + (-x).exp_m1()
    }
}
