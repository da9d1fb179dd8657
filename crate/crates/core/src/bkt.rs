//! Minnhagen-style finite-β scaling of the scaled order parameter
//! Ψ = α M² near a Berezinskii-Kosterlitz-Thouless transition.
//!
//! At the critical coupling Ψ(β) = Ψ_c (1 + 1/(2 ln(β/β₀))) with Ψ_c = 1,
//! so G = 1/(Ψ − 1) − 2 ln β is independent of β there. For each coupling
//! the slope of G against ln β is fitted; its zero locates the transition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ModelParams;
use crate::wlmc::MCEstimate;

/// Number of standard errors by which Ψ must exceed 1 for a point to enter
/// a G fit.
pub const PSI_MARGIN_SIGMA: f64 = 3.0;

/// One (coupling, β) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiPoint {
    /// Control parameter that labels a curve: g for structured baths, α
    /// itself for a pure Ohmic bath.
    pub g: f64,
    /// Ohmic slope multiplying M² in Ψ.
    pub alpha_eff: f64,
    pub beta: f64,
    pub m2: MCEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueWithError {
    pub value: f64,
    pub error: f64,
}

pub fn psi(alpha_eff: f64, m2: &MCEstimate) -> ValueWithError {
    ValueWithError { value: alpha_eff * m2.mean, error: alpha_eff.abs() * m2.std_error }
}

/// G = 1/(Ψ − 1) − 2 ln β with propagated error. Points with
/// Ψ ≤ 1 + 3σ are refused.
pub fn g_function(psi: ValueWithError, beta: f64) -> Result<ValueWithError> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParams(format!("beta = {beta}")));
    }
    let excess = psi.value - 1.0;
    if excess <= PSI_MARGIN_SIGMA * psi.error {
        return Err(Error::Undefined(format!(
            "Psi = {} ± {} is not above 1 by {PSI_MARGIN_SIGMA} sigma",
            psi.value, psi.error
        )));
    }
    Ok(ValueWithError {
        value: 1.0 / excess - 2.0 * beta.ln(),
        error: psi.error / (excess * excess),
    })
}

/// Weighted straight-line fit y = a + b x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_error: f64,
    /// Weighted mean of x; the fitted value there has error `mean_error`.
    pub x_mean: f64,
    pub y_at_mean: f64,
    pub mean_error: f64,
    pub chi2: f64,
}

pub fn weighted_line(x: &[f64], y: &[f64], err: &[f64]) -> Result<LineFit> {
    if x.len() < 2 {
        return Err(Error::InvalidParams("a line fit needs at least two points".into()));
    }
    let w: Vec<f64> = err.iter().map(|e| if *e > 0.0 { 1.0 / (e * e) } else { 1e300 }).collect();
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(x, w)| w * (x - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParams("line fit with a single abscissa".into()));
    }
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((x, y), w)| w * (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let chi2 = x.iter().zip(y).zip(&w).map(|((x, y), w)| w * (y - ym - slope * (x - xm)).powi(2)).sum();
    Ok(LineFit {
        intercept: ym - slope * xm,
        slope,
        slope_error: (1.0 / sxx).sqrt(),
        x_mean: xm,
        y_at_mean: ym,
        mean_error: (1.0 / sw).sqrt(),
        chi2,
    })
}

/// Per-coupling G(ln β) regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub g: f64,
    pub alpha_eff: f64,
    pub betas: Vec<f64>,
    pub g_values: Vec<ValueWithError>,
    pub fit: Option<LineFit>,
    /// Points left out and why.
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalFit {
    pub alpha_c: f64,
    pub alpha_c_err: f64,
    pub g_c: f64,
    pub g_c_err: f64,
    pub beta0: f64,
    pub beta0_err: f64,
    /// Universal-jump estimate from a free-Ψ_c fit at the critical coupling.
    pub psi_c: f64,
    pub psi_c_err: f64,
    pub curves: Vec<CurveFit>,
    pub n_bootstrap: usize,
    pub n_bootstrap_failed: usize,
}

#[derive(Debug, Clone)]
struct Group {
    g: f64,
    alpha: f64,
    /// (β, Ψ, σ_Ψ) sorted by β.
    pts: Vec<(f64, f64, f64)>,
}

fn group(points: &[PsiPoint]) -> Result<Vec<Group>> {
    let mut groups: Vec<Group> = Vec::new();
    for p in points {
        if !(p.m2.mean.is_finite() && p.m2.std_error >= 0.0) {
            return Err(Error::InvalidParams(format!("M² = {} ± {}", p.m2.mean, p.m2.std_error)));
        }
        let v = psi(p.alpha_eff, &p.m2);
        match groups.iter_mut().find(|g| g.g == p.g) {
            Some(gr) => {
                if gr.alpha != p.alpha_eff {
                    return Err(Error::InvalidParams(format!("inconsistent alpha at g = {}", p.g)));
                }
                gr.pts.push((p.beta, v.value, v.error));
            }
            None => groups.push(Group { g: p.g, alpha: p.alpha_eff, pts: vec![(p.beta, v.value, v.error)] }),
        }
    }
    groups.sort_by(|a, b| a.g.total_cmp(&b.g));
    for gr in &mut groups {
        gr.pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(groups)
}

fn curve(gr: &Group) -> CurveFit {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut es = Vec::new();
    let mut gvals = Vec::new();
    let mut betas = Vec::new();
    let mut excluded = Vec::new();
    for &(beta, v, e) in &gr.pts {
        match g_function(ValueWithError { value: v, error: e }, beta) {
            Ok(gv) => {
                xs.push(beta.ln());
                ys.push(gv.value);
                es.push(gv.error);
                gvals.push(gv);
                betas.push(beta);
            }
            Err(err) => excluded.push(format!("beta = {beta}: {err}")),
        }
    }
    let fit = if xs.len() >= 3 {
        weighted_line(&xs, &ys, &es).ok()
    } else {
        excluded.push(format!("only {} usable beta values", xs.len()));
        None
    };
    CurveFit { g: gr.g, alpha_eff: gr.alpha, betas, g_values: gvals, fit, excluded }
}

struct Crossing {
    g_c: f64,
    alpha_c: f64,
    ln_beta0: f64,
    psi_c: Option<f64>,
}

/// Ψ(β) at an arbitrary coupling from per-β weighted lines through
/// neighbouring curves.
struct PsiInterpolator {
    /// (β, line of Ψ against g) for every β present in all curves used.
    lines: Vec<(f64, LineFit)>,
    alpha_line: (f64, f64, f64, f64),
}

impl PsiInterpolator {
    fn new(groups: &[&Group]) -> Option<Self> {
        let g: Vec<f64> = groups.iter().map(|gr| gr.g).collect();
        let mut lines = Vec::new();
        for &(beta, _, _) in &groups[0].pts {
            let mut v = Vec::new();
            let mut e = Vec::new();
            for gr in groups {
                match gr.pts.iter().find(|p| p.0 == beta) {
                    Some(p) => {
                        v.push(p.1);
                        e.push(p.2);
                    }
                    None => break,
                }
            }
            if v.len() == groups.len() {
                lines.push((beta, weighted_line(&g, &v, &e).ok()?));
            }
        }
        let (g0, g1) = (groups[0].g, groups[groups.len() - 1].g);
        let (a0, a1) = (groups[0].alpha, groups[groups.len() - 1].alpha);
        Some(Self { lines, alpha_line: (g0, g1, a0, a1) })
    }

    fn at(&self, g: f64) -> Vec<BetaPsi> {
        self.lines
            .iter()
            .map(|(beta, l)| {
                let dx = g - l.x_mean;
                let sxx_inv = l.slope_error * l.slope_error;
                BetaPsi {
                    beta: *beta,
                    psi: l.y_at_mean + l.slope * dx,
                    error: (l.mean_error * l.mean_error + dx * dx * sxx_inv).sqrt(),
                }
            })
            .collect()
    }

    fn alpha(&self, g: f64) -> f64 {
        let (g0, g1, a0, a1) = self.alpha_line;
        a0 + (a1 - a0) * (g - g0) / (g1 - g0)
    }

    /// G values of the usable points and their ln β.
    fn g_curve(&self, g: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut e = Vec::new();
        for p in self.at(g) {
            if let Ok(v) = g_function(ValueWithError { value: p.psi, error: p.error }, p.beta) {
                x.push(p.beta.ln());
                y.push(v.value);
                e.push(v.error);
            }
        }
        (x, y, e)
    }

    /// Slope of G against ln β; +∞ when fewer than three β values have
    /// Ψ clear of 1, which marks the disordered side.
    fn slope(&self, g: f64) -> Option<f64> {
        let (x, y, e) = self.g_curve(g);
        if x.len() < 3 {
            return Some(f64::INFINITY);
        }
        weighted_line(&x, &y, &e).ok().map(|l| l.slope)
    }
}

/// Zero of the G slope. The first positive-to-nonpositive sign change of
/// the per-curve slopes brackets it, with curves that have fewer than three
/// usable β values counted as disordered (slope +∞). Ψ is then interpolated
/// in g (using up to two curves on each side) and the slope of the
/// interpolated G curve is solved for zero by bisection.
fn crossing(groups: &[Group], curves: &[CurveFit]) -> Result<Crossing> {
    let slopes: Vec<(f64, f64)> = curves.iter().map(|c| (c.g, c.fit.map_or(f64::INFINITY, |f| f.slope))).collect();
    let k = slopes
        .windows(2)
        .position(|w| w[0].1 > 0.0 && w[1].1 <= 0.0)
        .ok_or_else(|| Error::Bracketing { slopes: slopes.clone() })?;
    let (ia, ib) = (k, k + 1);
    let lo = ia.saturating_sub(1);
    let hi = (ib + 2).min(groups.len());
    let near: Vec<&Group> = groups[lo..hi].iter().collect();
    let (ga, gb) = (groups[ia].g, groups[ib].g);
    let (sa, sb) = (slopes[ia].1, slopes[ib].1);
    let pair_guess = if sa.is_finite() { ga + (gb - ga) * sa / (sa - sb) } else { 0.5 * (ga + gb) };

    let interp = PsiInterpolator::new(&near);
    let root = interp.as_ref().and_then(|ip| {
        let (mut a, mut b) = (ga, gb);
        if !(ip.slope(a)? > 0.0 && ip.slope(b)? <= 0.0) {
            return None;
        }
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            let fm = ip.slope(m)?;
            if fm > 0.0 {
                a = m;
            } else {
                b = m;
            }
            if b - a <= 1e-13 * b.abs().max(1.0) {
                break;
            }
        }
        Some(0.5 * (a + b))
    });
    let (g_c, alpha_c, pts) = match (root, interp) {
        (Some(g), Some(ip)) => (g, ip.alpha(g), ip.at(g)),
        _ => {
            // Plain interpolation between the bracketing curves.
            let t = (pair_guess - ga) / (gb - ga);
            let lerp = |a: f64, b: f64| a + t * (b - a);
            let mut pts = Vec::new();
            for &(beta, va, ea) in &groups[ia].pts {
                if let Some(&(_, vb, eb)) = groups[ib].pts.iter().find(|p| p.0 == beta) {
                    pts.push(BetaPsi { beta, psi: lerp(va, vb), error: lerp(ea, eb) });
                }
            }
            (pair_guess, lerp(groups[ia].alpha, groups[ib].alpha), pts)
        }
    };
    // G is flat at the crossing; its weighted mean fixes β₀.
    let mut gs = Vec::new();
    let mut ws = Vec::new();
    for p in &pts {
        if let Ok(v) = g_function(ValueWithError { value: p.psi, error: p.error }, p.beta) {
            gs.push(v.value);
            ws.push(if v.error > 0.0 { 1.0 / (v.error * v.error) } else { 1.0 });
        }
    }
    if gs.is_empty() {
        return Err(Error::Undefined("no usable Psi at the crossing".into()));
    }
    let g_at = gs.iter().zip(&ws).map(|(g, w)| g * w).sum::<f64>() / ws.iter().sum::<f64>();
    let psi_c = fit_beta0_free(&pts).ok().map(|f| f.psi_c);
    Ok(Crossing { g_c, alpha_c, ln_beta0: -0.5 * g_at, psi_c })
}

/// Locates the coupling at which G stops depending on β. Uncertainties come
/// from a parametric bootstrap that redraws every Ψ from its Gaussian error.
pub fn find_critical(points: &[PsiPoint], n_bootstrap: usize, seed: u64) -> Result<CriticalFit> {
    let groups = group(points)?;
    if groups.len() < 4 {
        return Err(Error::InvalidParams(format!("need at least 4 couplings, got {}", groups.len())));
    }
    for gr in &groups {
        if gr.pts.len() < 3 {
            return Err(Error::InvalidParams(format!(
                "coupling {} has {} beta values; at least 3 are required",
                gr.g,
                gr.pts.len()
            )));
        }
    }
    let curves: Vec<CurveFit> = groups.iter().map(curve).collect();
    let central = crossing(&groups, &curves)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut samples: Vec<Crossing> = Vec::with_capacity(n_bootstrap);
    let mut failed = 0;
    for _ in 0..n_bootstrap {
        let resampled: Vec<Group> = groups
            .iter()
            .map(|gr| Group {
                pts: gr.pts.iter().map(|&(b, v, e)| (b, v + e * std_normal.sample(&mut rng), e)).collect(),
                ..gr.clone()
            })
            .collect();
        let c: Vec<CurveFit> = resampled.iter().map(curve).collect();
        match crossing(&resampled, &c) {
            Ok(x) => samples.push(x),
            Err(_) => failed += 1,
        }
    }
    let sd = |f: &dyn Fn(&Crossing) -> Option<f64>| -> f64 {
        let v: Vec<f64> = samples.iter().filter_map(f).filter(|x| x.is_finite()).collect();
        if v.len() < 2 {
            return f64::NAN;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let beta0 = central.ln_beta0.exp();
    Ok(CriticalFit {
        alpha_c: central.alpha_c,
        alpha_c_err: sd(&|c| Some(c.alpha_c)),
        g_c: central.g_c,
        g_c_err: sd(&|c| Some(c.g_c)),
        beta0,
        beta0_err: beta0 * sd(&|c| Some(c.ln_beta0)),
        psi_c: central.psi_c.unwrap_or(f64::NAN),
        psi_c_err: sd(&|c| c.psi_c),
        curves,
        n_bootstrap,
        n_bootstrap_failed: failed,
    })
}

/// Ψ measured at one β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPsi {
    pub beta: f64,
    pub psi: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beta0Fit {
    pub beta0: f64,
    pub beta0_err: f64,
    pub ln_beta0: f64,
    pub ln_beta0_err: f64,
    pub psi_c: f64,
    pub psi_c_err: f64,
    pub chi2_red: f64,
    pub residuals: Vec<f64>,
}

fn check_trend(pts: &[BetaPsi]) -> Result<()> {
    if pts.len() < 2 {
        return Err(Error::FitFailure { reason: "need at least two beta values".into(), residuals: vec![] });
    }
    if let Some(p) = pts.iter().find(|p| !(p.psi > 1.0)) {
        return Err(Error::FitFailure {
            reason: format!("Psi = {} at beta = {} is not above 1", p.psi, p.beta),
            residuals: vec![],
        });
    }
    let x: Vec<f64> = pts.iter().map(|p| p.beta.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.psi).collect();
    let e: Vec<f64> = pts.iter().map(|p| if p.error > 0.0 { p.error } else { 1.0 }).collect();
    let line = weighted_line(&x, &y, &e).map_err(|e| Error::FitFailure { reason: e.to_string(), residuals: vec![] })?;
    if !(line.slope < 0.0) {
        return Err(Error::FitFailure {
            reason: format!("Psi does not decrease with beta (slope {})", line.slope),
            residuals: y.iter().map(|v| v - line.y_at_mean).collect(),
        });
    }
    Ok(())
}

fn weights_of(pts: &[BetaPsi]) -> Vec<f64> {
    if pts.iter().all(|p| p.error > 0.0) {
        pts.iter().map(|p| 1.0 / (p.error * p.error)).collect()
    } else {
        vec![1.0; pts.len()]
    }
}

/// One-parameter fit of Ψ = 1 + 1/(2(ln β − ln β₀)).
pub fn fit_beta0(pts: &[BetaPsi]) -> Result<Beta0Fit> {
    check_trend(pts)?;
    let w = weights_of(pts);
    let sw: f64 = w.iter().sum();
    // Each point alone gives ln β₀ = ln β − 1/(2(Ψ − 1)).
    let mut x = pts.iter().zip(&w).map(|(p, w)| w * (p.beta.ln() - 0.5 / (p.psi - 1.0))).sum::<f64>() / sw;
    let model = |x: f64, b: f64| 1.0 + 0.5 / (b.ln() - x);
    let mut converged = false;
    let mut jtj = 0.0;
    for _ in 0..100 {
        let (mut num, mut den) = (0.0, 0.0);
        for (p, w) in pts.iter().zip(&w) {
            let l = p.beta.ln() - x;
            if !(l > 0.0) {
                return Err(Error::FitFailure {
                    reason: format!("ln beta0 = {x} reached ln beta = {}", p.beta.ln()),
                    residuals: vec![],
                });
            }
            let r = p.psi - model(x, p.beta);
            let d = 0.5 / (l * l);
            num += w * d * r;
            den += w * d * d;
        }
        let step = num / den;
        x += step;
        jtj = den;
        if step.abs() <= 1e-12 * x.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let residuals: Vec<f64> = pts.iter().map(|p| p.psi - model(x, p.beta)).collect();
    if !converged || !x.is_finite() {
        return Err(Error::FitFailure { reason: "Gauss-Newton did not converge".into(), residuals });
    }
    let chi2: f64 = residuals.iter().zip(&w).map(|(r, w)| w * r * r).sum();
    let dof = (pts.len() as f64 - 1.0).max(1.0);
    let err = (1.0 / jtj).sqrt();
    Ok(Beta0Fit {
        beta0: x.exp(),
        beta0_err: x.exp() * err,
        ln_beta0: x,
        ln_beta0_err: err,
        psi_c: 1.0,
        psi_c_err: 0.0,
        chi2_red: chi2 / dof,
        residuals,
    })
}

/// Two-parameter variant with Ψ_c free, for diagnostics.
pub fn fit_beta0_free(pts: &[BetaPsi]) -> Result<Beta0Fit> {
    check_trend(pts)?;
    if pts.len() < 3 {
        return Err(Error::FitFailure { reason: "need at least three beta values".into(), residuals: vec![] });
    }
    let w = weights_of(pts);
    let start = fit_beta0(pts)?;
    let (mut c, mut x) = (1.0, start.ln_beta0);
    let mut cov = [[0.0; 2]; 2];
    let mut converged = false;
    for _ in 0..200 {
        let mut a = [[0.0; 2]; 2];
        let mut g = [0.0; 2];
        for (p, w) in pts.iter().zip(&w) {
            let l = p.beta.ln() - x;
            if !(l > 0.0) {
                return Err(Error::FitFailure { reason: "ln beta0 reached the data".into(), residuals: vec![] });
            }
            let u = 1.0 + 0.5 / l;
            let r = p.psi - c * u;
            let j = [u, c * 0.5 / (l * l)];
            for i in 0..2 {
                g[i] += w * j[i] * r;
                for k in 0..2 {
                    a[i][k] += w * j[i] * j[k];
                }
            }
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if !(det.abs() > 0.0) {
            return Err(Error::FitFailure { reason: "singular normal equations".into(), residuals: vec![] });
        }
        cov = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        let dc = cov[0][0] * g[0] + cov[0][1] * g[1];
        let dx = cov[1][0] * g[0] + cov[1][1] * g[1];
        // Damped step keeps ln β₀ below every ln β.
        let min_l = pts.iter().map(|p| p.beta.ln() - x).fold(f64::INFINITY, f64::min);
        let scale = if dx > 0.5 * min_l { 0.5 * min_l / dx } else { 1.0 };
        c += scale * dc;
        x += scale * dx;
        if scale == 1.0 && dc.abs() < 1e-10 * c.abs() && dx.abs() < 1e-10 * x.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let residuals: Vec<f64> = pts.iter().map(|p| p.psi - c * (1.0 + 0.5 / (p.beta.ln() - x))).collect();
    if !converged {
        return Err(Error::FitFailure { reason: "free-Psi_c fit did not converge".into(), residuals });
    }
    let chi2: f64 = residuals.iter().zip(&w).map(|(r, w)| w * r * r).sum();
    let dof = (pts.len() as f64 - 2.0).max(1.0);
    Ok(Beta0Fit {
        beta0: x.exp(),
        beta0_err: x.exp() * cov[1][1].sqrt(),
        ln_beta0: x,
        ln_beta0_err: cov[1][1].sqrt(),
        psi_c: c,
        psi_c_err: cov[0][0].sqrt(),
        chi2_red: chi2 / dof,
        residuals,
    })
}

/// Coupling at which α_q + 4g²α_cav/ω₀² reaches `alpha_c`.
pub fn gc_from_alpha_c(params: &ModelParams, alpha_c: f64) -> Result<f64> {
    if !(params.alpha_cav > 0.0) {
        return Err(Error::InvalidParams(format!("alpha_cav = {}", params.alpha_cav)));
    }
    if params.alpha_q >= alpha_c {
        return Err(Error::NoSolution(format!(
            "alpha_q = {} already reaches alpha_c = {alpha_c} at g = 0",
            params.alpha_q
        )));
    }
    Ok(params.omega0 * ((alpha_c - params.alpha_q) / (4.0 * params.alpha_cav)).sqrt())
}
