//! Orchestration behind the command-line tool: sweeps over (coupling, β)
//! with checkpointed chains, result tables, fit reports and ED checks.

mod config;
mod table;

pub use config::{BathKind, RunConfig, CONFIG_VERSION};
pub use table::{fmt_f64, read_rows, write_rows, ResultRow, COLUMNS};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bkt::{find_critical, fit_beta0_free, psi, Beta0Fit, BetaPsi, CriticalFit, PsiPoint};
use crate::ed::{
    diagonalize, discretize_bath, relax_sigma_z, sum_rule, susceptibility, thermal_observables, verify_eq5,
    DiscretizedBath, FockSpec, RelaxationTrace, Scheme, ThermalObservables,
};
use crate::error::{Error, Result};
use crate::spectral::{KernelTable, ModelParams};
use crate::wlmc::{estimate, ChainEstimates, ChainState, DerivedEstimate, MCEstimate, Schedule};

/// Environment variable that sets the worker count when `--threads` is absent.
pub const THREADS_ENV: &str = "DISSRABI_THREADS";

/// Tolerance for the exact ED identities.
pub const ED_IDENTITY_TOL: f64 = 1e-8;
/// Tolerance for the Mori-product identities.
pub const MORI_TOL: f64 = 1e-10;
/// Largest |pull| accepted in WLMC-vs-ED comparisons.
pub const MAX_PULL: f64 = 3.0;

/// Command-line overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resume: bool,
    pub threads: Option<usize>,
}

/// Run-control settings that do not affect results, echoed to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub out: PathBuf,
    pub threads: usize,
    pub threads_source: String,
    pub resume: bool,
    pub halt_after: Option<u64>,
    pub overrides: Vec<String>,
}

/// Applies overrides and resolves the thread count (flag, then environment,
/// then the rayon default).
pub fn resolve(mut cfg: RunConfig, ov: &Overrides) -> Result<(RunConfig, RunMeta)> {
    let mut notes = Vec::new();
    if let Some(seed) = ov.seed {
        notes.push(format!("seed = {seed} (--seed, config had {})", cfg.seed));
        cfg.seed = seed;
    }
    if let Some(out) = &ov.out {
        notes.push(format!("out = {} (--out)", out.display()));
        cfg.out = Some(out.clone());
    }
    if ov.resume && !cfg.resume {
        notes.push("resume = true (--resume)".into());
        cfg.resume = true;
    }
    let env = std::env::var(THREADS_ENV).ok();
    let (threads, source) = match (ov.threads, env) {
        (Some(n), _) => (n, "--threads".to_string()),
        (None, Some(v)) => {
            let n = v
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidParams(format!("{THREADS_ENV} = {v:?}: {e}")))?;
            (n, THREADS_ENV.to_string())
        }
        (None, None) => (rayon::current_num_threads(), "default".to_string()),
    };
    if threads == 0 {
        return Err(Error::InvalidParams("thread count must be positive".into()));
    }
    if source != "default" {
        notes.push(format!("threads = {threads} ({source})"));
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let meta = RunMeta {
        out,
        threads,
        threads_source: source,
        resume: cfg.resume,
        halt_after: cfg.halt_after,
        overrides: notes,
    };
    Ok((cfg, meta))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Writes via a temporary file and rename so an interrupted write never
/// leaves a truncated file behind.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

/// SplitMix64 finalizer, used to give every grid point its own seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the chains at grid point (coupling index, β index).
pub fn point_seed(master: u64, ci: usize, bi: usize) -> u64 {
    mix(mix(master ^ mix(ci as u64)) ^ mix(bi as u64 + (1 << 32)))
}

// ---------------------------------------------------------------- kernel-table

/// Builds and certifies one kernel table per grid point and writes them as
/// `kernel_c{i}_b{j}.tsv`.
pub fn cmd_kernel_table(cfg: &RunConfig, meta: &RunMeta) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&meta.out)?;
    let mut paths = Vec::new();
    for (ci, &c) in cfg.coupling_list().iter().enumerate() {
        for (bi, &beta) in cfg.betas.iter().enumerate() {
            let (_, sd) = cfg.point(c, beta)?;
            let table = KernelTable::build(&sd, beta, &cfg.grid())?;
            let path = meta.out.join(format!("kernel_c{ci}_b{bi}.tsv"));
            write_atomic(&path, |w| table.write_to(w))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

// ----------------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub coupling: f64,
    pub params: ModelParams,
    pub schedule: Schedule,
    pub kernel_tol: f64,
    pub estimates: ChainEstimates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config: serde_json::Value,
    pub columns: Vec<String>,
    pub rows: Vec<ResultRow>,
    pub points: Vec<PointSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTiming {
    pub coupling: f64,
    pub beta: f64,
    pub kernel_seconds: f64,
    pub sampling_seconds: f64,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    meta: &'a RunMeta,
    timings: &'a [PointTiming],
}

fn checkpoint_path(dir: &Path, ci: usize, bi: usize, chain: u64) -> PathBuf {
    dir.join(format!("c{ci}_b{bi}_chain{chain}.ckpt"))
}

/// Runs or resumes one chain. Returns `None` if it stopped at `halt_after`.
fn drive_chain(
    cfg: &RunConfig,
    params: &ModelParams,
    schedule: &Schedule,
    table: &KernelTable,
    path: &Path,
    chain: u64,
) -> Result<Option<ChainState>> {
    let mut state = if cfg.resume && path.exists() {
        let s = ChainState::read_checkpoint(fs::File::open(path)?, &path.display().to_string())?;
        s.ensure_matches(params, schedule, chain)?;
        s
    } else {
        ChainState::new(params, schedule, chain)?
    };
    let save = |s: &ChainState| write_atomic(path, |w| s.write_checkpoint(w));
    while !state.is_complete() {
        let mut step = if cfg.checkpoint_every > 0 { cfg.checkpoint_every } else { u64::MAX };
        if let Some(h) = cfg.halt_after {
            if state.sweep_counter >= h {
                save(&state)?;
                return Ok(None);
            }
            step = step.min(h - state.sweep_counter);
        }
        state.advance(table, Some(step))?;
        if cfg.checkpoint_every > 0 {
            save(&state)?;
        }
    }
    Ok(Some(state))
}

/// Runs every (coupling, β) point and writes `results.csv`, `summary.json`
/// and `run.json` to the output directory. With `halt_after` set the run
/// stops with [`Error::Interrupted`] once the first point reaches it, leaving
/// checkpoints that `resume` continues from.
pub fn cmd_sweep(cfg: &RunConfig, meta: &RunMeta) -> Result<Vec<ResultRow>> {
    let ckpt_dir = meta.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let pool = pool(meta.threads)?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut timings = Vec::new();
    for (ci, &c) in cfg.coupling_list().iter().enumerate() {
        for (bi, &beta) in cfg.betas.iter().enumerate() {
            let (params, sd) = cfg.point(c, beta)?;
            let t0 = Instant::now();
            let table = KernelTable::build(&sd, beta, &cfg.grid())?;
            let kernel_seconds = t0.elapsed().as_secs_f64();
            let schedule = Schedule { seed: point_seed(cfg.seed, ci, bi), ..cfg.schedule() };
            let t1 = Instant::now();
            let states: Vec<Option<ChainState>> = pool.install(|| {
                (0..cfg.n_chains)
                    .into_par_iter()
                    .map(|k| drive_chain(cfg, &params, &schedule, &table, &checkpoint_path(&ckpt_dir, ci, bi, k), k))
                    .collect::<Result<_>>()
            })?;
            timings.push(PointTiming { coupling: c, beta, kernel_seconds, sampling_seconds: t1.elapsed().as_secs_f64() });
            let states: Option<Vec<ChainState>> = states.into_iter().collect();
            let Some(states) = states else {
                write_json(&meta.out.join("run.json"), &RunRecord { meta, timings: &timings })?;
                return Err(Error::Interrupted(format!(
                    "halted at {} sweeps per chain at coupling {c}, beta {beta}",
                    cfg.halt_after.unwrap_or(0)
                )));
            };
            let est = estimate(&states)?;
            rows.push(ResultRow::from_estimates(c, beta, cfg.psi_alpha(&params), &est));
            points.push(PointSummary { coupling: c, params, schedule, kernel_tol: table.tol, estimates: est });
        }
    }
    write_atomic(&meta.out.join("results.csv"), |w| write_rows(&rows, w))?;
    let summary = SweepSummary {
        config: cfg.echo()?,
        columns: COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows: rows.clone(),
        points,
    };
    write_json(&meta.out.join("summary.json"), &summary)?;
    write_json(&meta.out.join("run.json"), &RunRecord { meta, timings: &timings })?;
    Ok(rows)
}

// --------------------------------------------------------------------- bkt-fit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BktReport {
    pub inputs: Vec<String>,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub fit: CriticalFit,
    /// Free Ψ_c and β₀ fit of Ψ(β) interpolated at the critical coupling.
    pub critical_curve: Option<Beta0Fit>,
}

/// Converts result rows into the points consumed by the BKT fit.
pub fn psi_points(rows: &[ResultRow]) -> Vec<PsiPoint> {
    rows.iter()
        .map(|r| PsiPoint {
            g: r.g,
            alpha_eff: r.alpha_eff,
            beta: r.beta,
            m2: MCEstimate {
                mean: r.m2,
                std_error: r.m2_err,
                tau_int: r.m2_tau,
                n_samples: r.n_samples,
                n_therm: 0,
                bin_len: 0,
                warning: None,
            },
        })
        .collect()
}

/// Ψ(β) at coupling `g`, linearly interpolated between the two nearest
/// measured couplings.
fn psi_at(points: &[PsiPoint], g: f64) -> Vec<BetaPsi> {
    let mut gs: Vec<f64> = points.iter().map(|p| p.g).collect();
    gs.sort_by(f64::total_cmp);
    gs.dedup();
    let hi = gs.iter().position(|&x| x >= g).unwrap_or(gs.len() - 1).max(1);
    let (g0, g1) = (gs[hi - 1], gs[hi]);
    let t = (g - g0) / (g1 - g0);
    let mut betas: Vec<f64> = points.iter().map(|p| p.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    betas
        .into_iter()
        .filter_map(|b| {
            let at = |gv: f64| points.iter().find(|p| p.g == gv && p.beta == b).map(|p| psi(p.alpha_eff, &p.m2));
            let (a, c) = (at(g0)?, at(g1)?);
            let v = (1.0 - t) * a.value + t * c.value;
            let e = (((1.0 - t) * a.error).powi(2) + (t * c.error).powi(2)).sqrt();
            Some(BetaPsi { beta: b, psi: v, error: e })
        })
        .collect()
}

/// Reads one or more results CSVs, locates the transition and writes
/// `bkt_fit.json` and `g_curves.csv`.
pub fn cmd_bkt_fit(inputs: &[PathBuf], out: &Path, n_bootstrap: usize, seed: u64) -> Result<BktReport> {
    let mut rows = Vec::new();
    for p in inputs {
        rows.extend(read_rows(fs::File::open(p)?, &p.display().to_string())?);
    }
    let points = psi_points(&rows);
    let fit = find_critical(&points, n_bootstrap, seed)?;
    let critical_curve = fit_beta0_free(&psi_at(&points, fit.g_c)).ok();
    fs::create_dir_all(out)?;
    write_atomic(&out.join("g_curves.csv"), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["g", "alpha_eff", "beta", "G", "G_err"])?;
        for c in &fit.curves {
            for (b, v) in c.betas.iter().zip(&c.g_values) {
                csv.write_record([
                    fmt_f64(c.g),
                    fmt_f64(c.alpha_eff),
                    fmt_f64(*b),
                    fmt_f64(v.value),
                    fmt_f64(v.error),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    let report = BktReport {
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        n_bootstrap,
        seed,
        fit,
        critical_curve,
    };
    write_json(&out.join("bkt_fit.json"), &report)?;
    Ok(report)
}

// -------------------------------------------------------------------- ed-check

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdInstance {
    pub coupling: f64,
    pub beta: f64,
    pub dimension: usize,
    pub converged: bool,
    pub observables: ThermalObservables,
    pub completeness_residual: f64,
    pub sum_rule_residual: f64,
    pub sum_rule_elastic: f64,
    pub eq5_residual: f64,
    pub mori_zz_residual: f64,
    pub mori_yy_residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub beta: f64,
    pub observable: String,
    pub ed: f64,
    pub mc: f64,
    pub mc_err: f64,
    pub pull: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdReport {
    pub config: serde_json::Value,
    pub instances: Vec<EdInstance>,
    pub comparisons: Vec<Comparison>,
    pub pass: bool,
}

/// The discrete bath used for ED at one coupling: the bath file as is, or
/// the continuous density discretized into `ed_modes` equal-weight modes.
pub fn ed_bath(cfg: &RunConfig, coupling: f64) -> Result<DiscretizedBath> {
    match cfg.bath {
        BathKind::Discrete => {
            let path = cfg.bath_file.as_ref().expect("validated");
            DiscretizedBath::read_from(fs::File::open(path)?, &path.display().to_string())
        }
        _ => {
            if cfg.ed_modes == 0 {
                return Err(Error::InvalidParams("ed_modes must be positive for a continuous bath".into()));
            }
            let (_, sd) = cfg.point(coupling, cfg.betas[0])?;
            if sd.is_zero() {
                return DiscretizedBath::from_modes(vec![], "zero coupling");
            }
            discretize_bath(&sd, cfg.ed_modes, Scheme::EqualWeight)
        }
    }
}

/// Fock truncation: `n_max` from the config (one entry applies to every
/// mode), or 12 quanta per mode.
pub fn ed_fock(cfg: &RunConfig, n_modes: usize) -> Result<FockSpec> {
    if n_modes == 0 {
        return Ok(FockSpec::new(vec![]));
    }
    match cfg.n_max.len() {
        0 => Ok(FockSpec::new(vec![12; n_modes])),
        1 => Ok(FockSpec::new(vec![cfg.n_max[0]; n_modes])),
        n if n == n_modes => Ok(FockSpec::new(cfg.n_max.clone())),
        n => Err(Error::InvalidParams(format!("n_max lists {n} entries for {n_modes} modes"))),
    }
}

fn pull(comparison: &str, beta: f64, ed: f64, mc: &MCEstimate) -> Comparison {
    let p = mc.pull(ed, 0.0);
    Comparison {
        beta,
        observable: comparison.into(),
        ed,
        mc: mc.mean,
        mc_err: mc.std_error,
        pull: p,
        pass: p.abs() <= MAX_PULL,
    }
}

/// Runs the ED identity suite at every (coupling, β) and, for discrete
/// baths, compares WLMC estimates with the exact values. Writes
/// `ed_check.json` and a spectrum CSV per instance.
pub fn cmd_ed_check(cfg: &RunConfig, meta: &RunMeta) -> Result<EdReport> {
    fs::create_dir_all(&meta.out)?;
    let mut instances = Vec::new();
    let mut comparisons = Vec::new();
    let eps = cfg.ed_eps * cfg.delta.abs().max(f64::MIN_POSITIVE);
    let check_grid: Vec<Complex<f64>> = [0.3, 0.9, 1.7, 3.1]
        .iter()
        .flat_map(|&w| [eps, 0.1, 1.0].map(|e| Complex::new(w * cfg.delta, e)))
        .collect();
    let plot_grid: Vec<Complex<f64>> =
        (0..=800).map(|i| Complex::new(4.0 * cfg.delta * i as f64 / 800.0, eps)).collect();
    let pool = pool(meta.threads)?;
    for (ci, &c) in cfg.coupling_list().iter().enumerate() {
        let bath = ed_bath(cfg, c)?;
        let spec = ed_fock(cfg, bath.modes.len())?;
        let s = diagonalize(cfg.delta, &bath, &spec)?;
        for (bi, &beta) in cfg.betas.iter().enumerate() {
            let obs = thermal_observables(&s, beta)?;
            let sr = sum_rule(&s, beta)?;
            let eq5 = verify_eq5(&s, beta, &check_grid)?;
            let mori_zz_residual = (obs.mori_zz - obs.m2).abs();
            let mori_yy_residual = if cfg.delta != 0.0 {
                (obs.mori_yy - 2.0 * obs.sigma_x / (beta * cfg.delta)).abs()
            } else {
                0.0
            };
            let converged = spec.is_converged(cfg.delta, &bath, beta, 1e-6)?;
            let completeness = s.completeness_residual();
            let pass = converged
                && completeness <= ED_IDENTITY_TOL
                && sr.residual <= ED_IDENTITY_TOL * sr.rhs.abs().max(1.0)
                && eq5 <= ED_IDENTITY_TOL
                && mori_zz_residual <= MORI_TOL
                && mori_yy_residual <= MORI_TOL;
            instances.push(EdInstance {
                coupling: c,
                beta,
                dimension: s.energies.len(),
                converged,
                observables: obs,
                completeness_residual: completeness,
                sum_rule_residual: sr.residual,
                sum_rule_elastic: sr.elastic,
                eq5_residual: eq5,
                mori_zz_residual,
                mori_yy_residual,
                pass,
            });
            let chi = susceptibility(&s, beta, &plot_grid)?;
            write_atomic(&meta.out.join(format!("spectrum_c{ci}_b{bi}.csv")), |w| {
                let mut csv = csv::Writer::from_writer(w);
                csv.write_record(["omega", "re_sigma_z", "im_sigma_z", "re_chi", "im_chi"])?;
                for p in &chi {
                    csv.write_record([p.re_z, p.re_sigma_z, p.im_sigma_z, p.re_chi, p.im_chi].map(fmt_f64))?;
                }
                csv.flush()?;
                Ok(())
            })?;

            if cfg.bath == BathKind::Discrete {
                let (params, sd) = cfg.point(c, beta)?;
                let table = KernelTable::build(&sd, beta, &cfg.grid())?;
                let schedule = Schedule { seed: point_seed(cfg.seed, ci, bi), ..cfg.schedule() };
                let states: Vec<ChainState> = pool.install(|| {
                    (0..cfg.n_chains)
                        .into_par_iter()
                        .map(|k| {
                            let mut st = ChainState::new(&params, &schedule, k)?;
                            st.advance(&table, None)?;
                            Ok(st)
                        })
                        .collect::<Result<_>>()
                })?;
                let est = estimate(&states)?;
                comparisons.push(pull("m2", beta, obs.m2, &est.m2));
                comparisons.push(pull("sigma_x", beta, obs.sigma_x, &est.sigma_x));
                if let DerivedEstimate::Defined(d) = &est.delta_eff {
                    comparisons.push(pull("delta_eff", beta, obs.delta_eff, d));
                }
            }
        }
    }
    let pass = instances.iter().all(|i| i.pass) && comparisons.iter().all(|c| c.pass);
    let report = EdReport { config: cfg.echo()?, instances, comparisons, pass };
    write_json(&meta.out.join("ed_check.json"), &report)?;
    Ok(report)
}

// ----------------------------------------------------------------------- relax

/// Runs the relaxation protocol at every coupling and writes
/// `relax_c{i}.csv` with columns (t, sigma_z) plus `relax.json`.
pub fn cmd_relax(cfg: &RunConfig, meta: &RunMeta) -> Result<Vec<RelaxationTrace>> {
    if !(cfg.relax_t_max > 0.0) || cfg.relax_points < 2 {
        return Err(Error::InvalidParams("relax_t_max > 0 and relax_points ≥ 2 are required".into()));
    }
    fs::create_dir_all(&meta.out)?;
    let times: Vec<f64> = (0..cfg.relax_points)
        .map(|i| cfg.relax_t_max * i as f64 / (cfg.relax_points - 1) as f64)
        .collect();
    let mut traces = Vec::new();
    for (ci, &c) in cfg.coupling_list().iter().enumerate() {
        let bath = ed_bath(cfg, c)?;
        let spec = ed_fock(cfg, bath.modes.len())?;
        let tr = relax_sigma_z(cfg.delta, &bath, &spec, cfg.relax_h, &times)?;
        write_atomic(&meta.out.join(format!("relax_c{ci}.csv")), |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["t", "sigma_z"])?;
            for (t, v) in tr.times.iter().zip(&tr.values) {
                csv.write_record([fmt_f64(*t), fmt_f64(*v)])?;
            }
            csv.flush()?;
            Ok(())
        })?;
        traces.push(tr);
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        config: serde_json::Value,
        couplings: Vec<f64>,
        linearity: Vec<(f64, bool)>,
        traces: &'a [RelaxationTrace],
    }
    write_json(
        &meta.out.join("relax.json"),
        &Summary {
            config: cfg.echo()?,
            couplings: cfg.coupling_list(),
            linearity: traces.iter().map(|t| (t.linearity_residual, t.linear)).collect(),
            traces: &traces,
        },
    )?;
    Ok(traces)
}

// ------------------------------------------------------------------ resistance

/// Circuit resistance in kΩ giving cavity damping `alpha_cav`: R = 0.24/α_cav.
pub fn resistance_estimate(alpha_cav: f64) -> Result<f64> {
    if !(alpha_cav > 0.0 && alpha_cav.is_finite()) {
        return Err(Error::Domain(format!("alpha_cav = {alpha_cav} must be positive")));
    }
    Ok(0.24 / alpha_cav)
}
