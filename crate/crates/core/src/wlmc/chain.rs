//! Markov chains over worldlines: scheduling, measurement, estimate assembly
//! and checkpoint persistence.

use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::{cluster_sweep, ClusterScratch};
use super::metropolis::{metropolis_kink_pair, proposals_per_sweep};
use super::stats::{bootstrap, jackknife, AutoCorr, Binner, DerivedEstimate, MCEstimate};
use super::worldline::{measure, Worldline};
use crate::error::{Error, Result};
use crate::spectral::{KernelTable, ModelParams};

const CHECKPOINT_TAG: &str = "# dissrabi-checkpoint v1";
const MAX_LAG: usize = 1024;
const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Which update family drives the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Cluster,
    Metropolis,
}

impl std::str::FromStr for UpdateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cluster" => Ok(UpdateKind::Cluster),
            "metropolis" => Ok(UpdateKind::Metropolis),
            other => Err(Error::InvalidParams(format!("unknown update kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub n_therm: u64,
    /// Measured sweeps after thermalization.
    pub n_sweeps: u64,
    pub bin_len: u64,
    pub seed: u64,
    pub update: UpdateKind,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_sweeps == 0 || self.bin_len == 0 {
            return Err(Error::InvalidParams("n_sweeps and bin_len must be positive".into()));
        }
        if self.n_sweeps < 2 * self.bin_len {
            return Err(Error::InvalidParams(format!(
                "n_sweeps = {} gives fewer than two bins of length {}",
                self.n_sweeps, self.bin_len
            )));
        }
        Ok(())
    }

    pub fn total_sweeps(&self) -> u64 {
        self.n_therm + self.n_sweeps
    }
}

/// Per-chain measurement accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulators {
    /// Bin averages of (m, m², σ_x estimator).
    pub bins: Binner<3>,
    pub autocorr: [AutoCorr; 3],
}

impl Accumulators {
    fn new(bin_len: u64) -> Self {
        Self {
            bins: Binner::new(bin_len),
            autocorr: [AutoCorr::new(MAX_LAG), AutoCorr::new(MAX_LAG), AutoCorr::new(MAX_LAG)],
        }
    }
}

/// Zero-kink worldline with σ_z = +1. The seed is accepted for interface
/// symmetry; the initial path is deterministic.
pub fn init_worldline(params: &ModelParams, _seed: u64) -> Worldline {
    Worldline::new(params.beta)
}

/// Complete state of one chain. Given the same kernel table, a state
/// determines every future sample.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub params: ModelParams,
    pub schedule: Schedule,
    pub chain_index: u64,
    pub worldline: Worldline,
    pub sweep_counter: u64,
    pub acc: Accumulators,
    rng: ChaCha8Rng,
    scratch: ClusterScratch,
}

fn chain_rng(seed: u64, chain_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_index);
    rng
}

impl ChainState {
    pub fn new(params: &ModelParams, schedule: &Schedule, chain_index: u64) -> Result<Self> {
        params.validate()?;
        schedule.validate()?;
        Ok(Self {
            params: *params,
            schedule: *schedule,
            chain_index,
            worldline: init_worldline(params, schedule.seed),
            sweep_counter: 0,
            acc: Accumulators::new(schedule.bin_len),
            rng: chain_rng(schedule.seed, chain_index),
            scratch: ClusterScratch::default(),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.sweep_counter >= self.schedule.total_sweeps()
    }

    fn check_table(&self, table: &KernelTable) -> Result<()> {
        if table.beta != self.params.beta {
            return Err(Error::Domain(format!(
                "kernel table built for beta = {} but chain has beta = {}",
                table.beta, self.params.beta
            )));
        }
        Ok(())
    }

    /// One sweep of the configured update family, followed by a measurement
    /// once thermalization is over.
    pub fn sweep(&mut self, table: &KernelTable) {
        let delta = self.params.delta;
        match self.schedule.update {
            UpdateKind::Cluster => {
                cluster_sweep(&mut self.worldline, table, delta, &mut self.rng, &mut self.scratch)
            }
            UpdateKind::Metropolis => {
                for _ in 0..proposals_per_sweep(self.params.beta, delta) {
                    metropolis_kink_pair(&mut self.worldline, table, delta, &mut self.rng);
                }
            }
        }
        self.sweep_counter += 1;
        if self.sweep_counter > self.schedule.n_therm {
            let s = measure(&self.worldline, &self.params);
            self.acc.bins.push([s.m, s.m2, s.sigma_x_est]);
            for (ac, x) in self.acc.autocorr.iter_mut().zip([s.m, s.m2, s.sigma_x_est]) {
                ac.push(x);
            }
        }
    }

    /// Runs at most `max_sweeps` further sweeps (all remaining if `None`).
    pub fn advance(&mut self, table: &KernelTable, max_sweeps: Option<u64>) -> Result<()> {
        self.check_table(table)?;
        let remaining = self.schedule.total_sweeps().saturating_sub(self.sweep_counter);
        let n = max_sweeps.map_or(remaining, |m| m.min(remaining));
        for _ in 0..n {
            self.sweep(table);
        }
        Ok(())
    }

    /// Writes the checkpoint text format.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        writeln!(out, "{CHECKPOINT_TAG}")?;
        writeln!(out, "# params = {}", serde_json::to_string(&self.params)?)?;
        writeln!(out, "# schedule = {}", serde_json::to_string(&self.schedule)?)?;
        writeln!(out, "# chain_index = {}", self.chain_index)?;
        writeln!(out, "# sweep_counter = {}", self.sweep_counter)?;
        writeln!(out, "# rng_seed = {seed}")?;
        writeln!(out, "# rng_stream = {}", self.rng.get_stream())?;
        writeln!(out, "# rng_word_pos = {}", self.rng.get_word_pos())?;
        writeln!(out, "# accumulators = {}", serde_json::to_string(&self.acc)?)?;
        writeln!(out, "beta\t{:?}", self.worldline.beta)?;
        writeln!(out, "base_sign\t{}", self.worldline.base_sign)?;
        writeln!(out, "kinks\t{}", self.worldline.kinks.len())?;
        for k in &self.worldline.kinks {
            writeln!(out, "{k:?}")?;
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`ChainState::write_checkpoint`].
    pub fn read_checkpoint<R: Read>(input: R, source_name: &str) -> Result<Self> {
        let reader = BufReader::new(input);
        let parse_err = |line: usize, key: Option<&str>, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            key: key.map(str::to_string),
            message,
        };
        let mut header = std::collections::BTreeMap::new();
        let mut body = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if i == 0 {
                if line.trim_end() != CHECKPOINT_TAG {
                    return Err(parse_err(1, None, format!("expected '{CHECKPOINT_TAG}'")));
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest
                    .split_once(" = ")
                    .ok_or_else(|| parse_err(lineno, None, "malformed header line".into()))?;
                header.insert(k.to_string(), (lineno, v.to_string()));
            } else if !line.trim().is_empty() {
                body.push((lineno, line));
            }
        }
        let get = |k: &str| {
            header
                .get(k)
                .ok_or_else(|| parse_err(0, Some(k), "missing header key".into()))
        };
        fn num<T: std::str::FromStr>(
            v: &(usize, String),
            k: &str,
            err: &dyn Fn(usize, Option<&str>, String) -> Error,
        ) -> Result<T> {
            v.1.trim().parse().map_err(|_| err(v.0, Some(k), format!("cannot parse '{}'", v.1)))
        }
        let json_err = |k: &str, e: serde_json::Error, line: usize| parse_err(line, Some(k), e.to_string());

        let (pl, pv) = get("params")?;
        let params: ModelParams = serde_json::from_str(pv).map_err(|e| json_err("params", e, *pl))?;
        let (sl, sv) = get("schedule")?;
        let schedule: Schedule = serde_json::from_str(sv).map_err(|e| json_err("schedule", e, *sl))?;
        let (al, av) = get("accumulators")?;
        let acc: Accumulators = serde_json::from_str(av).map_err(|e| json_err("accumulators", e, *al))?;
        let chain_index: u64 = num(get("chain_index")?, "chain_index", &parse_err)?;
        let sweep_counter: u64 = num(get("sweep_counter")?, "sweep_counter", &parse_err)?;
        let stream: u64 = num(get("rng_stream")?, "rng_stream", &parse_err)?;
        let word_pos: u128 = num(get("rng_word_pos")?, "rng_word_pos", &parse_err)?;
        let (rl, rv) = get("rng_seed")?;
        let rv = rv.trim();
        if rv.len() != 64 {
            return Err(parse_err(*rl, Some("rng_seed"), "expected 64 hex digits".into()));
        }
        let mut seed = [0u8; 32];
        for (j, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&rv[2 * j..2 * j + 2], 16)
                .map_err(|_| parse_err(*rl, Some("rng_seed"), "invalid hex".into()))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        let field = |idx: usize, name: &str| -> Result<(usize, String)> {
            let (ln, line) = body
                .get(idx)
                .ok_or_else(|| parse_err(0, Some(name), "missing body line".into()))?;
            let value = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix('\t'))
                .ok_or_else(|| parse_err(*ln, Some(name), format!("expected '{name}'")))?;
            Ok((*ln, value.to_string()))
        };
        let beta: f64 = num(&field(0, "beta")?, "beta", &parse_err)?;
        let base_sign: i8 = num(&field(1, "base_sign")?, "base_sign", &parse_err)?;
        let n_kinks: usize = num(&field(2, "kinks")?, "kinks", &parse_err)?;
        if body.len() != 3 + n_kinks {
            return Err(parse_err(
                0,
                Some("kinks"),
                format!("expected {n_kinks} kink lines, found {}", body.len() - 3),
            ));
        }
        let mut kinks = Vec::with_capacity(n_kinks);
        for (ln, line) in &body[3..] {
            kinks.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(*ln, Some("kinks"), format!("cannot parse '{line}'")))?,
            );
        }
        let worldline = Worldline { beta, base_sign, kinks };
        worldline
            .validate()
            .map_err(|e| parse_err(0, Some("kinks"), e.to_string()))?;
        if beta != params.beta {
            return Err(parse_err(0, Some("beta"), "worldline beta differs from params".into()));
        }
        Ok(Self {
            params,
            schedule,
            chain_index,
            worldline,
            sweep_counter,
            acc,
            rng,
            scratch: ClusterScratch::default(),
        })
    }

    /// Errors unless the checkpointed run was configured identically.
    pub fn ensure_matches(&self, params: &ModelParams, schedule: &Schedule, chain_index: u64) -> Result<()> {
        let mut diff = Vec::new();
        let (a, b) = (serde_json::to_value(self.params)?, serde_json::to_value(params)?);
        let (c, d) = (serde_json::to_value(self.schedule)?, serde_json::to_value(schedule)?);
        for (mine, theirs) in [(&a, &b), (&c, &d)] {
            if let (Some(m), Some(t)) = (mine.as_object(), theirs.as_object()) {
                for (k, v) in m {
                    if t.get(k) != Some(v) {
                        diff.push(format!("{k}: checkpoint {v} vs requested {}", t.get(k).unwrap_or(&serde_json::Value::Null)));
                    }
                }
            }
        }
        if self.chain_index != chain_index {
            diff.push(format!("chain_index: checkpoint {} vs requested {chain_index}", self.chain_index));
        }
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::CheckpointMismatch(diff.join("; ")))
        }
    }
}

/// Observables estimated from one or more chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEstimates {
    pub m: MCEstimate,
    pub m2: MCEstimate,
    pub sigma_x: MCEstimate,
    pub hq: MCEstimate,
    pub delta_eff: DerivedEstimate,
    pub n_chains: usize,
}

/// Folds the accumulators of several chains (in the given order) into
/// estimates. The chains must share parameters and schedule.
pub fn estimate(states: &[ChainState]) -> Result<ChainEstimates> {
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidParams("no chains to estimate from".into()))?;
    let params = first.params;
    let schedule = first.schedule;
    let mut bins: Vec<[f64; 3]> = Vec::new();
    let mut ac = [AutoCorr::new(MAX_LAG), AutoCorr::new(MAX_LAG), AutoCorr::new(MAX_LAG)];
    for s in states {
        if s.params != params || s.schedule != schedule {
            return Err(Error::InvalidParams("chains with differing configuration".into()));
        }
        bins.extend_from_slice(&s.acc.bins.bins);
        for (a, b) in ac.iter_mut().zip(&s.acc.autocorr) {
            a.merge(b);
        }
    }
    if bins.len() < 2 {
        return Err(Error::InvalidParams("fewer than two completed bins".into()));
    }
    let n_samples = bins.len() as u64 * schedule.bin_len;
    let make = |k: usize| {
        let (mean, err) = jackknife(&bins, |b| b[k]);
        let (tau, window_hit) = ac[k].tau_int();
        let mut notes = Vec::new();
        if (schedule.bin_len as f64) < 20.0 * tau {
            notes.push(format!("bin_len {} < 20 tau_int = {:.1}", schedule.bin_len, 20.0 * tau));
        }
        if (schedule.n_therm as f64) < 50.0 * tau {
            notes.push(format!("n_therm {} < 50 tau_int = {:.1}", schedule.n_therm, 50.0 * tau));
        }
        if window_hit {
            notes.push(format!("autocorrelation window reached {MAX_LAG} lags"));
        }
        MCEstimate {
            mean,
            std_error: err,
            tau_int: tau,
            n_samples,
            n_therm: schedule.n_therm,
            bin_len: schedule.bin_len,
            warning: if notes.is_empty() { None } else { Some(notes.join("; ")) },
        }
    };
    let m = make(0);
    let m2 = make(1);
    let sigma_x = make(2);
    let hq = sigma_x.scaled(-0.5 * params.delta);

    let delta_eff = if params.delta == 0.0 {
        DerivedEstimate::Undefined { reason: "delta = 0".into() }
    } else if m2.mean <= 3.0 * m2.std_error {
        DerivedEstimate::Undefined {
            reason: format!("M² = {} ± {} is consistent with zero", m2.mean, m2.std_error),
        }
    } else {
        let (delta, beta) = (params.delta, params.beta);
        let f = |b: &[f64; 3]| delta * ((2.0 * b[2] / (beta * delta)) / b[1]).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        rng.set_stream(u64::MAX);
        let (mean, err) = bootstrap(&bins, f, BOOTSTRAP_RESAMPLES, &mut rng);
        let tau = m2.tau_int.max(sigma_x.tau_int);
        let warning = match (&m2.warning, &sigma_x.warning) {
            (None, None) => None,
            (a, b) => Some(a.iter().chain(b.iter()).cloned().collect::<Vec<_>>().join("; ")),
        };
        DerivedEstimate::Defined(MCEstimate { mean, std_error: err, tau_int: tau, warning, ..m2.clone() })
    };

    Ok(ChainEstimates { m, m2, sigma_x, hq, delta_eff, n_chains: states.len() })
}

/// Runs a single chain (index 0) to completion.
pub fn run_chain(params: &ModelParams, table: &KernelTable, schedule: &Schedule) -> Result<ChainEstimates> {
    let mut state = ChainState::new(params, schedule, 0)?;
    state.advance(table, None)?;
    estimate(std::slice::from_ref(&state))
}

/// Runs `n_chains` independent chains in parallel and folds them in index
/// order. The result does not depend on the thread count.
pub fn run_chains(
    params: &ModelParams,
    table: &KernelTable,
    schedule: &Schedule,
    n_chains: u64,
) -> Result<ChainEstimates> {
    let states: Result<Vec<ChainState>> = (0..n_chains)
        .into_par_iter()
        .map(|i| {
            let mut s = ChainState::new(params, schedule, i)?;
            s.advance(table, None)?;
            Ok(s)
        })
        .collect();
    estimate(&states?)
}

/// Draws a random worldline for tests and benchmarks: `n_kinks` (rounded
/// down to even) uniform kink times.
pub fn random_worldline<R: Rng + ?Sized>(beta: f64, n_kinks: usize, rng: &mut R) -> Worldline {
    let mut kinks: Vec<f64> = (0..n_kinks & !1).map(|_| rng.gen::<f64>() * beta).collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    if kinks.len() % 2 == 1 {
        kinks.pop();
    }
    Worldline { beta, base_sign: 1, kinks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{GridSpec, SpectralDensity};

    fn table(params: &ModelParams) -> KernelTable {
        let sd = SpectralDensity::structured(params);
        KernelTable::build(&sd, params.beta, &GridSpec { n_points: 256, ..GridSpec::default() }).unwrap()
    }

    fn schedule(update: UpdateKind) -> Schedule {
        Schedule { n_therm: 200, n_sweeps: 2000, bin_len: 100, seed: 11, update }
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        for update in [UpdateKind::Cluster, UpdateKind::Metropolis] {
            let p = ModelParams::reference(0.6, 8.0);
            let t = table(&p);
            let sch = schedule(update);
            let mut straight = ChainState::new(&p, &sch, 3).unwrap();
            straight.advance(&t, None).unwrap();

            let mut first = ChainState::new(&p, &sch, 3).unwrap();
            first.advance(&t, Some(777)).unwrap();
            let mut buf = Vec::new();
            first.write_checkpoint(&mut buf).unwrap();
            let mut resumed = ChainState::read_checkpoint(&buf[..], "mem").unwrap();
            resumed.ensure_matches(&p, &sch, 3).unwrap();
            resumed.advance(&t, None).unwrap();

            assert_eq!(resumed.worldline, straight.worldline);
            assert_eq!(resumed.acc, straight.acc);
            assert_eq!(estimate(&[resumed]).unwrap(), estimate(&[straight]).unwrap());
        }
    }

    #[test]
    fn mismatched_resume_is_refused() {
        let p = ModelParams::reference(0.6, 8.0);
        let sch = schedule(UpdateKind::Cluster);
        let s = ChainState::new(&p, &sch, 0).unwrap();
        let other = ModelParams { g: 0.7, ..p };
        match s.ensure_matches(&other, &sch, 0) {
            Err(Error::CheckpointMismatch(d)) => assert!(d.contains("g:"), "{d}"),
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn corrupted_checkpoint_reports_line() {
        let p = ModelParams::reference(0.6, 8.0);
        let s = ChainState::new(&p, &schedule(UpdateKind::Cluster), 0).unwrap();
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("# sweep_counter = 0", "# sweep_counter = x");
        match ChainState::read_checkpoint(text.as_bytes(), "ck") {
            Err(Error::Parse { line, key, .. }) => {
                assert_eq!(line, 5);
                assert_eq!(key.as_deref(), Some("sweep_counter"));
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn parallel_merge_is_deterministic() {
        let p = ModelParams::reference(0.5, 6.0);
        let t = table(&p);
        let sch = schedule(UpdateKind::Cluster);
        let a = run_chains(&p, &t, &sch, 3).unwrap();
        let b = run_chains(&p, &t, &sch, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_chains, 3);
        assert_eq!(a.hq.mean, -0.5 * a.sigma_x.mean);
    }

    #[test]
    fn zero_gap_has_unit_m2_and_undefined_gap() {
        let mut p = ModelParams::reference(0.5, 6.0);
        p.delta = 0.0;
        let r = run_chain(&p, &table(&p), &schedule(UpdateKind::Cluster)).unwrap();
        assert_eq!(r.m2.mean, 1.0);
        assert!(matches!(r.delta_eff, DerivedEstimate::Undefined { .. }));
    }

    #[test]
    fn table_beta_mismatch_is_domain_error() {
        let p = ModelParams::reference(0.5, 6.0);
        let t = table(&ModelParams::reference(0.5, 7.0));
        let mut s = ChainState::new(&p, &schedule(UpdateKind::Cluster), 0).unwrap();
        assert!(matches!(s.advance(&t, Some(1)), Err(Error::Domain(_))));
    }
}
