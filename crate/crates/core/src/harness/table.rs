use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wlmc::{ChainEstimates, DerivedEstimate};

/// Column order of the results CSV.
pub const COLUMNS: [&str; 18] = [
    "g",
    "beta",
    "alpha_eff",
    "m2",
    "m2_err",
    "m2_tau",
    "sigma_x",
    "sigma_x_err",
    "sigma_x_tau",
    "hq",
    "hq_err",
    "delta_eff",
    "delta_eff_err",
    "m",
    "m_err",
    "n_samples",
    "n_chains",
    "warnings",
];

/// One (coupling, β) row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub g: f64,
    pub beta: f64,
    pub alpha_eff: f64,
    pub m2: f64,
    pub m2_err: f64,
    pub m2_tau: f64,
    pub sigma_x: f64,
    pub sigma_x_err: f64,
    pub sigma_x_tau: f64,
    pub hq: f64,
    pub hq_err: f64,
    /// NaN when the estimate is undefined.
    pub delta_eff: f64,
    pub delta_eff_err: f64,
    pub m: f64,
    pub m_err: f64,
    pub n_samples: u64,
    pub n_chains: u64,
    /// Number of estimates that carry a reliability warning.
    pub warnings: u64,
}

impl ResultRow {
    pub fn from_estimates(g: f64, beta: f64, alpha_eff: f64, e: &ChainEstimates) -> Self {
        let (de, de_err) = match &e.delta_eff {
            DerivedEstimate::Defined(d) => (d.mean, d.std_error),
            DerivedEstimate::Undefined { .. } => (f64::NAN, f64::NAN),
        };
        let warnings = [&e.m, &e.m2, &e.sigma_x].iter().filter(|x| x.warning.is_some()).count() as u64;
        Self {
            g,
            beta,
            alpha_eff,
            m2: e.m2.mean,
            m2_err: e.m2.std_error,
            m2_tau: e.m2.tau_int,
            sigma_x: e.sigma_x.mean,
            sigma_x_err: e.sigma_x.std_error,
            sigma_x_tau: e.sigma_x.tau_int,
            hq: e.hq.mean,
            hq_err: e.hq.std_error,
            delta_eff: de,
            delta_eff_err: de_err,
            m: e.m.mean,
            m_err: e.m.std_error,
            n_samples: e.m2.n_samples,
            n_chains: e.n_chains as u64,
            warnings,
        }
    }

    fn floats(&self) -> [f64; 15] {
        [
            self.g,
            self.beta,
            self.alpha_eff,
            self.m2,
            self.m2_err,
            self.m2_tau,
            self.sigma_x,
            self.sigma_x_err,
            self.sigma_x_tau,
            self.hq,
            self.hq_err,
            self.delta_eff,
            self.delta_eff_err,
            self.m,
            self.m_err,
        ]
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in rows {
        let mut rec: Vec<String> = r.floats().iter().map(|&x| fmt_f64(x)).collect();
        rec.push(r.n_samples.to_string());
        rec.push(r.n_chains.to_string());
        rec.push(r.warnings.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R, source_name: &str) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(Error::Parse {
            source_name: source_name.into(),
            line: 1,
            key: None,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| {
            field(k).parse::<f64>().map_err(|e| Error::Parse {
                source_name: source_name.into(),
                line,
                key: Some(COLUMNS[k].into()),
                message: e.to_string(),
            })
        };
        let int = |k: usize| {
            field(k).parse::<u64>().map_err(|e| Error::Parse {
                source_name: source_name.into(),
                line,
                key: Some(COLUMNS[k].into()),
                message: e.to_string(),
            })
        };
        rows.push(ResultRow {
            g: num(0)?,
            beta: num(1)?,
            alpha_eff: num(2)?,
            m2: num(3)?,
            m2_err: num(4)?,
            m2_tau: num(5)?,
            sigma_x: num(6)?,
            sigma_x_err: num(7)?,
            sigma_x_tau: num(8)?,
            hq: num(9)?,
            hq_err: num(10)?,
            delta_eff: num(11)?,
            delta_eff_err: num(12)?,
            m: num(13)?,
            m_err: num(14)?,
            n_samples: int(15)?,
            n_chains: int(16)?,
            warnings: int(17)?,
        });
    }
    Ok(rows)
}
