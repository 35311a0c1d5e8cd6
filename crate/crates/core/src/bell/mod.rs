//! Bell scenarios: Born-rule correlation tables, correlators and marginals,
//! and the no-signalling check.
//!
//! Outcome `a` of a two-outcome measurement carries eigenvalue `(−1)^a`, so
//! outcome 0 ↔ +1 and outcome 1 ↔ −1.

mod measurement;
mod table;

pub use measurement::{ObservableSet, ProjectiveMeasurement, SettingsPair, MEASUREMENT_TOL};
pub use table::{BellScenario, CorrelationTable, Source, NORMALIZATION_TOL};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::DensityMatrix;

/// Tolerance for exact (Born-rule) tables.
pub const EXACT_NS_TOL: f64 = 1e-12;

/// P(a,b|x,y) = tr[ρ (Π_a^x ⊗ Π_b^y)].
pub fn born_table(
    rho: &DensityMatrix,
    meas_a: &ObservableSet,
    meas_b: &ObservableSet,
) -> Result<CorrelationTable> {
    if meas_a.dim() * meas_b.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "local dimensions {} x {} against a {}-dimensional state",
            meas_a.dim(),
            meas_b.dim(),
            rho.dim()
        )));
    }
    if meas_a.outcomes() != meas_b.outcomes() {
        return Err(Error::InvalidMeasurement(format!(
            "Alice has {} outcomes, Bob {}",
            meas_a.outcomes(),
            meas_b.outcomes()
        )));
    }
    let scenario = BellScenario::new(meas_a.settings(), meas_b.settings(), meas_a.outcomes())?;
    let d = scenario.outcomes;
    let pairs: Vec<(usize, usize)> = (0..scenario.settings_a)
        .flat_map(|x| (0..scenario.settings_b).map(move |y| (x, y)))
        .collect();
    let blocks: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(x, y)| {
            let ma = meas_a.measurement(x);
            let mb = meas_b.measurement(y);
            let mut cell = Vec::with_capacity(d * d);
            for a in 0..d {
                for b in 0..d {
                    let op = ma.projector(a).kron(mb.projector(b));
                    let p = rho.matrix().trace_product(&op).re;
                    cell.push(p.max(0.0));
                }
            }
            cell
        })
        .collect();
    CorrelationTable::new(scenario, blocks.concat(), Source::Exact)
}

/// Correlators and marginals of a two-outcome table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    /// `correlators[x][y]` = E(x, y) = Σ (−1)^{a+b} P(a,b|x,y).
    pub correlators: Vec<Vec<f64>>,
    /// ⟨A_x⟩, averaged over Bob's settings.
    pub marginals_a: Vec<f64>,
    /// ⟨B_y⟩, averaged over Alice's settings.
    pub marginals_b: Vec<f64>,
}

impl Statistics {
    pub fn e(&self, x: usize, y: usize) -> f64 {
        self.correlators[x][y]
    }
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn statistics(table: &CorrelationTable) -> Result<Statistics> {
    let s = table.scenario();
    if s.outcomes != 2 {
        return Err(Error::InvalidTable(format!(
            "correlators need two outcomes, table has {}",
            s.outcomes
        )));
    }
    let mut correlators = vec![vec![0.0; s.settings_b]; s.settings_a];
    let mut marginals_a = vec![0.0; s.settings_a];
    let mut marginals_b = vec![0.0; s.settings_b];
    for x in 0..s.settings_a {
        for y in 0..s.settings_b {
            for a in 0..2 {
                for b in 0..2 {
                    let p = table.p(a, b, x, y);
                    correlators[x][y] += sign(a + b) * p;
                    marginals_a[x] += sign(a) * p / s.settings_b as f64;
                    marginals_b[y] += sign(b) * p / s.settings_a as f64;
                }
            }
        }
    }
    Ok(Statistics {
        correlators,
        marginals_a,
        marginals_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoSignallingReport {
    /// max over a, x, y, y' of |Σ_b P(a,b|x,y) − Σ_b P(a,b|x,y')|.
    pub max_deviation_a: f64,
    /// max over b, y, x, x' of |Σ_a P(a,b|x,y) − Σ_a P(a,b|x',y)|.
    pub max_deviation_b: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Five-standard-error tolerance for tables with `n` samples per setting.
pub fn sampled_tolerance(n: u64) -> f64 {
    5.0 * (1.0 / n as f64).sqrt()
}

/// Tolerance appropriate for a table: exact tables use [`EXACT_NS_TOL`],
/// sampled ones five standard errors of their smallest setting count.
pub fn default_ns_tolerance(table: &CorrelationTable) -> f64 {
    match table.min_setting_total() {
        None => EXACT_NS_TOL,
        Some(n) => sampled_tolerance(n.max(1)),
    }
}

pub fn check_no_signalling(table: &CorrelationTable, tol: f64) -> NoSignallingReport {
    let s = table.scenario();
    let d = s.outcomes;
    let alice_marginal = |a: usize, x: usize, y: usize| (0..d).map(|b| table.p(a, b, x, y)).sum::<f64>();
    let bob_marginal = |b: usize, x: usize, y: usize| (0..d).map(|a| table.p(a, b, x, y)).sum::<f64>();

    let mut dev_a: f64 = 0.0;
    for x in 0..s.settings_a {
        for a in 0..d {
            let vals: Vec<f64> = (0..s.settings_b).map(|y| alice_marginal(a, x, y)).collect();
            dev_a = dev_a.max(spread(&vals));
        }
    }
    let mut dev_b: f64 = 0.0;
    for y in 0..s.settings_b {
        for b in 0..d {
            let vals: Vec<f64> = (0..s.settings_a).map(|x| bob_marginal(b, x, y)).collect();
            dev_b = dev_b.max(spread(&vals));
        }
    }
    NoSignallingReport {
        max_deviation_a: dev_a,
        max_deviation_b: dev_b,
        tol,
        pass: dev_a <= tol && dev_b <= tol,
    }
}

/// max − min, i.e. the largest pairwise absolute difference.
fn spread(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}
