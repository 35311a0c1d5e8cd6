use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::ComplexMatrix;

pub const MEASUREMENT_TOL: f64 = 1e-10;

/// Complete set of orthogonal projectors; projector `k` belongs to outcome `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveMeasurement {
    projectors: Vec<ComplexMatrix>,
}

impl ProjectiveMeasurement {
    pub fn new(projectors: Vec<ComplexMatrix>) -> Result<Self> {
        let Some(first) = projectors.first() else {
            return Err(Error::InvalidMeasurement("no projectors".into()));
        };
        let dim = first.rows();
        if projectors.iter().any(|p| p.rows() != dim || p.cols() != dim) {
            return Err(Error::InvalidMeasurement("projectors differ in shape or are not square".into()));
        }
        let mut sum = ComplexMatrix::zeros(dim, dim);
        for (k, p) in projectors.iter().enumerate() {
            if !p.is_hermitian(MEASUREMENT_TOL) {
                return Err(Error::InvalidMeasurement(format!("projector {k} is not Hermitian")));
            }
            if p.matmul(p).max_abs_diff(p) > MEASUREMENT_TOL {
                return Err(Error::InvalidMeasurement(format!("projector {k} is not idempotent")));
            }
            for (l, q) in projectors.iter().enumerate().skip(k + 1) {
                if p.matmul(q).frobenius_norm() > MEASUREMENT_TOL {
                    return Err(Error::InvalidMeasurement(format!(
                        "projectors {k} and {l} are not orthogonal"
                    )));
                }
            }
            sum = &sum + p;
        }
        if sum.max_abs_diff(&ComplexMatrix::identity(dim)) > MEASUREMENT_TOL {
            return Err(Error::InvalidMeasurement("projectors do not sum to the identity".into()));
        }
        Ok(Self { projectors })
    }

    /// Rank-one projectors onto an orthonormal basis (vector `k` is outcome `k`).
    pub fn from_basis(vectors: &[Vec<C64>]) -> Result<Self> {
        Self::new(vectors.iter().map(|v| ComplexMatrix::projector(v)).collect())
    }

    /// Two-outcome measurement of a dichotomic observable: outcome 0 ↔ +1, outcome 1 ↔ −1.
    pub fn from_observable(obs: &ComplexMatrix) -> Result<Self> {
        let id = ComplexMatrix::identity(obs.rows());
        let plus = (&id + obs).scale_real(0.5);
        let minus = (&id - obs).scale_real(0.5);
        Self::new(vec![plus, minus])
    }

    pub fn computational(dim: usize) -> Self {
        let projectors = (0..dim)
            .map(|k| {
                let mut p = ComplexMatrix::zeros(dim, dim);
                p[(k, k)] = C64::new(1.0, 0.0);
                p
            })
            .collect();
        Self { projectors }
    }

    pub fn dim(&self) -> usize {
        self.projectors[0].rows()
    }

    pub fn outcomes(&self) -> usize {
        self.projectors.len()
    }

    pub fn projector(&self, outcome: usize) -> &ComplexMatrix {
        &self.projectors[outcome]
    }

    pub fn projectors(&self) -> &[ComplexMatrix] {
        &self.projectors
    }

    /// Σ_a (−1)^a Π_a (the ±1 observable of a two-outcome measurement).
    pub fn observable(&self) -> ComplexMatrix {
        let mut obs = ComplexMatrix::zeros(self.dim(), self.dim());
        for (a, p) in self.projectors.iter().enumerate() {
            let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
            obs = &obs + &p.scale_real(sign);
        }
        obs
    }

    /// U Π U^† for every projector.
    pub fn conjugated(&self, u: &ComplexMatrix) -> Self {
        Self {
            projectors: self
                .projectors
                .iter()
                .map(|p| p.conjugate_by(u).hermitian_part())
                .collect(),
        }
    }
}

/// Measurement settings available to one party, indexed by input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    measurements: Vec<ProjectiveMeasurement>,
}

impl ObservableSet {
    pub fn new(measurements: Vec<ProjectiveMeasurement>) -> Result<Self> {
        let Some(first) = measurements.first() else {
            return Err(Error::InvalidMeasurement("no measurement settings".into()));
        };
        let (dim, outcomes) = (first.dim(), first.outcomes());
        if measurements
            .iter()
            .any(|m| m.dim() != dim || m.outcomes() != outcomes)
        {
            return Err(Error::InvalidMeasurement(
                "settings disagree on dimension or outcome count".into(),
            ));
        }
        Ok(Self { measurements })
    }

    pub fn settings(&self) -> usize {
        self.measurements.len()
    }

    pub fn dim(&self) -> usize {
        self.measurements[0].dim()
    }

    pub fn outcomes(&self) -> usize {
        self.measurements[0].outcomes()
    }

    pub fn measurement(&self, x: usize) -> &ProjectiveMeasurement {
        &self.measurements[x]
    }

    pub fn measurements(&self) -> &[ProjectiveMeasurement] {
        &self.measurements
    }

    pub fn projector_count(&self) -> usize {
        self.measurements.iter().map(|m| m.outcomes()).sum()
    }

    pub fn conjugated(&self, u: &ComplexMatrix) -> Self {
        Self {
            measurements: self.measurements.iter().map(|m| m.conjugated(u)).collect(),
        }
    }
}

/// Alice's and Bob's settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsPair {
    pub alice: ObservableSet,
    pub bob: ObservableSet,
}

impl SettingsPair {
    pub fn conjugated(&self, u_a: &ComplexMatrix, u_b: &ComplexMatrix) -> Self {
        Self {
            alice: self.alice.conjugated(u_a),
            bob: self.bob.conjugated(u_b),
        }
    }
}
