//! Tomography oracle: an informationally complete rank-one projector set per
//! party, linear inversion with PSD projection, and Schmidt readout.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{eigh, trace_distance, ComplexMatrix, DensityMatrix};

/// d² rank-one projectors: |i⟩, (|i⟩ + |j⟩)/√2 and (|i⟩ + i|j⟩)/√2 for i < j.
#[derive(Debug, Clone, PartialEq)]
pub struct TomographyBasis {
    d: usize,
    projectors: Vec<ComplexMatrix>,
    /// Dual frame: tr(D_k P_l) = δ_kl.
    duals: Vec<ComplexMatrix>,
    gram_condition: f64,
}

pub fn tomo_projectors(d: usize) -> Result<TomographyBasis> {
    if !(2..=4).contains(&d) {
        return Err(Error::OutOfRange(format!("tomography dimension {d} not in {{2, 3, 4}}")));
    }
    let e = |k: usize| {
        let mut v = vec![C64::new(0.0, 0.0); d];
        v[k] = C64::new(1.0, 0.0);
        v
    };
    let mut vectors: Vec<Vec<C64>> = (0..d).map(e).collect();
    for phase in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
        for i in 0..d {
            for j in i + 1..d {
                let mut v = vec![C64::new(0.0, 0.0); d];
                v[i] = C64::new(FRAC_1_SQRT_2, 0.0);
                v[j] = phase * FRAC_1_SQRT_2;
                vectors.push(v);
            }
        }
    }
    let projectors: Vec<ComplexMatrix> = vectors.iter().map(|v| ComplexMatrix::projector(v)).collect();
    let n = projectors.len();
    let gram = ComplexMatrix::from_fn(n, n, |k, l| C64::new(projectors[k].trace_product(&projectors[l]).re, 0.0));
    let eig = eigh(&gram)?;
    let (lo, hi) = (eig.values[0], eig.values[n - 1]);
    if !(lo > 1e-12 * hi) {
        return Err(Error::Numerical(format!("tomography Gram matrix is singular (λ_min = {lo:e})")));
    }
    let inv = eig.reconstruct_with(|x| 1.0 / x);
    let duals = (0..n)
        .map(|l| {
            let mut dual = ComplexMatrix::zeros(d, d);
            for (k, p) in projectors.iter().enumerate() {
                dual = &dual + &p.scale_real(inv[(k, l)].re);
            }
            dual
        })
        .collect();
    Ok(TomographyBasis {
        d,
        projectors,
        duals,
        gram_condition: hi / lo,
    })
}

impl TomographyBasis {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn projectors(&self) -> &[ComplexMatrix] {
        &self.projectors
    }

    pub fn gram_condition(&self) -> f64 {
        self.gram_condition
    }

    /// Joint settings per run: (d²)².
    pub fn joint_measurement_count(&self) -> usize {
        self.projectors.len() * self.projectors.len()
    }
}

/// Click probabilities of every joint projector P_k ⊗ P_l, row-major in (k, l).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyData {
    pub d: usize,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
}

pub fn tomography_probabilities(rho: &DensityMatrix, basis: &TomographyBasis) -> Result<TomographyData> {
    let d = basis.d;
    if rho.dim() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "{}-dimensional state for d = {d} tomography",
            rho.dim()
        )));
    }
    let n = basis.projectors.len();
    let probs = (0..n * n)
        .into_par_iter()
        .map(|kl| {
            let joint = basis.projectors[kl / n].kron(&basis.projectors[kl % n]);
            rho.matrix().trace_product(&joint).re.clamp(0.0, 1.0)
        })
        .collect();
    Ok(TomographyData {
        d,
        probs,
        counts: None,
        trials: None,
    })
}

/// Each joint projector clicks Binomial(n, p) times; projector pair m uses
/// ChaCha20 stream m under `seed`.
pub fn sample_tomography(data: &TomographyData, n: u64, seed: u64) -> Result<TomographyData> {
    if n == 0 {
        return Err(Error::OutOfRange("sample count must be positive".into()));
    }
    let counts: Vec<u64> = data
        .probs
        .par_iter()
        .enumerate()
        .map(|(m, &p)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            Binomial::new(n, p.clamp(0.0, 1.0))
                .map(|b| b.sample(&mut rng))
                .map_err(|e| Error::Numerical(format!("binomial({n}, {p}): {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(TomographyData {
        d: data.d,
        probs: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        counts: Some(counts),
        trials: Some(n),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyResult {
    pub rho: DensityMatrix,
    /// Linear-inversion estimate before projection.
    pub linear: ComplexMatrix,
    /// Frobenius distance moved by the PSD projection.
    pub projection_distance: f64,
    pub gram_condition: f64,
}

/// Linear inversion followed by the Frobenius-nearest unit-trace PSD matrix.
pub fn reconstruct_density(data: &TomographyData) -> Result<TomographyResult> {
    let basis = tomo_projectors(data.d)?;
    reconstruct_with_basis(data, &basis)
}

pub fn reconstruct_with_basis(data: &TomographyData, basis: &TomographyBasis) -> Result<TomographyResult> {
    let n = basis.projectors.len();
    if data.d != basis.d || data.probs.len() != n * n {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for d = {} tomography (expected {})",
            data.probs.len(),
            basis.d,
            n * n
        )));
    }
    if data.probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("non-finite tomography probability".into()));
    }
    // ρ = Σ_k D_k ⊗ (Σ_l p_kl D_l)
    let d = basis.d;
    let mut linear = ComplexMatrix::zeros(d * d, d * d);
    for k in 0..n {
        let mut inner = ComplexMatrix::zeros(d, d);
        for l in 0..n {
            inner = &inner + &basis.duals[l].scale_real(data.probs[k * n + l]);
        }
        linear = &linear + &basis.duals[k].kron(&inner);
    }
    let linear = linear.hermitian_part();
    let eig = eigh(&linear)?;
    let projected = project_to_simplex(&eig.values);
    let mut rho = ComplexMatrix::zeros(d * d, d * d);
    for (k, &w) in projected.iter().enumerate() {
        if w > 0.0 {
            rho = &rho + &ComplexMatrix::projector(&eig.vector(k)).scale_real(w);
        }
    }
    let projection_distance = (&rho - &linear).frobenius_norm();
    Ok(TomographyResult {
        rho: DensityMatrix::from_matrix_unchecked(rho),
        linear,
        projection_distance,
        gram_condition: basis.gram_condition,
    })
}

/// Euclidean projection onto {x ≥ 0, Σ x = 1}.
fn project_to_simplex(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            shift = t;
        }
    }
    values.iter().map(|&v| (v - shift).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtReadout {
    /// arctan √(ρ_{11,11}/ρ_{00,00}); only for d = 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// ρ_{00,00} = 0, so θ = π/2 lies outside the canonical range.
    pub theta_flag: bool,
    /// √ρ_{ii,ii}, renormalized over the |ii⟩ sector.
    pub coeffs: Vec<f64>,
    pub raw_coeffs: Vec<f64>,
}

pub fn schmidt_readout(rho: &DensityMatrix, d: usize) -> Result<SchmidtReadout> {
    if rho.dim() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "{}-dimensional state for d = {d} readout",
            rho.dim()
        )));
    }
    let pops: Vec<f64> = (0..d).map(|i| rho.population(i * d + i).max(0.0)).collect();
    let raw: Vec<f64> = pops.iter().map(|p| p.sqrt()).collect();
    let sector: f64 = pops.iter().sum();
    if !(sector > 0.0) {
        return Err(Error::Numerical("state has no weight on the |ii⟩ sector".into()));
    }
    let coeffs = pops.iter().map(|p| (p / sector).sqrt()).collect();
    let (theta, flag) = if d == 2 {
        if pops[0] == 0.0 {
            (Some(FRAC_PI_2), true)
        } else {
            (Some((pops[1] / pops[0]).sqrt().atan()), false)
        }
    } else {
        (None, false)
    };
    Ok(SchmidtReadout {
        theta,
        theta_flag: flag,
        coeffs,
        raw_coeffs: raw,
    })
}

/// Trace distance helper for reports.
pub fn tomography_error(result: &TomographyResult, truth: &DensityMatrix) -> Result<f64> {
    trace_distance(result.rho.matrix(), truth.matrix())
}
