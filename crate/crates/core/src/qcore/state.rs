//! Density matrices and the pure-state families the self-tests target.
//!
//! Joint indices of a bipartite system are Alice-major: `a * d_b + b`.

use std::f64::consts::FRAC_PI_4;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::eigen::eigvalsh;
use super::matrix::{ComplexMatrix, ZERO};
use crate::error::{Error, Result};

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const EIGEN_NEG_TOL: f64 = -1e-10;
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

/// Positive semidefinite, unit-trace operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidState(format!(
                "{}x{} is not square",
                matrix.rows(),
                matrix.cols()
            )));
        }
        let herm = matrix.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (error {herm:e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let matrix = matrix.hermitian_part();
        let min_eig = eigvalsh(&matrix)?[0];
        if min_eig < EIGEN_NEG_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix known to be a state up to rounding; only the Hermitian part is kept.
    pub(crate) fn from_matrix_unchecked(matrix: ComplexMatrix) -> Self {
        Self {
            matrix: matrix.hermitian_part(),
        }
    }

    /// |ψ><ψ| for a (re)normalized ψ.
    pub fn from_pure(psi: &[C64]) -> Result<Self> {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if psi.is_empty() || !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidState("state vector has zero or non-finite norm".into()));
        }
        let normed: Vec<C64> = psi.iter().map(|z| z / norm).collect();
        Ok(Self::from_matrix_unchecked(ComplexMatrix::projector(&normed)))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64),
        }
    }

    /// ρ_A ⊗ ρ_B.
    pub fn product(a: &DensityMatrix, b: &DensityMatrix) -> Self {
        Self::from_matrix_unchecked(a.matrix.kron(&b.matrix))
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// U ρ U^†.
    pub fn evolve(&self, u: &ComplexMatrix) -> Result<Self> {
        if u.rows() != self.dim() || u.cols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "unitary {}x{} on a {}-dimensional state",
                u.rows(),
                u.cols(),
                self.dim()
            )));
        }
        Ok(Self::from_matrix_unchecked(self.matrix.conjugate_by(u)))
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        eigvalsh(&self.matrix)
    }

    /// Diagonal element ⟨k|ρ|k⟩ (real part).
    pub fn population(&self, k: usize) -> f64 {
        self.matrix[(k, k)].re
    }
}

#[derive(Serialize, Deserialize)]
struct DensityMatrixRepr {
    dim: usize,
    real: Vec<f64>,
    imag: Vec<f64>,
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let data = self.matrix.as_slice();
        DensityMatrixRepr {
            dim: self.dim(),
            real: data.iter().map(|z| z.re).collect(),
            imag: data.iter().map(|z| z.im).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = DensityMatrixRepr::deserialize(deserializer)?;
        if repr.real.len() != repr.imag.len() {
            return Err(serde::de::Error::custom("real/imag length mismatch"));
        }
        let data = repr
            .real
            .iter()
            .zip(&repr.imag)
            .map(|(&re, &im)| C64::new(re, im))
            .collect();
        let m = ComplexMatrix::from_vec(repr.dim, repr.dim, data).map_err(serde::de::Error::custom)?;
        // Keep stored values bit-exact; validation without re-symmetrizing.
        DensityMatrix::new(m.clone()).map_err(serde::de::Error::custom)?;
        Ok(DensityMatrix { matrix: m })
    }
}

/// Partial trace over every subsystem not listed in `keep`.
///
/// `dims` lists subsystem dimensions in major-to-minor order; `keep` must be
/// strictly increasing.
pub fn partial_trace_multi(
    m: &ComplexMatrix,
    dims: &[usize],
    keep: &[usize],
) -> Result<ComplexMatrix> {
    let total: usize = dims.iter().product();
    if !m.is_square() || m.rows() != total {
        return Err(Error::DimensionMismatch(format!(
            "matrix of size {} does not match subsystem dims {:?}",
            m.rows(),
            dims
        )));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&k| k >= dims.len()) {
        return Err(Error::DimensionMismatch(format!("invalid kept subsystems {keep:?}")));
    }
    let kept_dim: usize = keep.iter().map(|&k| dims[k]).product();

    // digits of each full index, major first
    let digits = |mut idx: usize| -> Vec<usize> {
        let mut out = vec![0; dims.len()];
        for (slot, &d) in out.iter_mut().zip(dims).rev() {
            *slot = idx % d;
            idx /= d;
        }
        out
    };
    let split: Vec<(usize, Vec<usize>)> = (0..total)
        .map(|i| {
            let dg = digits(i);
            let mut kept = 0;
            let mut traced = Vec::with_capacity(dims.len() - keep.len());
            for (s, &digit) in dg.iter().enumerate() {
                if keep.contains(&s) {
                    kept = kept * dims[s] + digit;
                } else {
                    traced.push(digit);
                }
            }
            (kept, traced)
        })
        .collect();

    let mut out = ComplexMatrix::zeros(kept_dim, kept_dim);
    for i in 0..total {
        for j in 0..total {
            if split[i].1 == split[j].1 {
                out[(split[i].0, split[j].0)] += m[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Reduced state of one party of a bipartite `d_a x d_b` system.
pub fn partial_trace(rho: &DensityMatrix, dims: (usize, usize), keep: Party) -> Result<DensityMatrix> {
    let (da, db) = dims;
    if da * db != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state dimension {} != {} x {}",
            rho.dim(),
            da,
            db
        )));
    }
    let keep_idx = match keep {
        Party::A => 0,
        Party::B => 1,
    };
    let m = partial_trace_multi(rho.matrix(), &[da, db], &[keep_idx])?;
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

/// ⟨ψ|ρ|ψ⟩ for a normalized ψ, clamped to [0, 1].
pub fn fidelity_to_pure(rho: &DensityMatrix, psi: &[C64]) -> Result<f64> {
    if psi.len() != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state vector of length {} against a {}-dimensional density matrix",
            psi.len(),
            rho.dim()
        )));
    }
    let rho_psi = rho.matrix().apply(psi);
    let f: C64 = psi.iter().zip(&rho_psi).map(|(a, b)| a.conj() * b).sum();
    Ok(f.re.clamp(0.0, 1.0))
}

/// Re tr(ρ²).
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.matrix().trace_product(rho.matrix()).re
}

/// Pure bipartite state Σ_i c_i |ii⟩ with nonnegative real coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtState {
    coeffs: Vec<f64>,
}

impl SchmidtState {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidState("no Schmidt coefficients".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidState("Schmidt coefficients must be finite and nonnegative".into()));
        }
        let norm: f64 = coeffs.iter().map(|c| c * c).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("Σc² = {norm} differs from 1")));
        }
        Ok(Self { coeffs })
    }

    /// Rescales to unit norm; also returns |‖c‖ − 1|.
    pub fn normalized(coeffs: Vec<f64>) -> Result<(Self, f64)> {
        if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidState("Schmidt coefficients must be finite and nonnegative".into()));
        }
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidState("Schmidt coefficients are all zero".into()));
        }
        let scaled = coeffs.iter().map(|c| c / norm).collect();
        Ok((Self { coeffs: scaled }, (norm - 1.0).abs()))
    }

    pub fn maximally_entangled(d: usize) -> Self {
        Self {
            coeffs: vec![1.0 / (d as f64).sqrt(); d],
        }
    }

    pub fn d(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Amplitudes in the joint `d²` basis.
    pub fn amplitudes(&self) -> Vec<C64> {
        let d = self.d();
        let mut psi = vec![ZERO; d * d];
        for (i, &c) in self.coeffs.iter().enumerate() {
            psi[i * d + i] = C64::new(c, 0.0);
        }
        psi
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(ComplexMatrix::projector(&self.amplitudes()))
    }
}

/// cos θ |00⟩ + sin θ |11⟩ with θ ∈ [0, π/4].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetQubitState {
    theta: f64,
}

impl TargetQubitState {
    pub fn new(theta: f64) -> Result<Self> {
        if !(0.0..=FRAC_PI_4 + 1e-15).contains(&theta) {
            return Err(Error::OutOfRange(format!("θ = {theta} outside [0, π/4]")));
        }
        Ok(Self {
            theta: theta.min(FRAC_PI_4),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn amplitudes(&self) -> Vec<C64> {
        target_amplitudes(self.theta)
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(ComplexMatrix::projector(&self.amplitudes()))
    }
}

/// cos θ |00⟩ + sin θ |11⟩ for any θ (no canonical-range check).
pub fn target_amplitudes(theta: f64) -> Vec<C64> {
    vec![
        C64::new(theta.cos(), 0.0),
        ZERO,
        ZERO,
        C64::new(theta.sin(), 0.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::matrix::ONE;
    use crate::qcore::random::random_density;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn bell() -> Vec<C64> {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        vec![s, ZERO, ZERO, s]
    }

    #[test]
    fn trace_out_product_ket() {
        let rho = DensityMatrix::from_pure(&[ONE, ZERO, ZERO, ZERO]).unwrap();
        let ra = partial_trace(&rho, (2, 2), Party::A).unwrap();
        assert!(ra.matrix().max_abs_diff(&ComplexMatrix::diagonal(&[ONE, ZERO])) < 1e-15);
    }

    #[test]
    fn trace_out_bell_is_maximally_mixed() {
        let rho = DensityMatrix::from_pure(&bell()).unwrap();
        for party in [Party::A, Party::B] {
            let r = partial_trace(&rho, (2, 2), party).unwrap();
            assert!(r.matrix().max_abs_diff(DensityMatrix::maximally_mixed(2).matrix()) < 1e-15);
        }
    }

    /// Index-contraction oracle: (ρ_A)_{ij} = Σ_k ρ_{(i,k),(j,k)}.
    fn contract_b(m: &ComplexMatrix, da: usize, db: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(da, da, |i, j| (0..db).map(|k| m[(i * db + k, j * db + k)]).sum())
    }

    fn contract_a(m: &ComplexMatrix, da: usize, db: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(db, db, |i, j| (0..da).map(|k| m[(k * db + i, k * db + j)]).sum())
    }

    #[test]
    fn partial_trace_matches_contraction_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for (da, db) in [(2, 2), (2, 3), (3, 4), (4, 4)] {
            let ra = random_density(da, &mut rng);
            let rb = random_density(db, &mut rng);
            let joint = DensityMatrix::product(&ra, &rb);
            let got_a = partial_trace(&joint, (da, db), Party::A).unwrap();
            let got_b = partial_trace(&joint, (da, db), Party::B).unwrap();
            assert!(got_a.matrix().max_abs_diff(&contract_b(joint.matrix(), da, db)) < 1e-14);
            assert!(got_b.matrix().max_abs_diff(&contract_a(joint.matrix(), da, db)) < 1e-14);
            assert!(got_a.matrix().max_abs_diff(ra.matrix()) < 1e-12);
            assert!(got_b.matrix().max_abs_diff(rb.matrix()) < 1e-12);
        }
    }

    #[test]
    fn partial_trace_dimension_mismatch() {
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(matches!(
            partial_trace(&rho, (2, 3), Party::A),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn partial_trace_middle_subsystems() {
        // Keep the two outer factors of a 2x3x2 product.
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = random_density(2, &mut rng);
        let b = random_density(3, &mut rng);
        let c = random_density(2, &mut rng);
        let abc = a.matrix().kron(b.matrix()).kron(c.matrix());
        let ac = partial_trace_multi(&abc, &[2, 3, 2], &[0, 2]).unwrap();
        assert!(ac.max_abs_diff(&a.matrix().kron(c.matrix())) < 1e-13);
    }

    #[test]
    fn fidelity_cases() {
        let psi = bell();
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        assert!((fidelity_to_pure(&rho, &psi).unwrap() - 1.0).abs() < 1e-15);
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        let orth = vec![s, ZERO, ZERO, -s];
        assert!(fidelity_to_pure(&rho, &orth).unwrap().abs() < 1e-15);
        // v F(ψ) + (1 − v)/4 = 0.9 + 0.025
        let mixed = &ComplexMatrix::projector(&psi).scale_real(0.9)
            + &ComplexMatrix::identity(4).scale_real(0.1 / 4.0);
        let werner = DensityMatrix::new(mixed).unwrap();
        assert!((fidelity_to_pure(&werner, &psi).unwrap() - 0.925).abs() < 1e-14);
        assert!(fidelity_to_pure(&werner, &[ONE, ZERO]).is_err());
    }

    #[test]
    fn purity_cases() {
        assert!((purity(&DensityMatrix::from_pure(&bell()).unwrap()) - 1.0).abs() < 1e-15);
        assert!((purity(&DensityMatrix::maximally_mixed(4)) - 0.25).abs() < 1e-15);
        let werner = &ComplexMatrix::projector(&bell()).scale_real(0.9)
            + &ComplexMatrix::identity(4).scale_real(0.1 / 4.0);
        let werner = DensityMatrix::new(werner).unwrap();
        // v² + v(1−v)/2 + (1−v)²/4
        assert!((purity(&werner) - 0.8575).abs() < 1e-14);
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let not_unit = ComplexMatrix::identity(2);
        assert!(DensityMatrix::new(not_unit).is_err());
        let negative = ComplexMatrix::diagonal(&[C64::new(1.5, 0.0), C64::new(-0.5, 0.0)]);
        assert!(DensityMatrix::new(negative).is_err());
        let mut nonherm = ComplexMatrix::identity(2).scale_real(0.5);
        nonherm[(0, 1)] = C64::new(0.1, 0.0);
        assert!(DensityMatrix::new(nonherm).is_err());
    }

    #[test]
    fn schmidt_and_target_states() {
        assert!(SchmidtState::new(vec![0.8, 0.4, 0.4, 0.2]).is_ok());
        assert!(SchmidtState::new(vec![0.8, 0.4]).is_err());
        assert!(SchmidtState::new(vec![-1.0]).is_err());
        let (s, dev) = SchmidtState::normalized(vec![2.0, 0.0]).unwrap();
        assert_eq!(s.coeffs(), &[1.0, 0.0]);
        assert!((dev - 1.0).abs() < 1e-15);
        assert!(TargetQubitState::new(1.0).is_err());
        let t = TargetQubitState::new(std::f64::consts::FRAC_PI_8).unwrap();
        let amps = t.amplitudes();
        let n: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn density_matrix_json_is_row_major_real_imag() {
        let rho = TargetQubitState::new(0.3).unwrap().density();
        let json = serde_json::to_string(&rho).unwrap();
        assert!(json.contains("\"real\""));
        let back: DensityMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rho);
    }
}
