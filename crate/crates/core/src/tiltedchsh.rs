//! Two-qubit self-testing with the tilted-CHSH family
//! `β(α) = α A0 + A0(B0 + B1) + A1(B0 − B1)`, 0 ≤ α ≤ 2.
//!
//! The quantum maximum is `b(α) = √(8 + 2α²)`, reached uniquely (up to local
//! isometries) by `cos θ |00⟩ + sin θ |11⟩` with `tan 2θ = √((4 − α²)/(2α²))`.
//! Extraction picks α₀ minimizing the gap `b(α) − ⟨β(α)⟩` and maps it to θ.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::{statistics, BellScenario, CorrelationTable, ObservableSet, ProjectiveMeasurement, SettingsPair, Source};
use crate::error::{Error, Result};
use crate::qcore::matrix::{hadamard, pauli_x, pauli_z};
use crate::qcore::random::random_qubit_observable;
use crate::qcore::{fidelity_to_pure, hermitian_sign, partial_trace_multi, target_amplitudes, ComplexMatrix, DensityMatrix};

/// Convergence threshold on the see-saw value between iterations.
pub const SEESAW_TOL: f64 = 1e-12;
pub const SEESAW_MAX_ITERS: usize = 10_000;
pub const DEFAULT_RESTARTS: usize = 20;
const SIGN_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltedBellFunctional {
    alpha: f64,
}

impl TiltedBellFunctional {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&alpha) {
            return Err(Error::OutOfRange(format!("α = {alpha} outside [0, 2]")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// b(α) = √(8 + 2α²).
    pub fn quantum_max(&self) -> f64 {
        quantum_bound(self.alpha)
    }

    /// 2 + α.
    pub fn classical_max(&self) -> f64 {
        2.0 + self.alpha
    }

    pub fn evaluate(&self, table: &CorrelationTable) -> Result<f64> {
        beta_value(table, self.alpha)
    }
}

pub fn quantum_bound(alpha: f64) -> f64 {
    (8.0 + 2.0 * alpha * alpha).sqrt()
}

fn require_chsh(table: &CorrelationTable) -> Result<()> {
    if table.scenario() != BellScenario::chsh() {
        let s = table.scenario();
        return Err(Error::InvalidTable(format!(
            "expected a [{{2,2}},{{2,2}}] table, got [{{{},{}}},{{{},{}}}]",
            s.settings_a, s.outcomes, s.settings_b, s.outcomes
        )));
    }
    Ok(())
}

/// ⟨β(α)⟩ = α⟨A0⟩ + E(0,0) + E(0,1) + E(1,0) − E(1,1).
pub fn beta_value(table: &CorrelationTable, alpha: f64) -> Result<f64> {
    require_chsh(table)?;
    let st = statistics(table)?;
    Ok(alpha * st.marginals_a[0] + st.e(0, 0) + st.e(0, 1) + st.e(1, 0) - st.e(1, 1))
}

/// Best value of β(α) over the 16 deterministic local strategies.
pub fn deterministic_maximum(alpha: f64) -> Result<f64> {
    let s = BellScenario::chsh();
    let mut best = f64::NEG_INFINITY;
    for strategy in 0..16usize {
        let out_a = [strategy & 1, (strategy >> 1) & 1];
        let out_b = [(strategy >> 2) & 1, (strategy >> 3) & 1];
        let mut probs = vec![0.0; s.cell_count()];
        for x in 0..2 {
            for y in 0..2 {
                probs[s.index(x, y, out_a[x], out_b[y])] = 1.0;
            }
        }
        let table = CorrelationTable::new(s, probs, Source::Exact)?;
        best = best.max(beta_value(&table, alpha)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub alpha0: f64,
    /// b(α₀) − ⟨β(α₀)⟩; slightly negative values can occur on sampled data.
    pub gap: f64,
    pub theta: f64,
    #[serde(rename = "mean_A0")]
    pub mean_a0: f64,
    /// θ = 0: product state, tilt undefined.
    pub degenerate: bool,
}

/// θ from α via tan 2θ = √((4 − α²)/(2α²)), for α ∈ [0, 2].
pub fn theta_from_alpha(alpha: f64) -> f64 {
    let a = alpha.abs().min(2.0);
    0.5 * (4.0 - a * a).max(0.0).sqrt().atan2(std::f64::consts::SQRT_2 * a)
}

/// α for which cos θ|00⟩ + sin θ|11⟩ is the maximal violator: 2/√(1 + 2 tan² 2θ).
pub fn alpha_from_theta(theta: f64) -> f64 {
    let t = (2.0 * theta).tan();
    2.0 / (1.0 + 2.0 * t * t).sqrt()
}

fn extract(table: &CorrelationTable, signed: bool) -> Result<ExtractionResult> {
    require_chsh(table)?;
    let st = statistics(table)?;
    let m = st.marginals_a[0];
    if !m.is_finite() || m.abs() > 1.0 + 1e-12 {
        return Err(Error::OutOfRange(format!("⟨A0⟩ = {m} outside [−1, 1]")));
    }
    let m = m.clamp(-1.0, 1.0);
    let beta0 = st.e(0, 0) + st.e(0, 1) + st.e(1, 0) - st.e(1, 1);

    // stationary point of the convex gap √(8+2α²) − β0 − αm
    let stationary = 2.0 * m / (2.0 - m * m).sqrt();
    let alpha0 = if signed {
        stationary.clamp(-2.0, 2.0)
    } else {
        stationary.clamp(0.0, 2.0)
    };
    let mut theta = theta_from_alpha(alpha0);
    if alpha0 < 0.0 {
        theta = FRAC_PI_2 - theta;
    }
    let gap = quantum_bound(alpha0) - (beta0 + alpha0 * m);
    Ok(ExtractionResult {
        alpha0,
        gap,
        theta,
        mean_a0: m,
        degenerate: theta == 0.0 || theta == FRAC_PI_2,
    })
}

/// Extracts (α₀, θ) from a [{2,2},{2,2}] table, θ in the canonical range [0, π/4].
pub fn extract_theta(table: &CorrelationTable) -> Result<ExtractionResult> {
    extract(table, false)
}

/// Orientation-aware extraction: α₀ ∈ [−2, 2] and θ ∈ [0, π/2].
///
/// Negative α₀ means the state maximally violates β(−α₀), i.e. the weight
/// sits on |11⟩ rather than |00⟩. Used for qudit blocks, whose two
/// coefficients can come in either order.
pub fn extract_theta_oriented(table: &CorrelationTable) -> Result<ExtractionResult> {
    extract(table, true)
}

/// Standard error of the extracted θ for a sampled table.
///
/// The extraction reduces to cos 2θ = ⟨A0⟩, with ⟨A0⟩ pooled over Bob's two
/// settings, so SE_θ = SE(⟨A0⟩) / (2 sin 2θ). `None` for exact tables and
/// for ⟨A0⟩ = ±1.
pub fn theta_standard_error(table: &CorrelationTable) -> Result<Option<f64>> {
    require_chsh(table)?;
    if table.is_exact() {
        return Ok(None);
    }
    let mut var = 0.0;
    for y in 0..2 {
        let n = table.setting_total(0, y).unwrap_or(0) as f64;
        let m = table.p(0, 0, 0, y) + table.p(0, 1, 0, y) - table.p(1, 0, 0, y) - table.p(1, 1, 0, y);
        var += 0.25 * (1.0 - m * m).max(0.0) / n;
    }
    let m = statistics(table)?.marginals_a[0];
    let s = (1.0 - m * m).max(0.0).sqrt();
    Ok(if s > 0.0 { Some(var.sqrt() / (2.0 * s)) } else { None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSettings {
    pub settings: SettingsPair,
    pub alpha: f64,
    pub mu: f64,
    pub degenerate: bool,
}

/// Tilted observables cos μ Z ± sin μ X as two-outcome measurements.
pub fn tilted_pair(mu: f64) -> Result<(ProjectiveMeasurement, ProjectiveMeasurement)> {
    let z = pauli_z().scale_real(mu.cos());
    let x = pauli_x().scale_real(mu.sin());
    Ok((
        ProjectiveMeasurement::from_observable(&(&z + &x))?,
        ProjectiveMeasurement::from_observable(&(&z - &x))?,
    ))
}

/// Settings reaching b(α) on cos θ|00⟩ + sin θ|11⟩: A0 = Z, A1 = X,
/// B0/B1 = cos μ Z ± sin μ X with tan μ = sin 2θ.
pub fn optimal_settings(theta: f64) -> Result<OptimalSettings> {
    if !theta.is_finite() || theta > FRAC_PI_4 + 1e-15 || theta < 0.0 {
        return Err(Error::OutOfRange(format!("θ = {theta} outside [0, π/4]")));
    }
    let z = ProjectiveMeasurement::from_observable(&pauli_z())?;
    if theta == 0.0 {
        let all_z = ObservableSet::new(vec![z.clone(), z])?;
        return Ok(OptimalSettings {
            settings: SettingsPair {
                alice: all_z.clone(),
                bob: all_z,
            },
            alpha: 2.0,
            mu: 0.0,
            degenerate: true,
        });
    }
    let x = ProjectiveMeasurement::from_observable(&pauli_x())?;
    let mu = (2.0 * theta).sin().atan();
    let (b0, b1) = tilted_pair(mu)?;
    Ok(OptimalSettings {
        settings: SettingsPair {
            alice: ObservableSet::new(vec![z, x])?,
            bob: ObservableSet::new(vec![b0, b1])?,
        },
        alpha: alpha_from_theta(theta),
        mu,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeesawResult {
    pub settings: SettingsPair,
    pub value: f64,
    /// Value after each iteration of the winning restart (non-decreasing).
    pub history: Vec<f64>,
    pub restart: usize,
}

fn require_two_qubit(rho: &DensityMatrix) -> Result<()> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "two-qubit state expected, got dimension {}",
            rho.dim()
        )));
    }
    Ok(())
}

/// tr_B[ρ (I ⊗ K)].
fn alice_operator(rho: &DensityMatrix, k: &ComplexMatrix) -> Result<ComplexMatrix> {
    let op = ComplexMatrix::identity(2).kron(k);
    partial_trace_multi(&rho.matrix().matmul(&op), &[2, 2], &[0])
}

/// tr_A[ρ (K ⊗ I)].
fn bob_operator(rho: &DensityMatrix, k: &ComplexMatrix) -> Result<ComplexMatrix> {
    let op = k.kron(&ComplexMatrix::identity(2));
    partial_trace_multi(&rho.matrix().matmul(&op), &[2, 2], &[1])
}

fn functional_value(rho: &DensityMatrix, alpha: f64, obs: &[ComplexMatrix; 4]) -> f64 {
    let [a0, a1, b0, b1] = obs;
    let id = ComplexMatrix::identity(2);
    let beta = &(&a0.kron(&id).scale_real(alpha) + &a0.kron(&(b0 + b1))) + &a1.kron(&(b0 - b1));
    rho.matrix().trace_product(&beta).re
}

fn seesaw_single(rho: &DensityMatrix, alpha: f64, rng: &mut ChaCha20Rng) -> Result<([ComplexMatrix; 4], Vec<f64>)> {
    let id = ComplexMatrix::identity(2);
    let mut obs = [
        random_qubit_observable(rng),
        random_qubit_observable(rng),
        random_qubit_observable(rng),
        random_qubit_observable(rng),
    ];
    let mut prev = functional_value(rho, alpha, &obs);
    let mut history = Vec::new();
    for _ in 0..SEESAW_MAX_ITERS {
        let [_, _, b0, b1] = &obs;
        let k0 = &(&id.scale_real(alpha) + b0) + b1;
        let k1 = b0 - b1;
        let a0 = hermitian_sign(&alice_operator(rho, &k0)?, SIGN_ZERO_TOL)?;
        let a1 = hermitian_sign(&alice_operator(rho, &k1)?, SIGN_ZERO_TOL)?;
        let b0 = hermitian_sign(&bob_operator(rho, &(&a0 + &a1))?, SIGN_ZERO_TOL)?;
        let b1 = hermitian_sign(&bob_operator(rho, &(&a0 - &a1))?, SIGN_ZERO_TOL)?;
        obs = [a0, a1, b0, b1];
        let value = functional_value(rho, alpha, &obs);
        history.push(value);
        if value - prev < SEESAW_TOL {
            break;
        }
        prev = value;
    }
    Ok((obs, history))
}

/// Alternating maximization of ⟨β(α)⟩ over dichotomic observables.
///
/// Each half-step replaces one party's observables by the matrix sign of
/// their correlation operators, which is the exact maximizer with the other
/// party fixed. Restart `r` draws its initial observables from ChaCha20
/// stream `r` of `seed`; the first restart reaching the best value wins.
pub fn seesaw_maximize(rho: &DensityMatrix, alpha: f64, restarts: usize, seed: u64) -> Result<SeesawResult> {
    require_two_qubit(rho)?;
    let runs: Vec<Result<([ComplexMatrix; 4], Vec<f64>)>> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            seesaw_single(rho, alpha, &mut rng)
        })
        .collect();
    let mut best: Option<(usize, [ComplexMatrix; 4], Vec<f64>)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let (obs, history) = run?;
        let value = *history.last().unwrap_or(&f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((_, _, h)) => value > *h.last().unwrap_or(&f64::NEG_INFINITY),
        };
        if better {
            best = Some((r, obs, history));
        }
    }
    let (restart, obs, history) = best.expect("at least one restart");
    let [a0, a1, b0, b1] = &obs;
    let settings = SettingsPair {
        alice: ObservableSet::new(vec![
            ProjectiveMeasurement::from_observable(a0)?,
            ProjectiveMeasurement::from_observable(a1)?,
        ])?,
        bob: ObservableSet::new(vec![
            ProjectiveMeasurement::from_observable(b0)?,
            ProjectiveMeasurement::from_observable(b1)?,
        ])?,
    };
    Ok(SeesawResult {
        settings,
        value: *history.last().unwrap_or(&f64::NEG_INFINITY),
        history,
        restart,
    })
}

/// Ancilla-plus-system isometry of one SWAP gadget: H, controlled-Z, H,
/// controlled-X on an ancilla prepared in |0⟩. Output ordering is ancilla-major.
fn gadget_isometry(z: &ComplexMatrix, x: &ComplexMatrix) -> ComplexMatrix {
    let d = z.rows();
    let id = ComplexMatrix::identity(d);
    let p0 = ComplexMatrix::diagonal(&[num_complex::Complex64::new(1.0, 0.0), num_complex::Complex64::new(0.0, 0.0)]);
    let p1 = &ComplexMatrix::identity(2) - &p0;
    let h = hadamard().kron(&id);
    let cz = &p0.kron(&id) + &p1.kron(z);
    let cx = &p0.kron(&id) + &p1.kron(x);
    let u = cx.matmul(&h).matmul(&cz).matmul(&h);
    // columns with the ancilla in |0⟩
    ComplexMatrix::from_fn(2 * d, d, |r, c| u[(r, c)])
}

/// Ancilla-pair state produced by the two SWAP gadgets.
///
/// Alice uses Ẑ = A0, X̂ = A1; Bob uses Ẑ = (B0 + B1)/(2 cos μ) and
/// X̂ = (B0 − B1)/(2 sin μ) with tan μ = sin 2θ. All four operators are
/// replaced by their unitary polar factors (zero singular values → 1).
pub fn swap_ancilla_state(rho: &DensityMatrix, settings: &SettingsPair, theta: f64) -> Result<DensityMatrix> {
    if settings.alice.settings() < 2 || settings.bob.settings() < 2 {
        return Err(Error::InvalidMeasurement("SWAP gadget needs two settings per party".into()));
    }
    if settings.alice.outcomes() != 2 || settings.bob.outcomes() != 2 {
        return Err(Error::InvalidMeasurement("SWAP gadget needs two-outcome settings".into()));
    }
    let (da, db) = (settings.alice.dim(), settings.bob.dim());
    if da * db != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "settings act on {da} x {db}, state has dimension {}",
            rho.dim()
        )));
    }
    let mu = (2.0 * theta).sin().atan();
    let (cos_mu, sin_mu) = (mu.cos(), mu.sin());
    if !theta.is_finite() || cos_mu.abs() < 1e-12 || sin_mu.abs() < 1e-12 {
        return Err(Error::DegenerateTilt(format!("μ = {mu} for θ = {theta}")));
    }
    let a0 = settings.alice.measurement(0).observable();
    let a1 = settings.alice.measurement(1).observable();
    let b0 = settings.bob.measurement(0).observable();
    let b1 = settings.bob.measurement(1).observable();
    let z_a = hermitian_sign(&a0, SIGN_ZERO_TOL)?;
    let x_a = hermitian_sign(&a1, SIGN_ZERO_TOL)?;
    let z_b = hermitian_sign(&(&b0 + &b1).scale_real(0.5 / cos_mu), SIGN_ZERO_TOL)?;
    let x_b = hermitian_sign(&(&b0 - &b1).scale_real(0.5 / sin_mu), SIGN_ZERO_TOL)?;

    let w = gadget_isometry(&z_a, &x_a).kron(&gadget_isometry(&z_b, &x_b));
    let out = w.matmul(rho.matrix()).matmul(&w.adjoint());
    let anc = partial_trace_multi(&out, &[2, da, 2, db], &[0, 2])?;
    Ok(DensityMatrix::from_matrix_unchecked(anc))
}

/// F_S = ⟨φ_target(θ)| ρ_anc |φ_target(θ)⟩ after the SWAP gadgets.
pub fn swap_fidelity(rho: &DensityMatrix, settings: &SettingsPair, theta: f64) -> Result<f64> {
    let anc = swap_ancilla_state(rho, settings, theta)?;
    fidelity_to_pure(&anc, &target_amplitudes(theta))
}

/// |⟨φ_target(θ₁)|φ_target(θ₂)⟩|² = cos²(θ₁ − θ₂).
pub fn target_overlap(theta1: f64, theta2: f64) -> f64 {
    (theta1 - theta2).cos().powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bell::born_table;
    use crate::qcore::TargetQubitState;
    use std::f64::consts::{FRAC_PI_8, SQRT_2};

    fn ideal_table(theta: f64) -> CorrelationTable {
        let rho = TargetQubitState::new(theta).unwrap().density();
        let s = optimal_settings(theta).unwrap().settings;
        born_table(&rho, &s.alice, &s.bob).unwrap()
    }

    #[test]
    fn functional_bounds() {
        assert!(TiltedBellFunctional::new(2.5).is_err());
        let f = TiltedBellFunctional::new(1.0).unwrap();
        assert!((f.quantum_max() - 10f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.classical_max(), 3.0);
    }

    #[test]
    fn chsh_maximum_at_alpha_zero() {
        let v = beta_value(&ideal_table(FRAC_PI_4), 0.0).unwrap();
        assert!((v - 2.0 * SQRT_2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn product_state_reaches_four_at_alpha_two() {
        // A0 = B0 = B1 = Z, A1 = X on |00⟩.
        let rho = TargetQubitState::new(0.0).unwrap().density();
        let z = ProjectiveMeasurement::from_observable(&pauli_z()).unwrap();
        let x = ProjectiveMeasurement::from_observable(&pauli_x()).unwrap();
        let alice = ObservableSet::new(vec![z.clone(), x]).unwrap();
        let bob = ObservableSet::new(vec![z.clone(), z]).unwrap();
        let t = born_table(&rho, &alice, &bob).unwrap();
        assert!((beta_value(&t, 2.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_bound_is_two_plus_alpha() {
        // independent enumeration over ±1 assignments
        for alpha in [0.0, 0.5, 1.0, 1.5, 2.0] {
            let mut oracle = f64::NEG_INFINITY;
            for a0 in [-1.0, 1.0] {
                for a1 in [-1.0, 1.0] {
                    for b0 in [-1.0, 1.0] {
                        for b1 in [-1.0f64, 1.0] {
                            oracle = oracle.max(alpha * a0 + a0 * (b0 + b1) + a1 * (b0 - b1));
                        }
                    }
                }
            }
            assert_eq!(oracle, 2.0 + alpha);
            assert_eq!(deterministic_maximum(alpha).unwrap(), 2.0 + alpha);
        }
    }

    #[test]
    fn beta_is_affine_in_alpha() {
        let t = ideal_table(0.3);
        let st = statistics(&t).unwrap();
        let b0 = beta_value(&t, 0.0).unwrap();
        for alpha in [0.25, 1.0, 1.75] {
            let b = beta_value(&t, alpha).unwrap();
            assert!((b - (b0 + alpha * st.marginals_a[0])).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_rejects_wrong_shape() {
        let s = BellScenario::qudit(2);
        let t = CorrelationTable::new(s, vec![0.25; s.cell_count()], Source::Exact).unwrap();
        assert!(beta_value(&t, 0.0).is_err());
        assert!(extract_theta(&t).is_err());
    }

    #[test]
    fn extraction_symmetric_and_product_limits() {
        let r = extract_theta(&ideal_table(FRAC_PI_4)).unwrap();
        assert!(r.alpha0.abs() < 1e-12);
        assert!((r.theta - FRAC_PI_4).abs() < 1e-12);
        assert!(!r.degenerate);

        let r = extract_theta(&ideal_table(0.0)).unwrap();
        assert_eq!(r.alpha0, 2.0);
        assert_eq!(r.theta, 0.0);
        assert!(r.degenerate);
        assert!(r.gap.abs() < 1e-12);
    }

    #[test]
    fn extraction_pi_over_eight_with_grid_oracle() {
        let t = ideal_table(FRAC_PI_8);
        let r = extract_theta(&t).unwrap();
        assert!((r.mean_a0 - FRAC_PI_4.cos()).abs() < 1e-12);
        assert!((r.alpha0 - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((r.alpha0 - 1.154701).abs() < 1e-6);
        assert!(r.gap.abs() < 1e-12);
        assert!((r.theta - FRAC_PI_8).abs() < 1e-12);

        // dense grid search of g(α) = b(α) − ⟨β(α)⟩ on [0, 2]
        let n = 200_000;
        let (mut best_a, mut best_g) = (0.0, f64::INFINITY);
        for i in 0..=n {
            let a = 2.0 * i as f64 / n as f64;
            let g = quantum_bound(a) - beta_value(&t, a).unwrap();
            if g < best_g {
                best_g = g;
                best_a = a;
            }
        }
        assert!((best_a - r.alpha0).abs() < 2e-5);
        assert!((best_g - r.gap).abs() < 1e-9);
    }

    #[test]
    fn extraction_rejects_invalid_marginal() {
        // A hand-made table cannot exceed |m| = 1 while normalized, so check the
        // clamp path instead: m = −1 stays in the canonical range.
        let s = BellScenario::chsh();
        let mut p = vec![0.0; 16];
        for x in 0..2 {
            for y in 0..2 {
                p[s.index(x, y, 1, 0)] = 1.0;
            }
        }
        let t = CorrelationTable::new(s, p, Source::Exact).unwrap();
        let r = extract_theta(&t).unwrap();
        assert_eq!(r.alpha0, 0.0);
        assert!((r.theta - FRAC_PI_4).abs() < 1e-15);
        let o = extract_theta_oriented(&t).unwrap();
        assert_eq!(o.alpha0, -2.0);
        assert!((o.theta - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn oriented_extraction_recovers_upper_half() {
        // (sin θ, cos θ) ordering: weight on |11⟩
        for theta in [0.1, 0.4, 0.7] {
            let rho = DensityMatrix::from_pure(&target_amplitudes(FRAC_PI_2 - theta)).unwrap();
            let s = optimal_settings(theta).unwrap().settings;
            let t = born_table(&rho, &s.alice, &s.bob).unwrap();
            let r = extract_theta_oriented(&t).unwrap();
            assert!((r.theta - (FRAC_PI_2 - theta)).abs() < 1e-10, "{theta}: {r:?}");
            assert!(r.gap.abs() < 1e-10);
        }
    }

    #[test]
    fn optimal_settings_cases() {
        let o = optimal_settings(FRAC_PI_4).unwrap();
        assert!((o.mu - FRAC_PI_4).abs() < 1e-15);
        assert!(o.alpha.abs() < 1e-15);

        let o = optimal_settings(FRAC_PI_8).unwrap();
        assert!((o.mu.tan() - FRAC_PI_4.sin()).abs() < 1e-15);
        let rho = TargetQubitState::new(FRAC_PI_8).unwrap().density();
        let t = born_table(&rho, &o.settings.alice, &o.settings.bob).unwrap();
        let v = beta_value(&t, o.alpha).unwrap();
        assert!((v - (32.0f64 / 3.0).sqrt()).abs() < 1e-10);

        let o = optimal_settings(0.0).unwrap();
        assert!(o.degenerate);
        assert!(optimal_settings(1.0).is_err());
        assert!(optimal_settings(-0.1).is_err());
    }

    #[test]
    fn optimal_settings_saturate_bound_on_grid() {
        for k in 1..=16 {
            let theta = k as f64 * std::f64::consts::PI / 64.0;
            let o = optimal_settings(theta).unwrap();
            let v = beta_value(&ideal_table(theta), o.alpha).unwrap();
            assert!((v - quantum_bound(o.alpha)).abs() < 1e-10, "θ = {theta}");
        }
    }

    #[test]
    fn seesaw_reaches_tilted_maximum() {
        let rho = TargetQubitState::new(FRAC_PI_8).unwrap().density();
        let r = seesaw_maximize(&rho, 2.0 / 3f64.sqrt(), 50, 1).unwrap();
        assert!((r.value - (32.0f64 / 3.0).sqrt()).abs() < 1e-9, "{}", r.value);
        for w in r.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
        // returned settings reproduce the value through the Born rule
        let t = born_table(&rho, &r.settings.alice, &r.settings.bob).unwrap();
        assert!((beta_value(&t, 2.0 / 3f64.sqrt()).unwrap() - r.value).abs() < 1e-10);
    }

    #[test]
    fn seesaw_on_maximally_mixed_stays_classical() {
        let rho = DensityMatrix::maximally_mixed(4);
        for alpha in [0.0, 1.0, 2.0] {
            let r = seesaw_maximize(&rho, alpha, 5, 3).unwrap();
            assert!(r.value <= 2.0 + alpha + 1e-12);
            let t = born_table(&rho, &r.settings.alice, &r.settings.bob).unwrap();
            let st = statistics(&t).unwrap();
            // correlators of I/4 factorize into products of marginals
            for x in 0..2 {
                for y in 0..2 {
                    assert!((st.e(x, y) - st.marginals_a[x] * st.marginals_b[y]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn seesaw_is_deterministic() {
        let rho = TargetQubitState::new(0.5).unwrap().density();
        let a = seesaw_maximize(&rho, 0.7, 4, 99).unwrap();
        let b = seesaw_maximize(&rho, 0.7, 4, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn swap_fidelity_ideal_and_noisy() {
        for theta in [FRAC_PI_4, std::f64::consts::PI / 6.0, FRAC_PI_8, 0.05] {
            let rho = TargetQubitState::new(theta).unwrap().density();
            let s = optimal_settings(theta).unwrap().settings;
            let f = swap_fidelity(&rho, &s, theta).unwrap();
            assert!((f - 1.0).abs() < 1e-10, "θ = {theta}: {f}");
        }
        let s = optimal_settings(FRAC_PI_8).unwrap().settings;
        let mixed = DensityMatrix::maximally_mixed(4);
        let f_mixed = swap_fidelity(&mixed, &s, FRAC_PI_8).unwrap();
        assert!((f_mixed - 0.25).abs() < 1e-12);
        let pure = TargetQubitState::new(FRAC_PI_8).unwrap().density();
        let v = 0.95;
        let noisy = DensityMatrix::new(&pure.matrix().scale_real(v) + &mixed.matrix().scale_real(1.0 - v)).unwrap();
        let f = swap_fidelity(&noisy, &s, FRAC_PI_8).unwrap();
        assert!(f < 1.0 && f >= 0.95);
        assert!((f - (v + (1.0 - v) * f_mixed)).abs() < 1e-12);
    }

    #[test]
    fn swap_fidelity_degenerate_tilt() {
        let rho = TargetQubitState::new(0.0).unwrap().density();
        let s = optimal_settings(0.0).unwrap().settings;
        assert!(matches!(swap_fidelity(&rho, &s, 0.0), Err(Error::DegenerateTilt(_))));
    }

    #[test]
    fn swap_fidelity_detects_wrong_state() {
        let s = optimal_settings(FRAC_PI_8).unwrap().settings;
        for delta in [1e-3, 0.05, 0.2] {
            let rho = DensityMatrix::from_pure(&target_amplitudes(FRAC_PI_8 + delta)).unwrap();
            let f = swap_fidelity(&rho, &s, FRAC_PI_8).unwrap();
            assert!(f < 1.0 - 1e-10, "δ = {delta}: {f}");
        }
    }
    #[test]
    fn theta_standard_error_matches_seed_spread() {
        let theta = 0.45;
        let o = optimal_settings(theta).unwrap().settings;
        let rho = TargetQubitState::new(theta).unwrap().density();
        let exact = born_table(&rho, &o.alice, &o.bob).unwrap();
        assert_eq!(theta_standard_error(&exact).unwrap(), None);
        let n = 10_000;
        let thetas: Vec<f64> = (0..400)
            .map(|seed| extract_theta(&crate::noise::sample_counts(&exact, n, seed).unwrap()).unwrap().theta)
            .collect();
        let mean = thetas.iter().sum::<f64>() / thetas.len() as f64;
        let sd = (thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (thetas.len() - 1) as f64).sqrt();
        let se = theta_standard_error(&crate::noise::sample_counts(&exact, n, 0).unwrap()).unwrap().unwrap();
        // predicted 1/(2√(2N)) regardless of θ
        assert!((se - 1.0 / (2.0 * (2.0 * n as f64).sqrt())).abs() < 0.05 * se);
        assert!((sd / se - 1.0).abs() < 0.15, "sd {sd} vs se {se}");
    }
}
