//! Noise channels, finite-count sampling and purity calibration.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::CorrelationTable;
use crate::error::{Error, Result};
use crate::qcore::{purity, ComplexMatrix, DensityMatrix};

/// Number of samples behind each setting pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SamplesRepr", into = "SamplesRepr")]
pub enum Samples {
    #[default]
    Exact,
    PerSetting(u64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SamplesRepr {
    Count(u64),
    Word(String),
}

impl TryFrom<SamplesRepr> for Samples {
    type Error = String;

    fn try_from(r: SamplesRepr) -> std::result::Result<Self, String> {
        match r {
            SamplesRepr::Count(0) => Err("samples_per_setting must be positive".into()),
            SamplesRepr::Count(n) => Ok(Samples::PerSetting(n)),
            SamplesRepr::Word(w) if w == "exact" => Ok(Samples::Exact),
            SamplesRepr::Word(w) => Err(format!("samples_per_setting: expected \"exact\" or a count, got {w:?}")),
        }
    }
}

impl From<Samples> for SamplesRepr {
    fn from(s: Samples) -> Self {
        match s {
            Samples::Exact => SamplesRepr::Word("exact".into()),
            Samples::PerSetting(n) => SamplesRepr::Count(n),
        }
    }
}

impl fmt::Display for Samples {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Samples::Exact => f.write_str("exact"),
            Samples::PerSetting(n) => write!(f, "{n}"),
        }
    }
}

/// Noise applied to the ideal state before measurement.
///
/// Dephasing acts first, then white noise. `target_purity` calibrates the
/// white-noise visibility instead of fixing it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub white_noise_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dephasing_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_purity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_setting: Option<Samples>,
}

/// Noisy state together with the visibility actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyState {
    pub rho: DensityMatrix,
    pub visibility: Option<f64>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: Option<f64>| match v {
            Some(x) if !(0.0..=1.0).contains(&x) => Err(Error::Config(format!("{name} = {x} outside [0, 1]"))),
            _ => Ok(()),
        };
        unit("white_noise_v", self.white_noise_v)?;
        unit("dephasing_lambda", self.dephasing_lambda)?;
        unit("target_purity", self.target_purity)?;
        if self.white_noise_v.is_some() && self.target_purity.is_some() {
            return Err(Error::Config("white_noise_v and target_purity are mutually exclusive".into()));
        }
        if self.white_noise_v.is_none()
            && self.dephasing_lambda.is_none()
            && self.target_purity.is_none()
            && self.samples_per_setting.is_none()
        {
            return Err(Error::Config("noise block sets no field".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> Samples {
        self.samples_per_setting.unwrap_or_default()
    }

    /// Applies the channels to a bipartite state with local dimensions `dims`.
    pub fn apply(&self, rho: &DensityMatrix, dims: (usize, usize)) -> Result<NoisyState> {
        self.validate()?;
        let mut out = match self.dephasing_lambda {
            Some(l) => dephase(rho, l, dims)?,
            None => rho.clone(),
        };
        let v = match (self.white_noise_v, self.target_purity) {
            (Some(v), _) => Some(v),
            (None, Some(p)) => Some(visibility_for_purity(p, &out)?),
            (None, None) => None,
        };
        if let Some(v) = v {
            out = mix_white(&out, v)?;
        }
        Ok(NoisyState { rho: out, visibility: v })
    }
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("{name} = {x} outside [0, 1]")))
    }
}

/// v ρ + (1 − v) I / dim.
pub fn mix_white(rho: &DensityMatrix, v: f64) -> Result<DensityMatrix> {
    check_unit("visibility", v)?;
    let n = rho.dim();
    let m = &rho.matrix().scale_real(v) + &ComplexMatrix::identity(n).scale_real((1.0 - v) / n as f64);
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

/// Local phase damping on both parties with coherence factor √(1 − λ) each,
/// so |ii⟩⟨jj| coherences shrink by (1 − λ) and populations are untouched.
pub fn dephase(rho: &DensityMatrix, lambda: f64, dims: (usize, usize)) -> Result<DensityMatrix> {
    check_unit("dephasing", lambda)?;
    let (da, db) = dims;
    if da * db != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dims {da}x{db} for a {}-dimensional state",
            rho.dim()
        )));
    }
    let s = (1.0 - lambda).sqrt();
    let m = rho.matrix();
    let out = ComplexMatrix::from_fn(rho.dim(), rho.dim(), |r, c| {
        let mut f = 1.0;
        if r / db != c / db {
            f *= s;
        }
        if r % db != c % db {
            f *= s;
        }
        m[(r, c)] * f
    });
    Ok(DensityMatrix::from_matrix_unchecked(out))
}

/// Visibility v with purity(mix_white(base, v)) = target.
///
/// purity(v ρ + (1 − v) I/D) = v² (P₀ − 1/D) + 1/D, so v = √((P − 1/D)/(P₀ − 1/D)).
pub fn visibility_for_purity(target: f64, base: &DensityMatrix) -> Result<f64> {
    let inv_d = 1.0 / base.dim() as f64;
    let p0 = purity(base);
    if !(target >= inv_d - 1e-15 && target <= p0 + 1e-12) {
        return Err(Error::OutOfRange(format!(
            "target purity {target} outside [{inv_d}, {p0}] reachable by white noise"
        )));
    }
    if p0 - inv_d < 1e-15 {
        return Ok(1.0);
    }
    Ok(((target - inv_d).max(0.0) / (p0 - inv_d)).sqrt().min(1.0))
}

/// Draws `n` samples per setting pair from an exact table.
///
/// Setting pair (x, y) uses its own ChaCha20 stream `x · settings_b + y`
/// under `seed`; within a pair the multinomial is a chain of binomials.
pub fn sample_counts(table: &CorrelationTable, n: u64, seed: u64) -> Result<CorrelationTable> {
    if !table.is_exact() {
        return Err(Error::InvalidTable("sampling requires an exact table".into()));
    }
    if n == 0 {
        return Err(Error::OutOfRange("sample count must be positive".into()));
    }
    let s = table.scenario();
    let block = s.outcomes * s.outcomes;
    let counts: Vec<Vec<u64>> = table
        .probs()
        .par_chunks(block)
        .enumerate()
        .map(|(pair, probs)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(pair as u64);
            multinomial(probs, n, &mut rng)
        })
        .collect::<Result<_>>()?;
    CorrelationTable::from_counts(s, counts.concat())
}

fn multinomial(probs: &[f64], n: u64, rng: &mut ChaCha20Rng) -> Result<Vec<u64>> {
    let mut out = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut mass: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == probs.len() {
            out[k] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = Binomial::new(remaining, q)
            .map_err(|e| Error::Numerical(format!("binomial({remaining}, {q}): {e}")))?
            .sample(rng);
        out[k] = c;
        remaining -= c;
        mass -= p;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bell::{born_table, BellScenario, Source};
    use crate::qcore::matrix::pauli_z;
    use crate::qcore::{target_amplitudes, SchmidtState};
    use crate::tiltedchsh::optimal_settings;
    use num_complex::Complex64 as C64;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

    fn qubit(theta: f64) -> DensityMatrix {
        DensityMatrix::from_pure(&target_amplitudes(theta)).unwrap()
    }

    #[test]
    fn white_noise_endpoints_and_purity() {
        let rho = qubit(0.4);
        assert!(mix_white(&rho, 1.0).unwrap().matrix().max_abs_diff(rho.matrix()) < 1e-15);
        assert!(mix_white(&rho, 0.0).unwrap().matrix().max_abs_diff(DensityMatrix::maximally_mixed(4).matrix()) < 1e-15);
        // 0.81 + 2·0.9·0.1/4 + 0.01/4
        assert!((purity(&mix_white(&rho, 0.9).unwrap()) - 0.8575).abs() < 1e-12);
        assert!(mix_white(&rho, 1.1).is_err());
    }

    #[test]
    fn dephasing_examples() {
        let rho = qubit(FRAC_PI_8);
        assert!(dephase(&rho, 0.0, (2, 2)).unwrap().matrix().max_abs_diff(rho.matrix()) < 1e-15);
        let full = dephase(&rho, 1.0, (2, 2)).unwrap();
        let (c, s) = (FRAC_PI_8.cos(), FRAC_PI_8.sin());
        let mut expect = ComplexMatrix::zeros(4, 4);
        expect[(0, 0)] = C64::new(c * c, 0.0);
        expect[(3, 3)] = C64::new(s * s, 0.0);
        assert!(full.matrix().max_abs_diff(&expect) < 1e-15);
        assert!((purity(&dephase(&qubit(FRAC_PI_4), 0.1, (2, 2)).unwrap()) - 0.905).abs() < 1e-12);
        assert!(dephase(&rho, 0.5, (3, 2)).is_err());
    }

    #[test]
    fn dephasing_commutes_with_diagonal_unitaries() {
        let phases = |a: f64, b: f64| {
            let mut u = ComplexMatrix::zeros(3, 3);
            for (k, t) in [0.0, a, b].iter().enumerate() {
                u[(k, k)] = C64::from_polar(1.0, *t);
            }
            u
        };
        let u = phases(0.3, -1.1).kron(&phases(2.0, 0.7));
        let rho = SchmidtState::new(vec![0.6, 0.64, 0.48]).unwrap().density();
        let a = dephase(&rho.evolve(&u).unwrap(), 0.37, (3, 3)).unwrap();
        let b = dephase(&rho, 0.37, (3, 3)).unwrap().evolve(&u).unwrap();
        assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-14);
    }

    #[test]
    fn visibility_calibration() {
        let rho = qubit(FRAC_PI_8);
        assert!((visibility_for_purity(1.0, &rho).unwrap() - 1.0).abs() < 1e-12);
        assert!(visibility_for_purity(0.25, &rho).unwrap().abs() < 1e-12);
        for p in [0.9994, 0.9656, 0.5] {
            let v = visibility_for_purity(p, &rho).unwrap();
            assert!((purity(&mix_white(&rho, v).unwrap()) - p).abs() < 1e-9);
        }
        assert!(visibility_for_purity(0.2, &rho).is_err());
        assert!(visibility_for_purity(1.01, &rho).is_err());
    }

    #[test]
    fn spec_application_order_and_validation() {
        let rho = qubit(0.5);
        let spec = NoiseSpec {
            dephasing_lambda: Some(0.2),
            target_purity: Some(0.85),
            ..Default::default()
        };
        let out = spec.apply(&rho, (2, 2)).unwrap();
        assert!((purity(&out.rho) - 0.85).abs() < 1e-9);
        assert!(out.visibility.unwrap() < 1.0);
        assert!(NoiseSpec::default().validate().is_err());
        let both = NoiseSpec {
            white_noise_v: Some(0.9),
            target_purity: Some(0.9),
            ..Default::default()
        };
        assert!(both.validate().is_err());
    }

    #[test]
    fn noise_spec_json() {
        let spec: NoiseSpec = serde_json::from_str(r#"{"white_noise_v": 0.9, "samples_per_setting": "exact"}"#).unwrap();
        assert_eq!(spec.samples(), Samples::Exact);
        let spec: NoiseSpec = serde_json::from_str(r#"{"samples_per_setting": 1000}"#).unwrap();
        assert_eq!(spec.samples(), Samples::PerSetting(1000));
        assert_eq!(serde_json::to_string(&spec).unwrap(), r#"{"samples_per_setting":1000}"#);
        assert!(serde_json::from_str::<NoiseSpec>(r#"{"samples_per_setting": 0}"#).is_err());
        assert!(serde_json::from_str::<NoiseSpec>(r#"{"samples_per_setting": "lots"}"#).is_err());
        assert!(serde_json::from_str::<NoiseSpec>(r#"{"visibility": 0.9}"#).is_err());
    }

    fn chsh_table(theta: f64) -> CorrelationTable {
        let s = optimal_settings(theta).unwrap().settings;
        born_table(&qubit(theta), &s.alice, &s.bob).unwrap()
    }

    #[test]
    fn deterministic_cell_and_seed() {
        let z = crate::bell::ProjectiveMeasurement::from_observable(&pauli_z()).unwrap();
        let set = crate::bell::ObservableSet::new(vec![z.clone(), z]).unwrap();
        let t = born_table(&qubit(0.0), &set, &set).unwrap();
        let sampled = sample_counts(&t, 1000, 7).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                assert_eq!(sampled.count(0, 0, x, y), Some(1000));
            }
        }
        let t = chsh_table(0.3);
        assert_eq!(sample_counts(&t, 5000, 11).unwrap(), sample_counts(&t, 5000, 11).unwrap());
        assert_ne!(sample_counts(&t, 5000, 11).unwrap(), sample_counts(&t, 5000, 12).unwrap());
        assert!(sample_counts(&sample_counts(&t, 10, 1).unwrap(), 10, 1).is_err());
        assert!(matches!(sample_counts(&t, 10, 1).unwrap().source(), Source::Sampled { .. }));
    }

    #[test]
    fn large_samples_stay_close() {
        let t = chsh_table(FRAC_PI_8);
        for seed in 0..100 {
            let s = sample_counts(&t, 1_000_000, seed).unwrap();
            let dev = s.probs().iter().zip(t.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 5e-3, "seed {seed}: {dev}");
        }
    }

    #[test]
    fn sampling_is_unbiased() {
        let t = chsh_table(0.6);
        let (n, seeds) = (1000u64, 400u64);
        let mut mean = vec![0.0; t.probs().len()];
        for seed in 0..seeds {
            for (m, p) in mean.iter_mut().zip(sample_counts(&t, n, seed).unwrap().probs()) {
                *m += p / seeds as f64;
            }
        }
        for (m, p) in mean.iter().zip(t.probs()) {
            let se = (p * (1.0 - p) / (n * seeds) as f64).sqrt();
            assert!((m - p).abs() <= 5.0 * se + 1e-15, "{m} vs {p}");
        }
    }

    #[test]
    fn qudit_tables_sample() {
        let state = SchmidtState::maximally_entangled(3);
        let set = crate::bell::ObservableSet::new(vec![crate::bell::ProjectiveMeasurement::computational(3); 2]).unwrap();
        let t = born_table(&state.density(), &set, &set).unwrap();
        let s = sample_counts(&t, 300, 3).unwrap();
        assert_eq!(s.scenario(), BellScenario::new(2, 2, 3).unwrap());
        assert_eq!(s.min_setting_total(), Some(300));
    }
}
