//! Experiment orchestration: config → state → (noise) → Bell table →
//! self-test → tomography → fidelities → no-signalling, collected into a
//! deterministic report.

pub mod config;
pub mod report;

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

pub use config::{ExperimentConfig, ExtractionConfig, Kind, LocalUnitaries, Outputs, ResolvedState, StateSpec, Target};
pub use report::{
    emit_report, FidelityRecord, Format, QubitRecord, Report, SettingsSource, StateRecord, TargetRecord, Timing,
    TomographyRecord, VariantRecord, REPORT_SCHEMA,
};

use crate::bell::{born_table, check_no_signalling, default_ns_tolerance, CorrelationTable, SettingsPair};
use crate::error::{Error, Result};
use crate::highdim::{build_qudit_settings, reconstruct_with, reconstruction_fidelity, QuditLayout, Reference};
use crate::noise::{sample_counts, NoisyState, Samples};
use crate::qcore::random::haar_unitary;
use crate::qcore::{fidelity_to_pure, purity, trace_distance, DensityMatrix};
use crate::tiltedchsh::{
    alpha_from_theta, extract_theta, optimal_settings, seesaw_maximize, swap_fidelity, target_overlap,
    theta_standard_error, DEFAULT_RESTARTS,
};
use crate::tomo::{reconstruct_with_basis, sample_tomography, schmidt_readout, tomo_projectors, tomography_probabilities};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Find qubit settings by see-saw maximization instead of using the ideal ones.
    pub reoptimize: bool,
    /// Record wall-clock timings (breaks byte-identical output across runs).
    pub timing: bool,
}

const TOMOGRAPHY_TAG: u64 = 1 << 63;
const SEESAW_TAG: u64 = 1 << 62;

/// Independent 64-bit seed for a tagged sub-task.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

fn task_tag(state: usize, variant: usize) -> u64 {
    ((state as u64) << 32) | variant as u64
}

/// Keeps config and I/O errors as they are and prefixes the rest with the state label.
fn in_state(label: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => e,
        other => Error::Numerical(format!("state {label:?}: {other}")),
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    run_with_options(config, RunOptions::default())
}

pub fn run_with_options(config: &ExperimentConfig, opts: RunOptions) -> Result<Report> {
    let states = config.resolve()?;
    if opts.reoptimize && config.kind == Kind::Qudit {
        return Err(Error::Config("--reoptimize applies to qubit runs only".into()));
    }
    let start = Instant::now();
    let results: Vec<(StateRecord, f64)> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let t = Instant::now();
            run_state(config, opts, i, s)
                .map_err(in_state(&s.label))
                .map(|r| (r, t.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let per_state: Vec<f64> = results.iter().map(|r| r.1).collect();
    Ok(Report {
        schema: REPORT_SCHEMA.into(),
        config: config.clone(),
        records: results.into_iter().map(|r| r.0).collect(),
        timing: opts.timing.then(|| Timing {
            total_seconds: start.elapsed().as_secs_f64(),
            per_state_seconds: per_state,
        }),
    })
}

struct Pipeline<'a> {
    config: &'a ExperimentConfig,
    opts: RunOptions,
    index: usize,
    samples: Samples,
}

impl Pipeline<'_> {
    fn measure(&self, rho: &DensityMatrix, settings: &SettingsPair, variant: usize) -> Result<CorrelationTable> {
        let table = born_table(rho, &settings.alice, &settings.bob)?;
        match self.samples {
            Samples::Exact => Ok(table),
            Samples::PerSetting(n) => sample_counts(&table, n, derive_seed(self.config.seed, task_tag(self.index, variant))),
        }
    }

    fn qubit_settings(&self, rho: &DensityMatrix, theta: f64, variant: usize) -> Result<(SettingsPair, SettingsSource)> {
        if self.opts.reoptimize {
            let seed = derive_seed(self.config.seed, SEESAW_TAG | task_tag(self.index, variant));
            let found = seesaw_maximize(rho, alpha_from_theta(theta), DEFAULT_RESTARTS, seed)?;
            Ok((found.settings, SettingsSource::Seesaw))
        } else {
            Ok((optimal_settings(theta)?.settings, SettingsSource::Optimal))
        }
    }
}

fn run_state(config: &ExperimentConfig, opts: RunOptions, index: usize, state: &ResolvedState) -> Result<StateRecord> {
    let d = state.target.d();
    let pipe = Pipeline {
        config,
        opts,
        index,
        samples: config.noise.map(|n| n.samples()).unwrap_or_default(),
    };
    let (ideal, psi_target) = match &state.target {
        Target::Qubit(t) => (t.density(), t.amplitudes()),
        Target::Qudit(s) => (s.density(), s.amplitudes()),
    };
    let NoisyState { rho, visibility } = match &config.noise {
        Some(spec) => spec.apply(&ideal, (d, d))?,
        None => NoisyState {
            rho: ideal,
            visibility: None,
        },
    };

    let (table, qubit, qudit, psi_est, coeffs_est, base_settings) = match &state.target {
        Target::Qubit(t) => {
            let theta = t.theta();
            let (settings, source) = pipe.qubit_settings(&rho, theta, 0)?;
            let table = pipe.measure(&rho, &settings, 0)?;
            let extraction = extract_theta(&table)?;
            let swap = match swap_fidelity(&rho, &settings, theta) {
                Ok(f) => Some(f),
                Err(Error::DegenerateTilt(_)) => None,
                Err(e) => return Err(e),
            };
            let record = QubitRecord {
                f_s: target_overlap(extraction.theta, theta),
                theta_se: theta_standard_error(&table)?,
                swap_fidelity: swap,
                bell_value: crate::tiltedchsh::beta_value(&table, extraction.alpha0)?,
                quantum_bound: crate::tiltedchsh::quantum_bound(extraction.alpha0),
                settings_source: source,
                extraction,
            };
            let psi = crate::qcore::target_amplitudes(extraction.theta);
            let coeffs = vec![extraction.theta.cos(), extraction.theta.sin()];
            (table, Some(record), None, psi, coeffs, settings)
        }
        Target::Qudit(s) => {
            let settings = build_qudit_settings(s)?.settings;
            let table = pipe.measure(&rho, &settings, 0)?;
            let mut rec = reconstruct_with(&table, &QuditLayout::standard(d)?, config.extraction.pairing_mode)?;
            rec.fidelity_vs_reference = Some(reconstruction_fidelity(&rec, Reference::Schmidt(s))?);
            let psi = rec.amplitudes();
            let coeffs = rec.coeffs_est.clone();
            (table, None, Some(rec), psi, coeffs, settings)
        }
    };
    let no_signalling = check_no_signalling(&table, default_ns_tolerance(&table));

    let basis = tomo_projectors(d)?;
    let mut data = tomography_probabilities(&rho, &basis)?;
    if let Samples::PerSetting(n) = pipe.samples {
        data = sample_tomography(&data, n, derive_seed(config.seed, TOMOGRAPHY_TAG | task_tag(index, 0)))?;
    }
    let tomo = reconstruct_with_basis(&data, &basis)?;
    let tomography = TomographyRecord {
        readout: schmidt_readout(&tomo.rho, d)?,
        joint_measurements: basis.joint_measurement_count(),
        purity: purity(&tomo.rho),
        trace_distance: trace_distance(tomo.rho.matrix(), rho.matrix())?,
        projection_distance: tomo.projection_distance,
        gram_condition: tomo.gram_condition,
    };

    let fidelities = FidelityRecord {
        selftest_vs_target: match (&qubit, &qudit) {
            (Some(q), _) => q.f_s,
            (None, Some(r)) => r.fidelity_vs_reference.unwrap_or(0.0),
            (None, None) => unreachable!("every target is qubit or qudit"),
        },
        selftest_vs_tomography: fidelity_to_pure(&tomo.rho, &psi_est)?,
        tomography_vs_target: fidelity_to_pure(&tomo.rho, &psi_target)?,
        state_vs_target: fidelity_to_pure(&rho, &psi_target)?,
        selftest_vs_readout: coefficient_overlap(&coeffs_est, &tomography.readout.coeffs),
    };

    let variants = match config.local_unitaries {
        Some(lu) if lu.count > 0 => (0..lu.count)
            .into_par_iter()
            .map(|k| run_variant(&pipe, state, &rho, &base_settings, lu, k))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };

    Ok(StateRecord {
        index,
        label: state.label.clone(),
        d,
        target: TargetRecord {
            theta: state.target.theta(),
            coeffs: state.target.coeffs(),
        },
        renormalized_by: state.renormalized_by,
        visibility,
        purity: purity(&rho),
        samples_per_setting: pipe.samples,
        table,
        no_signalling,
        qubit,
        qudit,
        tomography,
        fidelities,
        variants,
    })
}

/// |⟨ψ_a|ψ_b⟩|² for two real Schmidt-form states.
fn coefficient_overlap(a: &[f64], b: &[f64]) -> f64 {
    let o: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (o * o).min(1.0)
}

/// One Haar-random local unitary pair applied to the state; settings are
/// conjugated by the same pair unless see-saw reoptimization is requested.
fn run_variant(
    pipe: &Pipeline<'_>,
    state: &ResolvedState,
    rho: &DensityMatrix,
    base_settings: &SettingsPair,
    lu: LocalUnitaries,
    k: usize,
) -> Result<VariantRecord> {
    let d = state.target.d();
    let mut rng = ChaCha20Rng::seed_from_u64(lu.seed);
    rng.set_stream(task_tag(pipe.index, k));
    let ua = haar_unitary(d, &mut rng);
    let ub = haar_unitary(d, &mut rng);
    let rotated = rho.evolve(&ua.kron(&ub))?;
    match &state.target {
        Target::Qubit(t) => {
            let (settings, source) = if pipe.opts.reoptimize {
                pipe.qubit_settings(&rotated, t.theta(), k + 1)?
            } else {
                (base_settings.conjugated(&ua, &ub), SettingsSource::Optimal)
            };
            let table = pipe.measure(&rotated, &settings, k + 1)?;
            let extraction = extract_theta(&table)?;
            Ok(VariantRecord {
                index: k,
                theta_se: theta_standard_error(&table)?,
                selftest_vs_target: target_overlap(extraction.theta, t.theta()),
                extraction: Some(extraction),
                coeffs: None,
                consistency_residual: None,
                no_signalling: check_no_signalling(&table, default_ns_tolerance(&table)),
                settings_source: source,
            })
        }
        Target::Qudit(s) => {
            let settings = base_settings.conjugated(&ua, &ub);
            let table = pipe.measure(&rotated, &settings, k + 1)?;
            let rec = reconstruct_with(&table, &QuditLayout::standard(d)?, pipe.config.extraction.pairing_mode)?;
            Ok(VariantRecord {
                index: k,
                extraction: None,
                theta_se: None,
                selftest_vs_target: reconstruction_fidelity(&rec, Reference::Schmidt(s))?,
                consistency_residual: Some(rec.consistency_residual),
                coeffs: Some(rec.coeffs_est),
                no_signalling: check_no_signalling(&table, default_ns_tolerance(&table)),
                settings_source: SettingsSource::Optimal,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json_str(text).unwrap()
    }

    #[test]
    fn ideal_qubit_pipeline() {
        let r = run_experiment(&config(r#"{"kind": "qubit", "state": {"theta": 0.7853981633974483}}"#)).unwrap();
        let rec = &r.records[0];
        let q = rec.qubit.as_ref().unwrap();
        assert!((q.extraction.theta - FRAC_PI_4).abs() < 1e-7);
        assert!((rec.tomography.readout.theta.unwrap() - FRAC_PI_4).abs() < 1e-10);
        assert!((q.f_s - 1.0).abs() < 1e-9);
        assert!((q.swap_fidelity.unwrap() - 1.0).abs() < 1e-9);
        assert!(rec.no_signalling.pass);
        assert_eq!(rec.tomography.joint_measurements, 16);
    }

    #[test]
    fn ideal_ququart_pipeline() {
        let r = run_experiment(&config(r#"{"kind": "qudit", "d": 4, "state": {"coeffs": [0.8, 0.4, 0.4, 0.2]}}"#)).unwrap();
        let rec = &r.records[0];
        let q = rec.qudit.as_ref().unwrap();
        for (e, c) in q.coeffs_est.iter().zip([0.8, 0.4, 0.4, 0.2]) {
            assert!((e - c).abs() < 1e-6);
        }
        assert!(q.consistency_residual < 1e-6);
        assert_eq!(rec.table.probs().len(), 192);
        assert_eq!(rec.tomography.joint_measurements, 256);
        assert!(rec.no_signalling.pass);
    }

    #[test]
    fn calibrated_noise_keeps_fidelity() {
        let r = run_experiment(&config(
            r#"{"kind": "qubit", "state": {"theta": 0.2945243112740431}, "noise": {"target_purity": 0.9656}}"#,
        ))
        .unwrap();
        let rec = &r.records[0];
        let q = rec.qubit.as_ref().unwrap();
        assert!((rec.purity - 0.9656).abs() < 1e-9);
        assert!(q.extraction.gap > 0.0);
        assert!(q.f_s >= 0.999, "{}", q.f_s);
    }

    #[test]
    fn variants_are_invariant_with_conjugated_settings() {
        let r = run_experiment(&config(
            r#"{"kind": "qubit", "states": [{"theta": 0.3}, {"theta": 0.6}], "local_unitaries": {"count": 11, "seed": 5}}"#,
        ))
        .unwrap();
        for rec in &r.records {
            assert_eq!(rec.variants.len(), 11);
            for v in &rec.variants {
                assert!((v.extraction.unwrap().theta - rec.target.theta.unwrap()).abs() < 1e-7);
                assert!(v.no_signalling.pass);
            }
        }
        let csv = r.to_csv_string().unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(header.split(',').filter(|c| c.starts_with("theta")).count(), 12);
    }

    #[test]
    fn qudit_variants_reconstruct() {
        let r = run_experiment(&config(
            r#"{"kind": "qudit", "d": 3, "state": {"coeffs": [0.6, 0.64, 0.48]}, "local_unitaries": {"count": 3, "seed": 1}}"#,
        ))
        .unwrap();
        for v in &r.records[0].variants {
            for (e, c) in v.coeffs.as_ref().unwrap().iter().zip([0.6, 0.64, 0.48]) {
                assert!((e - c).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reoptimized_settings_find_the_state() {
        let cfg = config(r#"{"kind": "qubit", "state": {"theta": 0.5}, "local_unitaries": {"count": 2, "seed": 4}}"#);
        let r = run_with_options(
            &cfg,
            RunOptions {
                reoptimize: true,
                timing: false,
            },
        )
        .unwrap();
        let rec = &r.records[0];
        assert_eq!(rec.qubit.as_ref().unwrap().settings_source, SettingsSource::Seesaw);
        assert!((rec.qubit.as_ref().unwrap().extraction.theta - 0.5).abs() < 1e-6);
        for v in &rec.variants {
            assert!((v.extraction.unwrap().theta - 0.5).abs() < 1e-6, "{:?}", v.extraction);
        }
        let qudit = config(r#"{"kind": "qudit", "d": 3, "state": {"coeffs": [1, 1, 1]}}"#);
        let err = run_with_options(&qudit, RunOptions { reoptimize: true, timing: false }).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sampled_runs_are_deterministic() {
        let cfg = config(
            r#"{"kind": "qubit", "states": [{"theta": 0.3}, {"theta": 0.5}], "seed": 17,
                "noise": {"white_noise_v": 0.97, "samples_per_setting": 20000},
                "local_unitaries": {"count": 2, "seed": 8}}"#,
        );
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
        assert!(a.records[0].no_signalling.pass);
        assert!(a.records[0].qubit.as_ref().unwrap().theta_se.is_some());
        let mut other = cfg.clone();
        other.seed = 18;
        assert_ne!(run_experiment(&other).unwrap().to_json_string().unwrap(), a.to_json_string().unwrap());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let r = run_experiment(&config(
            r#"{"kind": "qudit", "d": 3, "states": [{"coeffs": [0.3, 0.9, 0.5]}], "noise": {"white_noise_v": 0.9}}"#,
        ))
        .unwrap();
        let text = r.to_json_string().unwrap();
        let back = Report::from_json_str(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json_string().unwrap(), text);
    }

    #[test]
    fn empty_state_list_gives_header_only_csv() {
        let r = run_experiment(&config(r#"{"kind": "qudit", "d": 3, "states": []}"#)).unwrap();
        assert!(r.records.is_empty());
        let csv = r.to_csv_string().unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("label,c0_target,c0_selftest,c0_tomography"));
        assert!(Report::from_json_str(&r.to_json_string().unwrap()).is_ok());
    }

    #[test]
    fn timing_only_on_request() {
        let cfg = config(r#"{"kind": "qubit", "state": {"theta": 0.3}}"#);
        assert!(run_experiment(&cfg).unwrap().timing.is_none());
        let r = run_with_options(&cfg, RunOptions { reoptimize: false, timing: true }).unwrap();
        assert_eq!(r.timing.unwrap().per_state_seconds.len(), 1);
    }
}
