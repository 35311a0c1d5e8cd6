use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{ExperimentConfig, Kind};
use crate::bell::{CorrelationTable, NoSignallingReport};
use crate::error::{Error, Result};
use crate::highdim::ReconstructedState;
use crate::noise::Samples;
use crate::tiltedchsh::ExtractionResult;
use crate::tomo::SchmidtReadout;

pub const REPORT_SCHEMA: &str = "selftest-report/v1";

/// Significant digits written to CSV cells.
pub const CSV_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(rename = "$schema")]
    pub schema: String,
    pub config: ExperimentConfig,
    pub records: Vec<StateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub per_state_seconds: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingsSource {
    /// Ideal settings for the intended target (conjugated in variant runs).
    Optimal,
    /// Discovered by see-saw maximization on the actual state.
    Seesaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitRecord {
    #[serde(flatten)]
    pub extraction: ExtractionResult,
    /// |⟨ψ(θ_est)|ψ(θ_target)⟩|².
    #[serde(rename = "F_S")]
    pub f_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_se: Option<f64>,
    /// Ancilla fidelity of the SWAP-gadget isometry on the actual state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swap_fidelity: Option<f64>,
    pub bell_value: f64,
    pub quantum_bound: f64,
    pub settings_source: SettingsSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyRecord {
    pub readout: SchmidtReadout,
    pub joint_measurements: usize,
    pub purity: f64,
    /// Trace distance between the reconstruction and the measured state.
    pub trace_distance: f64,
    pub projection_distance: f64,
    pub gram_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRecord {
    /// Self-tested pure state vs the target.
    pub selftest_vs_target: f64,
    /// Self-tested pure state vs the tomographic reconstruction.
    pub selftest_vs_tomography: f64,
    /// Target vs the tomographic reconstruction.
    pub tomography_vs_target: f64,
    /// Target vs the state actually measured.
    pub state_vs_target: f64,
    /// Self-tested pure state vs Σ c_i|ii⟩ with c_i read from the tomographic populations.
    pub selftest_vs_readout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency_residual: Option<f64>,
    pub selftest_vs_target: f64,
    pub no_signalling: NoSignallingReport,
    pub settings_source: SettingsSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub index: usize,
    pub label: String,
    pub d: usize,
    pub target: TargetRecord,
    pub renormalized_by: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<f64>,
    pub purity: f64,
    pub samples_per_setting: Samples,
    pub table: CorrelationTable,
    pub no_signalling: NoSignallingReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubit: Option<QubitRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qudit: Option<ReconstructedState>,
    pub tomography: TomographyRecord,
    pub fidelities: FidelityRecord,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<VariantRecord>,
}

impl StateRecord {
    pub fn theta_selftest(&self) -> Option<f64> {
        self.qubit.as_ref().map(|q| q.extraction.theta)
    }

    pub fn coeffs_selftest(&self) -> Vec<f64> {
        match (&self.qubit, &self.qudit) {
            (Some(q), _) => vec![q.extraction.theta.cos(), q.extraction.theta.sin()],
            (None, Some(r)) => r.coeffs_est.clone(),
            (None, None) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown format {other:?} (json, csv)"))),
        }
    }
}

impl Report {
    /// Canonical JSON: sorted keys, two-space indentation, trailing newline.
    ///
    /// Fails when any number is non-finite (serialized as null).
    pub fn to_json_string(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        if let Some(path) = find_null(&value, String::new()) {
            return Err(Error::Numerical(format!("non-finite value in report at {path}")));
        }
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported report $schema {:?} (expected {REPORT_SCHEMA:?})",
                report.schema
            )));
        }
        Ok(report)
    }

    /// Flattened CSV: one row per state.
    ///
    /// Variant runs list the tomography θ followed by one θ column per local
    /// unitary; qubit runs otherwise compare target, self-test and tomography
    /// θ; qudit runs do the same per coefficient.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let variants = self
            .config
            .local_unitaries
            .map(|lu| lu.count)
            .filter(|&c| c > 0);
        let d = self.config.dimension()?;
        match (self.config.kind, variants) {
            (Kind::Qubit, Some(count)) => {
                let mut header = vec!["label".to_string(), "theta_tomography".to_string()];
                header.extend((0..count).map(|k| format!("theta_u{k}")));
                w.write_record(&header)?;
                for r in &self.records {
                    let mut row = vec![r.label.clone(), opt_num(r.tomography.readout.theta)];
                    row.extend(r.variants.iter().map(|v| opt_num(v.extraction.map(|e| e.theta))));
                    w.write_record(&row)?;
                }
            }
            (Kind::Qudit, Some(count)) => {
                let mut header = vec!["label".to_string()];
                header.extend((0..d).map(|i| format!("c{i}_tomography")));
                for k in 0..count {
                    header.extend((0..d).map(|i| format!("c{i}_u{k}")));
                }
                w.write_record(&header)?;
                for r in &self.records {
                    let mut row = vec![r.label.clone()];
                    row.extend(r.tomography.readout.coeffs.iter().map(|&c| num(c)));
                    for v in &r.variants {
                        match &v.coeffs {
                            Some(c) => row.extend(c.iter().map(|&x| num(x))),
                            None => row.extend((0..d).map(|_| String::new())),
                        }
                    }
                    w.write_record(&row)?;
                }
            }
            (Kind::Qubit, None) => {
                w.write_record([
                    "label",
                    "theta_target",
                    "theta_selftest",
                    "theta_tomography",
                    "alpha0",
                    "gap",
                    "F_S",
                    "swap_fidelity",
                    "purity",
                    "ns_pass",
                ])?;
                for r in &self.records {
                    let q = r.qubit.as_ref();
                    w.write_record([
                        r.label.clone(),
                        opt_num(r.target.theta),
                        opt_num(q.map(|q| q.extraction.theta)),
                        opt_num(r.tomography.readout.theta),
                        opt_num(q.map(|q| q.extraction.alpha0)),
                        opt_num(q.map(|q| q.extraction.gap)),
                        opt_num(q.map(|q| q.f_s)),
                        opt_num(q.and_then(|q| q.swap_fidelity)),
                        num(r.purity),
                        r.no_signalling.pass.to_string(),
                    ])?;
                }
            }
            (Kind::Qudit, None) => {
                let mut header = vec!["label".to_string()];
                for i in 0..d {
                    header.extend([
                        format!("c{i}_target"),
                        format!("c{i}_selftest"),
                        format!("c{i}_tomography"),
                    ]);
                }
                header.extend(
                    ["consistency_residual", "fidelity_selftest", "purity", "ns_pass"]
                        .iter()
                        .map(|s| s.to_string()),
                );
                w.write_record(&header)?;
                for r in &self.records {
                    let est = r.coeffs_selftest();
                    let mut row = vec![r.label.clone()];
                    for i in 0..d {
                        row.extend([
                            num(r.target.coeffs[i]),
                            est.get(i).map(|&c| num(c)).unwrap_or_default(),
                            num(r.tomography.readout.coeffs[i]),
                        ]);
                    }
                    row.extend([
                        opt_num(r.qudit.as_ref().map(|q| q.consistency_residual)),
                        num(r.fidelities.selftest_vs_target),
                        num(r.purity),
                        r.no_signalling.pass.to_string(),
                    ]);
                    w.write_record(&row)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Numerical(format!("CSV is not UTF-8: {e}")))
    }
}

fn find_null(value: &Value, path: String) -> Option<String> {
    match value {
        Value::Null => Some(if path.is_empty() { "/".into() } else { path }),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .find_map(|(i, v)| find_null(v, format!("{path}/{i}"))),
        Value::Object(map) => map.iter().find_map(|(k, v)| find_null(v, format!("{path}/{k}"))),
        _ => None,
    }
}

/// Rounds to [`CSV_DIGITS`] significant digits and prints the shortest form.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{:.*e}", CSV_DIGITS - 1, x).parse().unwrap_or(x);
    format!("{rounded}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Writes the requested formats to `out_dir` using the config's output names.
pub fn emit_report(report: &Report, formats: &[Format], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for format in formats {
        let (name, text) = match format {
            Format::Json => (&report.config.outputs.json, report.to_json_string()?),
            Format::Csv => (&report.config.outputs.csv, report.to_csv_string()?),
        };
        let path = out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
