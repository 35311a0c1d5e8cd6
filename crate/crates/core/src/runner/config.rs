use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::highdim::PairingMode;
use crate::noise::NoiseSpec;
use crate::qcore::{SchmidtState, TargetQubitState};

pub const CONFIG_SCHEMA: &str = "selftest-config/v1";

/// Renormalization larger than this is reported as a warning.
pub const RENORMALIZATION_WARN: f64 = 1e-6;

/// Local unitary variants per state are capped to keep runs bounded.
pub const MAX_VARIANTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Qubit,
    Qudit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
}

/// Haar-random local unitary variants per state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalUnitaries {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    #[serde(default)]
    pub pairing_mode: PairingMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_json")]
    pub json: String,
    #[serde(default = "default_csv")]
    pub csv: String,
}

fn default_json() -> String {
    "report.json".into()
}

fn default_csv() -> String {
    "report.csv".into()
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            json: default_json(),
            csv: default_csv(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "$schema", default = "default_schema")]
    pub schema: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<StateSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_unitaries: Option<LocalUnitaries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub seed: u64,
}

fn default_schema() -> String {
    CONFIG_SCHEMA.into()
}

/// A validated state ready to simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedState {
    pub label: String,
    pub target: Target,
    /// Norm deviation removed by renormalizing the given coefficients.
    pub renormalized_by: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Qubit(TargetQubitState),
    Qudit(SchmidtState),
}

impl Target {
    pub fn d(&self) -> usize {
        match self {
            Target::Qubit(_) => 2,
            Target::Qudit(s) => s.d(),
        }
    }

    pub fn coeffs(&self) -> Vec<f64> {
        match self {
            Target::Qubit(t) => vec![t.theta().cos(), t.theta().sin()],
            Target::Qudit(s) => s.coeffs().to_vec(),
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            Target::Qubit(t) => Some(t.theta()),
            Target::Qudit(_) => None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.resolve()?;
        Ok(config)
    }

    /// Local dimension of every state in the run.
    pub fn dimension(&self) -> Result<usize> {
        match (self.kind, self.d) {
            (Kind::Qubit, None | Some(2)) => Ok(2),
            (Kind::Qubit, Some(d)) => Err(Error::Config(format!("qubit runs have d = 2, got {d}"))),
            (Kind::Qudit, Some(d @ (3 | 4))) => Ok(d),
            (Kind::Qudit, Some(d)) => Err(Error::Config(format!("qudit runs need d in {{3, 4}}, got {d}"))),
            (Kind::Qudit, None) => Err(Error::Config("qudit runs need d".into())),
        }
    }

    pub fn state_specs(&self) -> Result<&[StateSpec]> {
        match (&self.state, &self.states) {
            (Some(s), None) => Ok(std::slice::from_ref(s)),
            (None, Some(list)) => Ok(list),
            _ => Err(Error::Config("exactly one of `state` and `states` is required".into())),
        }
    }

    /// Validates the whole config and builds the target states.
    pub fn resolve(&self) -> Result<Vec<ResolvedState>> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported $schema {:?} (expected {CONFIG_SCHEMA:?})",
                self.schema
            )));
        }
        let d = self.dimension()?;
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        if let Some(lu) = self.local_unitaries {
            if lu.count > MAX_VARIANTS {
                return Err(Error::Config(format!(
                    "local_unitaries.count = {} exceeds {MAX_VARIANTS}",
                    lu.count
                )));
            }
        }
        self.state_specs()?
            .iter()
            .enumerate()
            .map(|(i, spec)| resolve_state(self.kind, d, i, spec))
            .collect()
    }
}

fn resolve_state(kind: Kind, d: usize, index: usize, spec: &StateSpec) -> Result<ResolvedState> {
    let label = spec.label.clone().unwrap_or_else(|| format!("s{index}"));
    let bad = |msg: String| Error::Config(format!("state {label:?}: {msg}"));
    match (kind, spec.theta, &spec.coeffs) {
        (Kind::Qubit, Some(theta), None) => Ok(ResolvedState {
            target: Target::Qubit(TargetQubitState::new(theta).map_err(|e| bad(e.to_string()))?),
            label,
            renormalized_by: 0.0,
        }),
        (Kind::Qudit, None, Some(coeffs)) => {
            if coeffs.len() != d {
                return Err(bad(format!("{} coefficients for d = {d}", coeffs.len())));
            }
            let (state, dev) = SchmidtState::normalized(coeffs.clone()).map_err(|e| bad(e.to_string()))?;
            Ok(ResolvedState {
                target: Target::Qudit(state),
                label,
                renormalized_by: dev,
            })
        }
        (Kind::Qubit, _, _) => Err(bad("qubit states take exactly `theta`".into())),
        (Kind::Qudit, _, _) => Err(bad("qudit states take exactly `coeffs`".into())),
    }
}
