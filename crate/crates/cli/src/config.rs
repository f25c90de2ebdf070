//! Scenario files: JSON with big integers as decimal strings.

use std::collections::BTreeSet;
use std::path::Path;

use hiershare::curve::CurveParams;
use hiershare::decimal;
use hiershare::hierarchy::{NodeRef, UserId};
use hiershare::proactive::TamperKind;
use hiershare::sharing::{EvalPointMode, ThresholdFactor};
use hiershare::simnet::adversary::{AdversaryConfig, Budget, ScriptStep, Strategy};
use hiershare::simnet::{
    FieldMode, MembershipChange, MembershipEvent, NodeSpec, RoundPolicy, SimConfig,
};
use num_bigint::BigUint;
use serde::de::Deserializer;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file}:{line}:{column}: {field}: {message}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("{file}: {field}: {message}")]
    Invalid {
        file: String,
        field: String,
        message: String,
    },
}

/// A named profile or explicit parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CurveSpec {
    Named(String),
    Inline(CurveParams),
}

impl CurveSpec {
    pub fn params(&self) -> Result<CurveParams, String> {
        match self {
            CurveSpec::Named(name) => CurveParams::named(name).map_err(|e| e.to_string()),
            CurveSpec::Inline(params) => Ok(params.clone()),
        }
    }
}

impl Serialize for CurveSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CurveSpec::Named(name) => s.serialize_str(name),
            CurveSpec::Inline(params) => params.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for CurveSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        match value {
            serde_json::Value::String(name) => Ok(CurveSpec::Named(name)),
            other => CurveParams::deserialize(other)
                .map(CurveSpec::Inline)
                .map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    #[default]
    CurveOrder,
    NoCurve {
        #[serde(with = "decimal")]
        prime: BigUint,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventAction {
    Leave,
    Rejoin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub epoch: u64,
    pub action: EventAction,
    /// The leaving user, or the vacated position a newcomer takes.
    pub user: UserId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub budget: Budget,
    /// Sibling groups by parent id, 0 for the server's children. Absent means
    /// all groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<u64>>,
    #[serde(default)]
    pub tamper: TamperKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptStep>,
}

fn default_ticks() -> u64 {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveSpec>,
    #[serde(default)]
    pub field: FieldSpec,
    pub threshold_factor: ThresholdFactor,
    pub tree: Vec<NodeSpec>,
    #[serde(with = "decimal")]
    pub secret: BigUint,
    #[serde(default)]
    pub eval_points: EvalPointMode,
    pub epochs: u64,
    #[serde(default = "default_ticks")]
    pub ticks_per_epoch: u64,
    #[serde(default = "default_true")]
    pub renewal: bool,
    #[serde(default)]
    pub round_policy: RoundPolicy,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Keep registration tokens and the server's round secret out of
    /// snapshots.
    #[serde(default)]
    pub redact_secrets: bool,
}

fn strip_position(message: String) -> String {
    match message.rsplit_once(" at line ") {
        Some((head, _)) => head.to_string(),
        None => message,
    }
}

/// Deserializes JSON text, reporting the field path and position of the
/// first problem.
pub fn parse_json<T: serde::de::DeserializeOwned>(
    text: &str,
    file: &str,
) -> Result<T, ConfigError> {
    let parse_error = |field: String, inner: serde_json::Error| ConfigError::Parse {
        file: file.to_string(),
        line: inner.line(),
        column: inner.column(),
        field,
        message: strip_position(inner.to_string()),
    };
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let field = match err.path().to_string() {
            p if p == "." || p.is_empty() => "(root)".to_string(),
            p => p,
        };
        parse_error(field, err.into_inner())
    })?;
    de.end().map_err(|e| parse_error("(root)".into(), e))?;
    Ok(value)
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: file.clone(),
            source,
        })?;
        let config = Self::parse(&text, &file)?;
        Ok(config)
    }

    pub fn parse(text: &str, file: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = parse_json(text, file)?;
        config.to_sim(file)?;
        Ok(config)
    }

    /// Simulator configuration, after the checks that need more than one
    /// field.
    pub fn to_sim(&self, file: &str) -> Result<SimConfig, ConfigError> {
        let invalid = |field: &str, message: String| ConfigError::Invalid {
            file: file.to_string(),
            field: field.to_string(),
            message,
        };
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCENARIO_SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        let name_ok = !self.name.is_empty()
            && self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !name_ok {
            return Err(invalid(
                "name",
                "must be nonempty and use only letters, digits, '-', '_' or '.'".into(),
            ));
        }
        let field = match (&self.field, &self.curve) {
            (FieldSpec::CurveOrder, Some(curve)) => {
                FieldMode::CurveOrder(curve.params().map_err(|m| invalid("curve", m))?)
            }
            (FieldSpec::CurveOrder, None) => {
                return Err(invalid(
                    "curve",
                    "required when field mode is curve-order".into(),
                ))
            }
            (FieldSpec::NoCurve { .. }, Some(_)) => {
                return Err(invalid(
                    "curve",
                    "must be absent when field mode is no-curve".into(),
                ))
            }
            (FieldSpec::NoCurve { prime }, None) => FieldMode::NoCurve(prime.clone()),
        };
        let targets = self.adversary.targets.as_ref().map(|ids| {
            ids.iter()
                .map(|id| UserId::new(*id).map_or(NodeRef::Server, NodeRef::User))
                .collect::<BTreeSet<_>>()
        });
        let sim = SimConfig {
            name: self.name.clone(),
            field,
            threshold_factor: self.threshold_factor,
            tree: self.tree.clone(),
            secret: self.secret.clone(),
            eval_points: self.eval_points,
            epochs: self.epochs,
            ticks_per_epoch: self.ticks_per_epoch,
            renewal: self.renewal,
            round_policy: self.round_policy,
            adversary: AdversaryConfig {
                strategy: self.adversary.strategy,
                budget: self.adversary.budget,
                targets,
                tamper: self.adversary.tamper,
                script: self.adversary.script.clone(),
            },
            events: self
                .events
                .iter()
                .map(|e| MembershipEvent {
                    epoch: e.epoch,
                    change: match e.action {
                        EventAction::Leave => MembershipChange::Leave { user: e.user },
                        EventAction::Rejoin => MembershipChange::Rejoin { position: e.user },
                    },
                })
                .collect(),
            seed: self.seed,
        };
        // Building the world checks the tree, curve, secret and script.
        hiershare::simnet::World::new(sim.clone())
            .map_err(|e| invalid("(scenario)", e.to_string()))?;
        Ok(sim)
    }
}
