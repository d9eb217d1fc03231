//! Scenario files: a versioned JSON schema validated into runnable
//! configurations.
//!
//! Parsing is strict (`deny_unknown_fields` everywhere) so typos fail loudly,
//! and semantic validation reports every violation at once rather than the
//! first one found.

use crate::netsim::{NetworkParams, ReputationMode, ScenarioConfig};
use crate::types::{Account, AccountId, Behavior, ProtocolParams, ValidatorPolicy};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// The one scenario schema version this build reads.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("scenario i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Behavior names as they appear in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorName {
    Honest,
    IllicitProposer,
    MaliciousValidator,
}

impl From<BehaviorName> for Behavior {
    fn from(b: BehaviorName) -> Behavior {
        match b {
            BehaviorName::Honest => Behavior::Honest,
            BehaviorName::IllicitProposer => Behavior::IllicitProposer,
            BehaviorName::MaliciousValidator => Behavior::MaliciousValidator,
        }
    }
}

fn default_behavior() -> BehaviorName {
    BehaviorName::Honest
}

/// One account row in a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountEntry {
    pub id: u32,
    pub stake: u64,
    #[serde(default = "default_behavior")]
    pub behavior: BehaviorName,
    #[serde(default)]
    pub illicit_rate: f64,
    /// Score the oracle reputation mode assigns; defaults to 1.0.
    #[serde(default)]
    pub oracle_score: Option<f64>,
    #[serde(default)]
    pub p_empty: f64,
    #[serde(default)]
    pub p_support_malicious: f64,
}

/// Optional protocol overrides; unset fields keep the library defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub hashlen: Option<u16>,
    pub tau_proposer: Option<f64>,
    pub committee_votes: Option<f64>,
    pub p_th: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_steps: Option<u32>,
    pub epoch_rounds: Option<u32>,
    pub window_rounds: Option<u32>,
    pub reputation_enabled: Option<bool>,
    pub compensation_enabled: Option<bool>,
    pub alternative_leader_rule: Option<bool>,
}

impl ProtocolSection {
    fn build(&self) -> ProtocolParams {
        let d = ProtocolParams::default();
        ProtocolParams {
            hashlen: self.hashlen.unwrap_or(d.hashlen),
            tau_proposer: self.tau_proposer.unwrap_or(d.tau_proposer),
            committee_votes: self.committee_votes.unwrap_or(d.committee_votes),
            p_th: self.p_th.unwrap_or(d.p_th),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            epoch_rounds: self.epoch_rounds.unwrap_or(d.epoch_rounds),
            window_rounds: self.window_rounds.unwrap_or(d.window_rounds),
            reputation_enabled: self.reputation_enabled.unwrap_or(d.reputation_enabled),
            compensation_enabled: self.compensation_enabled.unwrap_or(d.compensation_enabled),
            alternative_leader_rule: self.alternative_leader_rule.unwrap_or(d.alternative_leader_rule),
        }
    }
}

/// Optional network overrides; unset fields keep the library defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub delay_min: Option<u64>,
    pub delay_max: Option<u64>,
    pub drop_rate: Option<f64>,
    pub txs_per_account: Option<u32>,
}

impl NetworkSection {
    fn build(&self) -> NetworkParams {
        let d = NetworkParams::default();
        NetworkParams {
            delay_min: self.delay_min.unwrap_or(d.delay_min),
            delay_max: self.delay_max.unwrap_or(d.delay_max),
            drop_rate: self.drop_rate.unwrap_or(d.drop_rate),
            txs_per_account: self.txs_per_account.unwrap_or(d.txs_per_account),
        }
    }
}

/// Reputation source names as they appear in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReputationModeName {
    Oracle,
    SlidingWindow,
}

/// Reputation configuration: the mode plus optional per-node divergences
/// (maps keyed by decimal account ids, since JSON keys are strings).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReputationSection {
    pub mode: Option<ReputationModeName>,
    #[serde(default)]
    pub per_node_overrides: BTreeMap<String, BTreeMap<String, f64>>,
}

/// A whole scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub rounds: u64,
    pub rng_seed: u64,
    pub accounts: Vec<AccountEntry>,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub reputation: ReputationSection,
}

fn parse_id_key(key: &str, context: &str, errors: &mut Vec<String>) -> Option<AccountId> {
    match key.parse::<u32>() {
        Ok(id) => Some(AccountId(id)),
        Err(_) => {
            errors.push(format!("{context}: key '{key}' is not an account id"));
            None
        }
    }
}

impl ScenarioFile {
    /// Validates the file and lowers it into a runnable configuration.
    pub fn into_config(self) -> Result<ScenarioConfig, ConfigError> {
        let mut errors = Vec::new();
        if self.version != SCHEMA_VERSION {
            errors.push(format!(
                "unsupported scenario version {} (this build reads {SCHEMA_VERSION})",
                self.version
            ));
        }
        let accounts: Vec<Account> = self
            .accounts
            .iter()
            .map(|e| Account {
                id: AccountId(e.id),
                stake: e.stake,
                behavior: e.behavior.into(),
                illicit_rate: e.illicit_rate,
                policy: ValidatorPolicy {
                    p_empty: e.p_empty,
                    p_support_malicious: e.p_support_malicious,
                },
            })
            .collect();
        let mode = match self.reputation.mode.unwrap_or(ReputationModeName::SlidingWindow) {
            ReputationModeName::SlidingWindow => {
                if !self.reputation.per_node_overrides.is_empty() {
                    errors.push(
                        "per_node_overrides require the oracle reputation mode".to_string(),
                    );
                }
                ReputationMode::SlidingWindow
            }
            ReputationModeName::Oracle => {
                let base: BTreeMap<AccountId, f64> = self
                    .accounts
                    .iter()
                    .map(|e| (AccountId(e.id), e.oracle_score.unwrap_or(1.0)))
                    .collect();
                if self.reputation.per_node_overrides.is_empty() {
                    ReputationMode::Oracle(base)
                } else {
                    let mut overrides = BTreeMap::new();
                    for (node_key, map) in &self.reputation.per_node_overrides {
                        let Some(node) = parse_id_key(node_key, "per_node_overrides", &mut errors)
                        else {
                            continue;
                        };
                        let mut scores = BTreeMap::new();
                        for (acct_key, &score) in map {
                            if let Some(acct) = parse_id_key(
                                acct_key,
                                &format!("per_node_overrides.{node_key}"),
                                &mut errors,
                            ) {
                                scores.insert(acct, score);
                            }
                        }
                        overrides.insert(node, scores);
                    }
                    ReputationMode::PerNodeOverride { base, overrides }
                }
            }
        };
        let config = ScenarioConfig {
            accounts,
            params: self.protocol.build(),
            network: self.network.build(),
            rounds: self.rounds,
            rng_seed: self.rng_seed,
            reputation_mode: mode,
        };
        match config.validate() {
            Ok(()) => {}
            Err(crate::netsim::SimError::InvalidScenario(more)) => errors.extend(more),
            Err(other) => errors.push(other.to_string()),
        }
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}

/// Parses scenario JSON text into a validated configuration.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let file: ScenarioFile = serde_json::from_str(text)?;
    file.into_config()
}

/// Loads and validates a scenario file from disk.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
            "version": 1,
            "rounds": 10,
            "rng_seed": 42,
            "accounts": [
                {"id": 0, "stake": 5},
                {"id": 1, "stake": 5, "behavior": "illicit_proposer", "illicit_rate": 1.0, "oracle_score": 0.1}
            ]
        }"#
        .to_string()
    }

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let config = parse_scenario(&minimal()).unwrap();
        assert_eq!(config.rounds, 10);
        assert_eq!(config.rng_seed, 42);
        assert_eq!(config.accounts.len(), 2);
        assert_eq!(config.accounts[0].behavior, Behavior::Honest);
        assert_eq!(config.accounts[1].behavior, Behavior::IllicitProposer);
        assert_eq!(config.params, ProtocolParams::default());
        assert_eq!(config.network, NetworkParams::default());
        assert_eq!(config.reputation_mode, ReputationMode::SlidingWindow);
    }

    #[test]
    fn oracle_mode_collects_scores_with_default_one() {
        let text = minimal().replace(
            "\"accounts\"",
            "\"reputation\": {\"mode\": \"oracle\"}, \"accounts\"",
        );
        let config = parse_scenario(&text).unwrap();
        match config.reputation_mode {
            ReputationMode::Oracle(map) => {
                assert_eq!(map[&AccountId(0)], 1.0);
                assert_eq!(map[&AccountId(1)], 0.1);
            }
            other => panic!("expected oracle mode, got {other:?}"),
        }
    }

    #[test]
    fn per_node_overrides_lower_into_the_layered_mode() {
        let text = minimal().replace(
            "\"accounts\"",
            r#""reputation": {"mode": "oracle", "per_node_overrides": {"0": {"1": 0.7}}}, "accounts""#,
        );
        let config = parse_scenario(&text).unwrap();
        match config.reputation_mode {
            ReputationMode::PerNodeOverride { base, overrides } => {
                assert_eq!(base[&AccountId(1)], 0.1);
                assert_eq!(overrides[&AccountId(0)][&AccountId(1)], 0.7);
            }
            other => panic!("expected layered mode, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = minimal().replace("\"rounds\"", "\"bogus\": 1, \"rounds\"");
        assert!(matches!(parse_scenario(&text), Err(ConfigError::Parse(_))));
        let text = minimal().replace("\"stake\": 5}", "\"stake\": 5, \"weight\": 2}");
        assert!(matches!(parse_scenario(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = minimal().replace("\"version\": 1", "\"version\": 2");
        match parse_scenario(&text) {
            Err(ConfigError::Invalid(errors)) => {
                assert!(errors.iter().any(|e| e.contains("version")));
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn semantic_violations_are_all_reported() {
        let text = r#"{
            "version": 3,
            "rounds": 0,
            "rng_seed": 1,
            "accounts": [
                {"id": 0, "stake": 5, "illicit_rate": 0.5},
                {"id": 0, "stake": 5}
            ],
            "network": {"drop_rate": 2.0},
            "reputation": {"mode": "oracle", "per_node_overrides": {"zero": {"0": 0.5}}}
        }"#;
        match parse_scenario(text) {
            Err(ConfigError::Invalid(errors)) => {
                assert!(errors.len() >= 5, "expected many violations, got {errors:?}");
                assert!(errors.iter().any(|e| e.contains("version")));
                assert!(errors.iter().any(|e| e.contains("zero")));
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn overrides_in_sliding_window_mode_are_an_error() {
        let text = minimal().replace(
            "\"accounts\"",
            r#""reputation": {"per_node_overrides": {"0": {"1": 0.7}}}, "accounts""#,
        );
        match parse_scenario(&text) {
            Err(ConfigError::Invalid(errors)) => {
                assert!(errors.iter().any(|e| e.contains("oracle")));
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn scenario_files_roundtrip_through_serde() {
        let file: ScenarioFile = serde_json::from_str(&minimal()).unwrap();
        let text = serde_json::to_string_pretty(&file).unwrap();
        let again: ScenarioFile = serde_json::from_str(&text).unwrap();
        assert_eq!(again.rounds, file.rounds);
        assert_eq!(again.accounts.len(), file.accounts.len());
    }
}
