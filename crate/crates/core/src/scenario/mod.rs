//! Declarative scenario scripts: nodes, link delays, genesis allocation,
//! contracts, and an ordered list of triggered steps. Scripts are data, so
//! a run is a reproducible artifact: `(script, seed)` fully determines the
//! event log.
//!
//! Scripts serialize to TOML; the files under `scenarios/` are golden
//! copies of the built-in constructors in [`builtins`].

pub mod builtins;
pub mod runner;
pub mod sweep;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::types::{Address, Coins, NodeId, TxId};
use crate::contracts::{ContractCall, ContractConfig, ContractId};

pub use runner::{run, RunError, RunOptions, RunResult};
pub use sweep::{sweep, DifficultySummary, SweepConfig, SweepResult, SweepRow};

/// A node as declared in a script.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptNode {
    pub id: NodeId,
    #[serde(default)]
    pub hash_power: f64,
    #[serde(default)]
    pub miner: bool,
    /// Miners mine from t=0 unless staggered by the script.
    #[serde(default = "default_true")]
    pub mining_at_start: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub withhold_until_height: Option<u64>,
    /// Transactions this node refuses to mine.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub censor: BTreeSet<TxId>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkOverride {
    pub from: NodeId,
    pub to: NodeId,
    pub delay_s: f64,
}

/// Link configuration: full mesh with a default delay plus per-link
/// overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    /// 0.05 simulated seconds by default (LAN-like).
    pub default_delay_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<LinkOverride>,
}

impl Default for LinkSpec {
    fn default() -> Self {
        LinkSpec {
            default_delay_s: 0.05,
            overrides: Vec::new(),
        }
    }
}

/// When a step fires. Height and commit triggers read only the named node's
/// own view: commits are local knowledge, never global.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// At an absolute simulated time.
    AtTime { time_s: f64 },
    /// When the node's canonical height first reaches `height`.
    WhenHeight { node: NodeId, height: u64 },
    /// When the node's own commit observer first records `tx`.
    WhenCommitted { node: NodeId, tx: TxId },
    /// When `tx` first appears in the node's pool or canonical chain.
    WhenTxKnown { node: NodeId, tx: TxId },
    /// When an off-chain payment check at the node first returns true.
    WhenCheckPayment {
        node: NodeId,
        contract: ContractId,
        amount: Coins,
    },
}

/// What a transaction does, as written in a script. Sequence numbers are
/// assigned automatically per sender in issue order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKindSpec {
    Transfer { to: Address, amount: Coins },
    Call {
        contract: ContractId,
        call: ContractCall,
    },
    Deploy { config: ContractConfig },
    Multisig {
        inputs: Vec<(Address, Coins)>,
        recipient: Address,
        arbitrator: Address,
        signatures: Vec<Address>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxSpec {
    pub id: TxId,
    pub sender: Address,
    /// The node the transaction is submitted at.
    pub at: NodeId,
    pub kind: TxKindSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    IssueTx(TxSpec),
    Partition {
        groups: Vec<Vec<NodeId>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        until_s: Option<f64>,
    },
    /// Unblocks every link and releases queued messages.
    Heal,
    SetWithhold {
        node: NodeId,
        until_height: Option<u64>,
    },
    StopMining { node: NodeId },
    StartMining { node: NodeId },
    /// Ends the run.
    Halt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub trigger: Trigger,
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopSpec {
    /// Hard cap on simulated time; a script that never halts is cut off here.
    pub max_time_s: f64,
}

/// A complete scenario script.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    /// Confirmation depth for the commit rule.
    pub k: u64,
    pub difficulty: u64,
    #[serde(default)]
    pub block_reward: Coins,
    /// The node whose final view defines the run's canonical chain.
    pub report_node: NodeId,
    /// Declared conditional dependencies (first, second): the second tx is
    /// issued only after the first commits, and the swap detector checks
    /// exactly these pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditional_pairs: Vec<(TxId, TxId)>,
    /// Addresses acting as goods sinks: a committed transfer into one is a
    /// redemption event.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub sinks: BTreeSet<Address>,
    /// Nodes whose commit observations can hand over goods (the merchant
    /// side). Unset means any node: a chain still hidden by its miner then
    /// also counts, which no counterparty would honour.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redemption_observers: Option<BTreeSet<NodeId>>,
    pub genesis: BTreeMap<Address, Coins>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contracts: Vec<ContractConfig>,
    pub nodes: Vec<ScriptNode>,
    #[serde(default)]
    pub links: LinkSpec,
    pub steps: Vec<Step>,
    pub stop: StopSpec,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("script has no nodes")]
    NoNodes,
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node {id}: hash_power must be positive exactly for miners")]
    BadHashPower { id: NodeId },
    #[error("report node {0} is not declared")]
    UnknownReportNode(NodeId),
    #[error("step {step}: unknown node {node}")]
    UnknownNode { step: usize, node: NodeId },
    #[error("step {step}: duplicate transaction id {tx}")]
    DuplicateTx { step: usize, tx: TxId },
    #[error("step {step}: transfer amount must be positive")]
    ZeroAmount { step: usize },
    #[error("step {step}: partition groups are not disjoint")]
    OverlappingGroups { step: usize },
    #[error("step {step}: trigger references unknown transaction {tx}")]
    UnknownTxRef { step: usize, tx: TxId },
    #[error("conditional pair references unknown transaction {0}")]
    UnknownPairTx(TxId),
    #[error("max_time_s must be positive")]
    BadStopCondition,
    #[error("link override references unknown node {0}")]
    UnknownLinkNode(NodeId),
}

impl ScenarioScript {
    /// Structural validation; errors carry step indices.
    pub fn validate(&self) -> Result<(), Vec<ScenarioError>> {
        let mut errors = Vec::new();
        if self.nodes.is_empty() {
            errors.push(ScenarioError::NoNodes);
        }
        let mut node_ids = BTreeSet::new();
        for node in &self.nodes {
            if !node_ids.insert(node.id.clone()) {
                errors.push(ScenarioError::DuplicateNode(node.id.clone()));
            }
            if (node.hash_power > 0.0) != node.miner {
                errors.push(ScenarioError::BadHashPower { id: node.id.clone() });
            }
        }
        if !node_ids.contains(&self.report_node) {
            errors.push(ScenarioError::UnknownReportNode(self.report_node.clone()));
        }
        for link in &self.links.overrides {
            for id in [&link.from, &link.to] {
                if !node_ids.contains(id) {
                    errors.push(ScenarioError::UnknownLinkNode(id.clone()));
                }
            }
        }
        if !(self.stop.max_time_s > 0.0) {
            errors.push(ScenarioError::BadStopCondition);
        }
        if let Some(observers) = &self.redemption_observers {
            for id in observers {
                if !node_ids.contains(id) {
                    errors.push(ScenarioError::UnknownLinkNode(id.clone()));
                }
            }
        }

        let known_node = |step: usize, id: &NodeId, errors: &mut Vec<ScenarioError>| {
            if !node_ids.contains(id) {
                errors.push(ScenarioError::UnknownNode {
                    step,
                    node: id.clone(),
                });
            }
        };
        let mut tx_ids = BTreeSet::new();
        for (step, s) in self.steps.iter().enumerate() {
            match &s.trigger {
                Trigger::AtTime { .. } => {}
                Trigger::WhenHeight { node, .. } => known_node(step, node, &mut errors),
                Trigger::WhenCommitted { node, tx } | Trigger::WhenTxKnown { node, tx } => {
                    known_node(step, node, &mut errors);
                    // The referenced tx must be issued by some step.
                    let issued_somewhere = self.steps.iter().any(|other| {
                        other.actions.iter().any(|a| matches!(
                            a,
                            Action::IssueTx(spec) if spec.id == *tx
                        ))
                    });
                    if !issued_somewhere {
                        errors.push(ScenarioError::UnknownTxRef {
                            step,
                            tx: tx.clone(),
                        });
                    }
                }
                Trigger::WhenCheckPayment { node, .. } => known_node(step, node, &mut errors),
            }
            for action in &s.actions {
                match action {
                    Action::IssueTx(spec) => {
                        known_node(step, &spec.at, &mut errors);
                        if !tx_ids.insert(spec.id.clone()) {
                            errors.push(ScenarioError::DuplicateTx {
                                step,
                                tx: spec.id.clone(),
                            });
                        }
                        match &spec.kind {
                            TxKindSpec::Transfer { amount, .. } if *amount == 0 => {
                                errors.push(ScenarioError::ZeroAmount { step });
                            }
                            TxKindSpec::Multisig { inputs, .. }
                                if inputs.iter().any(|(_, a)| *a == 0) =>
                            {
                                errors.push(ScenarioError::ZeroAmount { step });
                            }
                            _ => {}
                        }
                    }
                    Action::Partition { groups, .. } => {
                        let mut seen = BTreeSet::new();
                        for group in groups {
                            for id in group {
                                known_node(step, id, &mut errors);
                                if !seen.insert(id.clone()) {
                                    errors.push(ScenarioError::OverlappingGroups { step });
                                }
                            }
                        }
                    }
                    Action::SetWithhold { node, .. }
                    | Action::StopMining { node }
                    | Action::StartMining { node } => known_node(step, node, &mut errors),
                    Action::Heal | Action::Halt => {}
                }
            }
        }
        for (first, second) in &self.conditional_pairs {
            for tx in [first, second] {
                if !tx_ids.contains(tx) {
                    errors.push(ScenarioError::UnknownPairTx(tx.clone()));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scripts serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtins;

    #[test]
    fn builtins_validate() {
        for script in [
            builtins::fig4(),
            builtins::fig4_racy(0x400),
            builtins::doublespend(),
            builtins::doublespend_weak(),
            builtins::fifty_one_percent(0.6),
            builtins::offchain_witness(),
            builtins::onchain_guard(),
        ] {
            script.validate().unwrap_or_else(|e| panic!("{}: {e:?}", script.name));
        }
    }

    #[test]
    fn toml_round_trip_preserves_scripts() {
        for script in [builtins::fig4(), builtins::doublespend(), builtins::offchain_witness()] {
            let text = script.to_toml();
            let parsed = ScenarioScript::from_toml(&text)
                .unwrap_or_else(|e| panic!("{}: {e}", script.name));
            assert_eq!(parsed, script);
        }
    }

    #[test]
    fn validation_reports_step_indices() {
        let mut script = builtins::fig4();
        script.steps[2].actions.push(Action::StopMining {
            node: NodeId::from("ghost"),
        });
        let errors = script.validate().unwrap_err();
        assert!(errors.contains(&ScenarioError::UnknownNode {
            step: 2,
            node: NodeId::from("ghost")
        }));

        let mut script = builtins::fig4();
        script.report_node = NodeId::from("nobody");
        assert!(script
            .validate()
            .unwrap_err()
            .contains(&ScenarioError::UnknownReportNode(NodeId::from("nobody"))));

        let mut script = builtins::fig4();
        script.stop.max_time_s = 0.0;
        assert!(script
            .validate()
            .unwrap_err()
            .contains(&ScenarioError::BadStopCondition));
    }
}
