//! Drives one scripted run to completion: sets up nodes and links, pumps
//! the event queue, fires triggered steps, and assembles the result.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::chain::ledger::{ChainParams, ChainReplay};
use crate::chain::tree::CanonicalView;
use crate::chain::types::{genesis_block, Address, Block, Digest, NodeId, Transaction, TxId, TxKind};
use crate::chain::apply_chain;
use crate::log::{LogEvent, RunLog};
use crate::metrics::{analyze, compute_metrics, AnomalyReport, RunMetrics};
use crate::net::{derive_node_rngs, EventPayload, Network};
use crate::node::{Node, NodeConfig};
use crate::scenario::{Action, ScenarioError, ScenarioScript, Step, Trigger, TxKindSpec};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Re-check every structural invariant (tree shape, ledger vs replay
    /// oracle, conservation, pool/chain disjointness) after every event.
    /// Slow; meant for tests.
    pub check_invariants: bool,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scenario failed validation: {0:?}")]
    Invalid(Vec<ScenarioError>),
}

/// Everything a run produced. A deterministic function of (script, seed).
#[derive(Clone, Debug)]
pub struct RunResult {
    pub scenario: String,
    pub seed: u64,
    pub k: u64,
    pub difficulty: u64,
    /// Canonical view of the script's report node at the end of the run.
    pub final_view: CanonicalView,
    pub final_blocks: Vec<Block>,
    /// From-genesis replay of the final chain with per-tx outcomes.
    pub replay: ChainReplay,
    pub node_heads: BTreeMap<NodeId, (Digest, u64)>,
    pub log: RunLog,
    pub anomalies: AnomalyReport,
    pub metrics: RunMetrics,
    /// True when a Halt action ended the run (as opposed to the time cap or
    /// the queue draining).
    pub halted: bool,
}

pub fn run(script: &ScenarioScript, seed: u64) -> Result<RunResult, RunError> {
    run_with(script, seed, RunOptions::default())
}

pub fn run_with(
    script: &ScenarioScript,
    seed: u64,
    options: RunOptions,
) -> Result<RunResult, RunError> {
    script.validate().map_err(RunError::Invalid)?;
    let mut runner = Runner::new(script, seed);
    runner.run(options);
    Ok(runner.finish())
}

struct Runner<'a> {
    script: &'a ScenarioScript,
    seed: u64,
    params: ChainParams,
    nodes: BTreeMap<NodeId, Node>,
    net: Network,
    log: RunLog,
    fired: Vec<bool>,
    /// Next client_seq per sender, assigned in issue order.
    seqs: BTreeMap<Address, u64>,
    issued: BTreeMap<TxId, Transaction>,
    redeemed: BTreeSet<TxId>,
    /// Log index up to which commits have been scanned for redemptions.
    scanned: usize,
    halted: bool,
}

impl<'a> Runner<'a> {
    fn new(script: &'a ScenarioScript, seed: u64) -> Self {
        let params = ChainParams {
            genesis_alloc: script.genesis.clone(),
            genesis_contracts: script.contracts.clone(),
            block_reward: script.block_reward,
            difficulty: script.difficulty,
        };
        let node_ids: Vec<NodeId> = script.nodes.iter().map(|n| n.id.clone()).collect();
        let mut rngs = derive_node_rngs(seed, &node_ids);
        let genesis = genesis_block(script.difficulty);

        let default_delay = SimTime::from_secs_f64(script.links.default_delay_s);
        let mut net = Network::full_mesh(&node_ids, default_delay);
        for link in &script.links.overrides {
            net.set_delay(&link.from, &link.to, SimTime::from_secs_f64(link.delay_s));
        }

        let mut nodes = BTreeMap::new();
        for spec in &script.nodes {
            let cfg = NodeConfig {
                id: spec.id.clone(),
                hash_power: spec.hash_power,
                is_miner: spec.miner,
                mining_at_start: spec.mining_at_start,
                withhold_until_height: spec.withhold_until_height,
                censor: spec.censor.clone(),
                k: script.k,
            };
            let rng = rngs.remove(&spec.id).unwrap();
            let node = Node::new(cfg, genesis.clone(), &params, node_ids.clone(), rng);
            nodes.insert(spec.id.clone(), node);
        }

        Runner {
            script,
            seed,
            params,
            nodes,
            net,
            log: RunLog::new(),
            fired: vec![false; script.steps.len()],
            seqs: BTreeMap::new(),
            issued: BTreeMap::new(),
            redeemed: BTreeSet::new(),
            scanned: 0,
            halted: false,
        }
    }

    fn run(&mut self, options: RunOptions) {
        let max_time = SimTime::from_secs_f64(self.script.stop.max_time_s);

        // Absolute-time steps become queue events; the rest are triggers
        // evaluated after every event.
        for (index, step) in self.script.steps.iter().enumerate() {
            if let Trigger::AtTime { time_s } = step.trigger {
                self.net
                    .queue
                    .schedule(SimTime::from_secs_f64(time_s), EventPayload::ScenarioStep {
                        step: index,
                    });
            }
        }
        for node in self.nodes.values_mut() {
            node.ensure_mining(&mut self.net);
        }

        while !self.halted {
            let Some(event) = self.net.queue.pop() else {
                break; // queue drained: the run terminates
            };
            if event.at > max_time {
                break; // configured cut-off for non-terminating scripts
            }
            match event.payload {
                EventPayload::Deliver { to, msg } => {
                    let node = self.nodes.get_mut(&to).expect("deliver to known node");
                    node.on_receive(msg, &mut self.net, &mut self.log, &self.params);
                }
                EventPayload::MineComplete { node, parent } => {
                    let miner = self.nodes.get_mut(&node).expect("mine at known node");
                    miner.on_mine_complete(parent, &mut self.net, &mut self.log, &self.params);
                }
                EventPayload::ScenarioStep { step } => {
                    self.fire_step(step);
                }
                EventPayload::HealLinks { pairs } => {
                    self.net.heal_pairs(&pairs);
                    self.log.push(LogEvent::PartitionHeal {
                        time: self.net.queue.now(),
                    });
                }
            }
            self.post_event();
            if options.check_invariants {
                for node in self.nodes.values() {
                    node.check_invariants(&self.params)
                        .unwrap_or_else(|msg| panic!("invariant violated: {msg}"));
                }
            }
        }
    }

    /// Redemption bookkeeping and trigger evaluation, repeated until no
    /// further step fires (actions can enable later triggers).
    fn post_event(&mut self) {
        loop {
            self.scan_redemptions();
            let mut fired_any = false;
            for index in 0..self.script.steps.len() {
                if self.fired[index] || self.halted {
                    continue;
                }
                let step = &self.script.steps[index];
                if self.trigger_ready(&step.trigger) {
                    self.fire_step(index);
                    fired_any = true;
                }
            }
            if !fired_any {
                break;
            }
        }
    }

    fn trigger_ready(&mut self, trigger: &Trigger) -> bool {
        match trigger {
            Trigger::AtTime { .. } => false, // event-scheduled, never polled
            Trigger::WhenHeight { node, height } => self.nodes[node].head.height >= *height,
            Trigger::WhenCommitted { node, tx } => self.nodes[node].committed.contains_key(tx),
            Trigger::WhenTxKnown { node, tx } => self.nodes[node].knows_tx(tx),
            Trigger::WhenCheckPayment {
                node,
                contract,
                amount,
            } => {
                let ready = self.nodes[node].check_payment(contract, *amount) == Some(true);
                if ready {
                    self.log.push(LogEvent::OffchainCheck {
                        node: node.clone(),
                        contract: contract.clone(),
                        amount: *amount,
                        result: true,
                        time: self.net.queue.now(),
                    });
                }
                ready
            }
        }
    }

    fn fire_step(&mut self, index: usize) {
        if self.fired[index] {
            return;
        }
        self.fired[index] = true;
        self.log.push(LogEvent::StepFired {
            step: index,
            time: self.net.queue.now(),
        });
        let step: Step = self.script.steps[index].clone();
        for action in &step.actions {
            self.execute(action);
            if self.halted {
                break;
            }
        }
    }

    fn execute(&mut self, action: &Action) {
        let now = self.net.queue.now();
        match action {
            Action::IssueTx(spec) => {
                let seq = self.seqs.entry(spec.sender.clone()).or_insert(0);
                *seq += 1;
                let tx = Transaction {
                    id: spec.id.clone(),
                    sender: spec.sender.clone(),
                    kind: match spec.kind.clone() {
                        TxKindSpec::Transfer { to, amount } => TxKind::Transfer { to, amount },
                        TxKindSpec::Call { contract, call } => {
                            TxKind::ContractCall { contract, call }
                        }
                        TxKindSpec::Deploy { config } => TxKind::Deploy(config),
                        TxKindSpec::Multisig {
                            inputs,
                            recipient,
                            arbitrator,
                            signatures,
                        } => TxKind::MultisigJoint {
                            inputs,
                            recipient,
                            arbitrator,
                            signatures,
                        },
                    },
                    client_seq: *seq,
                    issue_time: now,
                };
                self.log.push(LogEvent::TxIssued {
                    tx: tx.id.clone(),
                    sender: tx.sender.clone(),
                    at_node: spec.at.clone(),
                    time: now,
                });
                self.issued.insert(tx.id.clone(), tx.clone());
                let node = self.nodes.get_mut(&spec.at).expect("issue at known node");
                node.submit_tx(tx, &mut self.net);
            }
            Action::Partition { groups, until_s } => {
                let until = until_s.map(SimTime::from_secs_f64);
                self.net.partition(groups, until);
                self.log.push(LogEvent::PartitionStart {
                    groups: groups.clone(),
                    time: now,
                });
            }
            Action::Heal => {
                self.net.heal_all();
                self.log.push(LogEvent::PartitionHeal { time: now });
            }
            Action::SetWithhold { node, until_height } => {
                let node = self.nodes.get_mut(node).expect("known node");
                node.set_withhold(*until_height, &mut self.net, &mut self.log);
            }
            Action::StopMining { node } => {
                let node = self.nodes.get_mut(node).expect("known node");
                node.set_mining(false, &mut self.net, &mut self.log);
            }
            Action::StartMining { node } => {
                let node = self.nodes.get_mut(node).expect("known node");
                node.set_mining(true, &mut self.net, &mut self.log);
            }
            Action::Halt => {
                self.halted = true;
            }
        }
    }

    /// Turns fresh commit observations of sink transfers into redemption
    /// events, once per transaction.
    fn scan_redemptions(&mut self) {
        if self.script.sinks.is_empty() {
            self.scanned = self.log.events.len();
            return;
        }
        let mut redemptions = Vec::new();
        for event in &self.log.events[self.scanned..] {
            let LogEvent::Commit(rec) = event else {
                continue;
            };
            if let Some(observers) = &self.script.redemption_observers {
                if !observers.contains(&rec.observer) {
                    continue;
                }
            }
            if self.redeemed.contains(&rec.tx_id) {
                continue;
            }
            let Some(tx) = self.issued.get(&rec.tx_id) else {
                continue;
            };
            let TxKind::Transfer { to, amount } = &tx.kind else {
                continue;
            };
            if self.script.sinks.contains(to) {
                self.redeemed.insert(rec.tx_id.clone());
                redemptions.push(LogEvent::GoodsRedeemed {
                    tx: rec.tx_id.clone(),
                    spender: tx.sender.clone(),
                    value: *amount,
                    observer: rec.observer.clone(),
                    time: rec.observed_at,
                });
            }
        }
        self.scanned = self.log.events.len();
        for event in redemptions {
            self.log.push(event);
        }
    }

    fn finish(self) -> RunResult {
        let report_node = &self.nodes[&self.script.report_node];
        let final_view = report_node.head.clone();
        let final_blocks: Vec<Block> = final_view
            .chain
            .iter()
            .map(|h| report_node.tree.get(h).unwrap().clone())
            .collect();
        let replay = apply_chain(final_blocks.iter(), &self.params)
            .expect("final canonical chain replays");
        let node_ids: Vec<NodeId> = self.nodes.keys().cloned().collect();
        let anomalies = analyze(
            &self.log,
            &final_blocks,
            self.script.k,
            &self.script.conditional_pairs,
            &self.params,
        );
        let metrics = compute_metrics(
            &self.log,
            &final_blocks,
            self.script.k,
            &self.script.conditional_pairs,
            &node_ids,
        );
        let node_heads = self
            .nodes
            .iter()
            .map(|(id, n)| (id.clone(), (n.head.head, n.head.height)))
            .collect();
        RunResult {
            scenario: self.script.name.clone(),
            seed: self.seed,
            k: self.script.k,
            difficulty: self.script.difficulty,
            final_view,
            final_blocks,
            replay,
            node_heads,
            log: self.log,
            anomalies,
            metrics,
            halted: self.halted,
        }
    }
}
