//! Scratch probe for the heavier statistical runs (not part of the suite).

use std::collections::BTreeMap;

use reorgsim_core::chain::types::{Address, NodeId, TxId};
use reorgsim_core::log::LogEvent;
use reorgsim_core::scenario::{
    run, Action, LinkSpec, ScenarioScript, ScriptNode, Step, StopSpec, Trigger, TxKindSpec, TxSpec,
};

fn two_miner_race(blocks: u64) -> ScenarioScript {
    ScenarioScript {
        name: "hashpower".into(),
        k: 11,
        difficulty: 0x400,
        block_reward: 0,
        report_node: NodeId::from("m1"),
        conditional_pairs: vec![],
        sinks: Default::default(),
        redemption_observers: None,
        genesis: [(Address::from("alice"), 1000)].into_iter().collect(),
        contracts: vec![],
        nodes: vec![
            ScriptNode {
                id: NodeId::from("m1"),
                hash_power: 1.0,
                miner: true,
                mining_at_start: true,
                withhold_until_height: None,
                censor: Default::default(),
            },
            ScriptNode {
                id: NodeId::from("m2"),
                hash_power: 24.0,
                miner: true,
                mining_at_start: true,
                withhold_until_height: None,
                censor: Default::default(),
            },
        ],
        links: LinkSpec::default(),
        steps: vec![Step {
            trigger: Trigger::WhenHeight {
                node: NodeId::from("m1"),
                height: blocks,
            },
            actions: vec![Action::Halt],
        }],
        stop: StopSpec { max_time_s: 1e9 },
    }
}

fn commit_arithmetic(k: u64, n_txs: u64, spacing_s: f64) -> ScenarioScript {
    let mut steps = Vec::new();
    for i in 0..n_txs {
        steps.push(Step {
            trigger: Trigger::AtTime {
                time_s: spacing_s * (i + 1) as f64,
            },
            actions: vec![Action::IssueTx(TxSpec {
                id: TxId(format!("t{i}")),
                sender: Address::from("alice"),
                at: NodeId::from("m1"),
                kind: TxKindSpec::Transfer {
                    to: Address::from("bob"),
                    amount: 1,
                },
            })],
        });
    }
    steps.push(Step {
        trigger: Trigger::WhenCommitted {
            node: NodeId::from("m1"),
            tx: TxId(format!("t{}", n_txs - 1)),
        },
        actions: vec![Action::Halt],
    });
    let mut genesis: BTreeMap<Address, u64> = BTreeMap::new();
    genesis.insert(Address::from("alice"), n_txs * 2);
    ScenarioScript {
        name: "commit-arithmetic".into(),
        k,
        difficulty: 0x400,
        block_reward: 0,
        report_node: NodeId::from("m1"),
        conditional_pairs: vec![],
        sinks: Default::default(),
        redemption_observers: None,
        genesis,
        contracts: vec![],
        nodes: vec![ScriptNode {
            id: NodeId::from("m1"),
            hash_power: 1.0,
            miner: true,
            mining_at_start: true,
            withhold_until_height: None,
            censor: Default::default(),
        }],
        links: LinkSpec::default(),
        steps,
        stop: StopSpec { max_time_s: 1e9 },
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "power".into());
    match which.as_str() {
        "power" => {
            let blocks: u64 = std::env::args()
                .nth(2)
                .and_then(|s| s.parse().ok())
                .unwrap_or(100);
            let seed: u64 = std::env::args()
                .nth(3)
                .and_then(|s| s.parse().ok())
                .unwrap_or(42);
            let start = std::time::Instant::now();
            let result = run(&two_miner_race(blocks), seed).unwrap();
            let mut mined: BTreeMap<NodeId, u64> = BTreeMap::new();
            for e in &result.log.events {
                if let LogEvent::BlockMined { node, .. } = e {
                    *mined.entry(node.clone()).or_default() += 1;
                }
            }
            let c1 = mined.get(&NodeId::from("m1")).copied().unwrap_or(0);
            let c2 = mined.get(&NodeId::from("m2")).copied().unwrap_or(0);
            println!(
                "height={} produced: m1={c1} m2={c2} ratio={:.2} (target 24) elapsed={:?}",
                result.final_view.height,
                c2 as f64 / c1 as f64,
                start.elapsed()
            );
        }
        "commit" => {
            let n: u64 = std::env::args()
                .nth(2)
                .and_then(|s| s.parse().ok())
                .unwrap_or(200);
            let start = std::time::Instant::now();
            let script = commit_arithmetic(11, n, 20.0);
            let result = run(&script, 7).unwrap();
            // mean issue-to-commit at the single node
            let mut issues: BTreeMap<TxId, f64> = BTreeMap::new();
            let mut delays = Vec::new();
            for e in &result.log.events {
                match e {
                    LogEvent::TxIssued { tx, time, .. } => {
                        issues.insert(tx.clone(), time.as_secs_f64());
                    }
                    LogEvent::Commit(rec) => {
                        if let Some(t0) = issues.get(&rec.tx_id) {
                            delays.push(rec.observed_at.as_secs_f64() - t0);
                        }
                    }
                    _ => {}
                }
            }
            let mean = delays.iter().sum::<f64>() / delays.len() as f64;
            println!(
                "txs committed={} mean issue-to-commit={:.2}s (target 162) height={} elapsed={:?}",
                delays.len(),
                mean,
                result.final_view.height,
                start.elapsed()
            );
        }
        other => eprintln!("unknown probe {other}"),
    }
}
