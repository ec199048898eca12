//! Built-in scenario scripts.
//!
//! `fig4` is the fully choreographed nine-step execution: a partitioned
//! fast miner privately outgrows the public branch carrying a committed
//! conditional payment, then forces the reorganization that reverses the
//! commit order. `fig4_racy` keeps only the partition and the 24:1 power
//! ratio and lets timing decide, for Monte Carlo sweeps. The remaining
//! scripts cover the double-spend attack, the majority-hash-power variant,
//! and the two conditional-payment contract patterns.

use std::collections::BTreeMap;

use crate::chain::types::{Address, Coins, NodeId, TxId};
use crate::contracts::{ContractCall, ContractConfig, ContractId};
use crate::scenario::{
    Action, LinkSpec, ScenarioScript, ScriptNode, Step, StopSpec, Trigger, TxKindSpec, TxSpec,
};

fn node(id: &str, hash_power: f64) -> ScriptNode {
    ScriptNode {
        id: NodeId::from(id),
        hash_power,
        miner: hash_power > 0.0,
        mining_at_start: hash_power > 0.0,
        withhold_until_height: None,
        censor: Default::default(),
    }
}

fn genesis(entries: &[(&str, Coins)]) -> BTreeMap<Address, Coins> {
    entries.iter().map(|(a, c)| (Address::from(*a), *c)).collect()
}

fn transfer(id: &str, sender: &str, at: &str, to: &str, amount: Coins) -> Action {
    Action::IssueTx(TxSpec {
        id: TxId::from(id),
        sender: Address::from(sender),
        at: NodeId::from(at),
        kind: TxKindSpec::Transfer {
            to: Address::from(to),
            amount,
        },
    })
}

fn at_time(time_s: f64, actions: Vec<Action>) -> Step {
    Step {
        trigger: Trigger::AtTime { time_s },
        actions,
    }
}

fn when_height(node: &str, height: u64, actions: Vec<Action>) -> Step {
    Step {
        trigger: Trigger::WhenHeight {
            node: NodeId::from(node),
            height,
        },
        actions,
    }
}

fn when_committed(node: &str, tx: &str, actions: Vec<Action>) -> Step {
    Step {
        trigger: Trigger::WhenCommitted {
            node: NodeId::from(node),
            tx: TxId::from(tx),
        },
        actions,
    }
}

/// The deterministic reorganization execution with three peers.
///
/// p1 (slow miner) and p2 (client) share a partition side; p3 holds 24x
/// the hash power and mines privately from block 1. p1 mines the
/// conditional payment t1 at height 3 plus twelve more blocks; once p2
/// observes t1 committed (k=11 deep) it issues t2 and the network heals.
/// p3 mines t2 at height 33 and withholds until height 45, whose
/// announcement forces p1/p2 to drop their blocks at heights 2-15.
pub fn fig4() -> ScenarioScript {
    ScenarioScript {
        name: "fig4".to_string(),
        k: 11,
        difficulty: 0x400,
        block_reward: 0,
        report_node: NodeId::from("p2"),
        conditional_pairs: vec![(TxId::from("t1"), TxId::from("t2"))],
        sinks: Default::default(),
        redemption_observers: None,
        genesis: genesis(&[("alice", 1000), ("bob", 1000), ("carole", 1000)]),
        contracts: vec![],
        nodes: vec![
            node("p1", 1.0),
            node("p2", 0.0),
            {
                let mut p3 = node("p3", 24.0);
                p3.mining_at_start = false;
                p3
            },
        ],
        links: LinkSpec::default(),
        steps: vec![
            // p1's first block reaches everyone; then the partition cuts p3
            // off and it starts mining privately on top of block 1.
            when_height(
                "p3",
                1,
                vec![
                    Action::Partition {
                        groups: vec![
                            vec![NodeId::from("p1"), NodeId::from("p2")],
                            vec![NodeId::from("p3")],
                        ],
                        until_s: None,
                    },
                    Action::SetWithhold {
                        node: NodeId::from("p3"),
                        until_height: Some(45),
                    },
                    Action::StartMining {
                        node: NodeId::from("p3"),
                    },
                ],
            ),
            // The conditional payment goes in once p1's side is at height 2,
            // so t1 lands at height 3.
            when_height("p2", 2, vec![transfer("t1", "alice", "p2", "bob", 100)]),
            // p1 mines t1 plus twelve more blocks and stops at height 15.
            when_height("p1", 15, vec![Action::StopMining { node: NodeId::from("p1") }]),
            // p3 pauses its private branch at 32 to pick up t2 next.
            when_height("p3", 32, vec![Action::StopMining { node: NodeId::from("p3") }]),
            // t1 committed in p2's own view: issue the dependent t2 and heal.
            when_committed(
                "p2",
                "t1",
                vec![
                    transfer("t2", "bob", "p2", "carole", 100),
                    Action::Heal,
                ],
            ),
            // t2 (and the queued t1) reach p3: mine them at height 33.
            Step {
                trigger: Trigger::WhenTxKnown {
                    node: NodeId::from("p3"),
                    tx: TxId::from("t2"),
                },
                actions: vec![Action::StartMining {
                    node: NodeId::from("p3"),
                }],
            },
            // Height 45 releases the withheld branch; stop so the final
            // chain is exactly 45 blocks.
            when_height("p3", 45, vec![Action::StopMining { node: NodeId::from("p3") }]),
            when_height("p2", 45, vec![Action::Halt]),
        ],
        stop: StopSpec { max_time_s: 10_000.0 },
    }
}

/// The racy variant for Monte Carlo experiments: same topology, but only
/// the partition and the 24:1 speed ratio are scripted. Whether the anomaly
/// appears depends on whether the conditional commit beats the run's time
/// budget, which scales with difficulty.
pub fn fig4_racy(difficulty: u64) -> ScenarioScript {
    // 160 s at the default 0x400 difficulty, scaled linearly: mining times
    // scale with difficulty, so the race's odds stay put.
    let max_time_s = 160.0 * difficulty as f64 / 0x400 as f64;
    ScenarioScript {
        name: "fig4-racy".to_string(),
        k: 10,
        difficulty,
        block_reward: 0,
        report_node: NodeId::from("p2"),
        conditional_pairs: vec![(TxId::from("t1"), TxId::from("t2"))],
        sinks: Default::default(),
        redemption_observers: None,
        genesis: genesis(&[("alice", 1000), ("bob", 1000), ("carole", 1000)]),
        contracts: vec![],
        nodes: vec![node("p1", 1.0), node("p2", 0.0), {
            let mut p3 = node("p3", 24.0);
            p3.withhold_until_height = Some(45);
            p3
        }],
        links: LinkSpec::default(),
        steps: vec![
            at_time(
                0.0,
                vec![
                    Action::Partition {
                        groups: vec![
                            vec![NodeId::from("p1"), NodeId::from("p2")],
                            vec![NodeId::from("p3")],
                        ],
                        until_s: None,
                    },
                    transfer("t1", "alice", "p2", "bob", 100),
                ],
            ),
            when_committed(
                "p2",
                "t1",
                vec![
                    transfer("t2", "bob", "p2", "carole", 100),
                    Action::Heal,
                ],
            ),
            when_committed("p2", "t2", vec![Action::Halt]),
        ],
        stop: StopSpec { max_time_s },
    }
}

/// The double-spend attack. mallory spends its whole balance on goods
/// publicly (t1), privately mines a chain where the same coins buy goods
/// again (t2), lets the merchant honour t1 at commit depth, then publishes
/// the longer private chain. k=3 keeps the run short.
pub fn doublespend() -> ScenarioScript {
    ScenarioScript {
        name: "doublespend".to_string(),
        k: 3,
        difficulty: 0x400,
        block_reward: 0,
        report_node: NodeId::from("merchant"),
        conditional_pairs: vec![],
        sinks: [Address::from("shop")].into_iter().collect(),
        redemption_observers: Some(
            [NodeId::from("harry"), NodeId::from("merchant")].into_iter().collect(),
        ),
        genesis: genesis(&[("mallory", 1000), ("harry", 1000)]),
        contracts: vec![],
        nodes: vec![
            node("harry", 1.0),
            {
                let mut mallory = node("mallory", 4.0);
                mallory.withhold_until_height = Some(5);
                mallory
            },
            node("merchant", 0.0),
        ],
        links: LinkSpec::default(),
        steps: vec![
            at_time(
                0.0,
                vec![
                    Action::Partition {
                        groups: vec![
                            vec![NodeId::from("mallory")],
                            vec![NodeId::from("harry"), NodeId::from("merchant")],
                        ],
                        until_s: None,
                    },
                    // The public spend is submitted at the honest miner; the
                    // conflicting private spend stays on mallory's side.
                    transfer("t1", "mallory", "harry", "shop", 1000),
                    transfer("t2", "mallory", "mallory", "shop", 1000),
                ],
            ),
            // Public chain: t1 at height 1 plus k more blocks, then park.
            when_height("harry", 4, vec![Action::StopMining { node: NodeId::from("harry") }]),
            // Private chain: t2 at height 1, withheld until height k+2.
            when_height("mallory", 5, vec![Action::StopMining { node: NodeId::from("mallory") }]),
            // Goods collected once the merchant sees t1 committed; then the
            // network heals and the longer private chain takes over.
            when_committed("merchant", "t1", vec![Action::Heal]),
            // The honest miner resumes on the new chain; re-mining t1 now
            // fails for insufficient funds.
            when_height("harry", 5, vec![Action::StartMining { node: NodeId::from("harry") }]),
            when_height("harry", 7, vec![Action::StopMining { node: NodeId::from("harry") }]),
            // Halt once the slower merchant has caught up too.
            when_height("merchant", 7, vec![Action::Halt]),
        ],
        stop: StopSpec { max_time_s: 2_000.0 },
    }
}

/// Control variant: the attacker is slower than the victim and publishes
/// every block as it is mined. The double spend fails in the large
/// majority of seeds.
pub fn doublespend_weak() -> ScenarioScript {
    let mut script = doublespend();
    script.name = "doublespend-weak".to_string();
    for n in &mut script.nodes {
        if n.id == NodeId::from("mallory") {
            n.hash_power = 0.5;
            n.withhold_until_height = None;
        }
    }
    script.steps = vec![
        script.steps[0].clone(),
        when_height("harry", 4, vec![Action::StopMining { node: NodeId::from("harry") }]),
        when_committed("merchant", "t1", vec![Action::Heal]),
        when_height("harry", 7, vec![Action::Halt]),
    ];
    script.stop.max_time_s = 5_000.0;
    script
}

/// Majority-hash-power exclusion: no partition at all. The attacker mines
/// privately from the genesis block, censoring its own public spend, and
/// publishes once its branch reaches height 6; the honest miner races it.
/// `attacker_power` is the attacker's share of a total hash power of 1.
pub fn fifty_one_percent(attacker_power: f64) -> ScenarioScript {
    assert!((0.0..1.0).contains(&attacker_power));
    let honest_power = 1.0 - attacker_power;
    let race_height = 6;
    ScenarioScript {
        name: "fiftyone".to_string(),
        k: 2,
        difficulty: 0x400,
        block_reward: 0,
        report_node: NodeId::from("harry"),
        conditional_pairs: vec![],
        sinks: [Address::from("shop")].into_iter().collect(),
        redemption_observers: Some([NodeId::from("harry")].into_iter().collect()),
        genesis: genesis(&[("mallory", 1000), ("harry", 1000)]),
        contracts: vec![],
        nodes: vec![node("harry", honest_power), {
            let mut mallory = node("mallory", attacker_power);
            if mallory.miner {
                mallory.withhold_until_height = Some(race_height);
            }
            mallory.censor = [TxId::from("t1")].into_iter().collect();
            mallory
        }],
        links: LinkSpec::default(),
        steps: vec![
            at_time(
                0.0,
                vec![
                    transfer("t1", "mallory", "harry", "shop", 1000),
                    transfer("t2", "mallory", "mallory", "shop", 1000),
                ],
            ),
            when_height("harry", race_height, vec![Action::Halt]),
        ],
        stop: StopSpec { max_time_s: 5_000.0 },
    }
}

fn escrow_contract() -> ContractConfig {
    ContractConfig {
        id: ContractId::from("escrow"),
        party_a: Address::from("alice"),
        party_b: Address::from("bob"),
        balances: [(Address::from("alice"), 500), (Address::from("bob"), 200)]
            .into_iter()
            .collect(),
    }
}

fn conditional_payment_script(name: &str, forward_call: ContractCall) -> ScenarioScript {
    ScenarioScript {
        name: name.to_string(),
        k: 2,
        difficulty: 0x400,
        block_reward: 0,
        report_node: NodeId::from("p2"),
        conditional_pairs: vec![],
        sinks: Default::default(),
        redemption_observers: None,
        genesis: genesis(&[("alice", 1000), ("bob", 1000), ("carole", 1000)]),
        contracts: vec![escrow_contract()],
        nodes: vec![node("p1", 1.0), node("p2", 0.0), {
            let mut p3 = node("p3", 24.0);
            p3.mining_at_start = false;
            p3.withhold_until_height = Some(4);
            // The adversary censors Alice's payment so the winning branch
            // never contains it.
            p3.censor = [TxId::from("pay-a")].into_iter().collect();
            p3
        }],
        links: LinkSpec::default(),
        steps: vec![
            at_time(
                0.0,
                vec![
                    Action::Partition {
                        groups: vec![
                            vec![NodeId::from("p1"), NodeId::from("p2")],
                            vec![NodeId::from("p3")],
                        ],
                        until_s: None,
                    },
                    Action::IssueTx(TxSpec {
                        id: TxId::from("pay-a"),
                        sender: Address::from("alice"),
                        at: NodeId::from("p2"),
                        kind: TxKindSpec::Call {
                            contract: ContractId::from("escrow"),
                            call: ContractCall::SendTo {
                                to: Address::from("bob"),
                                amount: 100,
                            },
                        },
                    }),
                ],
            ),
            // Bob's client polls its own node; the moment the payment shows
            // up in its current view, it fires the forwarding call. The
            // reorg below makes that observation stale.
            Step {
                trigger: Trigger::WhenCheckPayment {
                    node: NodeId::from("p2"),
                    contract: ContractId::from("escrow"),
                    amount: 50,
                },
                actions: vec![
                    Action::IssueTx(TxSpec {
                        id: TxId::from("pay-b"),
                        sender: Address::from("bob"),
                        at: NodeId::from("p2"),
                        kind: TxKindSpec::Call {
                            contract: ContractId::from("escrow"),
                            call: forward_call,
                        },
                    }),
                    Action::Heal,
                    Action::StartMining { node: NodeId::from("p3") },
                ],
            },
            when_height("p1", 2, vec![Action::StopMining { node: NodeId::from("p1") }]),
            when_height("p3", 4, vec![Action::StopMining { node: NodeId::from("p3") }]),
            when_height("p2", 4, vec![Action::Halt]),
        ],
        stop: StopSpec { max_time_s: 2_000.0 },
    }
}

/// The fragile pattern: an off-chain payment check followed by an
/// unconditional on-chain transfer. The scripted reorganization removes
/// Alice's payment after Bob's check returned true, so the final chain
/// pays Carole with no payment from Alice anywhere before it.
pub fn offchain_witness() -> ScenarioScript {
    conditional_payment_script(
        "offchain-witness",
        ContractCall::SendUnconditional {
            to: Address::from("carole"),
            amount: 50,
        },
    )
}

/// The robust twin: the same adversarial schedule, but the forwarding call
/// checks the recorded payment on-chain. On the winning branch the check
/// re-evaluates to false and the call throws, so Carole is never paid
/// without Alice's payment in the same replay.
pub fn onchain_guard() -> ScenarioScript {
    conditional_payment_script(
        "onchain-guard",
        ContractCall::SendIfReceived {
            to: Address::from("carole"),
            amount: 50,
        },
    )
}

/// Name-indexed access for the CLI.
pub fn by_name(name: &str) -> Option<ScenarioScript> {
    match name {
        "fig4" => Some(fig4()),
        "fig4-racy" => Some(fig4_racy(0x400)),
        "doublespend" => Some(doublespend()),
        "doublespend-weak" => Some(doublespend_weak()),
        "fiftyone" => Some(fifty_one_percent(0.6)),
        "offchain-witness" => Some(offchain_witness()),
        "onchain-guard" => Some(onchain_guard()),
        _ => None,
    }
}

pub const BUILTIN_NAMES: &[&str] = &[
    "fig4",
    "fig4-racy",
    "doublespend",
    "doublespend-weak",
    "fiftyone",
    "offchain-witness",
    "onchain-guard",
];
