//! The global run log: every observable event in a run, in processing
//! order. Anomaly detection is post-hoc over this log plus the final chain,
//! which is exactly the omniscient view a real deployment lacks.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::chain::types::{Address, Coins, Digest, NodeId, TxId};
use crate::node::CommitRecord;
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum LogEvent {
    TxIssued {
        tx: TxId,
        sender: Address,
        at_node: NodeId,
        time: SimTime,
    },
    /// A miner skipped a pool transaction that is invalid at its head.
    TxSkipped {
        node: NodeId,
        tx: TxId,
        reason: String,
        time: SimTime,
    },
    BlockMined {
        node: NodeId,
        hash: Digest,
        height: u64,
        txs: Vec<TxId>,
        withheld: bool,
        time: SimTime,
    },
    /// First insertion of a block into a node's tree.
    BlockAccepted {
        node: NodeId,
        hash: Digest,
        height: u64,
        time: SimTime,
    },
    BlockRejected {
        node: NodeId,
        hash: Digest,
        reason: String,
        time: SimTime,
    },
    /// A block sent to peers (at mine time, gossip, or withhold release).
    BlockAnnounced {
        node: NodeId,
        hash: Digest,
        time: SimTime,
    },
    Commit(CommitRecord),
    /// A previously committed transaction fell out of the observer's
    /// decided region.
    Uncommit {
        tx: TxId,
        node: NodeId,
        committed_at: SimTime,
        committed_height: u64,
        time: SimTime,
    },
    Reorg {
        node: NodeId,
        ancestor_height: u64,
        dropped: Vec<Digest>,
        dropped_heights: Vec<u64>,
        returned_txs: Vec<TxId>,
        new_head: Digest,
        new_height: u64,
        time: SimTime,
    },
    /// A committed sink transaction was honoured (goods handed over).
    /// Logged once per transaction, at the first commit observation.
    GoodsRedeemed {
        tx: TxId,
        spender: Address,
        value: Coins,
        observer: NodeId,
        time: SimTime,
    },
    /// An off-chain payment check was evaluated at a node.
    OffchainCheck {
        node: NodeId,
        contract: crate::contracts::ContractId,
        amount: Coins,
        result: bool,
        time: SimTime,
    },
    PartitionStart {
        groups: Vec<Vec<NodeId>>,
        time: SimTime,
    },
    PartitionHeal {
        time: SimTime,
    },
    StepFired {
        step: usize,
        time: SimTime,
    },
    MiningStarted {
        node: NodeId,
        time: SimTime,
    },
    MiningStopped {
        node: NodeId,
        time: SimTime,
    },
    WithholdSet {
        node: NodeId,
        until_height: Option<u64>,
        time: SimTime,
    },
    WithholdReleased {
        node: NodeId,
        height: u64,
        time: SimTime,
    },
}

impl LogEvent {
    pub fn time(&self) -> SimTime {
        match self {
            LogEvent::TxIssued { time, .. }
            | LogEvent::TxSkipped { time, .. }
            | LogEvent::BlockMined { time, .. }
            | LogEvent::BlockAccepted { time, .. }
            | LogEvent::BlockRejected { time, .. }
            | LogEvent::BlockAnnounced { time, .. }
            | LogEvent::Uncommit { time, .. }
            | LogEvent::Reorg { time, .. }
            | LogEvent::GoodsRedeemed { time, .. }
            | LogEvent::OffchainCheck { time, .. }
            | LogEvent::PartitionStart { time, .. }
            | LogEvent::PartitionHeal { time }
            | LogEvent::StepFired { time, .. }
            | LogEvent::MiningStarted { time, .. }
            | LogEvent::MiningStopped { time, .. }
            | LogEvent::WithholdSet { time, .. }
            | LogEvent::WithholdReleased { time, .. } => *time,
            LogEvent::Commit(rec) => rec.observed_at,
        }
    }
}

/// Ordered event log for one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub events: Vec<LogEvent>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: LogEvent) {
        self.events.push(event);
    }

    pub fn commits(&self) -> impl Iterator<Item = &CommitRecord> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Commit(rec) => Some(rec),
            _ => None,
        })
    }

    /// Writes the line-delimited trace: one event per line, time first.
    pub fn write_trace<W: Write>(&self, mut w: W) -> io::Result<()> {
        for event in &self.events {
            writeln!(w, "t={} {}", event.time(), trace_line(event))?;
        }
        Ok(())
    }
}

fn trace_line(event: &LogEvent) -> String {
    match event {
        LogEvent::TxIssued { tx, sender, at_node, .. } => {
            format!("tx-issued {tx} sender={sender} at={at_node}")
        }
        LogEvent::TxSkipped { node, tx, reason, .. } => {
            format!("tx-skipped {tx} node={node} reason={reason}")
        }
        LogEvent::BlockMined { node, hash, height, txs, withheld, .. } => {
            let ids: Vec<&str> = txs.iter().map(|t| t.as_str()).collect();
            format!(
                "block-mined {hash} node={node} height={height} txs=[{}] withheld={withheld}",
                ids.join(",")
            )
        }
        LogEvent::BlockAccepted { node, hash, height, .. } => {
            format!("block-accepted {hash} node={node} height={height}")
        }
        LogEvent::BlockRejected { node, hash, reason, .. } => {
            format!("block-rejected {hash} node={node} reason={reason}")
        }
        LogEvent::BlockAnnounced { node, hash, .. } => {
            format!("block-announced {hash} node={node}")
        }
        LogEvent::Commit(rec) => format!(
            "commit {} node={} block={} height={}",
            rec.tx_id, rec.observer, rec.block_hash, rec.block_height
        ),
        LogEvent::Uncommit { tx, node, committed_height, .. } => {
            format!("uncommit {tx} node={node} was-height={committed_height}")
        }
        LogEvent::Reorg { node, ancestor_height, dropped, new_height, .. } => format!(
            "reorg node={node} ancestor-height={ancestor_height} dropped={} new-height={new_height}",
            dropped.len()
        ),
        LogEvent::GoodsRedeemed { tx, spender, value, observer, .. } => {
            format!("goods-redeemed {tx} spender={spender} value={value} observer={observer}")
        }
        LogEvent::OffchainCheck { node, contract, amount, result, .. } => {
            format!("offchain-check node={node} contract={contract} amount={amount} result={result}")
        }
        LogEvent::PartitionStart { groups, .. } => {
            let rendered: Vec<String> = groups
                .iter()
                .map(|g| {
                    let names: Vec<&str> = g.iter().map(|n| n.as_str()).collect();
                    format!("{{{}}}", names.join(","))
                })
                .collect();
            format!("partition {}", rendered.join(" | "))
        }
        LogEvent::PartitionHeal { .. } => "heal".to_string(),
        LogEvent::StepFired { step, .. } => format!("step-fired {step}"),
        LogEvent::MiningStarted { node, .. } => format!("mining-started {node}"),
        LogEvent::MiningStopped { node, .. } => format!("mining-stopped {node}"),
        LogEvent::WithholdSet { node, until_height, .. } => {
            format!("withhold-set {node} until={until_height:?}")
        }
        LogEvent::WithholdReleased { node, height, .. } => {
            format!("withhold-released {node} height={height}")
        }
    }
}
