//! Machine-readable run artifacts: `report.json` and `metrics.csv`.
//!
//! Output is byte-identical across repeated identical invocations: field
//! order is fixed, maps are ordered, and no wall-clock timestamps appear —
//! a provenance block carries the seed and configuration instead.

use serde::Serialize;

use crate::chain::types::{Digest, NodeId, TxId};
use crate::log::LogEvent;
use crate::metrics::{AnomalyReport, RunMetrics};
use crate::scenario::runner::RunResult;
use crate::scenario::sweep::SweepResult;

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub scenario: String,
    pub seed: u64,
    pub k: u64,
    pub difficulty: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockSummary {
    pub height: u64,
    pub hash: Digest,
    pub miner: NodeId,
    pub txs: Vec<TxId>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalChain {
    pub head: Digest,
    pub height: u64,
    pub blocks: Vec<BlockSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub halted_by_script: bool,
    pub commit_observations: usize,
    pub uncommit_observations: usize,
    pub goods_redemptions: usize,
    pub blocks_mined: usize,
}

/// The full report for one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub summary: RunSummary,
    pub final_chain: FinalChain,
    pub node_heads: std::collections::BTreeMap<NodeId, (Digest, u64)>,
    pub anomalies: AnomalyReport,
    pub metrics: RunMetrics,
}

impl RunReport {
    pub fn from_run(result: &RunResult) -> Self {
        let count = |pred: fn(&LogEvent) -> bool| result.log.events.iter().filter(|e| pred(e)).count();
        RunReport {
            provenance: Provenance {
                tool: "reorgsim",
                version: env!("CARGO_PKG_VERSION"),
                scenario: result.scenario.clone(),
                seed: result.seed,
                k: result.k,
                difficulty: result.difficulty,
            },
            summary: RunSummary {
                halted_by_script: result.halted,
                commit_observations: count(|e| matches!(e, LogEvent::Commit(_))),
                uncommit_observations: count(|e| matches!(e, LogEvent::Uncommit { .. })),
                goods_redemptions: count(|e| matches!(e, LogEvent::GoodsRedeemed { .. })),
                blocks_mined: count(|e| matches!(e, LogEvent::BlockMined { .. })),
            },
            final_chain: FinalChain {
                head: result.final_view.head,
                height: result.final_view.height,
                blocks: result
                    .final_blocks
                    .iter()
                    .map(|b| BlockSummary {
                        height: b.height,
                        hash: b.hash,
                        miner: b.miner.clone(),
                        txs: b.tx_ids(),
                    })
                    .collect(),
            },
            node_heads: result.node_heads.clone(),
            anomalies: result.anomalies.clone(),
            metrics: result.metrics.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// Fixed `metrics.csv` header.
pub const METRICS_CSV_HEADER: &str =
    "run_id,seed,difficulty,k,swap,uncommit_count,t2_final_height,termination_time_s,dissemination_time_s";

fn opt_u64(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_secs(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One `metrics.csv` row.
pub fn metrics_csv_row(
    run_id: u64,
    seed: u64,
    difficulty: u64,
    k: u64,
    metrics: &RunMetrics,
    uncommit_count: usize,
) -> String {
    format!(
        "{run_id},{seed},{difficulty},{k},{},{uncommit_count},{},{},{}",
        metrics.swap,
        opt_u64(metrics.t2_final_height),
        opt_secs(metrics.termination_time_s),
        opt_secs(metrics.dissemination_time_s),
    )
}

/// `metrics.csv` for a single run.
pub fn run_metrics_csv(result: &RunResult) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    out.push_str(&metrics_csv_row(
        0,
        result.seed,
        result.difficulty,
        result.k,
        &result.metrics,
        result.anomalies.uncommits.len(),
    ));
    out.push('\n');
    out
}

/// Per-run `metrics.csv` for a sweep, ordered by (difficulty, seed).
pub fn sweep_metrics_csv(sweep: &SweepResult) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for row in &sweep.rows {
        out.push_str(&metrics_csv_row(
            row.run_id,
            row.seed,
            row.difficulty,
            row.k,
            &row.metrics,
            row.uncommit_count,
        ));
        out.push('\n');
    }
    out
}

/// Per-difficulty `summary.csv` for a sweep.
pub fn sweep_summary_csv(sweep: &SweepResult) -> String {
    let mut out =
        String::from("difficulty,runs,swap_count,swap_frequency,mean_termination_s,mean_dissemination_s\n");
    for s in &sweep.summary {
        out.push_str(&format!(
            "{},{},{},{:.6},{},{}\n",
            s.difficulty,
            s.runs,
            s.swap_count,
            s.swap_frequency,
            opt_secs(s.mean_termination_s),
            opt_secs(s.mean_dissemination_s),
        ));
    }
    out
}
