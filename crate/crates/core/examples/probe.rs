//! Scratch probe for run geometry (not part of the test suite).

use reorgsim_core::log::LogEvent;
use reorgsim_core::scenario::{builtins, run};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "fig4".into());
    let seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let script = builtins::by_name(&which).expect("builtin name");
    let result = run(&script, seed).expect("run");
    println!("scenario={} seed={seed}", result.scenario);
    println!(
        "final height={} head={} halted={}",
        result.final_view.height, result.final_view.head, result.halted
    );
    println!("node heads:");
    for (id, (h, height)) in &result.node_heads {
        println!("  {id}: {height} ({h})");
    }
    println!("metrics: {:?}", result.metrics);
    println!("swaps: {}", result.anomalies.swaps.len());
    for s in &result.anomalies.swaps {
        println!("  {s:?}");
    }
    println!("uncommits: {:?}", result.anomalies.uncommits);
    println!("double_spends: {:?}", result.anomalies.double_spends);
    println!("--- reorgs ---");
    for e in &result.log.events {
        if let LogEvent::Reorg { node, ancestor_height, dropped_heights, returned_txs, new_height, time, .. } = e {
            println!(
                "t={time} node={node} ancestor={ancestor_height} dropped_heights={:?} returned={returned_txs:?} new_height={new_height}",
                dropped_heights
            );
        }
    }
    println!("--- tx placement in final chain ---");
    for b in &result.final_blocks {
        if !b.txs.is_empty() {
            println!("height {}: {:?} (miner {})", b.height, b.tx_ids(), b.miner);
        }
    }
    println!("--- final chain executions ---");
    for e in &result.replay.executions {
        println!("h{} {} [{}]: {:?}", e.height, e.tx_id, e.sender, e.outcome);
    }
    if std::env::args().nth(3).as_deref() == Some("-v") {
        println!("--- full trace ---");
        let mut buf = Vec::new();
        result.log.write_trace(&mut buf).unwrap();
        println!("{}", String::from_utf8(buf).unwrap());
    }
}
