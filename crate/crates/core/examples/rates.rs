//! Scratch aggregate probe: swap rates across difficulties, attack win
//! rates (not part of the test suite).

use reorgsim_core::metrics::{linear_fit, mean, spearman};
use reorgsim_core::scenario::{builtins, run, sweep, SweepConfig};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "sweep".into());
    let runs: u32 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(12);
    match which.as_str() {
        "sweep" => {
            let config = SweepConfig {
                difficulties: vec![0x2000, 0x4000, 0x8000, 0x10000, 0x20000, 0x40000],
                runs_per_difficulty: runs,
                seed_base: 100,
            };
            let start = std::time::Instant::now();
            let result = sweep(builtins::fig4_racy, &config).unwrap();
            let mut freqs = Vec::new();
            let mut terms = Vec::new();
            let mut diss = Vec::new();
            let mut diffs = Vec::new();
            for s in &result.summary {
                println!(
                    "d={:#x} swap={}/{} ({:.2}) term={:?} diss={:?}",
                    s.difficulty, s.swap_count, s.runs, s.swap_frequency,
                    s.mean_termination_s, s.mean_dissemination_s
                );
                freqs.push(s.swap_frequency);
                diffs.push(s.difficulty as f64);
                if let Some(t) = s.mean_termination_s {
                    terms.push(t);
                }
                if let Some(d) = s.mean_dissemination_s {
                    diss.push(d);
                }
            }
            println!("overall swap frequency: {:?}", mean(&freqs));
            println!("spearman(diff, swap): {:?}", spearman(&diffs, &freqs));
            if terms.len() == diffs.len() {
                println!("term fit: {:?}", linear_fit(&diffs, &terms));
            }
            println!("dissemination range: {:?} .. {:?}",
                diss.iter().cloned().fold(f64::INFINITY, f64::min),
                diss.iter().cloned().fold(0.0, f64::max));
            println!("elapsed: {:?}", start.elapsed());
        }
        "fiftyone" => {
            let power: f64 = std::env::args()
                .nth(3)
                .and_then(|s| s.parse().ok())
                .unwrap_or(0.6);
            let script = builtins::fifty_one_percent(power);
            let start = std::time::Instant::now();
            let mut wins = 0;
            for seed in 0..u64::from(runs) {
                let result = run(&script, seed).unwrap();
                let excluded = !result
                    .final_blocks
                    .iter()
                    .any(|b| b.txs.iter().any(|t| t.id.as_str() == "t1"));
                if excluded {
                    wins += 1;
                }
            }
            println!("power={power} exclusion wins: {wins}/{runs} ({:?})", start.elapsed());
        }
        "weak" => {
            let script = builtins::doublespend_weak();
            let mut successes = 0;
            for seed in 0..u64::from(runs) {
                let result = run(&script, seed).unwrap();
                let listed = !result.anomalies.double_spends.is_empty();
                if listed {
                    successes += 1;
                }
            }
            println!("weak attacker double-spend successes: {successes}/{runs}");
        }
        other => eprintln!("unknown probe {other}"),
    }
}
