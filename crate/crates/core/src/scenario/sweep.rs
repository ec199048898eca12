//! Difficulty sweeps: seeded runs of a script template across a difficulty
//! range, aggregated into swap frequency and timing summaries.

use serde::{Deserialize, Serialize};

use crate::metrics::{mean, RunMetrics};
use crate::scenario::runner::{run, RunError};
use crate::scenario::ScenarioScript;

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub difficulties: Vec<u64>,
    pub runs_per_difficulty: u32,
    pub seed_base: u64,
}

/// One run's worth of sweep data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_id: u64,
    pub seed: u64,
    pub difficulty: u64,
    pub k: u64,
    pub metrics: RunMetrics,
    pub uncommit_count: usize,
}

/// Per-difficulty aggregates: the quantities plotted against difficulty.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DifficultySummary {
    pub difficulty: u64,
    pub runs: u32,
    pub swap_count: u32,
    pub swap_frequency: f64,
    pub mean_termination_s: Option<f64>,
    pub mean_dissemination_s: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<DifficultySummary>,
}

/// Runs `runs_per_difficulty` seeded runs at each difficulty. The same seed
/// set `seed_base..seed_base+runs` is used at every difficulty so that
/// difficulties differ only in the mining-time scale. Aggregation order is
/// (difficulty, seed) regardless of any execution interleaving.
pub fn sweep<F>(template: F, config: &SweepConfig) -> Result<SweepResult, RunError>
where
    F: Fn(u64) -> ScenarioScript,
{
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut run_id = 0u64;
    for &difficulty in &config.difficulties {
        let script = template(difficulty);
        let mut swap_count = 0u32;
        let mut terminations = Vec::new();
        let mut disseminations = Vec::new();
        for i in 0..config.runs_per_difficulty {
            let seed = config.seed_base + u64::from(i);
            let result = run(&script, seed)?;
            if result.metrics.swap {
                swap_count += 1;
            }
            if let Some(t) = result.metrics.termination_time_s {
                terminations.push(t);
            }
            if let Some(d) = result.metrics.dissemination_time_s {
                disseminations.push(d);
            }
            rows.push(SweepRow {
                run_id,
                seed,
                difficulty,
                k: script.k,
                metrics: result.metrics.clone(),
                uncommit_count: result.anomalies.uncommits.len(),
            });
            run_id += 1;
        }
        summary.push(DifficultySummary {
            difficulty,
            runs: config.runs_per_difficulty,
            swap_count,
            swap_frequency: f64::from(swap_count) / f64::from(config.runs_per_difficulty),
            mean_termination_s: mean(&terminations),
            mean_dissemination_s: mean(&disseminations),
        });
    }
    Ok(SweepResult { rows, summary })
}
