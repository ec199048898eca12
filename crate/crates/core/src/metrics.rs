//! Post-hoc anomaly detection over the omniscient run log, plus per-run
//! metrics. Everything here is a pure function of the log and the final
//! canonical chain, so every reported anomaly can be re-derived from the
//! evidence it cites.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chain::ledger::{ChainParams, LedgerState};
use crate::chain::types::{Address, Block, Coins, NodeId, TxId};
use crate::log::{LogEvent, RunLog};
use crate::node::CommitRecord;
use crate::time::SimTime;

/// Two dependent transactions observed committed in reverse order: the
/// first was committed somewhere before the second was issued, yet the
/// final chain has the second no later than the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapFinding {
    pub first: TxId,
    pub second: TxId,
    /// The commit observation that justified issuing the second tx.
    pub commit_evidence: CommitRecord,
    pub second_issued_at: SimTime,
    /// Height of the first tx in the final chain, if present at all.
    pub first_final_height: Option<u64>,
    pub second_final_height: u64,
}

/// A transaction once observed committed that the final chain lacks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncommitFinding {
    pub tx: TxId,
    pub observer: NodeId,
    pub committed_at: SimTime,
    pub committed_height: u64,
    pub final_status: String,
}

/// An address that redeemed more goods than it ever held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleSpendFinding {
    pub spender: Address,
    pub redemption_count: u64,
    pub redeemed_value: Coins,
    pub max_available: Coins,
    pub redeemed_txs: Vec<TxId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub swaps: Vec<SwapFinding>,
    pub uncommits: Vec<UncommitFinding>,
    pub double_spends: Vec<DoubleSpendFinding>,
}

/// Metrics for the run's declared conditional pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub swap: bool,
    /// Final height of the second (conditional) transaction.
    pub t2_final_height: Option<u64>,
    /// Issue-to-commit delay of the second transaction at its issuing node.
    pub termination_time_s: Option<f64>,
    /// Time from the second transaction's block becoming public to the last
    /// peer holding it.
    pub dissemination_time_s: Option<f64>,
    /// Whether dissemination was measured from the first announcement
    /// (withheld block) rather than from mining.
    pub dissemination_from_announcement: bool,
}

fn final_positions(final_blocks: &[Block]) -> BTreeMap<TxId, (crate::chain::Digest, u64)> {
    let mut map = BTreeMap::new();
    for block in final_blocks {
        for tx in &block.txs {
            map.insert(tx.id.clone(), (block.hash, block.height));
        }
    }
    map
}

fn issue_event(log: &RunLog, tx: &TxId) -> Option<(SimTime, NodeId)> {
    log.events.iter().find_map(|e| match e {
        LogEvent::TxIssued { tx: id, at_node, time, .. } if id == tx => {
            Some((*time, at_node.clone()))
        }
        _ => None,
    })
}

/// Swap detection for one declared dependency `(first, second)`. True —
/// returned with evidence — iff some node recorded `first` committed no
/// later than `second` was issued, and in the final chain `second` is
/// decided while `first` is absent or no earlier than `second`.
pub fn detect_swap(
    log: &RunLog,
    final_blocks: &[Block],
    k: u64,
    first: &TxId,
    second: &TxId,
) -> Option<SwapFinding> {
    let (second_issued_at, _) = issue_event(log, second)?;
    let evidence = log
        .commits()
        .find(|rec| rec.tx_id == *first && rec.observed_at <= second_issued_at)?
        .clone();
    let positions = final_positions(final_blocks);
    let head_height = final_blocks.last()?.height;
    let (_, second_height) = positions.get(second).copied()?;
    if head_height < second_height + k {
        return None; // the second tx never re-reached commit depth
    }
    let first_final_height = positions.get(first).map(|(_, h)| *h);
    match first_final_height {
        Some(h) if h < second_height => None, // order preserved after all
        _ => Some(SwapFinding {
            first: first.clone(),
            second: second.clone(),
            commit_evidence: evidence,
            second_issued_at,
            first_final_height,
            second_final_height: second_height,
        }),
    }
}

/// Every transaction with a commit record somewhere that is entirely absent
/// from the final canonical chain. One finding per transaction, citing its
/// earliest commit observation.
pub fn detect_uncommit(log: &RunLog, final_blocks: &[Block]) -> Vec<UncommitFinding> {
    let positions = final_positions(final_blocks);
    let mut findings = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in log.commits() {
        if !seen.insert(rec.tx_id.clone()) {
            continue;
        }
        if !positions.contains_key(&rec.tx_id) {
            findings.push(UncommitFinding {
                tx: rec.tx_id.clone(),
                observer: rec.observer.clone(),
                committed_at: rec.observed_at,
                committed_height: rec.block_height,
                final_status: "absent-from-final-chain".to_string(),
            });
        }
    }
    findings
}

/// Maximum balance each address ever held along the final chain replay,
/// tracked transaction by transaction.
fn max_available(final_blocks: &[Block], params: &ChainParams) -> BTreeMap<Address, Coins> {
    let mut state = LedgerState::genesis(params);
    let mut maxes: BTreeMap<Address, Coins> = state.balances.clone();
    let bump = |state: &LedgerState, maxes: &mut BTreeMap<Address, Coins>| {
        for (addr, bal) in &state.balances {
            let entry = maxes.entry(addr.clone()).or_insert(0);
            if *bal > *entry {
                *entry = *bal;
            }
        }
    };
    for block in final_blocks.iter().skip(1) {
        if params.block_reward > 0 {
            *state.balances.entry(block.miner_address()).or_insert(0) += params.block_reward;
            bump(&state, &mut maxes);
        }
        for tx in &block.txs {
            state.apply_tx(tx);
            bump(&state, &mut maxes);
        }
    }
    maxes
}

/// Addresses whose total redeemed goods value exceeds the maximum balance
/// they ever had available on the final chain.
pub fn detect_double_spend(
    log: &RunLog,
    final_blocks: &[Block],
    params: &ChainParams,
) -> Vec<DoubleSpendFinding> {
    let mut redeemed: BTreeMap<Address, (u64, Coins, Vec<TxId>)> = BTreeMap::new();
    for event in &log.events {
        if let LogEvent::GoodsRedeemed { tx, spender, value, .. } = event {
            let entry = redeemed.entry(spender.clone()).or_default();
            entry.0 += 1;
            entry.1 += value;
            entry.2.push(tx.clone());
        }
    }
    if redeemed.is_empty() {
        return Vec::new();
    }
    let maxes = max_available(final_blocks, params);
    redeemed
        .into_iter()
        .filter_map(|(spender, (count, value, txs))| {
            let available = maxes.get(&spender).copied().unwrap_or(0);
            (value > available).then_some(DoubleSpendFinding {
                spender,
                redemption_count: count,
                redeemed_value: value,
                max_available: available,
                redeemed_txs: txs,
            })
        })
        .collect()
}

/// Full anomaly report for a run.
pub fn analyze(
    log: &RunLog,
    final_blocks: &[Block],
    k: u64,
    pairs: &[(TxId, TxId)],
    params: &ChainParams,
) -> AnomalyReport {
    AnomalyReport {
        swaps: pairs
            .iter()
            .filter_map(|(first, second)| detect_swap(log, final_blocks, k, first, second))
            .collect(),
        uncommits: detect_uncommit(log, final_blocks),
        double_spends: detect_double_spend(log, final_blocks, params),
    }
}

/// Per-run metrics for the first declared conditional pair.
pub fn compute_metrics(
    log: &RunLog,
    final_blocks: &[Block],
    k: u64,
    pairs: &[(TxId, TxId)],
    nodes: &[NodeId],
) -> RunMetrics {
    let Some((first, second)) = pairs.first() else {
        return RunMetrics::default();
    };
    let swap = detect_swap(log, final_blocks, k, first, second).is_some();
    let positions = final_positions(final_blocks);
    let t2_final_height = positions.get(second).map(|(_, h)| *h);

    let termination_time_s = issue_event(log, second).and_then(|(issued, at_node)| {
        log.commits()
            .find(|rec| rec.tx_id == *second && rec.observer == at_node)
            .map(|rec| (rec.observed_at - issued).as_secs_f64())
    });

    let mut dissemination_time_s = None;
    let mut dissemination_from_announcement = false;
    if let Some((hash, _)) = positions.get(second) {
        let mined = log.events.iter().find_map(|e| match e {
            LogEvent::BlockMined { hash: h, withheld, time, .. } if h == hash => {
                Some((*time, *withheld))
            }
            _ => None,
        });
        let announced = log
            .events
            .iter()
            .filter_map(|e| match e {
                LogEvent::BlockAnnounced { hash: h, time, .. } if h == hash => Some(*time),
                _ => None,
            })
            .min();
        let mut last_accept = SimTime::ZERO;
        let mut held_everywhere = true;
        for node in nodes {
            let accepted = log
                .events
                .iter()
                .filter_map(|e| match e {
                    LogEvent::BlockAccepted { node: n, hash: h, time, .. }
                        if n == node && h == hash =>
                    {
                        Some(*time)
                    }
                    _ => None,
                })
                .min();
            match accepted {
                Some(t) if t > last_accept => last_accept = t,
                Some(_) => {}
                None => held_everywhere = false,
            }
        }
        if let (Some((mined_at, withheld)), true) = (mined, held_everywhere) {
            // Withheld blocks are measured from their first announcement:
            // the mining timestamp predates any chance of dissemination.
            let start = if withheld { announced } else { Some(mined_at) };
            if let Some(start) = start {
                dissemination_time_s = Some(last_accept.saturating_sub(start).as_secs_f64());
                dissemination_from_announcement = withheld;
            }
        }
    }

    RunMetrics {
        swap,
        t2_final_height,
        termination_time_s,
        dissemination_time_s,
        dissemination_from_announcement,
    }
}

/// Arithmetic mean; `None` on empty input.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of y on x.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Average rank across ties.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &item in &idx[i..=j] {
            out[item] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. A constant
/// series carries no monotone association and yields 0.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let spread = |r: &[f64]| r.iter().any(|v| *v != r[0]);
    if !spread(&rx) || !spread(&ry) {
        return Some(0.0);
    }
    linear_fit(&rx, &ry).map(|fit| {
        // Pearson correlation of the ranks.
        let r2 = fit.r_squared;
        let sign = if fit.slope >= 0.0 { 1.0 } else { -1.0 };
        sign * r2.sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_empty_is_none() {
        assert_eq!(mean(&[]), None);
        assert_eq!(mean(&[2.0, 4.0]), Some(3.0));
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_detects_monotone_and_flat() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [2.0, 4.0, 9.0, 16.0, 30.0];
        assert!((spearman(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        let mixed = [2.0, 1.0, 3.0, 1.5, 2.5];
        let rho = spearman(&xs, &mixed).unwrap();
        assert!(rho.abs() < 0.8, "no strong trend expected, got {rho}");
    }
}
