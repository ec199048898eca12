//! Deterministic discrete-event network: the event queue, directional links
//! with fixed delays, and partitions that queue messages until healed.
//!
//! Identical seeds and scenarios produce identical event sequences because
//! every source of ordering is explicit: events are totally ordered by
//! `(time, seq)`, links deliver FIFO, and all randomness flows from
//! [`SimRng`] streams derived from the run seed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::chain::types::{Block, Digest, NodeId, Transaction};
use crate::time::SimTime;

/// The run's pseudo-random generator: ChaCha with 8 rounds, seeded from a
/// 64-bit value via the standard SplitMix64 expansion. The state transition
/// is fixed by the ChaCha specification, so identical seeds give identical
/// streams on every platform.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// One independent child stream per node, derived deterministically from the
/// run seed and the sorted node order.
pub fn derive_node_rngs(seed: u64, node_ids: &[NodeId]) -> BTreeMap<NodeId, SimRng> {
    let mut master = SimRng::seed_from_u64(seed);
    let mut sorted: Vec<&NodeId> = node_ids.iter().collect();
    sorted.sort();
    let mut rngs = BTreeMap::new();
    for id in sorted {
        let child = master.random::<u64>();
        rngs.insert(id.clone(), SimRng::seed_from_u64(child));
    }
    rngs
}

/// An exponentially distributed duration with the given mean, via inverse
/// CDF. `libm` supplies a bit-exact portable logarithm so the draw is
/// reproducible across platforms.
pub fn exp_sample(rng: &mut SimRng, mean_secs: f64) -> SimTime {
    let u: f64 = rng.random();
    SimTime::from_secs_f64(-mean_secs * libm::log(1.0 - u))
}

/// What a node tells a peer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    /// Gossip of a freshly issued transaction.
    NewTx(Transaction),
    /// Parent-linked blocks from a known ancestor up to a tip.
    NewChainSegment(Vec<Block>),
    /// Ask the sender for the chain leading to `tip`.
    AncestorRequest { tip: Digest },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from: NodeId,
    pub kind: MessageKind,
}

/// Scheduled work, totally ordered by `(at, seq)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventPayload {
    Deliver { to: NodeId, msg: Message },
    MineComplete { node: NodeId, parent: Digest },
    /// A scenario step scheduled at an absolute time.
    ScenarioStep { step: usize },
    /// Automatic heal of a timed partition.
    HealLinks { pairs: Vec<(NodeId, NodeId)> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub at: SimTime,
    pub seq: u64,
    pub payload: EventPayload,
}

/// Key identifying a scheduled event, usable for cancellation.
pub type EventKey = (SimTime, u64);

/// The event queue. Pops in `(time, seq)` order; time never goes backwards.
#[derive(Clone, Debug, Default)]
pub struct EventQueue {
    events: BTreeMap<EventKey, EventPayload>,
    next_seq: u64,
    now: SimTime,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Inserts an event. Scheduling in the past is a simulator bug, not a
    /// runtime input, and faults immediately.
    pub fn schedule(&mut self, at: SimTime, payload: EventPayload) -> EventKey {
        assert!(
            at >= self.now,
            "event scheduled in the past: {at} < {}",
            self.now
        );
        let key = (at, self.next_seq);
        self.next_seq += 1;
        self.events.insert(key, payload);
        key
    }

    pub fn cancel(&mut self, key: &EventKey) -> Option<EventPayload> {
        self.events.remove(key)
    }

    /// Next event's timestamp without popping.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.events.keys().next().map(|(at, _)| *at)
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        let (&(at, seq), _) = self.events.iter().next()?;
        let payload = self.events.remove(&(at, seq)).unwrap();
        debug_assert!(at >= self.now);
        self.now = at;
        Some(SimEvent { at, seq, payload })
    }
}

/// One directional link. Blocked links queue messages in send order and
/// release them when healed; nothing is ever dropped.
#[derive(Clone, Debug)]
pub struct LinkState {
    pub base_delay: SimTime,
    blocked: bool,
    pending: VecDeque<Message>,
}

/// All links plus the event queue they feed.
#[derive(Clone, Debug)]
pub struct Network {
    links: BTreeMap<(NodeId, NodeId), LinkState>,
    pub queue: EventQueue,
}

impl Network {
    /// Full mesh over `nodes` with a uniform delay.
    pub fn full_mesh(nodes: &[NodeId], base_delay: SimTime) -> Self {
        let mut links = BTreeMap::new();
        for from in nodes {
            for to in nodes {
                if from != to {
                    links.insert(
                        (from.clone(), to.clone()),
                        LinkState {
                            base_delay,
                            blocked: false,
                            pending: VecDeque::new(),
                        },
                    );
                }
            }
        }
        Network {
            links,
            queue: EventQueue::new(),
        }
    }

    pub fn set_delay(&mut self, from: &NodeId, to: &NodeId, delay: SimTime) {
        self.links
            .get_mut(&(from.clone(), to.clone()))
            .expect("unknown link")
            .base_delay = delay;
    }

    pub fn is_blocked(&self, from: &NodeId, to: &NodeId) -> bool {
        self.links[&(from.clone(), to.clone())].blocked
    }

    /// Sends a message. Unblocked links deliver after the link delay;
    /// blocked links queue the message for delivery after the heal, FIFO.
    pub fn send(&mut self, from: &NodeId, to: &NodeId, kind: MessageKind) {
        let now = self.queue.now();
        let link = self
            .links
            .get_mut(&(from.clone(), to.clone()))
            .expect("unknown link");
        let msg = Message {
            from: from.clone(),
            kind,
        };
        if link.blocked {
            link.pending.push_back(msg);
        } else {
            let at = now + link.base_delay;
            self.queue
                .schedule(at, EventPayload::Deliver { to: to.clone(), msg });
        }
    }

    /// Blocks every link between distinct groups, both directions. With
    /// `until` set, a heal event is scheduled at that time; otherwise the
    /// partition lasts until an explicit heal.
    pub fn partition(&mut self, groups: &[Vec<NodeId>], until: Option<SimTime>) {
        let mut seen = BTreeSet::new();
        for group in groups {
            for node in group {
                assert!(seen.insert(node.clone()), "partition groups must be disjoint");
            }
        }
        let mut pairs = Vec::new();
        for (gi, a_group) in groups.iter().enumerate() {
            for (gj, b_group) in groups.iter().enumerate() {
                if gi == gj {
                    continue;
                }
                for a in a_group {
                    for b in b_group {
                        if let Some(link) = self.links.get_mut(&(a.clone(), b.clone())) {
                            if !link.blocked {
                                link.blocked = true;
                                pairs.push((a.clone(), b.clone()));
                            }
                        }
                    }
                }
            }
        }
        if let Some(at) = until {
            self.queue.schedule(at, EventPayload::HealLinks { pairs });
        }
    }

    /// Unblocks the given directional links and schedules their queued
    /// messages, preserving per-link send order.
    pub fn heal_pairs(&mut self, pairs: &[(NodeId, NodeId)]) {
        let now = self.queue.now();
        for (from, to) in pairs {
            if let Some(link) = self.links.get_mut(&(from.clone(), to.clone())) {
                link.blocked = false;
                let delay = link.base_delay;
                let drained: Vec<Message> = link.pending.drain(..).collect();
                for msg in drained {
                    self.queue
                        .schedule(now + delay, EventPayload::Deliver { to: to.clone(), msg });
                }
            }
        }
    }

    /// Unblocks every link.
    pub fn heal_all(&mut self) {
        let pairs: Vec<(NodeId, NodeId)> = self
            .links
            .iter()
            .filter(|(_, l)| l.blocked)
            .map(|(k, _)| k.clone())
            .collect();
        self.heal_pairs(&pairs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nid(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn ping(from: &str) -> MessageKind {
        MessageKind::AncestorRequest {
            tip: Digest([from.len() as u8; 32]),
        }
    }

    fn nodes3() -> Vec<NodeId> {
        vec![nid("p1"), nid("p2"), nid("p3")]
    }

    #[test]
    fn events_pop_in_time_then_seq_order() {
        let mut q = EventQueue::new();
        let t = SimTime::from_secs_f64(1.0);
        q.schedule(t, EventPayload::ScenarioStep { step: 0 });
        q.schedule(t, EventPayload::ScenarioStep { step: 1 });
        q.schedule(SimTime::from_secs_f64(0.5), EventPayload::ScenarioStep { step: 2 });
        let order: Vec<usize> = std::iter::from_fn(|| q.pop())
            .map(|e| match e.payload {
                EventPayload::ScenarioStep { step } => step,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(order, vec![2, 0, 1]);
        assert!(q.pop().is_none(), "empty queue ends the run");
    }

    #[test]
    fn event_at_current_time_processes_before_time_advances() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs_f64(2.0), EventPayload::ScenarioStep { step: 0 });
        q.pop().unwrap();
        assert_eq!(q.now(), SimTime::from_secs_f64(2.0));
        q.schedule(q.now(), EventPayload::ScenarioStep { step: 1 });
        let ev = q.pop().unwrap();
        assert_eq!(ev.at, SimTime::from_secs_f64(2.0));
    }

    #[test]
    #[should_panic(expected = "scheduled in the past")]
    fn scheduling_in_the_past_is_a_hard_fault() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs_f64(1.0), EventPayload::ScenarioStep { step: 0 });
        q.pop();
        q.schedule(SimTime::from_secs_f64(0.5), EventPayload::ScenarioStep { step: 1 });
    }

    #[test]
    fn unblocked_send_delivers_after_base_delay() {
        let mut net = Network::full_mesh(&nodes3(), SimTime::from_secs_f64(0.05));
        net.send(&nid("p1"), &nid("p2"), ping("p1"));
        let ev = net.queue.pop().unwrap();
        assert_eq!(ev.at, SimTime::from_secs_f64(0.05));
        assert!(matches!(ev.payload, EventPayload::Deliver { to, .. } if to == nid("p2")));
    }

    #[test]
    fn blocked_link_delivers_at_heal_plus_delay() {
        // Sent at t=100 on a link blocked until t=600: delivered 600 + delay.
        let delay = SimTime::from_secs_f64(0.05);
        let mut net = Network::full_mesh(&nodes3(), delay);
        net.queue
            .schedule(SimTime::from_secs_f64(100.0), EventPayload::ScenarioStep { step: 0 });
        net.partition(
            &[vec![nid("p1"), nid("p2")], vec![nid("p3")]],
            Some(SimTime::from_secs_f64(600.0)),
        );
        net.queue.pop().unwrap(); // advance to t=100
        net.send(&nid("p1"), &nid("p3"), ping("p1"));

        let heal = net.queue.pop().unwrap();
        assert_eq!(heal.at, SimTime::from_secs_f64(600.0));
        let EventPayload::HealLinks { pairs } = heal.payload else {
            panic!("expected heal event");
        };
        net.heal_pairs(&pairs);

        let ev = net.queue.pop().unwrap();
        assert_eq!(ev.at, SimTime::from_secs_f64(600.0) + delay);
        assert!(matches!(ev.payload, EventPayload::Deliver { to, .. } if to == nid("p3")));
    }

    #[test]
    fn blocked_messages_release_in_send_order() {
        let mut net = Network::full_mesh(&nodes3(), SimTime::from_secs_f64(0.05));
        net.partition(&[vec![nid("p1")], vec![nid("p2"), nid("p3")]], None);
        for tag in ["a", "bb", "ccc"] {
            net.send(&nid("p1"), &nid("p2"), ping(tag));
        }
        net.heal_all();
        let mut seen = Vec::new();
        while let Some(ev) = net.queue.pop() {
            if let EventPayload::Deliver { msg, .. } = ev.payload {
                if let MessageKind::AncestorRequest { tip } = msg.kind {
                    seen.push(tip.0[0]);
                }
            }
        }
        assert_eq!(seen, vec![1, 2, 3], "FIFO per link");
    }

    #[test]
    fn partition_blocks_exactly_the_cross_links() {
        let mut net = Network::full_mesh(&nodes3(), SimTime::from_secs_f64(0.05));
        net.partition(&[vec![nid("p1"), nid("p2")], vec![nid("p3")]], None);
        assert!(net.is_blocked(&nid("p1"), &nid("p3")));
        assert!(net.is_blocked(&nid("p3"), &nid("p1")));
        assert!(net.is_blocked(&nid("p2"), &nid("p3")));
        assert!(net.is_blocked(&nid("p3"), &nid("p2")));
        assert!(!net.is_blocked(&nid("p1"), &nid("p2")));
        assert!(!net.is_blocked(&nid("p2"), &nid("p1")));
    }

    #[test]
    fn single_group_partition_blocks_nothing() {
        let mut net = Network::full_mesh(&nodes3(), SimTime::from_secs_f64(0.05));
        net.partition(&[nodes3()], None);
        for a in nodes3() {
            for b in nodes3() {
                if a != b {
                    assert!(!net.is_blocked(&a, &b));
                }
            }
        }
    }

    #[test]
    fn heal_then_send_is_normal_delivery() {
        let mut net = Network::full_mesh(&nodes3(), SimTime::from_secs_f64(0.05));
        net.partition(&[vec![nid("p1")], vec![nid("p2"), nid("p3")]], None);
        net.heal_all();
        net.send(&nid("p1"), &nid("p2"), ping("x"));
        let ev = net.queue.pop().unwrap();
        assert_eq!(ev.at, SimTime::from_secs_f64(0.05));
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let ids = nodes3();
        let mut a = derive_node_rngs(42, &ids);
        let mut b = derive_node_rngs(42, &ids);
        for id in &ids {
            for _ in 0..100 {
                assert_eq!(
                    a.get_mut(id).unwrap().random::<u64>(),
                    b.get_mut(id).unwrap().random::<u64>()
                );
            }
        }
        let mut c = derive_node_rngs(43, &ids);
        assert_ne!(
            a.get_mut(&ids[0]).unwrap().random::<u64>(),
            c.get_mut(&ids[0]).unwrap().random::<u64>()
        );
    }

    #[test]
    fn exp_sample_matches_analytic_mean() {
        let mut rng = SimRng::seed_from_u64(7);
        let n = 10_000;
        let mean = 2.0;
        let total: f64 = (0..n).map(|_| exp_sample(&mut rng, mean).as_secs_f64()).sum();
        let sample_mean = total / n as f64;
        assert!(
            (sample_mean - mean).abs() / mean < 0.05,
            "sample mean {sample_mean} too far from {mean}"
        );
    }
}
