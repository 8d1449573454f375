//! Deterministic discrete-event kernel: virtual clock, latency models,
//! message delivery with per-actor processing cost, crash/Byzantine fault
//! plans, and trace capture.
//!
//! Time is real-valued milliseconds with a monotone sequence counter as the
//! tie-break, so replaying the same seed and configuration reproduces the
//! exact event order. All randomness flows through the kernel rng (latency
//! samples) or through per-actor rngs seeded from the run seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{NodeId, SimMs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeClass {
    Compute,
    Iot,
    Service,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyDist {
    Fixed,
    Uniform,
    Lognormal,
}

/// Mean one-way delays per (source class, destination class), a relative
/// jitter, and the sampling distribution. `truncate_at` bounds lognormal
/// tails (as a multiple of the mean) for synchrony-assuming runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub inter_compute_ms: f64,
    pub iot_compute_ms: f64,
    /// Cache/store access; defaults to the inter-compute mean since those
    /// services run on compute nodes.
    pub service_ms: f64,
    pub jitter_fraction: f64,
    pub distribution: LatencyDist,
    pub truncate_at: Option<f64>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            inter_compute_ms: 5.12,
            iot_compute_ms: 12.2,
            service_ms: 5.12,
            jitter_fraction: 0.2,
            distribution: LatencyDist::Lognormal,
            truncate_at: Some(5.0),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("no latency configured for {0:?} -> {1:?}")]
    UnconfiguredPair(NodeClass, NodeClass),
    #[error("negative delay rejected")]
    NegativeDelay,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

impl LatencyModel {
    pub fn fixed(inter_compute_ms: f64, iot_compute_ms: f64) -> Self {
        Self {
            inter_compute_ms,
            iot_compute_ms,
            service_ms: inter_compute_ms,
            jitter_fraction: 0.0,
            distribution: LatencyDist::Fixed,
            truncate_at: None,
        }
    }

    pub fn mean_for(&self, src: NodeClass, dst: NodeClass) -> Result<f64, SimError> {
        use NodeClass::*;
        match (src, dst) {
            (Compute, Compute) => Ok(self.inter_compute_ms),
            (Iot, Compute) | (Compute, Iot) => Ok(self.iot_compute_ms),
            (Compute, Service) | (Service, Compute) => Ok(self.service_ms),
            (src, dst) => Err(SimError::UnconfiguredPair(src, dst)),
        }
    }

    /// Draws one positive delay. Lognormal parameters are chosen so the
    /// sample mean equals the configured mean and the coefficient of
    /// variation equals `jitter_fraction`.
    pub fn sample(&self, src: NodeClass, dst: NodeClass, rng: &mut ChaCha8Rng) -> Result<f64, SimError> {
        let mean = self.mean_for(src, dst)?;
        let jf = self.jitter_fraction;
        let raw = match self.distribution {
            LatencyDist::Fixed => mean,
            LatencyDist::Uniform => {
                let lo = mean * (1.0 - jf);
                let hi = mean * (1.0 + jf);
                lo + rng.gen::<f64>() * (hi - lo)
            }
            LatencyDist::Lognormal => {
                if jf == 0.0 {
                    mean
                } else {
                    let sigma2 = (1.0 + jf * jf).ln();
                    let mu = mean.ln() - sigma2 / 2.0;
                    let z = standard_normal(rng);
                    (mu + sigma2.sqrt() * z).exp()
                }
            }
        };
        let bounded = match self.truncate_at {
            Some(k) => raw.min(k * mean),
            None => raw,
        };
        Ok(bounded.max(1e-6))
    }
}

/// Box–Muller transform; two uniform draws per normal sample keeps the rng
/// stream layout independent of caller state.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// The two scheduling-layer attack behaviours measured in the fault
/// experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ByzScenario {
    /// Responds to every committed schedule request with a (bogus) proposal
    /// of its own, designated or not.
    UnauthorizedProposer,
    /// When designated for a new request, additionally proposes schedules
    /// for requests that already hold valid schedules.
    RequestInterference,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    #[serde(default)]
    pub byzantine: std::collections::BTreeMap<NodeId, ByzScenario>,
    #[serde(default)]
    pub crashes: std::collections::BTreeMap<NodeId, SimMs>,
}

impl FaultPlan {
    pub fn faulty_count(&self) -> usize {
        let mut set: std::collections::BTreeSet<&NodeId> = self.byzantine.keys().collect();
        set.extend(self.crashes.keys());
        set.len()
    }

    pub fn is_byzantine(&self, node: &NodeId) -> Option<ByzScenario> {
        self.byzantine.get(node).copied()
    }
}

pub type ActorIndex = usize;

/// How much the kernel records. `Protocol` keeps the protocol-level events
/// that metrics need; `Full` additionally logs every message delivery and
/// timer fire for replay auditing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    Protocol,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: SimMs,
    pub actor: NodeId,
    #[serde(flatten)]
    pub kind: crate::trace::TraceKind,
}

struct QueuedEvent<P> {
    fire_at: SimMs,
    seq: u64,
    target: ActorIndex,
    payload: P,
    /// Processing cost charged to the target's busy clock on delivery.
    proc_cost: f64,
    is_timer: bool,
}

impl<P> PartialEq for QueuedEvent<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<P> Eq for QueuedEvent<P> {}
impl<P> PartialOrd for QueuedEvent<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for QueuedEvent<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want earliest first.
        other
            .fire_at
            .total_cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Payloads tell the kernel how to account and label them.
pub trait SimPayload {
    /// Per-delivery processing cost in simulated ms (consensus messages pay
    /// the configured per-message cost; everything else is free).
    fn proc_cost(&self, consensus_proc_ms: f64) -> f64;
    fn label(&self) -> &'static str;
}

/// A world routes one delivered payload into the owning actor.
pub trait Dispatch<P> {
    fn deliver(&mut self, target: ActorIndex, payload: P, ctx: &mut SimCtx<'_, P>);
}

pub struct Sim<P> {
    pub now: SimMs,
    pub rng: ChaCha8Rng,
    pub latency: LatencyModel,
    pub trace_level: TraceLevel,
    pub consensus_proc_ms: f64,
    queue: BinaryHeap<QueuedEvent<P>>,
    next_seq: u64,
    names: Vec<NodeId>,
    classes: Vec<NodeClass>,
    crash_at: Vec<Option<SimMs>>,
    busy_until: Vec<SimMs>,
    records: Vec<TraceRecord>,
    delivered_events: u64,
}

impl<P: SimPayload> Sim<P> {
    pub fn new(seed: u64, latency: LatencyModel, trace_level: TraceLevel) -> Self {
        Self {
            now: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            latency,
            trace_level,
            consensus_proc_ms: 0.0,
            queue: BinaryHeap::new(),
            next_seq: 0,
            names: Vec::new(),
            classes: Vec::new(),
            crash_at: Vec::new(),
            busy_until: Vec::new(),
            records: Vec::new(),
            delivered_events: 0,
        }
    }

    pub fn register_actor(&mut self, name: NodeId, class: NodeClass) -> ActorIndex {
        self.names.push(name);
        self.classes.push(class);
        self.crash_at.push(None);
        self.busy_until.push(0.0);
        self.names.len() - 1
    }

    pub fn actor_name(&self, idx: ActorIndex) -> &NodeId {
        &self.names[idx]
    }

    pub fn actor_count(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &NodeId) -> Result<ActorIndex, SimError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SimError::UnknownNode(name.clone()))
    }

    /// Installs crash times from a fault plan. Byzantine behaviour flags are
    /// the owning node's concern; the kernel only silences crashed actors.
    pub fn install_crashes(&mut self, plan: &FaultPlan) -> Result<(), SimError> {
        for (node, at) in &plan.crashes {
            let idx = self.index_of(node)?;
            self.crash_at[idx] = Some(*at);
        }
        Ok(())
    }

    /// Enqueues a payload for `target` after `delay` with no latency sample
    /// (timers, self-events, co-located hops).
    pub fn schedule_after(&mut self, delay: SimMs, target: ActorIndex, payload: P) -> Result<u64, SimError> {
        self.schedule_kind(delay, target, payload, true)
    }

    fn schedule_kind(&mut self, delay: SimMs, target: ActorIndex, payload: P, is_timer: bool) -> Result<u64, SimError> {
        if delay < 0.0 {
            return Err(SimError::NegativeDelay);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let proc_cost = payload.proc_cost(self.consensus_proc_ms);
        self.queue.push(QueuedEvent {
            fire_at: self.now + delay,
            seq,
            target,
            payload,
            proc_cost,
            is_timer,
        });
        Ok(seq)
    }

    /// Sends between actors with a sampled network delay. Self-sends are
    /// local hand-offs and skip the latency sample.
    pub fn send(&mut self, src: ActorIndex, dst: ActorIndex, payload: P) -> Result<u64, SimError> {
        let delay = if src == dst {
            0.0
        } else {
            self.latency.sample(self.classes[src], self.classes[dst], &mut self.rng)?
        };
        self.schedule_kind(delay, dst, payload, false)
    }

    pub fn record(&mut self, actor: &NodeId, kind: crate::trace::TraceKind) {
        self.records.push(TraceRecord { t: self.now, actor: actor.clone(), kind });
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn delivered_events(&self) -> u64 {
        self.delivered_events
    }

    /// Pops and dispatches events until the queue drains or the horizon
    /// passes. Crashed actors silently drop their events; a busy actor
    /// defers delivery to the end of its current processing window.
    pub fn run<W: Dispatch<P>>(&mut self, world: &mut W, until_ms: Option<SimMs>) {
        while let Some(head) = self.queue.peek() {
            if let Some(limit) = until_ms {
                if head.fire_at > limit {
                    break;
                }
            }
            let ev = self.queue.pop().expect("peeked");
            let target = ev.target;
            // Busy serialization: re-queue at the actor's free time.
            if !ev.is_timer && self.busy_until[target] > ev.fire_at {
                let fire_at = self.busy_until[target];
                self.queue.push(QueuedEvent { fire_at, ..ev });
                continue;
            }
            self.now = ev.fire_at;
            if let Some(crash) = self.crash_at[target] {
                if self.now >= crash {
                    continue;
                }
            }
            if ev.proc_cost > 0.0 {
                self.busy_until[target] = self.now + ev.proc_cost;
            }
            if self.trace_level == TraceLevel::Full {
                let actor = self.names[target].clone();
                let label = ev.payload.label();
                self.record(&actor, crate::trace::TraceKind::Delivered { payload: label.to_string() });
            }
            self.delivered_events += 1;
            let mut ctx = SimCtx { sim: self, current: target };
            world.deliver(target, ev.payload, &mut ctx);
        }
    }
}

/// Actor-facing handle: address peers, schedule timers, emit trace records.
pub struct SimCtx<'a, P> {
    sim: &'a mut Sim<P>,
    current: ActorIndex,
}

impl<'a, P: SimPayload> SimCtx<'a, P> {
    pub fn now(&self) -> SimMs {
        self.sim.now
    }

    pub fn me(&self) -> ActorIndex {
        self.current
    }

    pub fn my_name(&self) -> NodeId {
        self.sim.names[self.current].clone()
    }

    pub fn send(&mut self, dst: ActorIndex, payload: P) {
        self.sim.send(self.current, dst, payload).expect("configured pair");
    }

    pub fn schedule_self(&mut self, delay: SimMs, payload: P) {
        self.sim
            .schedule_after(delay, self.current, payload)
            .expect("non-negative delay");
    }

    pub fn trace(&mut self, kind: crate::trace::TraceKind) {
        let name = self.sim.names[self.current].clone();
        self.sim.record(&name, kind);
    }

    /// Trace attributed to another actor (e.g. service-side records).
    pub fn trace_as(&mut self, actor: &NodeId, kind: crate::trace::TraceKind) {
        self.sim.record(actor, kind);
    }
}
