//! Byzantine-fault-tolerant workflow scheduling over PBFT consensus, driven
//! by a deterministic discrete-event network simulator.
//!
//! The stack, bottom up:
//!
//! * [`types`] — identifiers, digests, the pluggable signature scheme.
//! * [`scheduler`] — deterministic designation and the LCDWRR schedule
//!   generator with its validation rule set.
//! * [`ledger`] — the replicated block chain and schedule-lifecycle state
//!   machine.
//! * [`pbft`] — three-phase block replication with a simplified view change.
//! * [`datastores`] — in-process cache/pub-sub, persistent store, and the
//!   resource registrar with digest batching.
//! * [`protocol`] — the per-node multi-phase commit orchestration: request
//!   admission and designation, schedule generation, confirmation, and
//!   timeout-based reassignment.
//! * [`exec`] — level-ordered DAG task execution with completion pub/sub and
//!   workflow finalization.
//! * [`simnet`] — the seeded discrete-event kernel, latency models, fault
//!   injection, and trace capture.
//! * [`node`] — compute/IoT actors wiring the above into simulated machines.
//! * [`harness`] — scenario ingestion, run orchestration, metrics (RRT, FO,
//!   detection latency, recovery time), and report emission.

pub mod datastores;
pub mod exec;
pub mod harness;
pub mod ledger;
pub mod node;
pub mod pbft;
pub mod protocol;
pub mod scheduler;
pub mod simnet;
pub mod trace;
pub mod types;
