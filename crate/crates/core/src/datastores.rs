//! In-process data sub-layer: a latest-state key-value cache with pub/sub
//! channels, an append-only persistent store, and the per-node resource
//! registrar that batches record digests for the ledger.
//!
//! The cache is one logical service with uniform access latency; sharding
//! affects throughput, not protocol correctness, and is out of scope here.
//! Key conventions (for trace readers): task outputs live under
//! `output/<request_id>/<task_id>`, request inputs under
//! `input/<request_id>`, and per-node resource state under
//! `resource/<node_id>`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::ResourceState;
use crate::types::{Digest, NodeId, SimMs};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("no value for key {0}")]
    Missing(String),
}

/// Latest-state KV plus named pub/sub channels. Values are opaque bytes;
/// last writer wins.
#[derive(Clone, Debug, Default)]
pub struct CacheCluster {
    kv: BTreeMap<String, Vec<u8>>,
    channels: BTreeMap<String, BTreeSet<NodeId>>,
}

impl CacheCluster {
    pub fn put(&mut self, key: impl Into<String>, value: Vec<u8>) {
        self.kv.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Result<&[u8], CacheError> {
        self.kv.get(key).map(Vec::as_slice).ok_or_else(|| CacheError::Missing(key.to_string()))
    }

    pub fn subscribe(&mut self, channel: impl Into<String>, node: NodeId) {
        self.channels.entry(channel.into()).or_default().insert(node);
    }

    /// Current subscribers of a channel; publication delivers to exactly
    /// this set, once each. Subscribers added later see only later messages.
    pub fn subscribers(&self, channel: &str) -> impl Iterator<Item = &NodeId> {
        self.channels.get(channel).into_iter().flatten()
    }

    pub fn subscriber_count(&self, channel: &str) -> usize {
        self.channels.get(channel).map_or(0, BTreeSet::len)
    }

    /// All `resource/<node>` records parsed back into a typed view.
    pub fn resource_view(&self) -> BTreeMap<NodeId, ResourceState> {
        let mut out = BTreeMap::new();
        for (key, value) in self.kv.range(keys::RESOURCE_PREFIX.to_string()..) {
            let Some(node) = key.strip_prefix(keys::RESOURCE_PREFIX) else { break };
            if let Ok(record) = serde_json::from_slice::<ResourceRecord>(value) {
                out.insert(NodeId::new(node), record.resources);
            }
        }
        out
    }
}

/// Append-only history of records, ordered by insertion.
#[derive(Clone, Debug, Default)]
pub struct PersistentStore {
    records: Vec<StoreRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub t: SimMs,
    pub node: NodeId,
    pub bytes: Vec<u8>,
}

impl PersistentStore {
    pub fn append(&mut self, t: SimMs, node: NodeId, bytes: Vec<u8>) {
        self.records.push(StoreRecord { t, node, bytes });
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One registrar sample: the bytes that go to the persistent store, whose
/// digest goes into the next ledger batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub node: NodeId,
    pub t: SimMs,
    pub resources: ResourceState,
}

impl ResourceRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("record serializes")
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }
}

/// What one registrar tick wants done: refresh the cache's latest state,
/// append history, and — every `batch_size` ticks — commit a digest batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrarTickEffects {
    pub cache_key: String,
    pub cache_value: Vec<u8>,
    pub store_bytes: Vec<u8>,
    pub batch: Option<Vec<Digest>>,
}

/// Periodic resource sampler for one node. Digests accumulate locally and
/// flush as a fixed-size batch transaction.
#[derive(Clone, Debug)]
pub struct ResourceRegistrar {
    pub interval_ms: SimMs,
    pub batch_size: usize,
    pending_digests: Vec<Digest>,
}

impl ResourceRegistrar {
    pub fn new(interval_ms: SimMs, batch_size: usize) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        Self { interval_ms, batch_size, pending_digests: Vec::new() }
    }

    pub fn pending(&self) -> usize {
        self.pending_digests.len()
    }

    pub fn tick(&mut self, node: &NodeId, resources: &ResourceState, now: SimMs) -> RegistrarTickEffects {
        let record = ResourceRecord { node: node.clone(), t: now, resources: *resources };
        let bytes = record.to_bytes();
        self.pending_digests.push(Digest::of(&bytes));
        let batch = if self.pending_digests.len() == self.batch_size {
            Some(std::mem::take(&mut self.pending_digests))
        } else {
            None
        };
        RegistrarTickEffects {
            cache_key: keys::resource(node),
            cache_value: bytes.clone(),
            store_bytes: bytes,
            batch,
        }
    }
}

pub mod keys {
    use crate::types::{NodeId, RequestId, TaskId};

    pub const RESOURCE_PREFIX: &str = "resource/";

    pub fn resource(node: &NodeId) -> String {
        format!("{RESOURCE_PREFIX}{node}")
    }

    pub fn input(rid: &RequestId) -> String {
        format!("input/{rid}")
    }

    pub fn output(rid: &RequestId, task: &TaskId) -> String {
        format!("output/{rid}/{task}")
    }

    /// Channel carrying committed schedule publications.
    pub const SCHEDULES_CHANNEL: &str = "schedules";
    /// Channel carrying task completion notices.
    pub const COMPLETIONS_CHANNEL: &str = "completions";
}
