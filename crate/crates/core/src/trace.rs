//! Trace record vocabulary and the replayable trace container.
//!
//! A trace is the complete observable record of one run: protocol events,
//! transaction verdicts, task execution, and (at full detail) every message
//! delivery. The header embeds the seed and the entire scenario
//! configuration so any trace can be re-run and compared byte for byte.

use serde::{Deserialize, Serialize};

use crate::ledger::{RejectReason, TxnKind};
use crate::pbft::MessageCounters;
use crate::simnet::TraceRecord;
use crate::types::{Digest, NodeId, RequestId, SimMs, TaskId, WorkflowId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceKind {
    // Request lifecycle.
    RequestSent {
        rid: RequestId,
        workflow: WorkflowId,
        target: NodeId,
    },
    RequestAdmitted {
        rid: RequestId,
        attempt: u32,
        designated: NodeId,
        snapshot_digest: Digest,
    },
    AdmissionFailed {
        rid: RequestId,
        reason: String,
    },
    ProposalGenerated {
        rid: RequestId,
        attempt: u32,
        proposer: NodeId,
        malicious: bool,
    },
    ProposalValidationFailed {
        rid: RequestId,
        attempt: u32,
        rules: Vec<String>,
    },
    ActiveCommitted {
        rid: RequestId,
        attempt: u32,
        proposer: NodeId,
    },
    FinalizedCommitted {
        rid: RequestId,
    },
    FailedCommitted {
        rid: RequestId,
        attempt: u32,
    },
    ReassignmentIssued {
        rid: RequestId,
        attempt: u32,
        old_designated: NodeId,
        new_designated: NodeId,
    },
    RequestAbandoned {
        rid: RequestId,
        attempts: u32,
    },
    SchedulePublished {
        rid: RequestId,
        attempt: u32,
    },
    ResultDelivered {
        rid: RequestId,
        source: NodeId,
        key_ok: bool,
    },

    // Ledger verdicts (per replica).
    BlockCommitted {
        height: u64,
        view: u64,
        txns: usize,
    },
    TxnRejected {
        height: u64,
        index: usize,
        txn_kind: TxnKind,
        rid: Option<RequestId>,
        signer: NodeId,
        proposer: Option<NodeId>,
        claimed_attempt: Option<u32>,
        reason: RejectReason,
    },

    // Task execution.
    TaskFetchStarted {
        rid: RequestId,
        task: TaskId,
        inputs: usize,
    },
    TaskStarted {
        rid: RequestId,
        task: TaskId,
        level: u32,
    },
    TaskFinished {
        rid: RequestId,
        task: TaskId,
        level: u32,
    },
    ResourceOvercommit {
        rid: RequestId,
        task: TaskId,
    },

    // Datastores.
    Published {
        channel: String,
        subscribers: usize,
    },

    // Kernel bookkeeping (full trace level).
    Delivered {
        payload: String,
    },
    Crashed,
}

/// Header + records; serializes to one JSON line per entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub seed: u64,
    pub config_digest: Digest,
    /// Latency jitter is a modeling choice, restated on every export.
    pub jitter_note: String,
    pub scenario: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub counters: MessageCounters,
    pub final_time_ms: SimMs,
}

impl Trace {
    /// Newline-delimited export: header first, then one record per line,
    /// then a footer carrying counters.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.header).expect("header serializes"));
        out.push('\n');
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out.push_str(
            &serde_json::to_string(&TraceFooter {
                counters: self.counters,
                final_time_ms: self.final_time_ms,
                records: self.records.len(),
            })
            .expect("footer serializes"),
        );
        out.push('\n');
        out
    }

    pub fn parse_header(jsonl: &str) -> Result<TraceHeader, serde_json::Error> {
        let first = jsonl.lines().next().unwrap_or_default();
        serde_json::from_str(first)
    }

    /// Parses a full export back into a trace: header line, record lines,
    /// footer line.
    pub fn from_jsonl(jsonl: &str) -> Result<Self, String> {
        let mut lines = jsonl.lines();
        let header: TraceHeader = serde_json::from_str(lines.next().ok_or("empty trace")?)
            .map_err(|e| format!("header: {e}"))?;
        let rest: Vec<&str> = lines.collect();
        let (footer_line, record_lines) = rest.split_last().ok_or("missing footer")?;
        let footer: TraceFooter =
            serde_json::from_str(footer_line).map_err(|e| format!("footer: {e}"))?;
        let mut records = Vec::with_capacity(record_lines.len());
        for (i, line) in record_lines.iter().enumerate() {
            records.push(
                serde_json::from_str::<TraceRecord>(line).map_err(|e| format!("record {i}: {e}"))?,
            );
        }
        if records.len() != footer.records {
            return Err(format!(
                "record count mismatch: footer says {}, found {}",
                footer.records,
                records.len()
            ));
        }
        Ok(Self { header, records, counters: footer.counters, final_time_ms: footer.final_time_ms })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub counters: MessageCounters,
    pub final_time_ms: SimMs,
    pub records: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_roundtrip_through_json() {
        let rec = TraceRecord {
            t: 12.25,
            actor: NodeId::new("c03"),
            kind: TraceKind::RequestAdmitted {
                rid: RequestId::derive(&NodeId::new("iot0"), 0),
                attempt: 1,
                designated: NodeId::new("c07"),
                snapshot_digest: Digest::of(b"snap"),
            },
        };
        let json = serde_json::to_string(&rec).unwrap();
        let back: TraceRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(rec, back);
    }
}
