//! Per-node orchestration of the three scheduling phases.
//!
//! Phase one admits a client request: the admitting node snapshots cluster
//! resources, runs the deterministic designation, and emits the data,
//! schedule-request, and status transactions. Phase two runs on whichever
//! node the committed request designates: it generates a schedule from the
//! recorded snapshot. Phase three validates the proposal against the rule
//! set and emits the confirmation pair; the ledger performs the same checks
//! authoritatively on every replica when the confirmation commits.
//!
//! A failure timer armed at admission drives reassignment: if the request is
//! still `Requested` at the deadline, the admitting node fails the attempt
//! and re-designates over the remaining candidates, excluding every designee
//! that already failed.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{ChainState, DataRecord, ScheduleStatus, Transaction, TxnPayload};
use crate::scheduler::{
    designate, generate_schedule, validate_schedule, ResourceMap, Schedule, SchedulerError,
    ValidationCtx,
};
use crate::types::{Digest, NodeId, RequestId, SimMs, WorkflowId};

/// A source node's scheduling request as it arrives at a compute node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRequest {
    pub request_id: RequestId,
    pub source: NodeId,
    pub workflow_id: WorkflowId,
    pub data: Vec<u8>,
    pub data_digest: Digest,
    pub response_key: Vec<u8>,
    pub persist_data: bool,
}

/// A generated schedule on its way to confirmation. The proposer claim is
/// verified at confirmation and again by every replica, never trusted here.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleProposal {
    pub request_id: RequestId,
    pub proposer: NodeId,
    pub schedule: Schedule,
    pub generated_at: SimMs,
    pub attempt: u32,
}

#[derive(Clone, Debug)]
pub struct PendingRequest {
    pub request: ScheduleRequest,
    pub designated: NodeId,
    pub deadline: SimMs,
    pub attempt: u32,
    pub excluded: BTreeSet<NodeId>,
}

/// Admission-side bookkeeping for one node.
#[derive(Clone, Debug)]
pub struct ProtocolState {
    pub node_id: NodeId,
    pub pending: BTreeMap<RequestId, PendingRequest>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AdmitError {
    #[error("workflow {0} is not registered")]
    UnknownWorkflow(WorkflowId),
    #[error("no designatable member")]
    EmptyCluster,
    #[error("designation failed: {0}")]
    Designation(SchedulerError),
}

/// What a fired failure timer decided.
#[derive(Clone, Debug, PartialEq)]
pub enum TimeoutAction {
    /// Schedule already progressed (or a newer attempt owns the id): no-op.
    NotDue,
    /// Fail the attempt and open the next one under a fresh designee.
    Reassign { txns: Vec<Transaction>, new_designated: NodeId, attempt: u32 },
    /// Every candidate is exhausted: the request fails permanently.
    Abandon { txns: Vec<Transaction>, attempts: u32 },
}

impl ProtocolState {
    pub fn new(node_id: NodeId) -> Self {
        Self { node_id, pending: BTreeMap::new() }
    }

    /// Phase one. Designates over the members present in the snapshot and
    /// emits the admission transaction triple. The caller arms the failure
    /// timer for `deadline`.
    pub fn admit_request(
        &mut self,
        req: &ScheduleRequest,
        chain: &ChainState,
        resources: &ResourceMap,
        now: SimMs,
    ) -> Result<(Vec<Transaction>, NodeId), AdmitError> {
        if !chain.workflow_table.contains_key(&req.workflow_id) {
            return Err(AdmitError::UnknownWorkflow(req.workflow_id.clone()));
        }
        let members: Vec<NodeId> = chain
            .params
            .members
            .iter()
            .filter(|m| resources.entries.contains_key(*m))
            .cloned()
            .collect();
        if members.is_empty() {
            return Err(AdmitError::EmptyCluster);
        }
        let designated = designate(&members, resources, &chain.params.weights)
            .map_err(AdmitError::Designation)?;
        let scheme = chain.scheme().as_ref();
        let txns = vec![
            Transaction::build(
                Some(req.request_id),
                TxnPayload::Data(DataRecord {
                    data_digest: req.data_digest,
                    source: req.source.clone(),
                    response_key: req.response_key.clone(),
                    persist: req.persist_data,
                }),
                self.node_id.clone(),
                scheme,
            ),
            Transaction::build(
                Some(req.request_id),
                TxnPayload::ScheduleRequest {
                    workflow_id: req.workflow_id.clone(),
                    designated: designated.clone(),
                    snapshot_digest: resources.digest(),
                    snapshot: resources.clone(),
                    attempt: 1,
                },
                self.node_id.clone(),
                scheme,
            ),
            Transaction::build(
                Some(req.request_id),
                TxnPayload::Status { status: ScheduleStatus::Requested, reassign_guard: None },
                self.node_id.clone(),
                scheme,
            ),
        ];
        self.pending.insert(
            req.request_id,
            PendingRequest {
                request: req.clone(),
                designated: designated.clone(),
                deadline: now + chain.params.failure_timeout_ms,
                attempt: 1,
                excluded: BTreeSet::new(),
            },
        );
        Ok((txns, designated))
    }

    /// Phase two, honest path: only the designated node generates. Everyone
    /// else returns `None` and merely observes.
    pub fn on_schedule_request_event<R: Rng>(
        &self,
        rid: RequestId,
        designated: &NodeId,
        attempt: u32,
        chain: &ChainState,
        rng: &mut R,
        now: SimMs,
    ) -> Result<Option<ScheduleProposal>, SchedulerError> {
        if *designated != self.node_id {
            return Ok(None);
        }
        let entry = chain.schedule_table.get(&rid).expect("committed request has entry");
        let dag = &chain.workflow_table[&entry.workflow_id];
        let schedule = generate_schedule(dag, &entry.snapshot, rng, rid, self.node_id.clone())?;
        Ok(Some(ScheduleProposal {
            request_id: rid,
            proposer: self.node_id.clone(),
            schedule,
            generated_at: now,
            attempt,
        }))
    }

    /// Phase three: validate the proposal against the rule set and emit the
    /// confirmation pair for consensus ordering. The ledger re-checks
    /// everything on apply; this pre-check keeps honest proposers from
    /// submitting doomed confirmations.
    pub fn confirm_schedule(
        &self,
        proposal: &ScheduleProposal,
        chain: &ChainState,
    ) -> Result<Vec<Transaction>, Vec<&'static str>> {
        let Some(entry) = chain.schedule_table.get(&proposal.request_id) else {
            return Err(vec!["unknown-request"]);
        };
        let dag = &chain.workflow_table[&entry.workflow_id];
        let ctx = ValidationCtx {
            chain,
            dag,
            resources: &entry.snapshot,
            designated: &entry.designated,
            excluded: &entry.excluded,
            weights: chain.params.weights,
        };
        validate_schedule(&proposal.schedule, chain.rules(), &ctx)?;
        let scheme = chain.scheme().as_ref();
        Ok(confirmation_txns(proposal, &self.node_id, scheme))
    }

    /// Failure timer. Emits the guarded failure status plus — when
    /// candidates remain — the next attempt's request under a designee drawn
    /// from the unexcluded members.
    pub fn on_timeout(
        &mut self,
        rid: RequestId,
        attempt: u32,
        chain: &ChainState,
        fresh_resources: &ResourceMap,
        now: SimMs,
    ) -> TimeoutAction {
        let Some(entry) = chain.schedule_table.get(&rid) else { return TimeoutAction::NotDue };
        if entry.status != ScheduleStatus::Requested || entry.attempt != attempt {
            self.pending.remove(&rid);
            return TimeoutAction::NotDue;
        }
        let scheme = chain.scheme().as_ref();
        let fail_txn = Transaction::build(
            Some(rid),
            TxnPayload::Status { status: ScheduleStatus::Failed, reassign_guard: Some(attempt) },
            self.node_id.clone(),
            scheme,
        );
        let mut excluded = entry.excluded.clone();
        excluded.insert(entry.designated.clone());
        let candidates: Vec<NodeId> = chain
            .params
            .members
            .iter()
            .filter(|m| !excluded.contains(*m) && fresh_resources.entries.contains_key(*m))
            .cloned()
            .collect();
        // One attempt per member at most.
        if candidates.is_empty() || attempt as usize >= chain.params.members.len() {
            self.pending.remove(&rid);
            return TimeoutAction::Abandon { txns: vec![fail_txn], attempts: attempt };
        }
        let new_designated = match designate(&candidates, fresh_resources, &chain.params.weights) {
            Ok(n) => n,
            Err(_) => {
                self.pending.remove(&rid);
                return TimeoutAction::Abandon { txns: vec![fail_txn], attempts: attempt };
            }
        };
        let txns = vec![
            fail_txn,
            Transaction::build(
                Some(rid),
                TxnPayload::ScheduleRequest {
                    workflow_id: entry.workflow_id.clone(),
                    designated: new_designated.clone(),
                    snapshot_digest: fresh_resources.digest(),
                    snapshot: fresh_resources.clone(),
                    attempt: attempt + 1,
                },
                self.node_id.clone(),
                scheme,
            ),
            Transaction::build(
                Some(rid),
                TxnPayload::Status { status: ScheduleStatus::Requested, reassign_guard: None },
                self.node_id.clone(),
                scheme,
            ),
        ];
        if let Some(pending) = self.pending.get_mut(&rid) {
            pending.designated = new_designated.clone();
            pending.attempt = attempt + 1;
            pending.deadline = now + chain.params.failure_timeout_ms;
            pending.excluded = excluded;
        }
        TimeoutAction::Reassign { txns, new_designated, attempt: attempt + 1 }
    }
}

/// The confirmation-phase transaction pair: confirmation first (it performs the transition),
/// then the Active status marker.
pub fn confirmation_txns(
    proposal: &ScheduleProposal,
    signer: &NodeId,
    scheme: &dyn crate::types::SignatureScheme,
) -> Vec<Transaction> {
    vec![
        Transaction::build(
            Some(proposal.request_id),
            TxnPayload::ScheduleConfirmation {
                schedule: proposal.schedule.clone(),
                proposer: proposal.proposer.clone(),
                attempt: proposal.attempt,
            },
            signer.clone(),
            scheme,
        ),
        Transaction::build(
            Some(proposal.request_id),
            TxnPayload::Status { status: ScheduleStatus::Active, reassign_guard: None },
            signer.clone(),
            scheme,
        ),
    ]
}
