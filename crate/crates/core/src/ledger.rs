//! Append-only replicated ledger and the schedule-lifecycle state machine.
//!
//! Every replica folds the same block sequence through [`ChainState`] and
//! must end up with bit-identical state. Transactions that violate lifecycle
//! rules are rejected and skipped rather than failing the block: a committed
//! block is the total order, and rejection inside it is how hostile
//! proposals are neutralized without stalling the chain.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::{
    validate_schedule, DesignationWeights, ResourceMap, Schedule, ValidationCtx, ValidationRuleSet,
    WorkflowDAG,
};
use crate::types::{Digest, DigestBuilder, NodeId, RequestId, Signature, SignatureScheme, StubSigner, WorkflowId};

/// Lifecycle of a scheduling request as recorded on chain.
///
/// Legal transitions: Requested→Active, Active→Finalized, Requested→Failed,
/// Active→Failed. A Failed entry may be re-requested (reassignment), which
/// starts the next attempt back at Requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleStatus {
    Requested,
    Active,
    Finalized,
    Failed,
}

impl std::fmt::Display for ScheduleStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScheduleStatus::Requested => "Requested",
            ScheduleStatus::Active => "Active",
            ScheduleStatus::Finalized => "Finalized",
            ScheduleStatus::Failed => "Failed",
        };
        f.write_str(s)
    }
}

/// Source-node data accompanying a request: payload digest plus the public
/// key the final result must be encrypted under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub data_digest: Digest,
    pub source: NodeId,
    pub response_key: Vec<u8>,
    pub persist: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TxnPayload {
    /// Audit record of inbound source data, written at admission.
    Data(DataRecord),
    /// Lifecycle marker or transition for an existing request. A
    /// `reassign_guard` pins a Failed transition to a specific attempt still
    /// in Requested state, so a timeout racing a confirmation cannot clobber
    /// an Active schedule.
    Status {
        status: ScheduleStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reassign_guard: Option<u32>,
    },
    /// Opens (or re-opens, on reassignment) a scheduling attempt. Carries the
    /// designation verdict and the exact resource snapshot it was computed
    /// from, so every replica re-validates against identical data.
    ScheduleRequest {
        workflow_id: WorkflowId,
        designated: NodeId,
        snapshot_digest: Digest,
        snapshot: ResourceMap,
        attempt: u32,
    },
    /// The designated node's generated schedule, submitted for confirmation.
    ScheduleConfirmation { schedule: Schedule, proposer: NodeId, attempt: u32 },
    /// Fixed-size batch of resource-record digests from one node's registrar.
    ResourceBatch { node: NodeId, digests: Vec<Digest> },
    /// Registers an immutable workflow graph.
    WorkflowDefinition { dag: WorkflowDAG },
}

impl TxnPayload {
    pub fn kind(&self) -> TxnKind {
        match self {
            TxnPayload::Data(_) => TxnKind::Data,
            TxnPayload::Status { .. } => TxnKind::Status,
            TxnPayload::ScheduleRequest { .. } => TxnKind::ScheduleRequest,
            TxnPayload::ScheduleConfirmation { .. } => TxnKind::ScheduleConfirmation,
            TxnPayload::ResourceBatch { .. } => TxnKind::ResourceBatch,
            TxnPayload::WorkflowDefinition { .. } => TxnKind::WorkflowDefinition,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxnKind {
    Data,
    Status,
    ScheduleRequest,
    ScheduleConfirmation,
    ResourceBatch,
    WorkflowDefinition,
}

impl std::fmt::Display for TxnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TxnKind::Data => "data",
            TxnKind::Status => "status",
            TxnKind::ScheduleRequest => "schedule_request",
            TxnKind::ScheduleConfirmation => "schedule_confirmation",
            TxnKind::ResourceBatch => "resource_batch",
            TxnKind::WorkflowDefinition => "workflow_definition",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub request_id: Option<RequestId>,
    pub payload: TxnPayload,
    pub signer: NodeId,
    pub signature: Signature,
}

impl Transaction {
    pub fn build(
        request_id: Option<RequestId>,
        payload: TxnPayload,
        signer: NodeId,
        scheme: &dyn SignatureScheme,
    ) -> Self {
        let mut txn = Self { request_id, payload, signer, signature: Digest::ZERO };
        txn.signature = scheme.sign(&txn.signer, &txn.content_digest());
        txn
    }

    /// Digest over everything except the signature itself.
    pub fn content_digest(&self) -> Digest {
        let payload = serde_json::to_vec(&self.payload).expect("payload serializes");
        DigestBuilder::new("txn")
            .str(&self.request_id.map(|r| r.to_string()).unwrap_or_default())
            .str(self.signer.as_str())
            .chunk(&payload)
            .finish()
    }

    pub fn kind(&self) -> TxnKind {
        self.payload.kind()
    }
}

/// One signed commit vote; 2f+1 of these form a block's quorum certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitVote {
    pub voter: NodeId,
    pub signature: Signature,
}

/// Canonical content a commit vote signs: chain position plus block digest.
/// View-independent so votes for a block re-proposed after a view change
/// still aggregate into one certificate.
pub fn commit_vote_digest(height: u64, block_digest: &Digest, voter: &NodeId) -> Digest {
    DigestBuilder::new("commit-vote")
        .u64(height)
        .digest(block_digest)
        .str(voter.as_str())
        .finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub parent_digest: Digest,
    pub view: u64,
    pub transactions: Vec<Transaction>,
    /// Commit-quorum certificate. Excluded from the block digest so replicas
    /// holding different (but equally valid) vote subsets agree on the chain.
    pub consensus_proof: Vec<CommitVote>,
}

impl Block {
    pub fn digest(&self) -> Digest {
        let mut b = DigestBuilder::new("block")
            .u64(self.height)
            .digest(&self.parent_digest)
            .u64(self.view);
        for txn in &self.transactions {
            b = b.digest(&txn.content_digest()).digest(&txn.signature);
        }
        b.finish()
    }
}

/// Cluster-wide constants fixed at genesis so every replica folds identical
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenesisParams {
    pub members: Vec<NodeId>,
    pub f: usize,
    pub batch_size: usize,
    pub failure_timeout_ms: f64,
    pub view_change_timeout_ms: f64,
    pub weights: DesignationWeights,
}

impl GenesisParams {
    pub fn digest(&self) -> Digest {
        Digest::of(&serde_json::to_vec(self).expect("params serialize"))
    }

    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }
}

/// Why a transaction was skipped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// A confirmation has already been accepted for this request id.
    DuplicateConfirmation,
    /// Confirmation proposer is not the designated node of the live attempt.
    UnauthorizedProposer,
    /// Status transition (or request re-open) not in the legal set.
    IllegalTransition,
    /// Confirmation or status for a request id with no schedule request.
    UnknownRequest,
    /// Resource batch length differs from the configured batch size.
    WrongBatchSize,
    /// Schedule failed one or more network validation rules.
    ValidationFailed(Vec<String>),
    /// Schedule request names a workflow that is not registered.
    UnknownWorkflow,
    /// Workflow definitions are immutable once stored.
    DuplicateWorkflow,
    /// Transaction signature did not verify against its signer.
    BadSignature,
    /// Signer is not a cluster member.
    UnknownSigner,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::DuplicateConfirmation => write!(f, "duplicate_confirmation"),
            RejectReason::UnauthorizedProposer => write!(f, "unauthorized_proposer"),
            RejectReason::IllegalTransition => write!(f, "illegal_transition"),
            RejectReason::UnknownRequest => write!(f, "unknown_request"),
            RejectReason::WrongBatchSize => write!(f, "wrong_batch_size"),
            RejectReason::ValidationFailed(rules) => write!(f, "validation_failed[{}]", rules.join(",")),
            RejectReason::UnknownWorkflow => write!(f, "unknown_workflow"),
            RejectReason::DuplicateWorkflow => write!(f, "duplicate_workflow"),
            RejectReason::BadSignature => write!(f, "bad_signature"),
            RejectReason::UnknownSigner => write!(f, "unknown_signer"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BlockError {
    #[error("block parent does not match chain head")]
    BadParent,
    #[error("quorum certificate has {got} valid votes, need {need}")]
    InsufficientQuorum { got: usize, need: usize },
}

/// What an accepted transaction did, for the protocol layer to act on.
#[derive(Clone, Debug, PartialEq)]
pub enum ApplyOutcome {
    DataRecorded { request_id: RequestId },
    StatusMarker { request_id: RequestId, status: ScheduleStatus },
    /// `attempt` is captured at apply time; later transactions in the same
    /// block may advance the entry.
    StatusChanged { request_id: RequestId, status: ScheduleStatus, attempt: u32 },
    RequestOpened { request_id: RequestId, designated: NodeId, attempt: u32 },
    ScheduleConfirmed { request_id: RequestId, proposer: NodeId, attempt: u32 },
    BatchRecorded { node: NodeId },
    WorkflowRegistered { workflow_id: WorkflowId },
}

/// Ledger view of one scheduling request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub status: ScheduleStatus,
    pub designated: NodeId,
    pub attempt: u32,
    /// Designees of failed attempts; excluded from re-designation.
    pub excluded: BTreeSet<NodeId>,
    pub workflow_id: WorkflowId,
    pub snapshot_digest: Digest,
    pub snapshot: ResourceMap,
    pub confirmed_schedule: Option<Schedule>,
    pub proposer: Option<NodeId>,
    pub data: Option<DataRecord>,
    /// Designated node of each attempt, in attempt order.
    pub designation_history: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxnRecord {
    pub block_height: u64,
    pub txn_index: usize,
    pub kind: TxnKind,
    pub request_id: Option<RequestId>,
    pub signer: NodeId,
    pub verdict: Option<RejectReason>,
}

pub struct ChainState {
    pub params: GenesisParams,
    pub blocks: Vec<Block>,
    pub schedule_table: BTreeMap<RequestId, ScheduleEntry>,
    pub workflow_table: BTreeMap<WorkflowId, WorkflowDAG>,
    pub resource_digest_log: Vec<Digest>,
    pub txn_log: Vec<TxnRecord>,
    /// Data records seen before their schedule request; drained on entry
    /// creation. Part of the replicated fold like everything else.
    pending_data: BTreeMap<RequestId, DataRecord>,
    rules: ValidationRuleSet,
    scheme: Arc<dyn SignatureScheme>,
}

impl Clone for ChainState {
    fn clone(&self) -> Self {
        Self {
            params: self.params.clone(),
            blocks: self.blocks.clone(),
            schedule_table: self.schedule_table.clone(),
            workflow_table: self.workflow_table.clone(),
            resource_digest_log: self.resource_digest_log.clone(),
            txn_log: self.txn_log.clone(),
            pending_data: self.pending_data.clone(),
            rules: self.rules.clone(),
            scheme: Arc::clone(&self.scheme),
        }
    }
}

impl PartialEq for ChainState {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.blocks == other.blocks
            && self.schedule_table == other.schedule_table
            && self.workflow_table == other.workflow_table
            && self.resource_digest_log == other.resource_digest_log
            && self.txn_log == other.txn_log
            && self.pending_data == other.pending_data
    }
}

impl std::fmt::Debug for ChainState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChainState")
            .field("height", &self.head_height())
            .field("requests", &self.schedule_table.len())
            .field("workflows", &self.workflow_table.len())
            .finish()
    }
}

impl ChainState {
    pub fn genesis(params: GenesisParams) -> Self {
        Self::genesis_with(params, ValidationRuleSet::default(), Arc::new(StubSigner))
    }

    pub fn genesis_with(
        params: GenesisParams,
        rules: ValidationRuleSet,
        scheme: Arc<dyn SignatureScheme>,
    ) -> Self {
        let genesis = Block {
            height: 0,
            parent_digest: params.digest(),
            view: 0,
            transactions: vec![],
            consensus_proof: vec![],
        };
        Self {
            params,
            blocks: vec![genesis],
            schedule_table: BTreeMap::new(),
            workflow_table: BTreeMap::new(),
            resource_digest_log: Vec::new(),
            txn_log: Vec::new(),
            pending_data: BTreeMap::new(),
            rules,
            scheme,
        }
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("genesis always present")
    }

    pub fn head_height(&self) -> u64 {
        self.head().height
    }

    /// Applies one transaction against the current state. Returns the state
    /// effect on acceptance; on rejection the state is untouched.
    pub fn apply_transaction(&mut self, txn: &Transaction) -> Result<ApplyOutcome, RejectReason> {
        if !self.params.members.contains(&txn.signer) {
            return Err(RejectReason::UnknownSigner);
        }
        if !self.scheme.verify(&txn.signer, &txn.content_digest(), &txn.signature) {
            return Err(RejectReason::BadSignature);
        }
        match &txn.payload {
            TxnPayload::Data(record) => {
                let rid = txn.request_id.ok_or(RejectReason::UnknownRequest)?;
                if self.schedule_table.contains_key(&rid) {
                    self.schedule_table.get_mut(&rid).expect("checked").data = Some(record.clone());
                } else {
                    // Data may precede the schedule request; stash it so the
                    // entry picks it up on creation.
                    self.pending_data_mut().insert(rid, record.clone());
                }
                Ok(ApplyOutcome::DataRecorded { request_id: rid })
            }
            TxnPayload::Status { status, reassign_guard } => {
                let rid = txn.request_id.ok_or(RejectReason::UnknownRequest)?;
                let entry = self.schedule_table.get_mut(&rid).ok_or(RejectReason::UnknownRequest)?;
                if let Some(guard_attempt) = reassign_guard {
                    // Timeout-driven failure: valid only while the guarded
                    // attempt is still awaiting its schedule.
                    if *status == ScheduleStatus::Failed
                        && entry.status == ScheduleStatus::Requested
                        && entry.attempt == *guard_attempt
                    {
                        entry.status = ScheduleStatus::Failed;
                        return Ok(ApplyOutcome::StatusChanged {
                            request_id: rid,
                            status: ScheduleStatus::Failed,
                            attempt: entry.attempt,
                        });
                    }
                    return Err(RejectReason::IllegalTransition);
                }
                match (entry.status, status) {
                    // Markers: admission and confirmation carry explicit status transactions
                    // whose transitions were already performed by the request
                    // or confirmation they accompany.
                    (ScheduleStatus::Requested, ScheduleStatus::Requested)
                    | (ScheduleStatus::Active, ScheduleStatus::Active) => {
                        Ok(ApplyOutcome::StatusMarker { request_id: rid, status: *status })
                    }
                    (ScheduleStatus::Active, ScheduleStatus::Finalized) => {
                        entry.status = ScheduleStatus::Finalized;
                        Ok(ApplyOutcome::StatusChanged {
                            request_id: rid,
                            status: ScheduleStatus::Finalized,
                            attempt: entry.attempt,
                        })
                    }
                    (ScheduleStatus::Requested, ScheduleStatus::Failed)
                    | (ScheduleStatus::Active, ScheduleStatus::Failed) => {
                        entry.status = ScheduleStatus::Failed;
                        Ok(ApplyOutcome::StatusChanged {
                            request_id: rid,
                            status: ScheduleStatus::Failed,
                            attempt: entry.attempt,
                        })
                    }
                    _ => Err(RejectReason::IllegalTransition),
                }
            }
            TxnPayload::ScheduleRequest { workflow_id, designated, snapshot_digest, snapshot, attempt } => {
                let rid = txn.request_id.ok_or(RejectReason::UnknownRequest)?;
                if !self.workflow_table.contains_key(workflow_id) {
                    return Err(RejectReason::UnknownWorkflow);
                }
                if !self.params.members.contains(designated) {
                    return Err(RejectReason::UnknownSigner);
                }
                if !self.schedule_table.contains_key(&rid) {
                    if *attempt != 1 {
                        return Err(RejectReason::IllegalTransition);
                    }
                    let data = self.pending_data_mut().remove(&rid);
                    self.schedule_table.insert(
                        rid,
                        ScheduleEntry {
                            status: ScheduleStatus::Requested,
                            designated: designated.clone(),
                            attempt: 1,
                            excluded: BTreeSet::new(),
                            workflow_id: workflow_id.clone(),
                            snapshot_digest: *snapshot_digest,
                            snapshot: snapshot.clone(),
                            confirmed_schedule: None,
                            proposer: None,
                            data,
                            designation_history: vec![designated.clone()],
                        },
                    );
                    Ok(ApplyOutcome::RequestOpened { request_id: rid, designated: designated.clone(), attempt: 1 })
                } else {
                    let entry = self.schedule_table.get_mut(&rid).expect("checked");
                    // Reassignment: only a Failed attempt may be re-opened,
                    // and the new designee must not repeat a failed one.
                    if entry.status != ScheduleStatus::Failed
                        || *attempt != entry.attempt + 1
                        || entry.excluded.contains(designated)
                        || entry.designated == *designated
                    {
                        return Err(RejectReason::IllegalTransition);
                    }
                    entry.excluded.insert(entry.designated.clone());
                    entry.designated = designated.clone();
                    entry.attempt = *attempt;
                    entry.status = ScheduleStatus::Requested;
                    entry.snapshot_digest = *snapshot_digest;
                    entry.snapshot = snapshot.clone();
                    entry.designation_history.push(designated.clone());
                    Ok(ApplyOutcome::RequestOpened { request_id: rid, designated: designated.clone(), attempt: *attempt })
                }
            }
            TxnPayload::ScheduleConfirmation { schedule, proposer, attempt } => {
                let rid = txn.request_id.ok_or(RejectReason::UnknownRequest)?;
                let entry = self.schedule_table.get(&rid).ok_or(RejectReason::UnknownRequest)?;
                if entry.confirmed_schedule.is_some() {
                    return Err(RejectReason::DuplicateConfirmation);
                }
                if entry.status != ScheduleStatus::Requested {
                    return Err(RejectReason::IllegalTransition);
                }
                if *proposer != entry.designated || schedule.proposer != *proposer || *attempt != entry.attempt {
                    return Err(RejectReason::UnauthorizedProposer);
                }
                let dag = self
                    .workflow_table
                    .get(&entry.workflow_id)
                    .ok_or(RejectReason::UnknownWorkflow)?;
                let ctx = ValidationCtx {
                    chain: self,
                    dag,
                    resources: &entry.snapshot,
                    designated: &entry.designated,
                    excluded: &entry.excluded,
                    weights: self.params.weights,
                };
                if let Err(failed) = validate_schedule(schedule, &self.rules, &ctx) {
                    return Err(RejectReason::ValidationFailed(
                        failed.into_iter().map(String::from).collect(),
                    ));
                }
                let entry = self.schedule_table.get_mut(&rid).expect("checked above");
                entry.status = ScheduleStatus::Active;
                entry.confirmed_schedule = Some(schedule.clone());
                entry.proposer = Some(proposer.clone());
                Ok(ApplyOutcome::ScheduleConfirmed { request_id: rid, proposer: proposer.clone(), attempt: *attempt })
            }
            TxnPayload::ResourceBatch { node, digests } => {
                if digests.len() != self.params.batch_size {
                    return Err(RejectReason::WrongBatchSize);
                }
                self.resource_digest_log.extend(digests.iter().copied());
                Ok(ApplyOutcome::BatchRecorded { node: node.clone() })
            }
            TxnPayload::WorkflowDefinition { dag } => {
                if self.workflow_table.contains_key(&dag.workflow_id) {
                    return Err(RejectReason::DuplicateWorkflow);
                }
                self.workflow_table.insert(dag.workflow_id.clone(), dag.clone());
                Ok(ApplyOutcome::WorkflowRegistered { workflow_id: dag.workflow_id.clone() })
            }
        }
    }

    /// Verifies chain linkage and the quorum certificate, then applies every
    /// transaction in order. Rejected transactions are skipped and recorded;
    /// the block itself still commits.
    pub fn append_block(&mut self, block: &Block) -> Result<Vec<(usize, Result<ApplyOutcome, RejectReason>)>, BlockError> {
        let head = self.head();
        if block.height != head.height + 1 || block.parent_digest != head.digest() {
            return Err(BlockError::BadParent);
        }
        let digest = block.digest();
        let mut voters = BTreeSet::new();
        for vote in &block.consensus_proof {
            let content = commit_vote_digest(block.height, &digest, &vote.voter);
            if self.params.members.contains(&vote.voter)
                && self.scheme.verify(&vote.voter, &content, &vote.signature)
            {
                voters.insert(&vote.voter);
            }
        }
        let need = self.params.quorum();
        if voters.len() < need {
            return Err(BlockError::InsufficientQuorum { got: voters.len(), need });
        }
        let mut verdicts = Vec::with_capacity(block.transactions.len());
        for (idx, txn) in block.transactions.iter().enumerate() {
            let outcome = self.apply_transaction(txn);
            self.txn_log.push(TxnRecord {
                block_height: block.height,
                txn_index: idx,
                kind: txn.kind(),
                request_id: txn.request_id,
                signer: txn.signer.clone(),
                verdict: outcome.as_ref().err().cloned(),
            });
            verdicts.push((idx, outcome));
        }
        self.blocks.push(block.clone());
        Ok(verdicts)
    }

    /// Read-only lifecycle lookup reflecting the folded transaction history.
    pub fn query_schedule(
        &self,
        id: &RequestId,
    ) -> Result<(ScheduleStatus, NodeId, Option<&Schedule>), RejectReason> {
        let entry = self.schedule_table.get(id).ok_or(RejectReason::UnknownRequest)?;
        Ok((entry.status, entry.designated.clone(), entry.confirmed_schedule.as_ref()))
    }

    /// Validates and appends one resource digest batch outside of a block
    /// context (the in-block path goes through `apply_transaction`).
    pub fn record_resource_batch(&mut self, digests: &[Digest]) -> Result<(), RejectReason> {
        if digests.len() != self.params.batch_size {
            return Err(RejectReason::WrongBatchSize);
        }
        self.resource_digest_log.extend(digests.iter().copied());
        Ok(())
    }

    /// One line per applied or rejected transaction, tab separated:
    /// block_height, txn_index, kind, request_id, signer, verdict.
    pub fn export_txn_log_tsv(&self) -> String {
        let mut out = String::new();
        for rec in &self.txn_log {
            let rid = rec.request_id.map(|r| r.to_string()).unwrap_or_else(|| "-".into());
            let verdict = match &rec.verdict {
                None => "applied".to_string(),
                Some(r) => format!("rejected:{r}"),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                rec.block_height, rec.txn_index, rec.kind, rid, rec.signer, verdict
            ));
        }
        out
    }

    pub fn rules(&self) -> &ValidationRuleSet {
        &self.rules
    }

    pub fn scheme(&self) -> &Arc<dyn SignatureScheme> {
        &self.scheme
    }

    fn pending_data_mut(&mut self) -> &mut BTreeMap<RequestId, DataRecord> {
        &mut self.pending_data
    }
}
