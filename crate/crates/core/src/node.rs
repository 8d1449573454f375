//! Simulated machines: compute nodes (replica + ledger + protocol + executor
//! + registrar), source IoT nodes, and the cache/store service actors.
//!
//! Everything a node does is a reaction to one delivered [`Payload`]; all
//! outbound effects go through the simulation context so delivery order and
//! latency stay owned by the kernel.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datastores::{keys, CacheCluster, PersistentStore, ResourceRegistrar};
use crate::exec::{CompletionNotice, ExecAction, ExecState, WorkflowResult};
use crate::ledger::{ApplyOutcome, Block, ChainState, ScheduleStatus, Transaction, TxnPayload};
use crate::pbft::{ConsensusMessage, PbftOutput, ReplicaState, TimerKind};
use crate::protocol::{confirmation_txns, ProtocolState, ScheduleProposal, ScheduleRequest, TimeoutAction};
use crate::scheduler::{ResourceMap, ResourceState, Schedule};
use crate::simnet::{ActorIndex, ByzScenario, SimCtx, SimPayload};
use crate::trace::TraceKind;
use crate::types::{Digest, NodeId, RequestId, SimMs, TaskId, WorkflowId};

/// Static addressing for one run.
#[derive(Clone, Debug)]
pub struct Directory {
    pub compute: Vec<(NodeId, ActorIndex)>,
    pub iot: Vec<(NodeId, ActorIndex)>,
    pub cache_actor: ActorIndex,
    pub store_actor: ActorIndex,
}

impl Directory {
    pub fn compute_actor(&self, node: &NodeId) -> ActorIndex {
        self.compute
            .iter()
            .find(|(n, _)| n == node)
            .map(|(_, a)| *a)
            .expect("known compute node")
    }

    pub fn iot_actor(&self, node: &NodeId) -> Option<ActorIndex> {
        self.iot.iter().find(|(n, _)| n == node).map(|(_, a)| *a)
    }
}

#[derive(Clone, Debug)]
pub enum CacheOp {
    Put { key: String, value: Vec<u8> },
    Get { key: String, reply_to: ActorIndex, token: u64 },
    ResourceView { reply_to: ActorIndex, token: u64 },
    Publish { channel: String, body: Publication },
    Subscribe { channel: String, node: NodeId, actor: ActorIndex },
}

#[derive(Clone, Debug)]
pub enum CacheReplyBody {
    Value(Option<Vec<u8>>),
    ResourceView { entries: BTreeMap<NodeId, ResourceState>, at: SimMs },
}

#[derive(Clone, Debug)]
pub struct CacheReply {
    pub token: u64,
    pub body: CacheReplyBody,
}

#[derive(Clone, Debug)]
pub enum Publication {
    Schedule { rid: RequestId, attempt: u32, schedule: Schedule },
    Completion(CompletionNotice),
}

#[derive(Clone, Debug)]
pub enum Payload {
    Consensus(ConsensusMessage),
    /// Harness-seeded transactions; the receiving node owns their delivery
    /// as if it had produced them.
    InjectTxns(Vec<Transaction>),
    SubmitTxns(Vec<Transaction>),
    Request(ScheduleRequest),
    CacheOp(CacheOp),
    CacheReply(CacheReply),
    Publication(Publication),
    StoreAppend { node: NodeId, bytes: Vec<u8> },
    Result(WorkflowResult),
    PbftTimer(TimerKind),
    FailureTimeout { rid: RequestId, attempt: u32 },
    ProgressCheck { batch: Digest, tries: u32 },
    RegistrarTick,
    TaskDone { rid: RequestId, task: TaskId },
    IotSend { seq: u64 },
}

impl SimPayload for Payload {
    fn proc_cost(&self, consensus_proc_ms: f64) -> f64 {
        match self {
            Payload::Consensus(_) => consensus_proc_ms,
            _ => 0.0,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Payload::Consensus(_) => "consensus",
            Payload::InjectTxns(_) => "inject_txns",
            Payload::SubmitTxns(_) => "submit_txns",
            Payload::Request(_) => "request",
            Payload::CacheOp(_) => "cache_op",
            Payload::CacheReply(_) => "cache_reply",
            Payload::Publication(_) => "publication",
            Payload::StoreAppend { .. } => "store_append",
            Payload::Result(_) => "result",
            Payload::PbftTimer(_) => "pbft_timer",
            Payload::FailureTimeout { .. } => "failure_timeout",
            Payload::ProgressCheck { .. } => "progress_check",
            Payload::RegistrarTick => "registrar_tick",
            Payload::TaskDone { .. } => "task_done",
            Payload::IotSend { .. } => "iot_send",
        }
    }
}

enum PendingCacheOp {
    Admission { req: ScheduleRequest },
    Reassign { rid: RequestId, attempt: u32 },
    TaskInputs { rid: RequestId, task: TaskId, remaining: usize },
}

pub struct ComputeNode {
    pub id: NodeId,
    pub actor: ActorIndex,
    pub replica: ReplicaState,
    pub chain: ChainState,
    pub protocol: ProtocolState,
    pub exec: ExecState,
    pub registrar: ResourceRegistrar,
    pub resources: ResourceState,
    pub byz: Option<ByzScenario>,
    pub rng: ChaCha8Rng,
    directory: Arc<Directory>,
    mempool: Vec<Transaction>,
    mempool_digests: BTreeSet<Digest>,
    proposed_digests: BTreeSet<Digest>,
    seen_txns: BTreeSet<Digest>,
    pending_batches: BTreeMap<Digest, Vec<Transaction>>,
    next_token: u64,
    pending_cache: BTreeMap<u64, PendingCacheOp>,
    pending_results: BTreeMap<RequestId, WorkflowResult>,
    pending_schedule_pubs: BTreeMap<RequestId, (u32, Schedule)>,
    debited: BTreeMap<(RequestId, TaskId), (u32, u32)>,
    last_active: Option<RequestId>,
}

impl ComputeNode {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: NodeId,
        actor: ActorIndex,
        replica: ReplicaState,
        chain: ChainState,
        registrar: ResourceRegistrar,
        resources: ResourceState,
        byz: Option<ByzScenario>,
        rng: ChaCha8Rng,
        directory: Arc<Directory>,
    ) -> Self {
        Self {
            protocol: ProtocolState::new(id.clone()),
            exec: ExecState::default(),
            id,
            actor,
            replica,
            chain,
            registrar,
            resources,
            byz,
            rng,
            directory,
            mempool: Vec::new(),
            mempool_digests: BTreeSet::new(),
            proposed_digests: BTreeSet::new(),
            seen_txns: BTreeSet::new(),
            pending_batches: BTreeMap::new(),
            next_token: 0,
            pending_cache: BTreeMap::new(),
            pending_results: BTreeMap::new(),
            pending_schedule_pubs: BTreeMap::new(),
            debited: BTreeMap::new(),
            last_active: None,
        }
    }

    pub fn handle(&mut self, payload: Payload, ctx: &mut SimCtx<'_, Payload>) {
        match payload {
            Payload::Request(req) => self.on_client_request(req, ctx),
            Payload::CacheReply(reply) => self.on_cache_reply(reply, ctx),
            Payload::InjectTxns(txns) => self.submit_txns(txns, ctx),
            Payload::SubmitTxns(txns) => self.on_submit(txns, ctx),
            Payload::Consensus(msg) => {
                let out = self.replica.handle_message(msg, ctx.now());
                self.process_pbft_output(out, ctx);
                self.try_propose(ctx);
            }
            Payload::PbftTimer(kind) => {
                let out = self.replica.on_timer(kind, ctx.now());
                self.process_pbft_output(out, ctx);
            }
            Payload::ProgressCheck { batch, tries } => self.on_progress_check(batch, tries, ctx),
            Payload::FailureTimeout { rid, attempt } => self.on_failure_timeout(rid, attempt, ctx),
            Payload::RegistrarTick => self.on_registrar_tick(ctx),
            Payload::Publication(p) => self.on_publication(p, ctx),
            Payload::TaskDone { rid, task } => {
                let actions = self.exec.on_task_done(&self.id.clone(), rid, task, ctx.now());
                self.run_exec_actions(actions, ctx);
            }
            // Compute nodes neither receive results nor IoT ticks.
            Payload::Result(_) | Payload::IotSend { .. } | Payload::CacheOp(_) | Payload::StoreAppend { .. } => {}
        }
    }

    fn token(&mut self) -> u64 {
        self.next_token += 1;
        self.next_token
    }

    fn cache(&self, ctx: &mut SimCtx<'_, Payload>, op: CacheOp) {
        ctx.send(self.directory.cache_actor, Payload::CacheOp(op));
    }

    // --- admission (phase one) ---------------------------------------------

    fn on_client_request(&mut self, req: ScheduleRequest, ctx: &mut SimCtx<'_, Payload>) {
        // Input payload goes to the cache up front so level-0 tasks can
        // fetch it as soon as the schedule activates.
        self.cache(ctx, CacheOp::Put { key: keys::input(&req.request_id), value: req.data.clone() });
        if req.persist_data {
            ctx.send(
                self.directory.store_actor,
                Payload::StoreAppend { node: self.id.clone(), bytes: req.data.clone() },
            );
        }
        let token = self.token();
        self.pending_cache.insert(token, PendingCacheOp::Admission { req });
        let me = self.actor;
        self.cache(ctx, CacheOp::ResourceView { reply_to: me, token });
    }

    fn on_cache_reply(&mut self, reply: CacheReply, ctx: &mut SimCtx<'_, Payload>) {
        let Some(pending) = self.pending_cache.remove(&reply.token) else { return };
        match (pending, reply.body) {
            (PendingCacheOp::Admission { req }, CacheReplyBody::ResourceView { entries, at }) => {
                let resources = ResourceMap::new(entries, at);
                let rid = req.request_id;
                match self.protocol.admit_request(&req, &self.chain, &resources, ctx.now()) {
                    Ok((txns, designated)) => {
                        ctx.trace(TraceKind::RequestAdmitted {
                            rid,
                            attempt: 1,
                            designated,
                            snapshot_digest: resources.digest(),
                        });
                        self.submit_txns(txns, ctx);
                        ctx.schedule_self(
                            self.chain.params.failure_timeout_ms,
                            Payload::FailureTimeout { rid, attempt: 1 },
                        );
                    }
                    Err(err) => {
                        ctx.trace(TraceKind::AdmissionFailed { rid, reason: err.to_string() });
                    }
                }
            }
            (PendingCacheOp::Reassign { rid, attempt }, CacheReplyBody::ResourceView { entries, at }) => {
                let resources = ResourceMap::new(entries, at);
                let old = self
                    .chain
                    .schedule_table
                    .get(&rid)
                    .map(|e| e.designated.clone())
                    .unwrap_or_else(|| self.id.clone());
                match self.protocol.on_timeout(rid, attempt, &self.chain, &resources, ctx.now()) {
                    TimeoutAction::NotDue => {}
                    TimeoutAction::Reassign { txns, new_designated, attempt: next } => {
                        ctx.trace(TraceKind::ReassignmentIssued {
                            rid,
                            attempt: next,
                            old_designated: old,
                            new_designated,
                        });
                        self.submit_txns(txns, ctx);
                        ctx.schedule_self(
                            self.chain.params.failure_timeout_ms,
                            Payload::FailureTimeout { rid, attempt: next },
                        );
                    }
                    TimeoutAction::Abandon { txns, attempts } => {
                        ctx.trace(TraceKind::RequestAbandoned { rid, attempts });
                        self.submit_txns(txns, ctx);
                    }
                }
            }
            (PendingCacheOp::TaskInputs { rid, task, remaining }, CacheReplyBody::Value(_)) => {
                if remaining > 1 {
                    self.pending_cache
                        .insert(reply.token, PendingCacheOp::TaskInputs { rid, task, remaining: remaining - 1 });
                    return;
                }
                let me = self.id.clone();
                let actions = self.exec.on_fetch_complete(&me, rid, task, ctx.now());
                self.run_exec_actions(actions, ctx);
            }
            _ => {}
        }
    }

    fn on_failure_timeout(&mut self, rid: RequestId, attempt: u32, ctx: &mut SimCtx<'_, Payload>) {
        let Some(entry) = self.chain.schedule_table.get(&rid) else {
            // Admission transactions not committed yet (e.g. consensus is
            // mid view-change); keep the deadline armed.
            if self.protocol.pending.contains_key(&rid) {
                ctx.schedule_self(
                    self.chain.params.failure_timeout_ms,
                    Payload::FailureTimeout { rid, attempt },
                );
            }
            return;
        };
        if entry.status != ScheduleStatus::Requested || entry.attempt != attempt {
            return;
        }
        // Fresh snapshot, then reassign.
        let token = self.token();
        self.pending_cache.insert(token, PendingCacheOp::Reassign { rid, attempt });
        let me = self.actor;
        self.cache(ctx, CacheOp::ResourceView { reply_to: me, token });
    }

    // --- consensus plumbing ------------------------------------------------

    fn submit_txns(&mut self, txns: Vec<Transaction>, ctx: &mut SimCtx<'_, Payload>) {
        if txns.is_empty() {
            return;
        }
        if self.replica.is_primary() {
            self.enqueue_mempool(txns);
            self.try_propose(ctx);
        } else {
            let batch_digest = txns[0].content_digest();
            if self.pending_batches.insert(batch_digest, txns.clone()).is_none() {
                ctx.schedule_self(
                    self.chain.params.view_change_timeout_ms,
                    Payload::ProgressCheck { batch: batch_digest, tries: 0 },
                );
            }
            let primary = self.directory.compute_actor(self.replica.primary());
            ctx.send(primary, Payload::SubmitTxns(txns));
        }
    }

    fn enqueue_mempool(&mut self, txns: Vec<Transaction>) {
        for txn in txns {
            let digest = txn.content_digest();
            if self.seen_txns.contains(&digest)
                || self.proposed_digests.contains(&digest)
                || !self.mempool_digests.insert(digest)
            {
                continue;
            }
            self.mempool.push(txn);
        }
    }

    fn on_submit(&mut self, txns: Vec<Transaction>, ctx: &mut SimCtx<'_, Payload>) {
        if txns.iter().all(|t| self.seen_txns.contains(&t.content_digest())) {
            return;
        }
        if self.replica.is_primary() {
            self.enqueue_mempool(txns);
            self.try_propose(ctx);
        } else {
            // Track the batch like a client request: if the primary stalls,
            // this replica times out toward a view change too.
            let batch_digest = txns[0].content_digest();
            if self.pending_batches.insert(batch_digest, txns.clone()).is_none() {
                ctx.schedule_self(
                    self.chain.params.view_change_timeout_ms,
                    Payload::ProgressCheck { batch: batch_digest, tries: 0 },
                );
                let primary = self.directory.compute_actor(self.replica.primary());
                if primary != self.actor {
                    ctx.send(primary, Payload::SubmitTxns(txns));
                }
            }
        }
    }

    fn on_progress_check(&mut self, batch: Digest, tries: u32, ctx: &mut SimCtx<'_, Payload>) {
        let Some(txns) = self.pending_batches.get(&batch) else { return };
        if txns.iter().all(|t| self.seen_txns.contains(&t.content_digest())) {
            self.pending_batches.remove(&batch);
            return;
        }
        if tries as usize >= self.chain.params.members.len() {
            return;
        }
        // No progress: vote the primary out, resubmit to the (possibly new)
        // one, and on the first stall hand the batch to every member so the
        // whole cluster shares the timeout.
        let out = self.replica.start_view_change();
        self.process_pbft_output(out, ctx);
        let txns = self.pending_batches[&batch].clone();
        if tries == 0 {
            for (node, actor) in self.directory.compute.clone() {
                if node != self.id {
                    ctx.send(actor, Payload::SubmitTxns(txns.clone()));
                }
            }
        }
        if self.replica.is_primary() {
            self.enqueue_mempool(txns);
            self.try_propose(ctx);
        } else {
            let primary = self.directory.compute_actor(self.replica.primary());
            ctx.send(primary, Payload::SubmitTxns(txns));
        }
        ctx.schedule_self(
            self.chain.params.view_change_timeout_ms,
            Payload::ProgressCheck { batch, tries: tries + 1 },
        );
    }

    fn try_propose(&mut self, ctx: &mut SimCtx<'_, Payload>) {
        if !self.replica.is_primary() || !self.replica.can_propose() || self.mempool.is_empty() {
            return;
        }
        let txns = std::mem::take(&mut self.mempool);
        self.mempool_digests.clear();
        for txn in &txns {
            self.proposed_digests.insert(txn.content_digest());
        }
        let head = self.chain.head();
        let (height, digest) = (head.height, head.digest());
        let out = self
            .replica
            .propose(txns, height, digest, ctx.now())
            .expect("primary checked");
        self.process_pbft_output(out, ctx);
    }

    fn process_pbft_output(&mut self, out: PbftOutput, ctx: &mut SimCtx<'_, Payload>) {
        for msg in out.outbox {
            for (node, actor) in self.directory.compute.clone() {
                if node != self.id {
                    ctx.send(actor, Payload::Consensus(msg.clone()));
                }
            }
        }
        for timer in out.timers {
            ctx.schedule_self(timer.delay_ms, Payload::PbftTimer(timer.kind));
        }
        for block in out.committed {
            self.apply_block(&block, ctx);
        }
    }

    // --- ledger application and protocol reactions -------------------------

    fn apply_block(&mut self, block: &Block, ctx: &mut SimCtx<'_, Payload>) {
        let verdicts = self.chain.append_block(block).unwrap_or_else(|e| {
            panic!(
                "{}: block {} (view {}) rejected: {e}; head {} digest {} vs parent {}",
                self.id,
                block.height,
                block.view,
                self.chain.head_height(),
                self.chain.head().digest(),
                block.parent_digest,
            )
        });
        ctx.trace(TraceKind::BlockCommitted {
            height: block.height,
            view: block.view,
            txns: block.transactions.len(),
        });
        for (idx, outcome) in verdicts {
            let txn = &block.transactions[idx];
            let digest = txn.content_digest();
            self.seen_txns.insert(digest);
            match outcome {
                Ok(ApplyOutcome::RequestOpened { request_id, designated, attempt }) => {
                    self.on_request_opened(request_id, designated, attempt, ctx);
                }
                Ok(ApplyOutcome::ScheduleConfirmed { request_id, proposer, attempt }) => {
                    ctx.trace(TraceKind::ActiveCommitted { rid: request_id, attempt, proposer: proposer.clone() });
                    self.last_active = Some(request_id);
                    self.protocol.pending.remove(&request_id);
                    if proposer == self.id {
                        let schedule = self.chain.schedule_table[&request_id]
                            .confirmed_schedule
                            .clone()
                            .expect("just confirmed");
                        ctx.trace(TraceKind::SchedulePublished { rid: request_id, attempt });
                        self.cache(
                            ctx,
                            CacheOp::Publish {
                                channel: keys::SCHEDULES_CHANNEL.to_string(),
                                body: Publication::Schedule { rid: request_id, attempt, schedule },
                            },
                        );
                    }
                    if let Some((attempt, schedule)) = self.pending_schedule_pubs.remove(&request_id) {
                        self.start_execution(request_id, attempt, schedule, ctx);
                    }
                }
                Ok(ApplyOutcome::StatusChanged { request_id, status: ScheduleStatus::Finalized, .. }) => {
                    ctx.trace(TraceKind::FinalizedCommitted { rid: request_id });
                    if let Some(result) = self.pending_results.remove(&request_id) {
                        if let Some(iot) = self.directory.iot_actor(&result.delivered_to) {
                            ctx.send(iot, Payload::Result(result));
                        }
                    }
                }
                Ok(ApplyOutcome::StatusChanged { request_id, status: ScheduleStatus::Failed, attempt }) => {
                    ctx.trace(TraceKind::FailedCommitted { rid: request_id, attempt });
                }
                Ok(_) => {}
                Err(reason) => {
                    let (proposer, claimed_attempt) = match &txn.payload {
                        TxnPayload::ScheduleConfirmation { proposer, attempt, .. } => {
                            (Some(proposer.clone()), Some(*attempt))
                        }
                        TxnPayload::ScheduleRequest { attempt, .. } => (None, Some(*attempt)),
                        _ => (None, None),
                    };
                    ctx.trace(TraceKind::TxnRejected {
                        height: block.height,
                        index: idx,
                        txn_kind: txn.kind(),
                        rid: txn.request_id,
                        signer: txn.signer.clone(),
                        proposer,
                        claimed_attempt,
                        reason,
                    });
                }
            }
        }
    }

    /// A committed schedule request: generation at the designee, Byzantine responses
    /// at hostile nodes.
    fn on_request_opened(
        &mut self,
        rid: RequestId,
        designated: NodeId,
        attempt: u32,
        ctx: &mut SimCtx<'_, Payload>,
    ) {
        match self.byz {
            Some(ByzScenario::UnauthorizedProposer) => {
                // Responds to every request, designated or not, with a bogus
                // schedule (flat levels, everything on itself).
                let proposal = self.malicious_proposal(rid, attempt, ctx.now());
                ctx.trace(TraceKind::ProposalGenerated {
                    rid,
                    attempt,
                    proposer: self.id.clone(),
                    malicious: true,
                });
                let txns = confirmation_txns(&proposal, &self.id, self.chain.scheme().as_ref());
                self.submit_txns(txns, ctx);
            }
            byz => {
                if designated == self.id {
                    match self.protocol.on_schedule_request_event(
                        rid,
                        &designated,
                        attempt,
                        &self.chain,
                        &mut self.rng,
                        ctx.now(),
                    ) {
                        Ok(Some(proposal)) => {
                            ctx.trace(TraceKind::ProposalGenerated {
                                rid,
                                attempt,
                                proposer: self.id.clone(),
                                malicious: false,
                            });
                            match self.protocol.confirm_schedule(&proposal, &self.chain) {
                                Ok(txns) => self.submit_txns(txns, ctx),
                                Err(rules) => ctx.trace(TraceKind::ProposalValidationFailed {
                                    rid,
                                    attempt,
                                    rules: rules.iter().map(|r| r.to_string()).collect(),
                                }),
                            }
                        }
                        Ok(None) => {}
                        Err(err) => ctx.trace(TraceKind::ProposalValidationFailed {
                            rid,
                            attempt,
                            rules: vec![err.to_string()],
                        }),
                    }
                    // Scenario 2: a designation is the trigger to also attack
                    // an already-scheduled request.
                    if byz == Some(ByzScenario::RequestInterference) {
                        if let Some(target) = self.last_active.filter(|t| *t != rid) {
                            self.interfere_with(target, ctx);
                        }
                    }
                }
            }
        }
    }

    fn malicious_proposal(&mut self, rid: RequestId, attempt: u32, now: SimMs) -> ScheduleProposal {
        let entry = &self.chain.schedule_table[&rid];
        let dag = &self.chain.workflow_table[&entry.workflow_id];
        let schedule = Schedule {
            request_id: rid,
            proposer: self.id.clone(),
            assignments: dag.tasks.keys().map(|t| (t.clone(), self.id.clone())).collect(),
            levels: dag.tasks.keys().map(|t| (t.clone(), 0)).collect(),
        };
        ScheduleProposal { request_id: rid, proposer: self.id.clone(), schedule, generated_at: now, attempt }
    }

    fn interfere_with(&mut self, target: RequestId, ctx: &mut SimCtx<'_, Payload>) {
        let Some(entry) = self.chain.schedule_table.get(&target) else { return };
        // Any request that already holds a confirmed schedule is a target.
        if entry.confirmed_schedule.is_none() {
            return;
        }
        let attempt = entry.attempt;
        let proposal = self.malicious_proposal(target, attempt, ctx.now());
        ctx.trace(TraceKind::ProposalGenerated {
            rid: target,
            attempt,
            proposer: self.id.clone(),
            malicious: true,
        });
        let txns = confirmation_txns(&proposal, &self.id, self.chain.scheme().as_ref());
        self.submit_txns(txns, ctx);
    }

    // --- execution ----------------------------------------------------------

    fn on_publication(&mut self, publication: Publication, ctx: &mut SimCtx<'_, Payload>) {
        match publication {
            Publication::Schedule { rid, attempt, schedule } => {
                let entry_ready = self
                    .chain
                    .schedule_table
                    .get(&rid)
                    .map(|e| e.confirmed_schedule.is_some())
                    .unwrap_or(false);
                if entry_ready {
                    self.start_execution(rid, attempt, schedule, ctx);
                } else {
                    // Publication raced ahead of this replica's own commit.
                    self.pending_schedule_pubs.insert(rid, (attempt, schedule));
                }
            }
            Publication::Completion(notice) => {
                let me = self.id.clone();
                let actions = self.exec.on_completion_notice(&me, notice, ctx.now());
                self.run_exec_actions(actions, ctx);
            }
        }
    }

    fn start_execution(&mut self, rid: RequestId, attempt: u32, schedule: Schedule, ctx: &mut SimCtx<'_, Payload>) {
        let entry = &self.chain.schedule_table[&rid];
        let dag = self.chain.workflow_table[&entry.workflow_id].clone();
        let (source, response_key) = entry
            .data
            .as_ref()
            .map(|d| (d.source.clone(), d.response_key.clone()))
            .unwrap_or_else(|| (NodeId::new("unknown"), vec![]));
        let me = self.id.clone();
        let actions =
            self.exec
                .on_schedule_published(&me, schedule, dag, attempt, source, response_key, ctx.now());
        self.run_exec_actions(actions, ctx);
    }

    fn run_exec_actions(&mut self, actions: Vec<ExecAction>, ctx: &mut SimCtx<'_, Payload>) {
        for action in actions {
            match action {
                ExecAction::StartFetch { rid, task, fetch_keys } => {
                    ctx.trace(TraceKind::TaskFetchStarted { rid, task: task.clone(), inputs: fetch_keys.len() });
                    let token = self.token();
                    self.pending_cache
                        .insert(token, PendingCacheOp::TaskInputs { rid, task, remaining: fetch_keys.len() });
                    let me = self.actor;
                    for key in fetch_keys {
                        self.cache(ctx, CacheOp::Get { key, reply_to: me, token });
                    }
                }
                ExecAction::TaskRunning { rid, task, level, duration_ms, cpu, mem } => {
                    ctx.trace(TraceKind::TaskStarted { rid, task: task.clone(), level });
                    let cpu_room = self.resources.cpu_total - self.resources.cpu_used;
                    let mem_room = self.resources.mem_total - self.resources.mem_used;
                    if cpu > cpu_room || mem > mem_room {
                        ctx.trace(TraceKind::ResourceOvercommit { rid, task: task.clone() });
                    }
                    let debit = (cpu.min(cpu_room), mem.min(mem_room));
                    self.resources.cpu_used += debit.0;
                    self.resources.mem_used += debit.1;
                    self.debited.insert((rid, task.clone()), debit);
                    ctx.schedule_self(duration_ms, Payload::TaskDone { rid, task });
                }
                ExecAction::PublishCompletion { notice, output_bytes } => {
                    ctx.trace(TraceKind::TaskFinished {
                        rid: notice.request_id,
                        task: notice.task_id.clone(),
                        level: notice.level,
                    });
                    if let Some((cpu, mem)) = self.debited.remove(&(notice.request_id, notice.task_id.clone())) {
                        self.resources.cpu_used -= cpu;
                        self.resources.mem_used -= mem;
                    }
                    self.cache(ctx, CacheOp::Put { key: notice.output_key.clone(), value: output_bytes });
                    self.cache(
                        ctx,
                        CacheOp::Publish {
                            channel: keys::COMPLETIONS_CHANNEL.to_string(),
                            body: Publication::Completion(notice),
                        },
                    );
                }
                ExecAction::Finalize { rid, result } => {
                    self.pending_results.insert(rid, result);
                    let txn = Transaction::build(
                        Some(rid),
                        TxnPayload::Status { status: ScheduleStatus::Finalized, reassign_guard: None },
                        self.id.clone(),
                        self.chain.scheme().as_ref(),
                    );
                    self.submit_txns(vec![txn], ctx);
                }
            }
        }
    }

    fn on_registrar_tick(&mut self, ctx: &mut SimCtx<'_, Payload>) {
        let fx = self.registrar.tick(&self.id.clone(), &self.resources.clone(), ctx.now());
        self.cache(ctx, CacheOp::Put { key: fx.cache_key, value: fx.cache_value });
        ctx.send(
            self.directory.store_actor,
            Payload::StoreAppend { node: self.id.clone(), bytes: fx.store_bytes },
        );
        if let Some(digests) = fx.batch {
            let txn = Transaction::build(
                None,
                TxnPayload::ResourceBatch { node: self.id.clone(), digests },
                self.id.clone(),
                self.chain.scheme().as_ref(),
            );
            self.submit_txns(vec![txn], ctx);
        }
        let interval = self.registrar.interval_ms;
        ctx.schedule_self(interval, Payload::RegistrarTick);
    }
}

/// Request plan for one source node.
#[derive(Clone, Debug)]
pub struct IotPlan {
    pub count: u64,
    pub interval_ms: SimMs,
    pub first_offset_ms: SimMs,
    pub workflow: WorkflowId,
    pub persist_data: bool,
}

pub struct IotNode {
    pub id: NodeId,
    pub actor: ActorIndex,
    pub target: ActorIndex,
    pub target_name: NodeId,
    pub plan: IotPlan,
    pub response_key: Vec<u8>,
    pub rng: ChaCha8Rng,
    pub delivered: Vec<(RequestId, bool)>,
}

impl IotNode {
    pub fn new(
        id: NodeId,
        actor: ActorIndex,
        target: ActorIndex,
        target_name: NodeId,
        plan: IotPlan,
        seed: u64,
    ) -> Self {
        let response_key = Digest::of(format!("response-key/{id}").as_bytes()).as_bytes().to_vec();
        Self {
            id,
            actor,
            target,
            target_name,
            plan,
            response_key,
            rng: ChaCha8Rng::seed_from_u64(seed),
            delivered: Vec::new(),
        }
    }

    pub fn handle(&mut self, payload: Payload, ctx: &mut SimCtx<'_, Payload>) {
        match payload {
            Payload::IotSend { seq } => {
                if seq >= self.plan.count {
                    return;
                }
                let rid = RequestId::derive(&self.id, seq);
                let mut data = vec![0u8; 32];
                self.rng.fill(&mut data[..]);
                let req = ScheduleRequest {
                    request_id: rid,
                    source: self.id.clone(),
                    workflow_id: self.plan.workflow.clone(),
                    data_digest: Digest::of(&data),
                    data,
                    response_key: self.response_key.clone(),
                    persist_data: self.plan.persist_data,
                };
                ctx.trace(TraceKind::RequestSent {
                    rid,
                    workflow: self.plan.workflow.clone(),
                    target: self.target_name.clone(),
                });
                ctx.send(self.target, Payload::Request(req));
                if seq + 1 < self.plan.count {
                    ctx.schedule_self(self.plan.interval_ms, Payload::IotSend { seq: seq + 1 });
                }
            }
            Payload::Result(result) => {
                let key_ok =
                    result.encrypted_with == self.response_key && result.delivered_to == self.id;
                ctx.trace(TraceKind::ResultDelivered {
                    rid: result.request_id,
                    source: self.id.clone(),
                    key_ok,
                });
                self.delivered.push((result.request_id, key_ok));
            }
            _ => {}
        }
    }
}

pub struct CacheService {
    pub cache: CacheCluster,
    actor_of: BTreeMap<NodeId, ActorIndex>,
    name: NodeId,
}

impl CacheService {
    pub fn new(name: NodeId) -> Self {
        Self { cache: CacheCluster::default(), actor_of: BTreeMap::new(), name }
    }

    pub fn register_subscriber(&mut self, channel: &str, node: NodeId, actor: ActorIndex) {
        self.actor_of.insert(node.clone(), actor);
        self.cache.subscribe(channel, node);
    }

    pub fn handle(&mut self, payload: Payload, ctx: &mut SimCtx<'_, Payload>) {
        let Payload::CacheOp(op) = payload else { return };
        match op {
            CacheOp::Put { key, value } => self.cache.put(key, value),
            CacheOp::Get { key, reply_to, token } => {
                let value = self.cache.get(&key).ok().map(|v| v.to_vec());
                ctx.send(reply_to, Payload::CacheReply(CacheReply { token, body: CacheReplyBody::Value(value) }));
            }
            CacheOp::ResourceView { reply_to, token } => {
                let entries = self.cache.resource_view();
                let at = ctx.now();
                ctx.send(
                    reply_to,
                    Payload::CacheReply(CacheReply { token, body: CacheReplyBody::ResourceView { entries, at } }),
                );
            }
            CacheOp::Publish { channel, body } => {
                let subscribers: Vec<ActorIndex> = self
                    .cache
                    .subscribers(&channel)
                    .filter_map(|n| self.actor_of.get(n).copied())
                    .collect();
                let name = self.name.clone();
                ctx.trace_as(&name, TraceKind::Published { channel, subscribers: subscribers.len() });
                for actor in subscribers {
                    ctx.send(actor, Payload::Publication(body.clone()));
                }
            }
            CacheOp::Subscribe { channel, node, actor } => {
                self.register_subscriber(&channel, node, actor);
            }
        }
    }
}

pub struct StoreService {
    pub store: PersistentStore,
}

impl StoreService {
    pub fn new() -> Self {
        Self { store: PersistentStore::default() }
    }

    pub fn handle(&mut self, payload: Payload, ctx: &mut SimCtx<'_, Payload>) {
        if let Payload::StoreAppend { node, bytes } = payload {
            self.store.append(ctx.now(), node, bytes);
        }
    }
}

impl Default for StoreService {
    fn default() -> Self {
        Self::new()
    }
}
