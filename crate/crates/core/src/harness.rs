//! Scenario ingestion, end-to-end run orchestration, metrics, and reports.
//!
//! A scenario file (JSON) describes the cluster, the workflows, the request
//! plan, the latency model, and the fault plan. [`run_scenario`] builds the
//! simulated world, drives it to its horizon, and returns the full trace,
//! the per-request metrics report, and every replica's final chain for
//! invariant checking.
//!
//! Metrics definitions: RRT is result-delivery time minus the source node's
//! send time. Execution total is the critical path of task fetch+run spans.
//! Framework overhead (FO) is RRT minus execution total. Detection latency
//! is first network rejection minus malicious proposal time. Recovery time
//! is new-Active minus the malicious proposal of the attempt the timeout
//! resolved.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastores::{keys, ResourceRegistrar, StoreRecord};
use crate::ledger::{ChainState, GenesisParams, RejectReason, ScheduleStatus, Transaction, TxnKind, TxnPayload};
use crate::node::{CacheService, ComputeNode, Directory, IotNode, IotPlan, Payload, StoreService};
use crate::pbft::{ClusterConfig, MessageCounters, ReplicaState};
use crate::scheduler::{DesignationWeights, ResourceState, TaskSpec, WorkflowDAG};
use crate::simnet::{ActorIndex, Dispatch, FaultPlan, LatencyModel, NodeClass, Sim, SimCtx, TraceLevel};
use crate::trace::{Trace, TraceHeader, TraceKind};
use crate::types::{Digest, NodeId, RequestId, SimMs, StubSigner, TaskId, WorkflowId};

/// Workflow definition document, JSON-compatible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDoc {
    pub workflow_id: String,
    pub tasks: Vec<WorkflowTaskDoc>,
    pub edges: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowTaskDoc {
    pub task_id: String,
    pub app_id: String,
    pub cpu_req_millicores: u32,
    pub mem_req_mib: u32,
    pub exec_duration_ms: f64,
}

impl WorkflowDoc {
    pub fn to_dag(&self) -> Result<WorkflowDAG, crate::scheduler::DagError> {
        WorkflowDAG::new(
            WorkflowId::new(&self.workflow_id),
            self.tasks
                .iter()
                .map(|t| TaskSpec {
                    task_id: TaskId::new(&t.task_id),
                    app_id: t.app_id.clone(),
                    cpu_req: t.cpu_req_millicores,
                    mem_req: t.mem_req_mib,
                    exec_duration_ms: t.exec_duration_ms,
                })
                .collect(),
            self.edges
                .iter()
                .map(|(a, b)| (TaskId::new(a), TaskId::new(b)))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestPlan {
    /// Requests issued by each source node.
    pub per_iot_count: u64,
    pub interval_ms: f64,
    #[serde(default = "default_first_offset")]
    pub first_offset_ms: f64,
    /// Offset between successive source nodes' first requests.
    #[serde(default)]
    pub stagger_ms: f64,
    pub workflow_id: String,
    #[serde(default)]
    pub persist_data: bool,
}

fn default_first_offset() -> f64 {
    500.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub cpu_millicores: u32,
    pub mem_mib: u32,
    #[serde(default)]
    pub cpu_used_millicores: u32,
    #[serde(default)]
    pub mem_used_mib: u32,
}

impl Default for NodeProfile {
    fn default() -> Self {
        Self { cpu_millicores: 4000, mem_mib: 8192, cpu_used_millicores: 0, mem_used_mib: 0 }
    }
}

fn default_failure_timeout() -> f64 {
    5000.0
}
fn default_view_change_timeout() -> f64 {
    2000.0
}
fn default_batch_size() -> usize {
    10
}
fn default_resource_interval() -> f64 {
    10_000.0
}
fn default_consensus_proc() -> f64 {
    0.02
}
fn default_trace_level() -> TraceLevel {
    TraceLevel::Protocol
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub compute_nodes: usize,
    pub iot_nodes: usize,
    pub f: usize,
    #[serde(default)]
    pub weights: DesignationWeights,
    #[serde(default = "default_failure_timeout")]
    pub failure_timeout_ms: f64,
    #[serde(default = "default_view_change_timeout")]
    pub view_change_timeout_ms: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_resource_interval")]
    pub resource_interval_ms: f64,
    #[serde(default)]
    pub latency: LatencyModel,
    /// Per consensus-message processing cost at the receiver; models the
    /// CPU share of quadratic message growth.
    #[serde(default = "default_consensus_proc")]
    pub consensus_proc_ms: f64,
    pub workflows: Vec<WorkflowDoc>,
    pub request_plan: RequestPlan,
    #[serde(default)]
    pub fault_plan: FaultPlan,
    pub seed: u64,
    /// Cycled over compute nodes; baseline usage differentiates designation
    /// scores across otherwise idle nodes.
    #[serde(default)]
    pub node_profiles: Vec<NodeProfile>,
    /// Allows fault plans beyond the safety bound (flagged in reports).
    #[serde(default)]
    pub exploratory: bool,
    #[serde(default = "default_trace_level")]
    pub trace_level: TraceLevel,
    #[serde(default)]
    pub horizon_ms: Option<f64>,
}

#[derive(Debug, Error)]
#[error("invalid scenario config:\n{}", issues.join("\n"))]
pub struct InvalidConfig {
    pub issues: Vec<String>,
}

impl ScenarioConfig {
    pub fn from_json(json: &str) -> Result<Self, InvalidConfig> {
        let config: ScenarioConfig = serde_json::from_str(json)
            .map_err(|e| InvalidConfig { issues: vec![format!("parse error: {e}")] })?;
        config.validate()?;
        Ok(config)
    }

    pub fn member_names(&self) -> Vec<NodeId> {
        (0..self.compute_nodes).map(|i| NodeId::new(format!("c{i:02}"))).collect()
    }

    pub fn iot_names(&self) -> Vec<NodeId> {
        (0..self.iot_nodes).map(|i| NodeId::new(format!("iot{i}"))).collect()
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn profile_for(&self, index: usize) -> NodeProfile {
        if self.node_profiles.is_empty() {
            NodeProfile::default()
        } else {
            self.node_profiles[index % self.node_profiles.len()]
        }
    }

    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let mut issues = vec![];
        if self.compute_nodes == 0 {
            issues.push("compute_nodes: must be positive".into());
        }
        if !self.exploratory && self.compute_nodes < 3 * self.f + 1 {
            issues.push(format!(
                "compute_nodes: {} < 3*f+1 = {} (set exploratory for unsafe runs)",
                self.compute_nodes,
                3 * self.f + 1
            ));
        }
        if self.iot_nodes == 0 {
            issues.push("iot_nodes: must be positive".into());
        }
        if self.request_plan.interval_ms <= 0.0 {
            issues.push("request_plan.interval_ms: must be positive".into());
        }
        if self.failure_timeout_ms <= 0.0 {
            issues.push("failure_timeout_ms: must be positive".into());
        }
        if self.weights.validate().is_err() {
            issues.push("weights: w_c and w_m must be non-negative and sum to 1".into());
        }
        if self.workflows.is_empty() {
            issues.push("workflows: at least one definition required".into());
        }
        for doc in &self.workflows {
            if let Err(e) = doc.to_dag() {
                issues.push(format!("workflows.{}: {e}", doc.workflow_id));
            }
        }
        if !self.workflows.iter().any(|w| w.workflow_id == self.request_plan.workflow_id) {
            issues.push(format!(
                "request_plan.workflow_id: {} not among workflows",
                self.request_plan.workflow_id
            ));
        }
        let members: BTreeSet<NodeId> = self.member_names().into_iter().collect();
        for node in self.fault_plan.byzantine.keys().chain(self.fault_plan.crashes.keys()) {
            if !members.contains(node) {
                issues.push(format!("fault_plan: unknown node {node}"));
            }
        }
        if !self.exploratory && self.fault_plan.faulty_count() > self.f {
            issues.push(format!(
                "fault_plan: {} faulty nodes exceed f = {} (set exploratory to allow)",
                self.fault_plan.faulty_count(),
                self.f
            ));
        }
        for (i, p) in self.node_profiles.iter().enumerate() {
            if ResourceState::new(p.cpu_millicores, p.cpu_used_millicores, p.mem_mib, p.mem_used_mib).is_err() {
                issues.push(format!("node_profiles[{i}]: invalid totals/usage"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(InvalidConfig { issues })
        }
    }

    pub fn genesis_params(&self) -> GenesisParams {
        GenesisParams {
            members: self.member_names(),
            f: self.f,
            batch_size: self.batch_size,
            failure_timeout_ms: self.failure_timeout_ms,
            view_change_timeout_ms: self.view_change_timeout_ms,
            weights: self.weights,
        }
    }

    /// Default horizon: generous room for every request to exhaust all
    /// reassignment attempts.
    pub fn horizon(&self) -> SimMs {
        if let Some(h) = self.horizon_ms {
            return h;
        }
        let plan = &self.request_plan;
        let last_send = plan.first_offset_ms
            + plan.stagger_ms * (self.iot_nodes.saturating_sub(1)) as f64
            + plan.interval_ms * (plan.per_iot_count.saturating_sub(1)) as f64;
        last_send + self.failure_timeout_ms * (self.compute_nodes as f64 + 1.0) + 30_000.0
    }
}

// --- world ------------------------------------------------------------------

pub struct World {
    pub compute: Vec<ComputeNode>,
    pub iot: Vec<IotNode>,
    pub cache: CacheService,
    pub store: StoreService,
    compute_count: usize,
    iot_count: usize,
    cache_actor: ActorIndex,
}

impl Dispatch<Payload> for World {
    fn deliver(&mut self, target: ActorIndex, payload: Payload, ctx: &mut SimCtx<'_, Payload>) {
        if target < self.compute_count {
            self.compute[target].handle(payload, ctx);
        } else if target < self.compute_count + self.iot_count {
            self.iot[target - self.compute_count].handle(payload, ctx);
        } else if target == self.cache_actor {
            self.cache.handle(payload, ctx);
        } else {
            self.store.handle(payload, ctx);
        }
    }
}

fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let d = Digest::of(format!("{root}/{label}/{index}").as_bytes());
    u64::from_le_bytes(d.as_bytes()[..8].try_into().expect("8 bytes"))
}

pub fn build_world(config: &ScenarioConfig) -> Result<(Sim<Payload>, World), InvalidConfig> {
    config.validate()?;
    let mut sim: Sim<Payload> = Sim::new(config.seed, config.latency.clone(), config.trace_level);
    sim.consensus_proc_ms = config.consensus_proc_ms;

    let members = config.member_names();
    let iot_names = config.iot_names();
    let mut compute_actors = Vec::new();
    for name in &members {
        compute_actors.push(sim.register_actor(name.clone(), NodeClass::Compute));
    }
    let mut iot_actors = Vec::new();
    for name in &iot_names {
        iot_actors.push(sim.register_actor(name.clone(), NodeClass::Iot));
    }
    let cache_actor = sim.register_actor(NodeId::new("cache"), NodeClass::Service);
    let store_actor = sim.register_actor(NodeId::new("store"), NodeClass::Service);

    sim.install_crashes(&config.fault_plan)
        .map_err(|e| InvalidConfig { issues: vec![e.to_string()] })?;

    let directory = Arc::new(Directory {
        compute: members.iter().cloned().zip(compute_actors.iter().copied()).collect(),
        iot: iot_names.iter().cloned().zip(iot_actors.iter().copied()).collect(),
        cache_actor,
        store_actor,
    });

    let params = config.genesis_params();
    let scheme = Arc::new(StubSigner);
    let cluster = ClusterConfig::new(members.clone(), config.f).map_err(|e| InvalidConfig {
        issues: vec![format!("cluster: {e} (set exploratory runs up manually)")],
    });
    // Exploratory configs below the 3f+1 bound still need a cluster object.
    let cluster = match cluster {
        Ok(c) => c,
        Err(_) if config.exploratory => ClusterConfig { members: members.clone(), f: config.f, view: 0 },
        Err(e) => return Err(e),
    };

    let mut cache = CacheService::new(NodeId::new("cache"));
    let mut compute = Vec::new();
    for (i, name) in members.iter().enumerate() {
        let profile = config.profile_for(i);
        let resources = ResourceState::new(
            profile.cpu_millicores,
            profile.cpu_used_millicores,
            profile.mem_mib,
            profile.mem_used_mib,
        )
        .expect("validated profile");
        let replica = ReplicaState::new(
            name.clone(),
            cluster.clone(),
            config.view_change_timeout_ms,
            scheme.clone(),
        );
        let chain = ChainState::genesis_with(params.clone(), Default::default(), scheme.clone());
        let node = ComputeNode::new(
            name.clone(),
            compute_actors[i],
            replica,
            chain,
            ResourceRegistrar::new(config.resource_interval_ms, config.batch_size),
            resources,
            config.fault_plan.is_byzantine(name),
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "compute", i as u64)),
            directory.clone(),
        );
        cache.register_subscriber(keys::SCHEDULES_CHANNEL, name.clone(), compute_actors[i]);
        cache.register_subscriber(keys::COMPLETIONS_CHANNEL, name.clone(), compute_actors[i]);
        compute.push(node);
    }

    let mut iot = Vec::new();
    for (i, name) in iot_names.iter().enumerate() {
        let target_idx = i % members.len();
        iot.push(IotNode::new(
            name.clone(),
            iot_actors[i],
            compute_actors[target_idx],
            members[target_idx].clone(),
            IotPlan {
                count: config.request_plan.per_iot_count,
                interval_ms: config.request_plan.interval_ms,
                first_offset_ms: config.request_plan.first_offset_ms
                    + config.request_plan.stagger_ms * i as f64,
                workflow: WorkflowId::new(&config.request_plan.workflow_id),
                persist_data: config.request_plan.persist_data,
            },
            derive_seed(config.seed, "iot", i as u64),
        ));
    }

    // Seed events: workflow registration via the first live member,
    // registrar ticks, and each source node's first request.
    let registrar_node = members
        .iter()
        .position(|m| !config.fault_plan.crashes.contains_key(m))
        .unwrap_or(0);
    let definition_txns: Vec<Transaction> = config
        .workflows
        .iter()
        .map(|doc| {
            Transaction::build(
                None,
                TxnPayload::WorkflowDefinition { dag: doc.to_dag().expect("validated") },
                members[registrar_node].clone(),
                scheme.as_ref(),
            )
        })
        .collect();
    sim.schedule_after(0.0, compute_actors[registrar_node], Payload::InjectTxns(definition_txns))
        .expect("non-negative");
    for actor in &compute_actors {
        sim.schedule_after(0.0, *actor, Payload::RegistrarTick).expect("non-negative");
    }
    for node in &iot {
        sim.schedule_after(node.plan.first_offset_ms, node.actor, Payload::IotSend { seq: 0 })
            .expect("non-negative");
    }

    let world = World {
        compute_count: compute.len(),
        iot_count: iot.len(),
        cache_actor,
        compute,
        iot,
        cache,
        store: StoreService::new(),
    };
    Ok((sim, world))
}

// --- run --------------------------------------------------------------------

pub struct RunOutput {
    pub trace: Trace,
    pub report: MetricsReport,
    pub chains: Vec<(NodeId, ChainState)>,
    pub store: Vec<StoreRecord>,
    pub fault_plan: FaultPlan,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput, InvalidConfig> {
    let (mut sim, mut world) = build_world(config)?;
    let horizon = config.horizon();
    sim.run(&mut world, Some(horizon));

    let mut counters = MessageCounters::default();
    for node in &world.compute {
        counters.add(&node.replica.counters);
    }
    let header = TraceHeader {
        format: "bftsched-trace/1".to_string(),
        seed: config.seed,
        config_digest: config.digest(),
        jitter_note: format!(
            "latency jitter_fraction={} distribution={:?} is a modeling choice",
            config.latency.jitter_fraction, config.latency.distribution
        ),
        scenario: serde_json::to_value(config).expect("config serializes"),
    };
    let final_time_ms = sim.now;
    let trace = Trace { header, records: sim.into_records(), counters, final_time_ms };
    let report = compute_metrics(&trace)?;
    Ok(RunOutput {
        trace,
        report,
        chains: world.compute.into_iter().map(|n| (n.id, n.chain)).collect(),
        store: world.store.store.records().to_vec(),
        fault_plan: config.fault_plan.clone(),
    })
}

// --- metrics ------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestOutcome {
    Finalized,
    Failed,
    Incomplete,
}

impl std::fmt::Display for RequestOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RequestOutcome::Finalized => write!(f, "finalized"),
            RequestOutcome::Failed => write!(f, "failed"),
            RequestOutcome::Incomplete => write!(f, "incomplete"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRow {
    pub request_id: RequestId,
    pub source: NodeId,
    pub sent_ms: f64,
    pub active_ms: Option<f64>,
    pub finalized_ms: Option<f64>,
    pub delivered_ms: Option<f64>,
    pub rrt_ms: Option<f64>,
    pub exec_total_ms: Option<f64>,
    pub fo_ms: Option<f64>,
    pub attempts: u32,
    pub status: RequestOutcome,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl StatSummary {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Self {
            count: samples.len(),
            mean,
            std: var.sqrt(),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config_digest: Digest,
    pub jitter_note: String,
    pub rows: Vec<RequestRow>,
    pub rrt: StatSummary,
    pub fo: StatSummary,
    pub detection_latency: StatSummary,
    pub recovery_time: StatSummary,
    pub detection_samples: Vec<f64>,
    pub recovery_samples: Vec<f64>,
    pub unmatched_malicious_proposals: usize,
    pub counters: MessageCounters,
    pub rejected_txn_count: usize,
    pub false_positive_count: usize,
    pub stale_rejection_count: usize,
}

struct RequestAccount {
    source: NodeId,
    workflow: WorkflowId,
    sent_ms: f64,
    admissions: BTreeMap<u32, (NodeId, f64)>,
    active: Option<(f64, u32)>,
    finalized: Option<f64>,
    delivered: Option<f64>,
    abandoned: bool,
    // per task: (fetch_started, started, finished)
    tasks: BTreeMap<TaskId, (Option<f64>, Option<f64>, Option<f64>)>,
}

/// Derives the full report from a trace. The trace is self-contained: the
/// header's embedded scenario supplies workflow shapes and the fault plan.
pub fn compute_metrics(trace: &Trace) -> Result<MetricsReport, InvalidConfig> {
    let config: ScenarioConfig = serde_json::from_value(trace.header.scenario.clone())
        .map_err(|e| InvalidConfig { issues: vec![format!("trace header scenario: {e}")] })?;
    let byz: BTreeSet<&NodeId> = config.fault_plan.byzantine.keys().collect();
    let dags: BTreeMap<String, WorkflowDAG> = config
        .workflows
        .iter()
        .map(|doc| (doc.workflow_id.clone(), doc.to_dag().expect("validated")))
        .collect();

    let mut accounts: BTreeMap<RequestId, RequestAccount> = BTreeMap::new();
    // (rid, proposer, attempt) -> first proposal time
    let mut malicious: BTreeMap<(RequestId, NodeId, u32), f64> = BTreeMap::new();
    // (rid, proposer, attempt) -> first rejection time of a confirmation
    let mut first_rejection: BTreeMap<(RequestId, NodeId, u32), f64> = BTreeMap::new();
    let mut rejected_txn_count = 0usize;
    let mut false_positive_count = 0usize;
    let mut stale_rejection_count = 0usize;
    let mut rejected_confirmations: Vec<(RequestId, NodeId, u32, f64)> = Vec::new();

    for rec in &trace.records {
        match &rec.kind {
            TraceKind::RequestSent { rid, workflow, .. } => {
                accounts.entry(*rid).or_insert_with(|| RequestAccount {
                    source: rec.actor.clone(),
                    workflow: workflow.clone(),
                    sent_ms: rec.t,
                    admissions: BTreeMap::new(),
                    active: None,
                    finalized: None,
                    delivered: None,
                    abandoned: false,
                    tasks: BTreeMap::new(),
                });
            }
            TraceKind::RequestAdmitted { rid, attempt, designated, .. } => {
                if let Some(acc) = accounts.get_mut(rid) {
                    acc.admissions.entry(*attempt).or_insert((designated.clone(), rec.t));
                }
            }
            TraceKind::ReassignmentIssued { rid, attempt, new_designated, .. } => {
                if let Some(acc) = accounts.get_mut(rid) {
                    acc.admissions.entry(*attempt).or_insert((new_designated.clone(), rec.t));
                }
            }
            TraceKind::ProposalGenerated { rid, attempt, proposer, malicious: true } => {
                malicious.entry((*rid, proposer.clone(), *attempt)).or_insert(rec.t);
            }
            TraceKind::ActiveCommitted { rid, attempt, .. } => {
                if let Some(acc) = accounts.get_mut(rid) {
                    if acc.active.is_none() {
                        acc.active = Some((rec.t, *attempt));
                    }
                }
            }
            TraceKind::FinalizedCommitted { rid } => {
                if let Some(acc) = accounts.get_mut(rid) {
                    acc.finalized.get_or_insert(rec.t);
                }
            }
            TraceKind::ResultDelivered { rid, .. } => {
                if let Some(acc) = accounts.get_mut(rid) {
                    acc.delivered.get_or_insert(rec.t);
                }
            }
            TraceKind::RequestAbandoned { rid, .. } => {
                if let Some(acc) = accounts.get_mut(rid) {
                    acc.abandoned = true;
                }
            }
            TraceKind::TaskFetchStarted { rid, task, .. } => {
                if let Some(acc) = accounts.get_mut(rid) {
                    acc.tasks.entry(task.clone()).or_insert((None, None, None)).0.get_or_insert(rec.t);
                }
            }
            TraceKind::TaskStarted { rid, task, .. } => {
                if let Some(acc) = accounts.get_mut(rid) {
                    acc.tasks.entry(task.clone()).or_insert((None, None, None)).1.get_or_insert(rec.t);
                }
            }
            TraceKind::TaskFinished { rid, task, .. } => {
                if let Some(acc) = accounts.get_mut(rid) {
                    acc.tasks.entry(task.clone()).or_insert((None, None, None)).2.get_or_insert(rec.t);
                }
            }
            TraceKind::TxnRejected { rid, txn_kind, proposer, claimed_attempt, .. } => {
                rejected_txn_count += 1;
                if *txn_kind == TxnKind::ScheduleConfirmation {
                    if let (Some(rid), Some(proposer), Some(attempt)) = (rid, proposer, claimed_attempt) {
                        first_rejection
                            .entry((*rid, proposer.clone(), *attempt))
                            .or_insert(rec.t);
                        rejected_confirmations.push((*rid, proposer.clone(), *attempt, rec.t));
                    }
                }
            }
            _ => {}
        }
    }

    // False positives: a rejected confirmation from an honest node that was
    // the recorded designee of the attempt it claimed. Rejections of honest
    // confirmations for attempts already superseded by a reassignment are
    // stale, not false positives.
    let mut counted_fp: BTreeSet<(RequestId, NodeId, u32)> = BTreeSet::new();
    for (rid, proposer, attempt, t) in &rejected_confirmations {
        if byz.contains(proposer) {
            continue;
        }
        let Some(acc) = accounts.get(rid) else { continue };
        let Some((designated, _)) = acc.admissions.get(attempt) else { continue };
        if designated != proposer || !counted_fp.insert((*rid, proposer.clone(), *attempt)) {
            continue;
        }
        let superseded = acc
            .admissions
            .iter()
            .any(|(a, (_, at))| a > attempt && at <= t);
        if superseded {
            stale_rejection_count += 1;
        } else {
            false_positive_count += 1;
        }
    }

    // Detection latency: per malicious proposal, earliest rejection.
    let mut detection_samples = Vec::new();
    let mut unmatched = 0usize;
    for ((rid, proposer, attempt), t_prop) in &malicious {
        match first_rejection.get(&(*rid, proposer.clone(), *attempt)) {
            Some(t_rej) if t_rej >= t_prop => detection_samples.push(t_rej - t_prop),
            _ => unmatched += 1,
        }
    }

    // Recovery: for requests that went Active on attempt k > 1 whose
    // attempt-(k-1) designee produced a malicious proposal.
    let mut recovery_samples = Vec::new();
    for (rid, acc) in &accounts {
        let Some((t_active, attempt)) = acc.active else { continue };
        if attempt <= 1 {
            continue;
        }
        let prev = attempt - 1;
        let Some((prev_designee, _)) = acc.admissions.get(&prev) else { continue };
        if let Some(t_prop) = malicious.get(&(*rid, prev_designee.clone(), prev)) {
            recovery_samples.push(t_active - t_prop);
        }
    }

    let mut rows = Vec::new();
    for (rid, acc) in &accounts {
        let attempts = acc.admissions.keys().copied().max().unwrap_or(0).max(
            acc.active.map(|(_, a)| a).unwrap_or(0),
        );
        let rrt = acc.delivered.map(|d| d - acc.sent_ms);
        let exec_total = critical_path_ms(&dags, acc);
        let fo = match (rrt, exec_total) {
            (Some(rrt), Some(exec)) => Some(rrt - exec),
            _ => None,
        };
        let status = if acc.delivered.is_some() && acc.finalized.is_some() {
            RequestOutcome::Finalized
        } else if acc.abandoned {
            RequestOutcome::Failed
        } else {
            RequestOutcome::Incomplete
        };
        rows.push(RequestRow {
            request_id: *rid,
            source: acc.source.clone(),
            sent_ms: acc.sent_ms,
            active_ms: acc.active.map(|(t, _)| t),
            finalized_ms: acc.finalized,
            delivered_ms: acc.delivered,
            rrt_ms: rrt,
            exec_total_ms: exec_total,
            fo_ms: fo,
            attempts: attempts.max(1),
            status,
        });
    }
    rows.sort_by(|a, b| a.sent_ms.total_cmp(&b.sent_ms).then_with(|| a.request_id.cmp(&b.request_id)));

    let completed_rrt: Vec<f64> = rows.iter().filter_map(|r| r.rrt_ms).collect();
    let completed_fo: Vec<f64> = rows.iter().filter_map(|r| r.fo_ms).collect();

    Ok(MetricsReport {
        seed: trace.header.seed,
        config_digest: trace.header.config_digest,
        jitter_note: trace.header.jitter_note.clone(),
        rrt: StatSummary::of(&completed_rrt),
        fo: StatSummary::of(&completed_fo),
        detection_latency: StatSummary::of(&detection_samples),
        recovery_time: StatSummary::of(&recovery_samples),
        detection_samples,
        recovery_samples,
        unmatched_malicious_proposals: unmatched,
        counters: trace.counters,
        rejected_txn_count,
        false_positive_count,
        stale_rejection_count,
        rows,
    })
}

/// Critical path over the workflow DAG where a task's cost is its measured
/// fetch span plus run span. Notice propagation between tasks is framework
/// overhead and intentionally excluded.
fn critical_path_ms(dags: &BTreeMap<String, WorkflowDAG>, acc: &RequestAccount) -> Option<f64> {
    let dag = dags.get(acc.workflow.as_str())?;
    if acc.tasks.len() != dag.tasks.len() {
        return None;
    }
    let mut span = BTreeMap::new();
    for (task, (fetch, _started, finished)) in &acc.tasks {
        let (f, d) = ((*fetch)?, (*finished)?);
        span.insert(task.clone(), d - f);
    }
    let levels = crate::scheduler::compute_levels(dag).ok()?;
    let mut order: Vec<&TaskId> = dag.tasks.keys().collect();
    order.sort_by_key(|t| (levels[*t], (*t).clone()));
    let mut cp: BTreeMap<&TaskId, f64> = BTreeMap::new();
    let mut best: f64 = 0.0;
    for task in order {
        let pred_max = dag
            .predecessors(task)
            .map(|p| cp.get(p).copied().unwrap_or(0.0))
            .fold(0.0_f64, f64::max);
        let total = pred_max + span[task];
        best = best.max(total);
        cp.insert(task, total);
    }
    Some(best)
}

// --- reports ------------------------------------------------------------------

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

pub const CSV_COLUMNS: &str =
    "request_id,source,sent_ms,active_ms,finalized_ms,delivered_ms,rrt_ms,exec_total_ms,fo_ms,attempts,status";

pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from(CSV_COLUMNS);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{:.3},{},{},{},{},{},{},{},{}\n",
            r.request_id,
            r.source,
            r.sent_ms,
            fmt_opt(r.active_ms),
            fmt_opt(r.finalized_ms),
            fmt_opt(r.delivered_ms),
            fmt_opt(r.rrt_ms),
            fmt_opt(r.exec_total_ms),
            fmt_opt(r.fo_ms),
            r.attempts,
            r.status
        ));
    }
    out
}

pub fn report_text(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("seed: {}\n", report.seed));
    out.push_str(&format!("config digest: {}\n", report.config_digest));
    out.push_str(&format!("note: {}\n", report.jitter_note));
    out.push_str(&format!("requests: {}\n", report.rows.len()));
    let finalized = report.rows.iter().filter(|r| r.status == RequestOutcome::Finalized).count();
    let failed = report.rows.iter().filter(|r| r.status == RequestOutcome::Failed).count();
    out.push_str(&format!(
        "outcomes: finalized={} failed={} incomplete={}\n",
        finalized,
        failed,
        report.rows.len() - finalized - failed
    ));
    out.push_str(&format!(
        "rrt_ms: mean={:.3} std={:.3} min={:.3} max={:.3} (n={})\n",
        report.rrt.mean, report.rrt.std, report.rrt.min, report.rrt.max, report.rrt.count
    ));
    out.push_str(&format!(
        "fo_ms: mean={:.3} std={:.3} min={:.3} max={:.3} (n={})\n",
        report.fo.mean, report.fo.std, report.fo.min, report.fo.max, report.fo.count
    ));
    out.push_str(&format!(
        "detection_latency_ms: mean={:.3} min={:.3} max={:.3} (n={})\n",
        report.detection_latency.mean,
        report.detection_latency.min,
        report.detection_latency.max,
        report.detection_latency.count
    ));
    out.push_str(&format!(
        "recovery_time_ms: mean={:.3} min={:.3} max={:.3} (n={})\n",
        report.recovery_time.mean,
        report.recovery_time.min,
        report.recovery_time.max,
        report.recovery_time.count
    ));
    out.push_str(&format!(
        "consensus messages: preprepare={} prepare={} commit={} viewchange={} total={}\n",
        report.counters.preprepare,
        report.counters.prepare,
        report.counters.commit,
        report.counters.viewchange,
        report.counters.total()
    ));
    out.push_str(&format!(
        "rejected_txns={} false_positives={} stale_rejections={} unmatched_malicious={}\n",
        report.rejected_txn_count,
        report.false_positive_count,
        report.stale_rejection_count,
        report.unmatched_malicious_proposals
    ));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Text,
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => report_csv(report),
        ReportFormat::Text => report_text(report),
    }
}

// --- replay -------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayVerdict {
    pub trace_identical: bool,
    pub csv_identical: bool,
}

/// Re-runs the scenario embedded in a trace export and compares the fresh
/// trace and the CSV derived from it byte-for-byte against the originals.
pub fn replay_trace(trace_jsonl: &str) -> Result<ReplayVerdict, InvalidConfig> {
    let original = Trace::from_jsonl(trace_jsonl)
        .map_err(|e| InvalidConfig { issues: vec![format!("trace parse: {e}")] })?;
    let config: ScenarioConfig = serde_json::from_value(original.header.scenario.clone())
        .map_err(|e| InvalidConfig { issues: vec![format!("trace scenario: {e}")] })?;
    let rerun = run_scenario(&config)?;
    let trace_identical = rerun.trace.to_jsonl() == trace_jsonl;
    let original_csv = report_csv(&compute_metrics(&original)?);
    let fresh_csv = report_csv(&rerun.report);
    Ok(ReplayVerdict { trace_identical, csv_identical: original_csv == fresh_csv })
}

// --- invariant checks -----------------------------------------------------------

/// Cross-replica safety: at most one confirmed schedule per request, always
/// from the recorded designee, consistent across every honest replica.
pub fn verify_agreement_and_validity(run: &RunOutput) -> Result<(), String> {
    let honest: Vec<&(NodeId, ChainState)> = run
        .chains
        .iter()
        .filter(|(n, _)| !run.fault_plan.byzantine.contains_key(n) && !run.fault_plan.crashes.contains_key(n))
        .collect();
    let mut confirmed: BTreeMap<RequestId, Digest> = BTreeMap::new();
    for (node, chain) in &honest {
        for (rid, entry) in &chain.schedule_table {
            if matches!(entry.status, ScheduleStatus::Active | ScheduleStatus::Finalized) {
                let schedule =
                    entry.confirmed_schedule.as_ref().ok_or_else(|| format!("{node}: {rid} active without schedule"))?;
                let proposer =
                    entry.proposer.as_ref().ok_or_else(|| format!("{node}: {rid} active without proposer"))?;
                if *proposer != entry.designated {
                    return Err(format!("{node}: {rid} proposer {proposer} != designee {}", entry.designated));
                }
                if schedule.proposer != *proposer {
                    return Err(format!("{node}: {rid} schedule proposer mismatch"));
                }
                let digest = schedule.digest();
                if let Some(prev) = confirmed.get(rid) {
                    if *prev != digest {
                        return Err(format!("agreement violated for {rid}: two distinct active schedules"));
                    }
                } else {
                    confirmed.insert(*rid, digest);
                }
            }
            if entry.designation_history.len() != entry.attempt as usize {
                return Err(format!("{node}: {rid} designation history length mismatch"));
            }
        }
    }
    Ok(())
}

/// Structural quorum checks over committed blocks: certificate sizes and
/// pairwise intersections of at least f+1 members.
pub fn verify_quorum_certificates(run: &RunOutput, all_replicas: bool) -> Result<(), String> {
    let f = run.chains[0].1.params.f;
    let need = 2 * f + 1;
    let mut certs: Vec<BTreeSet<&NodeId>> = Vec::new();
    let chains: Vec<&(NodeId, ChainState)> =
        if all_replicas { run.chains.iter().collect() } else { run.chains.iter().take(1).collect() };
    for (node, chain) in chains {
        for block in chain.blocks.iter().skip(1) {
            let signers: BTreeSet<&NodeId> = block.consensus_proof.iter().map(|v| &v.voter).collect();
            if signers.len() < need {
                return Err(format!("{node}: block {} cert has {} < {need} signers", block.height, signers.len()));
            }
            certs.push(signers);
        }
    }
    for i in 0..certs.len() {
        for j in (i + 1)..certs.len() {
            let inter = certs[i].intersection(&certs[j]).count();
            if inter < f + 1 {
                return Err(format!("quorum pair ({i},{j}) intersects in {inter} < f+1 members"));
            }
        }
    }
    Ok(())
}

/// Per-request lifecycle monotonicity, per replica: each attempt's observed
/// transitions are a prefix of Requested -> Active -> Finalized or end in
/// Failed, and attempts only move forward. Re-requests after a failure are
/// not separately traced, so a later attempt may appear directly.
pub fn verify_lifecycle_monotonicity(run: &RunOutput) -> Result<(), String> {
    #[derive(Clone, Copy, PartialEq, Debug)]
    enum Obs {
        Requested,
        Active(u32),
        Finalized,
        Failed(u32),
    }
    let mut state: BTreeMap<(NodeId, RequestId), Obs> = BTreeMap::new();
    for rec in &run.trace.records {
        let (rid, next) = match &rec.kind {
            TraceKind::ActiveCommitted { rid, attempt, .. } => (*rid, Obs::Active(*attempt)),
            TraceKind::FinalizedCommitted { rid } => (*rid, Obs::Finalized),
            TraceKind::FailedCommitted { rid, attempt } => (*rid, Obs::Failed(*attempt)),
            _ => continue,
        };
        let key = (rec.actor.clone(), rid);
        let prev = state.get(&key).copied().unwrap_or(Obs::Requested);
        let ok = match (prev, next) {
            (Obs::Requested, Obs::Active(_)) => true,
            (Obs::Requested, Obs::Failed(_)) => true,
            (Obs::Active(_), Obs::Finalized) => true,
            (Obs::Active(a), Obs::Failed(k)) => k >= a,
            // A failed attempt may be re-opened; the next observation must
            // belong to a strictly later attempt.
            (Obs::Failed(j), Obs::Active(k)) => k > j,
            (Obs::Failed(j), Obs::Failed(k)) => k > j,
            _ => false,
        };
        if !ok {
            return Err(format!(
                "{}: {rid} illegal observed transition {prev:?} -> {next:?}",
                key.0
            ));
        }
        state.insert(key, next);
    }
    Ok(())
}

/// Three-level consistency: every digest committed in a resource batch has a
/// matching record in the persistent store.
pub fn verify_resource_batches(run: &RunOutput) -> Result<(), String> {
    let store_digests: BTreeSet<Digest> = run.store.iter().map(|r| Digest::of(&r.bytes)).collect();
    let (node, chain) = &run.chains[0];
    for digest in &chain.resource_digest_log {
        if !store_digests.contains(digest) {
            return Err(format!("{node}: batch digest {digest} has no matching store record"));
        }
    }
    Ok(())
}

/// Least-squares exponent of a power-law fit through (x, y) points.
pub fn fit_power_law(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Rejection verdicts across all replicas, from the first chain's log (all
/// honest replicas hold identical logs by replay determinism).
pub fn rejected_verdicts(chain: &ChainState) -> Vec<(u64, usize, TxnKind, Option<RequestId>, RejectReason)> {
    chain
        .txn_log
        .iter()
        .filter_map(|rec| {
            rec.verdict
                .clone()
                .map(|v| (rec.block_height, rec.txn_index, rec.kind, rec.request_id, v))
        })
        .collect()
}
