//! Designation and workflow scheduling.
//!
//! Two responsibilities live here: the deterministic designation function
//! that picks which node generates a schedule for a request, and the
//! least-connected dynamic weighted round robin (LCDWRR) generator that maps
//! workflow tasks onto nodes level by level. Both are pure functions; the
//! random source for probabilistic selection is an explicit argument.
//!
//! A generated schedule must satisfy three properties, which the pluggable
//! validation rule set re-checks on every replica:
//!   * resource feasibility — each task fits its assigned node's available
//!     capacity, with capacity debited as earlier tasks are placed,
//!   * level preservation — dependencies map to strictly increasing
//!     topological levels,
//!   * completeness — every task is assigned to exactly one node.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::ChainState;
use crate::types::{DigestBuilder, NodeId, RequestId, TaskId, WorkflowId};

/// Totals and current usage of one node, in millicores and mebibytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceState {
    pub cpu_total: u32,
    pub cpu_used: u32,
    pub mem_total: u32,
    pub mem_used: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResourceError {
    #[error("resource totals must be positive")]
    ZeroTotal,
    #[error("usage exceeds total")]
    OverTotal,
}

impl ResourceState {
    pub fn new(cpu_total: u32, cpu_used: u32, mem_total: u32, mem_used: u32) -> Result<Self, ResourceError> {
        if cpu_total == 0 || mem_total == 0 {
            return Err(ResourceError::ZeroTotal);
        }
        if cpu_used > cpu_total || mem_used > mem_total {
            return Err(ResourceError::OverTotal);
        }
        Ok(Self { cpu_total, cpu_used, mem_total, mem_used })
    }

    pub fn idle(cpu_total: u32, mem_total: u32) -> Self {
        Self::new(cpu_total, 0, mem_total, 0).expect("positive totals")
    }

    pub fn cpu_avail(&self) -> u32 {
        self.cpu_total - self.cpu_used
    }

    pub fn mem_avail(&self) -> u32 {
        self.mem_total - self.mem_used
    }
}

/// Per-node resource view used as the input snapshot for designation and
/// schedule generation. Immutable once taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceMap {
    pub entries: BTreeMap<NodeId, ResourceState>,
    pub snapshot_time: f64,
}

impl ResourceMap {
    pub fn new(entries: BTreeMap<NodeId, ResourceState>, snapshot_time: f64) -> Self {
        Self { entries, snapshot_time }
    }

    pub fn digest(&self) -> crate::types::Digest {
        let mut b = DigestBuilder::new("resource-snapshot").u64(self.snapshot_time.to_bits());
        for (node, r) in &self.entries {
            b = b
                .str(node.as_str())
                .u64(r.cpu_total as u64)
                .u64(r.cpu_used as u64)
                .u64(r.mem_total as u64)
                .u64(r.mem_used as u64);
        }
        b.finish()
    }
}

/// Weighting factors for the designation score. Must sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignationWeights {
    pub w_c: f64,
    pub w_m: f64,
}

impl Default for DesignationWeights {
    fn default() -> Self {
        Self { w_c: 0.5, w_m: 0.5 }
    }
}

impl DesignationWeights {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if self.w_c < 0.0 || self.w_m < 0.0 || (self.w_c + self.w_m - 1.0).abs() > 1e-9 {
            return Err(SchedulerError::BadWeights);
        }
        Ok(())
    }
}

/// One task's declared demand and synthetic runtime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub app_id: String,
    pub cpu_req: u32,
    pub mem_req: u32,
    pub exec_duration_ms: f64,
}

/// Workflow dependency graph. Construction validates shape, so a held value
/// is always a non-empty DAG with resolvable edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDAG {
    pub workflow_id: WorkflowId,
    pub tasks: BTreeMap<TaskId, TaskSpec>,
    pub edges: BTreeSet<(TaskId, TaskId)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DagError {
    #[error("workflow has no tasks")]
    Empty,
    #[error("edge endpoint {0} is not a task")]
    DanglingEdge(TaskId),
    #[error("dependency graph contains a cycle")]
    Cyclic,
    #[error("task {0} has non-positive resource request")]
    BadTask(TaskId),
}

impl WorkflowDAG {
    pub fn new(
        workflow_id: WorkflowId,
        tasks: Vec<TaskSpec>,
        edges: Vec<(TaskId, TaskId)>,
    ) -> Result<Self, DagError> {
        if tasks.is_empty() {
            return Err(DagError::Empty);
        }
        let mut map = BTreeMap::new();
        for t in tasks {
            if t.cpu_req == 0 || t.mem_req == 0 || t.exec_duration_ms < 0.0 {
                return Err(DagError::BadTask(t.task_id));
            }
            map.insert(t.task_id.clone(), t);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for end in [&a, &b] {
                if !map.contains_key(end) {
                    return Err(DagError::DanglingEdge(end.clone()));
                }
            }
            set.insert((a, b));
        }
        let dag = Self { workflow_id, tasks: map, edges: set };
        // Levels are computable iff the graph is acyclic.
        compute_levels(&dag)?;
        Ok(dag)
    }

    pub fn predecessors<'a>(&'a self, task: &'a TaskId) -> impl Iterator<Item = &'a TaskId> + 'a {
        self.edges.iter().filter(move |(_, to)| to == task).map(|(from, _)| from)
    }
}

/// A complete task-to-node assignment with topological levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub request_id: RequestId,
    pub proposer: NodeId,
    pub assignments: BTreeMap<TaskId, NodeId>,
    pub levels: BTreeMap<TaskId, u32>,
}

impl Schedule {
    pub fn digest(&self) -> crate::types::Digest {
        let mut b = DigestBuilder::new("schedule")
            .str(&self.request_id.to_string())
            .str(self.proposer.as_str());
        for (t, n) in &self.assignments {
            b = b.str(t.as_str()).str(n.as_str());
        }
        for (t, l) in &self.levels {
            b = b.str(t.as_str()).u64(*l as u64);
        }
        b.finish()
    }
}

/// Normalized per-node selection weights and probabilities for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionDistribution {
    pub weights: BTreeMap<NodeId, f64>,
    pub probabilities: BTreeMap<NodeId, f64>,
}

pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("designation weights invalid")]
    BadWeights,
    #[error("resource map missing entry for {0}")]
    MissingResources(NodeId),
    #[error("dependency graph contains a cycle")]
    CyclicGraph,
    #[error("no eligible node for task {0}")]
    NoEligibleNode(TaskId),
    #[error("task {0} cannot be placed on any node")]
    Infeasible(TaskId),
}

/// Picks the node with the highest weighted available-resource score:
/// `w_c * cpu_avail/cpu_total + w_m * mem_avail/mem_total`. Availability is
/// normalized by each node's totals so heterogeneous capacities compare on
/// the same scale. Ties break to the lexicographically smallest node id,
/// which makes the result independent of member-list order.
pub fn designate(
    members: &[NodeId],
    resources: &ResourceMap,
    weights: &DesignationWeights,
) -> Result<NodeId, SchedulerError> {
    weights.validate()?;
    if members.is_empty() {
        return Err(SchedulerError::EmptyCluster);
    }
    let mut best: Option<(f64, &NodeId)> = None;
    for node in members {
        let r = resources
            .entries
            .get(node)
            .ok_or_else(|| SchedulerError::MissingResources(node.clone()))?;
        let score = weights.w_c * (r.cpu_avail() as f64 / r.cpu_total as f64)
            + weights.w_m * (r.mem_avail() as f64 / r.mem_total as f64);
        best = match best {
            None => Some((score, node)),
            Some((s, n)) if score > s || (score == s && node < n) => Some((score, node)),
            other => other,
        };
    }
    Ok(best.expect("non-empty members").1.clone())
}

/// Longest-path topological level of every task: sources sit at level 0,
/// every other task one past its deepest predecessor.
pub fn compute_levels(dag: &WorkflowDAG) -> Result<BTreeMap<TaskId, u32>, DagError> {
    let mut indegree: BTreeMap<&TaskId, usize> = dag.tasks.keys().map(|t| (t, 0)).collect();
    for (_, to) in &dag.edges {
        *indegree.get_mut(to).expect("validated edge") += 1;
    }
    let mut levels: BTreeMap<TaskId, u32> = BTreeMap::new();
    let mut frontier: Vec<&TaskId> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(t, _)| *t).collect();
    for t in &frontier {
        levels.insert((*t).clone(), 0);
    }
    while let Some(task) = frontier.pop() {
        let level = levels[task];
        for (from, to) in &dag.edges {
            if from != task {
                continue;
            }
            let entry = levels.entry(to.clone()).or_insert(0);
            *entry = (*entry).max(level + 1);
            let d = indegree.get_mut(to).expect("validated edge");
            *d -= 1;
            if *d == 0 {
                frontier.push(to);
            }
        }
    }
    if levels.len() != dag.tasks.len() {
        return Err(DagError::Cyclic);
    }
    Ok(levels)
}

/// Nodes whose available CPU and memory both cover the task's request.
/// Comparisons are inclusive: an exact fit is eligible.
pub fn eligible_nodes(task: &TaskSpec, resources: &ResourceMap) -> BTreeSet<NodeId> {
    resources
        .entries
        .iter()
        .filter(|(_, r)| task.cpu_req <= r.cpu_avail() && task.mem_req <= r.mem_avail())
        .map(|(n, _)| n.clone())
        .collect()
}

/// Fractional load of a node: mean of CPU and memory utilization.
pub fn node_load(r: &ResourceState) -> f64 {
    0.5 * (r.cpu_used as f64 / r.cpu_total as f64) + 0.5 * (r.mem_used as f64 / r.mem_total as f64)
}

/// Selection weight `1 / (load + 0.1)`; least-loaded nodes weigh most, and
/// the 0.1 floor keeps fully loaded nodes selectable.
pub fn selection_weight(load: f64) -> f64 {
    1.0 / (load + 0.1)
}

/// Load-derived weights over eligible nodes, normalized to probabilities.
pub fn selection_distribution(
    task: &TaskSpec,
    resources: &ResourceMap,
) -> Result<SelectionDistribution, SchedulerError> {
    let eligible = eligible_nodes(task, resources);
    if eligible.is_empty() {
        return Err(SchedulerError::NoEligibleNode(task.task_id.clone()));
    }
    let mut weights = BTreeMap::new();
    let mut total = 0.0;
    for node in eligible {
        let w = selection_weight(node_load(&resources.entries[&node]));
        total += w;
        weights.insert(node, w);
    }
    let probabilities: BTreeMap<NodeId, f64> =
        weights.iter().map(|(n, w)| (n.clone(), w / total)).collect();
    debug_assert!((probabilities.values().sum::<f64>() - 1.0).abs() <= PROBABILITY_TOLERANCE);
    Ok(SelectionDistribution { weights, probabilities })
}

fn sample_node<R: Rng>(dist: &SelectionDistribution, rng: &mut R) -> NodeId {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (node, p) in &dist.probabilities {
        acc += p;
        if draw < acc {
            return node.clone();
        }
        last = Some(node);
    }
    // Rounding can leave acc marginally below 1.0; the tail belongs to the
    // final node in id order.
    last.expect("non-empty distribution").clone()
}

/// LCDWRR: walk levels in ascending order, tasks within a level in id order,
/// and sample each task's node from the load-weighted distribution over
/// currently eligible nodes. Placement debits a working copy of the snapshot
/// so one node cannot be oversubscribed within a single schedule.
pub fn generate_schedule<R: Rng>(
    dag: &WorkflowDAG,
    resources: &ResourceMap,
    rng: &mut R,
    request_id: RequestId,
    proposer: NodeId,
) -> Result<Schedule, SchedulerError> {
    let levels = compute_levels(dag).map_err(|_| SchedulerError::CyclicGraph)?;
    let mut by_level: BTreeMap<u32, Vec<&TaskId>> = BTreeMap::new();
    for (task, level) in &levels {
        by_level.entry(*level).or_default().push(task);
    }
    let mut working = resources.clone();
    let mut assignments = BTreeMap::new();
    for tasks in by_level.values() {
        for task_id in tasks {
            let spec = &dag.tasks[*task_id];
            let dist = selection_distribution(spec, &working)
                .map_err(|_| SchedulerError::Infeasible((*task_id).clone()))?;
            let node = sample_node(&dist, rng);
            let r = working.entries.get_mut(&node).expect("eligible node present");
            r.cpu_used += spec.cpu_req;
            r.mem_used += spec.mem_req;
            assignments.insert((*task_id).clone(), node);
        }
    }
    Ok(Schedule { request_id, proposer, assignments, levels })
}

/// A named deterministic predicate over a proposed schedule. Rules are plain
/// function pointers so rule sets stay cloneable and comparable across
/// replicas.
#[derive(Clone, Copy)]
pub struct ValidationRule {
    pub name: &'static str,
    pub check: fn(&Schedule, &ValidationCtx<'_>) -> bool,
}

impl std::fmt::Debug for ValidationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ValidationRule({})", self.name)
    }
}

/// Everything a rule may consult. All of it is derived from replicated state
/// so every replica evaluates rules over identical inputs.
pub struct ValidationCtx<'a> {
    pub chain: &'a ChainState,
    pub dag: &'a WorkflowDAG,
    /// Designation snapshot recorded with the schedule request.
    pub resources: &'a ResourceMap,
    pub designated: &'a NodeId,
    pub excluded: &'a BTreeSet<NodeId>,
    pub weights: DesignationWeights,
}

#[derive(Clone, Debug)]
pub struct ValidationRuleSet {
    pub rules: Vec<ValidationRule>,
}

impl Default for ValidationRuleSet {
    fn default() -> Self {
        Self {
            rules: vec![
                ValidationRule { name: "proposer-is-designated", check: rule_proposer_is_designated },
                ValidationRule { name: "schedule-completeness", check: rule_completeness },
                ValidationRule { name: "level-preservation", check: rule_level_preservation },
                ValidationRule { name: "resource-feasibility", check: rule_resource_feasibility },
                ValidationRule { name: "designation-valid", check: rule_designation_valid },
            ],
        }
    }
}

/// Evaluates every rule; `Ok(())` iff all pass, otherwise the names of the
/// failed rules in rule-set order.
pub fn validate_schedule(
    schedule: &Schedule,
    rules: &ValidationRuleSet,
    ctx: &ValidationCtx<'_>,
) -> Result<(), Vec<&'static str>> {
    let failed: Vec<&'static str> = rules
        .rules
        .iter()
        .filter(|r| !(r.check)(schedule, ctx))
        .map(|r| r.name)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(failed)
    }
}

fn rule_proposer_is_designated(s: &Schedule, ctx: &ValidationCtx<'_>) -> bool {
    s.proposer == *ctx.designated
}

fn rule_completeness(s: &Schedule, ctx: &ValidationCtx<'_>) -> bool {
    s.assignments.len() == ctx.dag.tasks.len()
        && ctx.dag.tasks.keys().all(|t| s.assignments.contains_key(t))
        && s.assignments.values().all(|n| ctx.resources.entries.contains_key(n))
}

fn rule_level_preservation(s: &Schedule, ctx: &ValidationCtx<'_>) -> bool {
    if s.levels.len() != ctx.dag.tasks.len() || !ctx.dag.tasks.keys().all(|t| s.levels.contains_key(t)) {
        return false;
    }
    ctx.dag.edges.iter().all(|(from, to)| s.levels[from] < s.levels[to])
}

/// Replays the generator's debit semantics: tasks in (level, id) order must
/// each fit the remaining availability of their assigned node.
fn rule_resource_feasibility(s: &Schedule, ctx: &ValidationCtx<'_>) -> bool {
    let mut order: Vec<&TaskId> = s.assignments.keys().collect();
    let Ok(levels) = compute_levels(ctx.dag) else { return false };
    if !order.iter().all(|t| levels.contains_key(*t)) {
        return false;
    }
    order.sort_by(|a, b| (levels[*a], *a).cmp(&(levels[*b], *b)));
    let mut working = ctx.resources.clone();
    for task_id in order {
        let Some(spec) = ctx.dag.tasks.get(task_id) else { return false };
        let Some(r) = working.entries.get_mut(&s.assignments[task_id]) else { return false };
        if spec.cpu_req > r.cpu_avail() || spec.mem_req > r.mem_avail() {
            return false;
        }
        r.cpu_used += spec.cpu_req;
        r.mem_used += spec.mem_req;
    }
    true
}

/// Re-runs designation over the recorded snapshot and checks it still names
/// the node the request recorded, so a forged designation cannot survive
/// replication.
fn rule_designation_valid(_s: &Schedule, ctx: &ValidationCtx<'_>) -> bool {
    let members: Vec<NodeId> = ctx
        .resources
        .entries
        .keys()
        .filter(|n| !ctx.excluded.contains(*n))
        .cloned()
        .collect();
    match designate(&members, ctx.resources, &ctx.weights) {
        Ok(node) => node == *ctx.designated,
        Err(_) => false,
    }
}
