//! Level-ordered DAG task execution.
//!
//! Every compute node runs this state machine over each published schedule:
//! its own level-0 tasks start immediately, later tasks wait for completion
//! notices of their predecessors, fetch predecessor outputs from the cache,
//! run for their synthetic duration, and publish their own notices. The node
//! whose max-level task finishes last verifies the whole workflow and
//! finalizes it.
//!
//! The machine is pure: inputs are events, outputs are [`ExecAction`]s that
//! the owning node turns into cache traffic, timers, and transactions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datastores::keys;
use crate::scheduler::{Schedule, WorkflowDAG};
use crate::types::{Digest, NodeId, RequestId, SimMs, TaskId};

/// Execution phase of one of this node's own tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskPhase {
    Waiting,
    Fetching,
    Running,
    Done,
}

#[derive(Clone, Debug)]
pub struct TaskRun {
    pub phase: TaskPhase,
    pub started_at: Option<SimMs>,
    pub finished_at: Option<SimMs>,
}

/// Broadcast after a task completes; carries enough for peers to resolve
/// dependencies and for the finalization rule to pick a single winner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionNotice {
    pub request_id: RequestId,
    pub task_id: TaskId,
    pub node: NodeId,
    pub output_key: String,
    pub finished_at: SimMs,
    pub level: u32,
}

/// Final product of a workflow, delivered to the source node after the
/// Finalized status commits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowResult {
    pub request_id: RequestId,
    pub final_output_key: String,
    pub delivered_to: NodeId,
    pub encrypted_with: Vec<u8>,
    pub payload_digest: Digest,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExecAction {
    /// Fetch these cache keys; the task starts running once all arrive.
    StartFetch { rid: RequestId, task: TaskId, fetch_keys: Vec<String> },
    /// All inputs present: run for the task's synthetic duration.
    TaskRunning { rid: RequestId, task: TaskId, level: u32, duration_ms: SimMs, cpu: u32, mem: u32 },
    /// Store the output and notify the cluster.
    PublishCompletion { notice: CompletionNotice, output_bytes: Vec<u8> },
    /// This node completed the workflow's last max-level task: emit the
    /// Finalized status and prepare the result for the source.
    Finalize { rid: RequestId, result: WorkflowResult },
}

#[derive(Clone, Debug)]
struct WorkflowRun {
    schedule: Schedule,
    dag: WorkflowDAG,
    attempt: u32,
    source: NodeId,
    response_key: Vec<u8>,
    max_level: u32,
    /// My tasks' execution state.
    mine: BTreeMap<TaskId, TaskRun>,
    /// Completion picture for the whole workflow (mine and others').
    finished: BTreeMap<TaskId, (NodeId, SimMs)>,
    finalized: bool,
}

/// Per-node executor over all live workflows.
#[derive(Clone, Debug, Default)]
pub struct ExecState {
    runs: BTreeMap<RequestId, WorkflowRun>,
    /// Notices that arrived before their schedule publication (possible under
    /// latency jitter); drained when the schedule shows up.
    early_notices: BTreeMap<RequestId, Vec<CompletionNotice>>,
}

impl ExecState {
    /// Registers a committed schedule and starts this node's level-0 tasks.
    /// Idempotent per request id.
    pub fn on_schedule_published(
        &mut self,
        node: &NodeId,
        schedule: Schedule,
        dag: WorkflowDAG,
        attempt: u32,
        source: NodeId,
        response_key: Vec<u8>,
        _now: SimMs,
    ) -> Vec<ExecAction> {
        let rid = schedule.request_id;
        if self.runs.contains_key(&rid) {
            return vec![];
        }
        let max_level = schedule.levels.values().copied().max().unwrap_or(0);
        let mine: BTreeMap<TaskId, TaskRun> = schedule
            .assignments
            .iter()
            .filter(|(_, n)| *n == node)
            .map(|(t, _)| {
                (t.clone(), TaskRun { phase: TaskPhase::Waiting, started_at: None, finished_at: None })
            })
            .collect();
        self.runs.insert(
            rid,
            WorkflowRun {
                schedule,
                dag,
                attempt,
                source,
                response_key,
                max_level,
                mine,
                finished: BTreeMap::new(),
                finalized: false,
            },
        );
        let mut actions = self.start_ready_tasks(node, &rid);
        // Replay notices that beat the publication here.
        if let Some(buffered) = self.early_notices.remove(&rid) {
            for notice in buffered {
                actions.extend(self.on_completion_notice(node, notice, _now));
            }
        }
        actions
    }

    /// Records a peer's completion, starts any of this node's tasks whose
    /// dependencies are now satisfied, and checks finalization. Notices for
    /// unknown requests are buffered (publication reordering), never lost.
    pub fn on_completion_notice(&mut self, node: &NodeId, notice: CompletionNotice, _now: SimMs) -> Vec<ExecAction> {
        let rid = notice.request_id;
        if !self.runs.contains_key(&rid) {
            self.early_notices.entry(rid).or_default().push(notice);
            return vec![];
        }
        {
            let run = self.runs.get_mut(&rid).expect("checked");
            run.finished
                .entry(notice.task_id.clone())
                .or_insert((notice.node.clone(), notice.finished_at));
        }
        let mut actions = self.start_ready_tasks(node, &rid);
        actions.extend(self.try_finalize(node, &rid));
        actions
    }

    /// All fetches for the task resolved: it starts running.
    pub fn on_fetch_complete(&mut self, _node: &NodeId, rid: RequestId, task: TaskId, now: SimMs) -> Vec<ExecAction> {
        let Some(run) = self.runs.get_mut(&rid) else { return vec![] };
        let Some(state) = run.mine.get_mut(&task) else { return vec![] };
        if state.phase != TaskPhase::Fetching {
            return vec![];
        }
        state.phase = TaskPhase::Running;
        state.started_at = Some(now);
        let spec = &run.dag.tasks[&task];
        vec![ExecAction::TaskRunning {
            rid,
            task: task.clone(),
            level: run.schedule.levels[&task],
            duration_ms: spec.exec_duration_ms,
            cpu: spec.cpu_req,
            mem: spec.mem_req,
        }]
    }

    /// The synthetic duration elapsed: emit the output, notify, and maybe
    /// finalize.
    pub fn on_task_done(&mut self, node: &NodeId, rid: RequestId, task: TaskId, now: SimMs) -> Vec<ExecAction> {
        let Some(run) = self.runs.get_mut(&rid) else { return vec![] };
        let Some(state) = run.mine.get_mut(&task) else { return vec![] };
        if state.phase != TaskPhase::Running {
            return vec![];
        }
        state.phase = TaskPhase::Done;
        state.finished_at = Some(now);
        run.finished.entry(task.clone()).or_insert((node.clone(), now));
        let output_key = keys::output(&rid, &task);
        let level = run.schedule.levels[&task];
        let notice = CompletionNotice {
            request_id: rid,
            task_id: task.clone(),
            node: node.clone(),
            output_key: output_key.clone(),
            finished_at: now,
            level,
        };
        // Synthetic output: digest keyed by (request, task).
        let output_bytes = Digest::of(format!("{rid}/{task}").as_bytes()).as_bytes().to_vec();
        let mut actions = vec![ExecAction::PublishCompletion { notice, output_bytes }];
        actions.extend(self.try_finalize(node, &rid));
        actions
    }

    /// Tasks of mine whose predecessors are all finished move to Fetching.
    fn start_ready_tasks(&mut self, node: &NodeId, rid: &RequestId) -> Vec<ExecAction> {
        let run = self.runs.get_mut(rid).expect("caller checked");
        let mut actions = vec![];
        let ready: Vec<TaskId> = run
            .mine
            .iter()
            .filter(|(t, s)| {
                s.phase == TaskPhase::Waiting
                    && run.dag.predecessors(t).all(|p| run.finished.contains_key(p))
            })
            .map(|(t, _)| t.clone())
            .collect();
        for task in ready {
            let preds: Vec<TaskId> = run.dag.predecessors(&task).cloned().collect();
            let fetch_keys: Vec<String> = if preds.is_empty() {
                vec![keys::input(rid)]
            } else {
                preds.iter().map(|p| keys::output(rid, p)).collect()
            };
            run.mine.get_mut(&task).expect("mine").phase = TaskPhase::Fetching;
            actions.push(ExecAction::StartFetch { rid: *rid, task, fetch_keys });
        }
        let _ = node;
        actions
    }

    /// Finalization rule: once every task is finished, the node owning the
    /// max-level task with the latest completion time (ties to the smallest
    /// node id) emits the Finalized transaction, exactly once.
    fn try_finalize(&mut self, node: &NodeId, rid: &RequestId) -> Vec<ExecAction> {
        let run = self.runs.get_mut(rid).expect("caller checked");
        if run.finalized || run.finished.len() < run.dag.tasks.len() {
            return vec![];
        }
        let winner = run
            .finished
            .iter()
            .filter(|(t, _)| run.schedule.levels[*t] == run.max_level)
            .map(|(t, (n, at))| (*at, n.clone(), t.clone()))
            .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(&a.1)));
        let Some((_, winner_node, winner_task)) = winner else { return vec![] };
        if winner_node != *node {
            return vec![];
        }
        run.finalized = true;
        let output_key = keys::output(rid, &winner_task);
        let result = WorkflowResult {
            request_id: *rid,
            final_output_key: output_key.clone(),
            delivered_to: run.source.clone(),
            encrypted_with: run.response_key.clone(),
            payload_digest: Digest::of(
                [output_key.as_bytes(), run.response_key.as_slice()].concat().as_slice(),
            ),
        };
        vec![ExecAction::Finalize { rid: *rid, result }]
    }

    pub fn run_attempt(&self, rid: &RequestId) -> Option<u32> {
        self.runs.get(rid).map(|r| r.attempt)
    }

    pub fn tracked(&self, rid: &RequestId) -> bool {
        self.runs.contains_key(rid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{TaskSpec, WorkflowDAG};
    use crate::types::WorkflowId;

    fn node(s: &str) -> NodeId {
        NodeId::new(s)
    }

    fn spec(id: &str, dur: f64) -> TaskSpec {
        TaskSpec {
            task_id: TaskId::new(id),
            app_id: format!("app-{id}"),
            cpu_req: 100,
            mem_req: 128,
            exec_duration_ms: dur,
        }
    }

    fn chain_dag() -> WorkflowDAG {
        WorkflowDAG::new(
            WorkflowId::new("wf"),
            vec![spec("s0", 10.0), spec("s1", 20.0), spec("s2", 30.0)],
            vec![(TaskId::new("s0"), TaskId::new("s1")), (TaskId::new("s1"), TaskId::new("s2"))],
        )
        .unwrap()
    }

    fn diamond_dag() -> WorkflowDAG {
        WorkflowDAG::new(
            WorkflowId::new("wf"),
            vec![spec("a", 10.0), spec("b", 10.0), spec("c", 10.0), spec("d", 10.0)],
            vec![
                (TaskId::new("a"), TaskId::new("b")),
                (TaskId::new("a"), TaskId::new("c")),
                (TaskId::new("b"), TaskId::new("d")),
                (TaskId::new("c"), TaskId::new("d")),
            ],
        )
        .unwrap()
    }

    fn schedule_for(dag: &WorkflowDAG, assign: &[(&str, &str)]) -> Schedule {
        Schedule {
            request_id: RequestId::derive(&node("iot0"), 0),
            proposer: node("c00"),
            assignments: assign.iter().map(|(t, n)| (TaskId::new(t), node(n))).collect(),
            levels: crate::scheduler::compute_levels(dag).unwrap(),
        }
    }

    fn publish(exec: &mut ExecState, me: &str, dag: &WorkflowDAG, s: &Schedule) -> Vec<ExecAction> {
        exec.on_schedule_published(
            &node(me),
            s.clone(),
            dag.clone(),
            1,
            node("iot0"),
            vec![9, 9],
            0.0,
        )
    }

    #[test]
    fn level_zero_task_starts_on_publication() {
        let dag = chain_dag();
        let s = schedule_for(&dag, &[("s0", "c00"), ("s1", "c01"), ("s2", "c00")]);
        let mut exec = ExecState::default();
        let actions = publish(&mut exec, "c00", &dag, &s);
        assert_eq!(actions.len(), 1);
        match &actions[0] {
            ExecAction::StartFetch { task, fetch_keys, .. } => {
                assert_eq!(task, &TaskId::new("s0"));
                assert_eq!(fetch_keys.len(), 1);
                assert!(fetch_keys[0].starts_with("input/"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn node_without_level_zero_waits() {
        let dag = chain_dag();
        let s = schedule_for(&dag, &[("s0", "c00"), ("s1", "c01"), ("s2", "c00")]);
        let mut exec = ExecState::default();
        let actions = publish(&mut exec, "c01", &dag, &s);
        assert!(actions.is_empty());
    }

    #[test]
    fn dependent_task_starts_after_single_notice() {
        let dag = chain_dag();
        let s = schedule_for(&dag, &[("s0", "c00"), ("s1", "c01"), ("s2", "c00")]);
        let mut exec = ExecState::default();
        publish(&mut exec, "c01", &dag, &s);
        let rid = s.request_id;
        let notice = CompletionNotice {
            request_id: rid,
            task_id: TaskId::new("s0"),
            node: node("c00"),
            output_key: keys::output(&rid, &TaskId::new("s0")),
            finished_at: 42.0,
            level: 0,
        };
        let actions = exec.on_completion_notice(&node("c01"), notice.clone(), 50.0);
        assert!(matches!(&actions[0], ExecAction::StartFetch { task, .. } if task == &TaskId::new("s1")));
        // Duplicate notice is idempotent: no double start.
        let again = exec.on_completion_notice(&node("c01"), notice, 51.0);
        assert!(again.is_empty());
    }

    #[test]
    fn conjunction_of_dependencies_required() {
        let dag = diamond_dag();
        let s = schedule_for(&dag, &[("a", "c00"), ("b", "c01"), ("c", "c02"), ("d", "c03")]);
        let mut exec = ExecState::default();
        publish(&mut exec, "c03", &dag, &s);
        let rid = s.request_id;
        let notice = |task: &str, from: &str| CompletionNotice {
            request_id: rid,
            task_id: TaskId::new(task),
            node: node(from),
            output_key: keys::output(&rid, &TaskId::new(task)),
            finished_at: 10.0,
            level: 1,
        };
        assert!(exec.on_completion_notice(&node("c03"), notice("b", "c01"), 11.0).is_empty());
        let actions = exec.on_completion_notice(&node("c03"), notice("c", "c02"), 12.0);
        match &actions[0] {
            ExecAction::StartFetch { task, fetch_keys, .. } => {
                assert_eq!(task, &TaskId::new("d"));
                assert_eq!(fetch_keys.len(), 2, "one fetch per predecessor output");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fetch_then_run_then_publish() {
        let dag = chain_dag();
        let s = schedule_for(&dag, &[("s0", "c00"), ("s1", "c00"), ("s2", "c00")]);
        let mut exec = ExecState::default();
        publish(&mut exec, "c00", &dag, &s);
        let rid = s.request_id;
        let actions = exec.on_fetch_complete(&node("c00"), rid, TaskId::new("s0"), 5.0);
        assert!(matches!(&actions[0], ExecAction::TaskRunning { duration_ms, .. } if *duration_ms == 10.0));
        let actions = exec.on_task_done(&node("c00"), rid, TaskId::new("s0"), 15.0);
        match &actions[0] {
            ExecAction::PublishCompletion { notice, .. } => {
                assert_eq!(notice.task_id, TaskId::new("s0"));
                assert_eq!(notice.finished_at, 15.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        // s0 done also unblocks s1 locally (self-notice comes via pub/sub,
        // but local state already counts it for readiness on next notice).
    }

    #[test]
    fn mid_level_completion_does_not_finalize() {
        let dag = chain_dag();
        let s = schedule_for(&dag, &[("s0", "c00"), ("s1", "c00"), ("s2", "c01")]);
        let mut exec = ExecState::default();
        publish(&mut exec, "c00", &dag, &s);
        let rid = s.request_id;
        exec.on_fetch_complete(&node("c00"), rid, TaskId::new("s0"), 1.0);
        let actions = exec.on_task_done(&node("c00"), rid, TaskId::new("s0"), 11.0);
        assert_eq!(actions.len(), 1, "publish only, no finalize");
    }

    #[test]
    fn last_max_level_completer_finalizes_once() {
        // b and c share the max level on different nodes; d... use a DAG with
        // two sinks at max level: a -> b, a -> c.
        let dag = WorkflowDAG::new(
            WorkflowId::new("wf"),
            vec![spec("a", 1.0), spec("b", 1.0), spec("c", 1.0)],
            vec![(TaskId::new("a"), TaskId::new("b")), (TaskId::new("a"), TaskId::new("c"))],
        )
        .unwrap();
        let s = schedule_for(&dag, &[("a", "c00"), ("b", "c01"), ("c", "c02")]);
        let rid = s.request_id;
        let mk_notice = |task: &str, from: &str, at: f64| CompletionNotice {
            request_id: rid,
            task_id: TaskId::new(task),
            node: node(from),
            output_key: keys::output(&rid, &TaskId::new(task)),
            finished_at: at,
            level: if task == "a" { 0 } else { 1 },
        };

        // Node c01 finished b at t=10; c's notice (t=20 on c02) arrives later.
        // c01 must NOT finalize: c02's completion is later.
        let mut exec01 = ExecState::default();
        publish(&mut exec01, "c01", &dag, &s);
        exec01.on_completion_notice(&node("c01"), mk_notice("a", "c00", 5.0), 6.0);
        exec01.on_fetch_complete(&node("c01"), rid, TaskId::new("b"), 8.0);
        exec01.on_task_done(&node("c01"), rid, TaskId::new("b"), 10.0);
        let actions = exec01.on_completion_notice(&node("c01"), mk_notice("c", "c02", 20.0), 21.0);
        assert!(actions.is_empty(), "earlier completer must not finalize");

        // Node c02 finishes c at t=20 with the full picture: it finalizes.
        let mut exec02 = ExecState::default();
        publish(&mut exec02, "c02", &dag, &s);
        exec02.on_completion_notice(&node("c02"), mk_notice("a", "c00", 5.0), 6.0);
        exec02.on_completion_notice(&node("c02"), mk_notice("b", "c01", 10.0), 11.0);
        exec02.on_fetch_complete(&node("c02"), rid, TaskId::new("c"), 12.0);
        let actions = exec02.on_task_done(&node("c02"), rid, TaskId::new("c"), 20.0);
        assert!(actions.iter().any(|a| matches!(a, ExecAction::Finalize { .. })));

        // Tie at identical completion time: smallest node id wins.
        let mut exec_tie = ExecState::default();
        publish(&mut exec_tie, "c01", &dag, &s);
        exec_tie.on_completion_notice(&node("c01"), mk_notice("a", "c00", 5.0), 6.0);
        exec_tie.on_fetch_complete(&node("c01"), rid, TaskId::new("b"), 8.0);
        exec_tie.on_task_done(&node("c01"), rid, TaskId::new("b"), 20.0);
        let actions = exec_tie.on_completion_notice(&node("c01"), mk_notice("c", "c02", 20.0), 21.0);
        assert!(
            actions.iter().any(|a| matches!(a, ExecAction::Finalize { .. })),
            "c01 < c02 wins the tie"
        );
    }

    #[test]
    fn early_notice_is_buffered_until_publication() {
        let dag = chain_dag();
        let s = schedule_for(&dag, &[("s0", "c00"), ("s1", "c01"), ("s2", "c01")]);
        let rid = s.request_id;
        let mut exec = ExecState::default();
        let notice = CompletionNotice {
            request_id: rid,
            task_id: TaskId::new("s0"),
            node: node("c00"),
            output_key: keys::output(&rid, &TaskId::new("s0")),
            finished_at: 3.0,
            level: 0,
        };
        assert!(exec.on_completion_notice(&node("c01"), notice, 4.0).is_empty());
        let actions = publish(&mut exec, "c01", &dag, &s);
        assert!(
            actions.iter().any(|a| matches!(a, ExecAction::StartFetch { task, .. } if task == &TaskId::new("s1"))),
            "buffered notice unblocks s1 at publication"
        );
    }

    #[test]
    fn result_carries_response_key() {
        let dag = WorkflowDAG::new(WorkflowId::new("wf"), vec![spec("only", 1.0)], vec![]).unwrap();
        let s = schedule_for(&dag, &[("only", "c00")]);
        let mut exec = ExecState::default();
        publish(&mut exec, "c00", &dag, &s);
        let rid = s.request_id;
        exec.on_fetch_complete(&node("c00"), rid, TaskId::new("only"), 1.0);
        let actions = exec.on_task_done(&node("c00"), rid, TaskId::new("only"), 2.0);
        let result = actions
            .iter()
            .find_map(|a| match a {
                ExecAction::Finalize { result, .. } => Some(result.clone()),
                _ => None,
            })
            .expect("single task finalizes immediately");
        assert_eq!(result.encrypted_with, vec![9, 9]);
        assert_eq!(result.delivered_to, node("iot0"));
    }
}
