//! Python bindings: drive scenario runs, replay traces, and poke the
//! scheduling primitives from Python.
//!
//! Build the extension with `cargo build -p bftsched-py --release` and import
//! the produced `libbftsched_py.so` as `bftsched_py` (see
//! `python/smoke_test.py`).

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use bftsched::harness::{
    self, compute_metrics, report_csv, report_text, run_scenario, ScenarioConfig,
};
use bftsched::scheduler::{
    self, DesignationWeights, ResourceMap, ResourceState, TaskSpec, WorkflowDAG,
};
use bftsched::trace::Trace;
use bftsched::types::{NodeId, RequestId, TaskId, WorkflowId};

fn value_err(msg: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(msg.to_string())
}

/// Outcome of one scenario run.
#[pyclass]
struct RunResult {
    #[pyo3(get)]
    seed: u64,
    #[pyo3(get)]
    requests: usize,
    #[pyo3(get)]
    finalized: usize,
    #[pyo3(get)]
    rrt_mean_ms: f64,
    #[pyo3(get)]
    fo_mean_ms: f64,
    #[pyo3(get)]
    detection_samples: Vec<f64>,
    #[pyo3(get)]
    recovery_samples: Vec<f64>,
    #[pyo3(get)]
    rejected_txn_count: usize,
    #[pyo3(get)]
    false_positive_count: usize,
    #[pyo3(get)]
    consensus_messages: u64,
    csv: String,
    text: String,
    trace_jsonl: String,
}

#[pymethods]
impl RunResult {
    /// Per-request CSV rows (fixed column order).
    fn csv(&self) -> &str {
        &self.csv
    }

    /// Human-readable summary with config digest and seed.
    fn text(&self) -> &str {
        &self.text
    }

    /// The replayable trace export (header, records, footer).
    fn trace_jsonl(&self) -> &str {
        &self.trace_jsonl
    }
}

/// Runs a scenario given its JSON document. `seed` overrides the embedded
/// seed when provided.
#[pyfunction]
#[pyo3(signature = (scenario_json, seed=None))]
fn run_scenario_json(scenario_json: &str, seed: Option<u64>) -> PyResult<RunResult> {
    let mut config = ScenarioConfig::from_json(scenario_json).map_err(value_err)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let run = run_scenario(&config).map_err(value_err)?;
    let finalized = run
        .report
        .rows
        .iter()
        .filter(|r| r.status == harness::RequestOutcome::Finalized)
        .count();
    Ok(RunResult {
        seed: config.seed,
        requests: run.report.rows.len(),
        finalized,
        rrt_mean_ms: run.report.rrt.mean,
        fo_mean_ms: run.report.fo.mean,
        detection_samples: run.report.detection_samples.clone(),
        recovery_samples: run.report.recovery_samples.clone(),
        rejected_txn_count: run.report.rejected_txn_count,
        false_positive_count: run.report.false_positive_count,
        consensus_messages: run.trace.counters.total(),
        csv: report_csv(&run.report),
        text: report_text(&run.report),
        trace_jsonl: run.trace.to_jsonl(),
    })
}

/// Re-runs the scenario embedded in a trace export; returns
/// (trace_identical, csv_identical).
#[pyfunction]
fn replay(trace_jsonl: &str) -> PyResult<(bool, bool)> {
    let verdict = harness::replay_trace(trace_jsonl).map_err(value_err)?;
    Ok((verdict.trace_identical, verdict.csv_identical))
}

/// Recomputes the metrics CSV from a trace export.
#[pyfunction]
fn metrics_csv(trace_jsonl: &str) -> PyResult<String> {
    let trace = Trace::from_jsonl(trace_jsonl).map_err(value_err)?;
    Ok(report_csv(&compute_metrics(&trace).map_err(value_err)?))
}

/// Validates a scenario document; returns the list of issues (empty when
/// valid).
#[pyfunction]
fn validate_scenario(scenario_json: &str) -> Vec<String> {
    match ScenarioConfig::from_json(scenario_json) {
        Ok(_) => vec![],
        Err(e) => e.issues,
    }
}

/// Commit/prepare quorum size for a cluster tolerating `f` faults: 2f + 1.
#[pyfunction]
fn quorum_size(f: usize) -> usize {
    2 * f + 1
}

/// Fractional load of a node given totals and usage.
#[pyfunction]
fn node_load(cpu_total: u32, cpu_used: u32, mem_total: u32, mem_used: u32) -> PyResult<f64> {
    let r = ResourceState::new(cpu_total, cpu_used, mem_total, mem_used).map_err(value_err)?;
    Ok(scheduler::node_load(&r))
}

/// Selection weight for a load in [0, 1]: 1 / (load + 0.1).
#[pyfunction]
fn selection_weight(load: f64) -> f64 {
    scheduler::selection_weight(load)
}

fn resource_map_from(resources: BTreeMap<String, (u32, u32, u32, u32)>) -> PyResult<ResourceMap> {
    let entries = resources
        .into_iter()
        .map(|(name, (ct, cu, mt, mu))| {
            ResourceState::new(ct, cu, mt, mu)
                .map(|r| (NodeId::new(name), r))
                .map_err(value_err)
        })
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    Ok(ResourceMap::new(entries, 0.0))
}

/// Deterministic designation over `{node: (cpu_total, cpu_used, mem_total,
/// mem_used)}` with optional weighting factors.
#[pyfunction]
#[pyo3(signature = (members, resources, w_c=0.5, w_m=0.5))]
fn designate(
    members: Vec<String>,
    resources: BTreeMap<String, (u32, u32, u32, u32)>,
    w_c: f64,
    w_m: f64,
) -> PyResult<String> {
    let members: Vec<NodeId> = members.into_iter().map(NodeId::new).collect();
    let resources = resource_map_from(resources)?;
    scheduler::designate(&members, &resources, &DesignationWeights { w_c, w_m })
        .map(|n| n.to_string())
        .map_err(value_err)
}

/// Topological levels of a task graph given `edges: [(from, to), ...]`.
#[pyfunction]
fn compute_levels(tasks: Vec<String>, edges: Vec<(String, String)>) -> PyResult<BTreeMap<String, u32>> {
    let specs: Vec<TaskSpec> = tasks
        .into_iter()
        .map(|t| TaskSpec {
            task_id: TaskId::new(&t),
            app_id: t,
            cpu_req: 1,
            mem_req: 1,
            exec_duration_ms: 0.0,
        })
        .collect();
    let dag = WorkflowDAG::new(
        WorkflowId::new("py"),
        specs,
        edges.into_iter().map(|(a, b)| (TaskId::new(a), TaskId::new(b))).collect(),
    )
    .map_err(value_err)?;
    Ok(scheduler::compute_levels(&dag)
        .map_err(value_err)?
        .into_iter()
        .map(|(t, l)| (t.to_string(), l))
        .collect())
}

/// One seeded LCDWRR placement; returns `{task: node}`.
#[pyfunction]
#[pyo3(signature = (workflow_json, resources, seed, proposer))]
fn generate_schedule(
    workflow_json: &str,
    resources: BTreeMap<String, (u32, u32, u32, u32)>,
    seed: u64,
    proposer: String,
) -> PyResult<BTreeMap<String, String>> {
    use rand::SeedableRng;
    let doc: harness::WorkflowDoc = serde_json::from_str(workflow_json).map_err(value_err)?;
    let dag = doc.to_dag().map_err(value_err)?;
    let resources = resource_map_from(resources)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let schedule = scheduler::generate_schedule(
        &dag,
        &resources,
        &mut rng,
        RequestId::derive(&NodeId::new("py"), seed),
        NodeId::new(proposer),
    )
    .map_err(value_err)?;
    Ok(schedule
        .assignments
        .into_iter()
        .map(|(t, n)| (t.to_string(), n.to_string()))
        .collect())
}

#[pymodule]
fn bftsched_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(run_scenario_json, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_csv, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(quorum_size, m)?)?;
    m.add_function(wrap_pyfunction!(node_load, m)?)?;
    m.add_function(wrap_pyfunction!(selection_weight, m)?)?;
    m.add_function(wrap_pyfunction!(designate, m)?)?;
    m.add_function(wrap_pyfunction!(compute_levels, m)?)?;
    m.add_function(wrap_pyfunction!(generate_schedule, m)?)?;
    Ok(())
}
