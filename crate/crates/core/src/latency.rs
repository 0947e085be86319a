//! Per-request latency model: cold start, computation and communication.
//!
//! All functions are pure arithmetic shared by the simulator and the offline
//! solvers so both account for latency identically.

use serde::{Deserialize, Serialize};

use crate::scenario::{link_rate, FunctionSpec, LinkModel, NodeSpec, Request, Scenario};

/// Reference clock for optional frequency scaling of computation time.
pub const REF_FREQ_GHZ: f64 = 2.4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyParams {
    pub frequency_scaling: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementDecision<'a> {
    pub request: &'a Request,
    pub node: &'a NodeSpec,
    pub new_container: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub cold_ms: f64,
    pub comp_ms: f64,
    pub comm_ms: f64,
    pub wait_ms: f64,
    pub total_ms: f64,
}

impl LatencyBreakdown {
    pub fn new(cold_ms: f64, comp_ms: f64, comm_ms: f64, wait_ms: f64) -> Self {
        LatencyBreakdown {
            cold_ms,
            comp_ms,
            comm_ms,
            wait_ms,
            total_ms: cold_ms + comp_ms + comm_ms + wait_ms,
        }
    }

    /// Latency excluding queueing delay.
    pub fn service_ms(&self) -> f64 {
        self.cold_ms + self.comp_ms + self.comm_ms
    }
}

/// Container initialization time at `mem_mb`, inversely proportional to the
/// allocated memory.
pub fn init_ms(f: &FunctionSpec, mem_mb: f64) -> f64 {
    f.base_init_ms * (f.ref_mem_mb / mem_mb)
}

pub fn cold_start_ms(f: &FunctionSpec, node: &NodeSpec, mem_mb: f64, new_container: bool) -> f64 {
    if !new_container {
        return 0.0;
    }
    f.image_mb / node.registry_bw_mbps * 1000.0 + init_ms(f, mem_mb)
}

pub fn compute_ms(req: &Request, node: &NodeSpec, frequency_scaling: bool) -> f64 {
    let base = req.cpu_time_ms / req.cpu_cores;
    if frequency_scaling {
        base * (REF_FREQ_GHZ / node.cpu_freq_ghz)
    } else {
        base
    }
}

pub fn comm_ms(req: &Request, model: &LinkModel, src: &NodeSpec, dst: &NodeSpec) -> f64 {
    if req.data_mb == 0.0 {
        return 0.0;
    }
    req.data_mb / link_rate(model, src, dst) * 1000.0
}

pub fn end_to_end(
    decision: &PlacementDecision<'_>,
    scenario: &Scenario,
    params: LatencyParams,
    wait_ms: f64,
) -> LatencyBreakdown {
    let req = decision.request;
    let f = scenario.function(req.function_id);
    let src = scenario.node(req.source_node);
    breakdown_parts(req, f, src, decision.node, &scenario.link_model, params, decision.new_container, wait_ms)
}

/// Same as [`end_to_end`] with the scenario lookups already done.
#[allow(clippy::too_many_arguments)]
pub fn breakdown_parts(
    req: &Request,
    f: &FunctionSpec,
    src: &NodeSpec,
    host: &NodeSpec,
    link: &LinkModel,
    params: LatencyParams,
    new_container: bool,
    wait_ms: f64,
) -> LatencyBreakdown {
    LatencyBreakdown::new(
        cold_start_ms(f, host, req.mem_mb, new_container),
        compute_ms(req, host, params.frequency_scaling),
        comm_ms(req, link, src, host),
        wait_ms,
    )
}

pub fn check_slo(b: &LatencyBreakdown, req: &Request) -> bool {
    b.total_ms <= req.slo_ms
}
