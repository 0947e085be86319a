#![allow(dead_code)]

use std::sync::Arc;

use secsched::scenario::{generate_scenario, FunctionSpec, LinkModel, NodeSpec, Request, Scenario, ScenarioParams};

pub fn node(id: usize, cores: u32, mem_mb: f64) -> NodeSpec {
    NodeSpec {
        node_id: id,
        pos_x: 100.0 * id as f64,
        pos_y: 0.0,
        type_id: 0,
        cpu_cores: cores,
        cpu_freq_ghz: 2.4,
        mem_mb,
        registry_bw_mbps: 100.0,
    }
}

pub fn function(id: usize) -> FunctionSpec {
    FunctionSpec {
        function_id: id,
        image_mb: 100.0,
        base_init_ms: 200.0,
        ref_mem_mb: 512.0,
        default_cpu_cores: 1.0,
        default_mem_mb: 512.0,
        default_cpu_time_ms: 100.0,
        default_data_mb: 0.0,
    }
}

pub fn request(id: u64, arrival_ms: f64, function_id: usize, cores: f64, mem_mb: f64, cpu_time_ms: f64) -> Request {
    Request {
        request_id: id,
        arrival_ms,
        source_node: 0,
        function_id,
        cpu_cores: cores,
        mem_mb,
        cpu_time_ms,
        data_mb: 0.0,
        slo_ms: 400.0,
    }
}

pub fn manual(nodes: Vec<NodeSpec>, functions: usize, trace: Vec<Request>) -> Arc<Scenario> {
    Arc::new(Scenario {
        nodes,
        functions: (0..functions).map(function).collect(),
        link_model: LinkModel::default(),
        trace,
        rng_seed: 0,
    })
}

pub fn generated(nodes: usize, functions: usize, requests: usize, seed: u64) -> Arc<Scenario> {
    let p = ScenarioParams {
        num_nodes: nodes,
        num_types: nodes.clamp(1, 5),
        num_functions: functions,
        num_requests: requests,
        seed,
        ..ScenarioParams::default()
    };
    Arc::new(generate_scenario(&p).expect("valid parameters"))
}
