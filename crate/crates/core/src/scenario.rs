//! Static world description: edge topology, function catalog, link model and
//! request traces, together with their generators and CSV/JSON formats.
//!
//! File schemas (all numerics are decimal text; ms, MB, MB/s):
//!
//! ```text
//! topology.csv   node_id,pos_x,pos_y,type_id,cpu_cores,cpu_freq_ghz,mem_mb,registry_bw_mbps
//! functions.csv  function_id,image_mb,base_init_ms,ref_mem_mb,default_cpu_cores,default_mem_mb,default_cpu_time_ms,default_data_mb
//! trace.csv      request_id,arrival_ms,source_node,function_id,cpu_cores,mem_mb,cpu_time_ms,data_mb,slo_ms
//! scenario.json  all of the above plus the link model and the generator seed
//! ```

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: usize,
    pub pos_x: f64,
    pub pos_y: f64,
    pub type_id: usize,
    pub cpu_cores: u32,
    pub cpu_freq_ghz: f64,
    pub mem_mb: f64,
    pub registry_bw_mbps: f64,
}

impl NodeSpec {
    pub fn distance_to(&self, other: &NodeSpec) -> f64 {
        (self.pos_x - other.pos_x).hypot(self.pos_y - other.pos_y)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.cpu_cores < 1 {
            return Err(format!("node {}: cpu_cores must be >= 1", self.node_id));
        }
        if !(self.mem_mb > 0.0) {
            return Err(format!("node {}: mem_mb must be > 0", self.node_id));
        }
        if !(self.registry_bw_mbps > 0.0) {
            return Err(format!("node {}: registry_bw_mbps must be > 0", self.node_id));
        }
        if !(self.cpu_freq_ghz > 0.0) || !self.pos_x.is_finite() || !self.pos_y.is_finite() {
            return Err(format!("node {}: non-finite or non-positive field", self.node_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub function_id: usize,
    pub image_mb: f64,
    pub base_init_ms: f64,
    pub ref_mem_mb: f64,
    pub default_cpu_cores: f64,
    pub default_mem_mb: f64,
    pub default_cpu_time_ms: f64,
    pub default_data_mb: f64,
}

impl FunctionSpec {
    fn validate(&self) -> std::result::Result<(), String> {
        let fields = [
            ("image_mb", self.image_mb),
            ("base_init_ms", self.base_init_ms),
            ("ref_mem_mb", self.ref_mem_mb),
            ("default_cpu_cores", self.default_cpu_cores),
            ("default_mem_mb", self.default_mem_mb),
            ("default_cpu_time_ms", self.default_cpu_time_ms),
            ("default_data_mb", self.default_data_mb),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("function {}: {name} must be > 0", self.function_id));
            }
        }
        Ok(())
    }
}

/// One invocation. `cpu_cores` is real-valued because per-request demands are
/// perturbed around the function defaults; it is always at least one core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub request_id: u64,
    pub arrival_ms: f64,
    pub source_node: usize,
    pub function_id: usize,
    pub cpu_cores: f64,
    pub mem_mb: f64,
    pub cpu_time_ms: f64,
    pub data_mb: f64,
    pub slo_ms: f64,
}

impl Request {
    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.cpu_cores >= 1.0) {
            return Err("cpu_cores must be >= 1".into());
        }
        for (name, v) in [
            ("mem_mb", self.mem_mb),
            ("cpu_time_ms", self.cpu_time_ms),
            ("slo_ms", self.slo_ms),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be > 0"));
            }
        }
        if !(self.data_mb >= 0.0) || !self.data_mb.is_finite() {
            return Err("data_mb must be >= 0".into());
        }
        if !(self.arrival_ms >= 0.0) || !self.arrival_ms.is_finite() {
            return Err("arrival_ms must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub base_rate_mbps: f64,
    pub tier_meters: f64,
    pub local_is_free: bool,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            base_rate_mbps: 100.0,
            tier_meters: 200.0,
            local_is_free: true,
        }
    }
}

/// Transmission rate in MB/s between a request source and a host.
///
/// Returns `f64::INFINITY` for a local placement when `local_is_free` is set;
/// dividing a data size by it yields zero communication latency.
pub fn link_rate(model: &LinkModel, src: &NodeSpec, dst: &NodeSpec) -> f64 {
    if src.node_id == dst.node_id && model.local_is_free {
        return f64::INFINITY;
    }
    let tiers = (src.distance_to(dst) / model.tier_meters).floor();
    model.base_rate_mbps / (1.0 + tiers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub nodes: Vec<NodeSpec>,
    pub functions: Vec<FunctionSpec>,
    pub link_model: LinkModel,
    pub trace: Vec<Request>,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        if !(self.link_model.base_rate_mbps > 0.0) || !(self.link_model.tier_meters > 0.0) {
            return bad("link model rates must be > 0".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.node_id != i {
                return bad(format!("node ids must be dense: position {i} has id {}", n.node_id));
            }
            n.validate().map_err(Error::InvalidScenario)?;
        }
        for (i, f) in self.functions.iter().enumerate() {
            if f.function_id != i {
                return bad(format!("function ids must be dense: position {i} has id {}", f.function_id));
            }
            f.validate().map_err(Error::InvalidScenario)?;
        }
        let mut last = f64::NEG_INFINITY;
        for r in &self.trace {
            if r.source_node >= self.nodes.len() {
                return bad(format!("request {}: unknown source_node {}", r.request_id, r.source_node));
            }
            if r.function_id >= self.functions.len() {
                return bad(format!("request {}: unknown function_id {}", r.request_id, r.function_id));
            }
            r.validate()
                .map_err(|m| Error::InvalidScenario(format!("request {}: {m}", r.request_id)))?;
            if r.arrival_ms < last {
                return bad(format!("trace not sorted at request {}", r.request_id));
            }
            last = r.arrival_ms;
        }
        Ok(())
    }

    pub fn node(&self, id: usize) -> &NodeSpec {
        &self.nodes[id]
    }

    pub fn function(&self, id: usize) -> &FunctionSpec {
        &self.functions[id]
    }

    /// Side length of the bounding square of node positions (at least 1 m),
    /// used to normalize coordinates in the state vector.
    pub fn extent(&self) -> f64 {
        let max = self
            .nodes
            .iter()
            .map(|n| n.pos_x.abs().max(n.pos_y.abs()))
            .fold(0.0, f64::max);
        max.max(1.0)
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn with_trace(&self, trace: Vec<Request>) -> Scenario {
        Scenario {
            trace,
            ..self.clone()
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Scenario> {
        let s = fs::read_to_string(path)?;
        let sc: Scenario = serde_json::from_str(&s)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Writes `scenario.json`, `topology.csv`, `functions.csv`, `trace.csv`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.save_json(&dir.join("scenario.json"))?;
        save_topology_csv(&dir.join("topology.csv"), &self.nodes)?;
        save_functions_csv(&dir.join("functions.csv"), &self.functions)?;
        save_trace_csv(&dir.join("trace.csv"), &self.trace)?;
        Ok(())
    }

    /// Accepts either a `scenario.json` file or a directory containing one.
    pub fn load(path: &Path) -> Result<Scenario> {
        if path.is_dir() {
            Scenario::load_json(&path.join("scenario.json"))
        } else {
            Scenario::load_json(path)
        }
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Hardware ranges for the default node-type catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub area_meters: f64,
    pub cpu_freq_ghz: (f64, f64),
    pub mem_mb: (f64, f64),
    pub cpu_cores: (u32, u32),
    pub registry_bw_mbps: (f64, f64),
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            area_meters: 2000.0,
            cpu_freq_ghz: (2.4, 3.6),
            mem_mb: (10_240.0, 30_720.0),
            cpu_cores: (8, 32),
            registry_bw_mbps: (12.5, 125.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct NodeType {
    cpu_cores: u32,
    cpu_freq_ghz: f64,
    mem_mb: f64,
    registry_bw_mbps: f64,
}

pub fn generate_topology(num_nodes: usize, num_types: usize, seed: u64) -> Result<Vec<NodeSpec>> {
    generate_topology_with(num_nodes, num_types, seed, &TopologyConfig::default())
}

pub fn generate_topology_with(
    num_nodes: usize,
    num_types: usize,
    seed: u64,
    cfg: &TopologyConfig,
) -> Result<Vec<NodeSpec>> {
    if num_nodes < 1 || num_types < 1 {
        return Err(Error::InvalidParameter(
            "num_nodes and num_types must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types: Vec<NodeType> = (0..num_types)
        .map(|_| NodeType {
            cpu_freq_ghz: rng.gen_range(cfg.cpu_freq_ghz.0..=cfg.cpu_freq_ghz.1),
            mem_mb: rng.gen_range(cfg.mem_mb.0..=cfg.mem_mb.1),
            cpu_cores: rng.gen_range(cfg.cpu_cores.0..=cfg.cpu_cores.1),
            registry_bw_mbps: rng.gen_range(cfg.registry_bw_mbps.0..=cfg.registry_bw_mbps.1),
        })
        .collect();
    let nodes = (0..num_nodes)
        .map(|node_id| {
            let type_id = rng.gen_range(0..num_types);
            let t = types[type_id];
            NodeSpec {
                node_id,
                pos_x: rng.gen_range(0.0..=cfg.area_meters),
                pos_y: rng.gen_range(0.0..=cfg.area_meters),
                type_id,
                cpu_cores: t.cpu_cores,
                cpu_freq_ghz: t.cpu_freq_ghz,
                mem_mb: t.mem_mb,
                registry_bw_mbps: t.registry_bw_mbps,
            }
        })
        .collect();
    Ok(nodes)
}

/// Ranges for the synthetic function catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionCatalogConfig {
    pub image_mb: (f64, f64),
    pub base_init_ms: (f64, f64),
    pub ref_mem_mb: f64,
    pub cpu_cores: (u32, u32),
    pub mem_mb: (f64, f64),
    pub cpu_time_ms: (f64, f64),
    pub data_mb: (f64, f64),
}

impl Default for FunctionCatalogConfig {
    fn default() -> Self {
        FunctionCatalogConfig {
            image_mb: (20.0, 200.0),
            base_init_ms: (100.0, 500.0),
            ref_mem_mb: 512.0,
            cpu_cores: (1, 2),
            mem_mb: (128.0, 1024.0),
            cpu_time_ms: (40.0, 200.0),
            data_mb: (0.1, 2.0),
        }
    }
}

pub fn generate_functions(num_functions: usize, seed: u64) -> Result<Vec<FunctionSpec>> {
    generate_functions_with(num_functions, seed, &FunctionCatalogConfig::default())
}

pub fn generate_functions_with(
    num_functions: usize,
    seed: u64,
    cfg: &FunctionCatalogConfig,
) -> Result<Vec<FunctionSpec>> {
    if num_functions < 1 {
        return Err(Error::InvalidParameter("num_functions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..num_functions)
        .map(|function_id| FunctionSpec {
            function_id,
            image_mb: rng.gen_range(cfg.image_mb.0..=cfg.image_mb.1),
            base_init_ms: rng.gen_range(cfg.base_init_ms.0..=cfg.base_init_ms.1),
            ref_mem_mb: cfg.ref_mem_mb,
            default_cpu_cores: rng.gen_range(cfg.cpu_cores.0..=cfg.cpu_cores.1) as f64,
            default_mem_mb: rng.gen_range(cfg.mem_mb.0..=cfg.mem_mb.1),
            default_cpu_time_ms: rng.gen_range(cfg.cpu_time_ms.0..=cfg.cpu_time_ms.1),
            default_data_mb: rng.gen_range(cfg.data_mb.0..=cfg.data_mb.1),
        })
        .collect())
}

/// Samples ranks `0..n` with probability proportional to `(rank+1)^-beta`.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    index: WeightedIndex<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize, beta: f64) -> Result<ZipfSampler> {
        if n == 0 || !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "zipf needs n >= 1 and finite beta >= 0 (n={n}, beta={beta})"
            )));
        }
        let weights = (1..=n).map(|r| (r as f64).powf(-beta));
        let index = WeightedIndex::new(weights)
            .map_err(|e| Error::InvalidParameter(format!("zipf weights: {e}")))?;
        Ok(ZipfSampler { index })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub zipf_beta: f64,
    pub arrival_rate_per_s: f64,
    /// Half-width of the multiplicative uniform noise on resource demands.
    pub perturbation: f64,
    pub slo_ms: (f64, f64),
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            zipf_beta: 1.0,
            arrival_rate_per_s: 10.0,
            perturbation: 0.2,
            slo_ms: (200.0, 400.0),
        }
    }
}

pub fn generate_workload(
    functions: &[FunctionSpec],
    nodes: &[NodeSpec],
    num_requests: usize,
    zipf_beta: f64,
    arrival_rate_per_s: f64,
    seed: u64,
) -> Result<Vec<Request>> {
    let cfg = WorkloadConfig {
        zipf_beta,
        arrival_rate_per_s,
        ..WorkloadConfig::default()
    };
    generate_workload_with(functions, nodes, num_requests, seed, &cfg)
}

pub fn generate_workload_with(
    functions: &[FunctionSpec],
    nodes: &[NodeSpec],
    num_requests: usize,
    seed: u64,
    cfg: &WorkloadConfig,
) -> Result<Vec<Request>> {
    if functions.is_empty() || nodes.is_empty() {
        return Err(Error::InvalidParameter(
            "workload generation needs at least one function and one node".into(),
        ));
    }
    if num_requests < 1 {
        return Err(Error::InvalidParameter("num_requests must be >= 1".into()));
    }
    if !(cfg.arrival_rate_per_s > 0.0) {
        return Err(Error::InvalidParameter("arrival_rate_per_s must be > 0".into()));
    }
    let zipf = ZipfSampler::new(functions.len(), cfg.zipf_beta)?;
    let gaps = Exp::new(cfg.arrival_rate_per_s / 1000.0)
        .map_err(|e| Error::InvalidParameter(format!("arrival rate: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.perturbation;
    let noise = |rng: &mut ChaCha8Rng, v: f64| {
        let scaled = v * rng.gen_range((1.0 - p)..=(1.0 + p));
        scaled.max(f64::MIN_POSITIVE)
    };
    let mut clock = 0.0;
    let mut out = Vec::with_capacity(num_requests);
    for request_id in 0..num_requests as u64 {
        clock += gaps.sample(&mut rng);
        let f = &functions[zipf.sample(&mut rng)];
        let source_node = rng.gen_range(0..nodes.len());
        let cpu_cores = noise(&mut rng, f.default_cpu_cores).max(1.0);
        let mem_mb = noise(&mut rng, f.default_mem_mb);
        let cpu_time_ms = noise(&mut rng, f.default_cpu_time_ms);
        let data_mb = noise(&mut rng, f.default_data_mb);
        let slo_ms = rng.gen_range(cfg.slo_ms.0..=cfg.slo_ms.1);
        out.push(Request {
            request_id,
            arrival_ms: clock,
            source_node,
            function_id: f.function_id,
            cpu_cores,
            mem_mb,
            cpu_time_ms,
            data_mb,
            slo_ms,
        });
    }
    Ok(out)
}

/// Parameters for [`generate_scenario`]; every generator draws from a seed
/// derived from `seed`, so the whole scenario is reproducible from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub num_nodes: usize,
    pub num_types: usize,
    pub num_functions: usize,
    pub num_requests: usize,
    pub seed: u64,
    pub topology: TopologyConfig,
    pub catalog: FunctionCatalogConfig,
    pub workload: WorkloadConfig,
    pub link_model: LinkModel,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            num_nodes: 125,
            num_types: 10,
            num_functions: 200,
            num_requests: 10_000,
            seed: 0,
            topology: TopologyConfig::default(),
            catalog: FunctionCatalogConfig::default(),
            workload: WorkloadConfig::default(),
            link_model: LinkModel::default(),
        }
    }
}

pub fn generate_scenario(p: &ScenarioParams) -> Result<Scenario> {
    let nodes = generate_topology_with(p.num_nodes, p.num_types, p.seed, &p.topology)?;
    let functions = generate_functions_with(p.num_functions, p.seed.wrapping_add(1), &p.catalog)?;
    let trace = generate_workload_with(
        &functions,
        &nodes,
        p.num_requests,
        p.seed.wrapping_add(2),
        &p.workload,
    )?;
    let sc = Scenario {
        nodes,
        functions,
        link_model: p.link_model,
        trace,
        rng_seed: p.seed,
    };
    sc.validate()?;
    Ok(sc)
}

// ---------------------------------------------------------------------------
// CSV formats
// ---------------------------------------------------------------------------

/// Result of loading a topology file; `reindex` lists `(original_id, dense_id)`
/// pairs and is empty when the file already used dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyLoad {
    pub nodes: Vec<NodeSpec>,
    pub reindex: Vec<(u64, usize)>,
}

#[derive(Debug, Deserialize)]
struct RawNode {
    node_id: u64,
    pos_x: f64,
    pos_y: f64,
    type_id: usize,
    cpu_cores: u32,
    cpu_freq_ghz: f64,
    mem_mb: f64,
    registry_bw_mbps: f64,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        let line = csv_line(&rec, line);
        let row: T = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

pub fn load_topology_csv(path: &Path) -> Result<TopologyLoad> {
    let rows: Vec<(usize, RawNode)> = read_rows(path)?;
    let mut seen = BTreeMap::new();
    for (line, r) in &rows {
        if seen.insert(r.node_id, *line).is_some() {
            return Err(parse_err(path, *line, format!("duplicate node_id {}", r.node_id)));
        }
    }
    let dense: BTreeMap<u64, usize> = seen.keys().enumerate().map(|(i, &id)| (id, i)).collect();
    let already_dense = dense.iter().all(|(&orig, &d)| orig == d as u64);
    let mut nodes: Vec<NodeSpec> = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        let n = NodeSpec {
            node_id: dense[&r.node_id],
            pos_x: r.pos_x,
            pos_y: r.pos_y,
            type_id: r.type_id,
            cpu_cores: r.cpu_cores,
            cpu_freq_ghz: r.cpu_freq_ghz,
            mem_mb: r.mem_mb,
            registry_bw_mbps: r.registry_bw_mbps,
        };
        n.validate().map_err(|m| parse_err(path, *line, m))?;
        nodes.push(n);
    }
    nodes.sort_by_key(|n| n.node_id);
    let reindex = if already_dense {
        Vec::new()
    } else {
        dense.into_iter().collect()
    };
    Ok(TopologyLoad { nodes, reindex })
}

pub fn load_functions_csv(path: &Path) -> Result<Vec<FunctionSpec>> {
    let rows: Vec<(usize, FunctionSpec)> = read_rows(path)?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, (line, f)) in rows.into_iter().enumerate() {
        if f.function_id != i {
            return Err(parse_err(
                path,
                line,
                format!("function ids must be dense and ordered; expected {i}, got {}", f.function_id),
            ));
        }
        f.validate().map_err(|m| parse_err(path, line, m))?;
        out.push(f);
    }
    Ok(out)
}

/// A loaded trace plus the number of rows that arrived earlier than their
/// predecessor in the file (they are stably re-sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLoad {
    pub requests: Vec<Request>,
    pub out_of_order: usize,
}

pub fn load_trace_csv(path: &Path, functions: &[FunctionSpec], nodes: &[NodeSpec]) -> Result<TraceLoad> {
    let rows: Vec<(usize, Request)> = read_rows(path)?;
    let mut requests = Vec::with_capacity(rows.len());
    let mut out_of_order = 0;
    let mut prev = f64::NEG_INFINITY;
    for (line, r) in rows {
        if r.function_id >= functions.len() {
            return Err(parse_err(path, line, format!("unknown function_id {}", r.function_id)));
        }
        if r.source_node >= nodes.len() {
            return Err(parse_err(path, line, format!("unknown source_node {}", r.source_node)));
        }
        r.validate().map_err(|m| parse_err(path, line, m))?;
        if r.arrival_ms < prev {
            out_of_order += 1;
        }
        prev = r.arrival_ms;
        requests.push(r);
    }
    if out_of_order > 0 {
        log::warn!("{}: {out_of_order} out-of-order rows re-sorted", path.display());
        requests.sort_by(|a, b| a.arrival_ms.total_cmp(&b.arrival_ms));
    }
    Ok(TraceLoad {
        requests,
        out_of_order,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    wtr.write_record(header)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub const TOPOLOGY_HEADER: [&str; 8] = [
    "node_id",
    "pos_x",
    "pos_y",
    "type_id",
    "cpu_cores",
    "cpu_freq_ghz",
    "mem_mb",
    "registry_bw_mbps",
];
pub const FUNCTIONS_HEADER: [&str; 8] = [
    "function_id",
    "image_mb",
    "base_init_ms",
    "ref_mem_mb",
    "default_cpu_cores",
    "default_mem_mb",
    "default_cpu_time_ms",
    "default_data_mb",
];
pub const TRACE_HEADER: [&str; 9] = [
    "request_id",
    "arrival_ms",
    "source_node",
    "function_id",
    "cpu_cores",
    "mem_mb",
    "cpu_time_ms",
    "data_mb",
    "slo_ms",
];

pub fn save_topology_csv(path: &Path, nodes: &[NodeSpec]) -> Result<()> {
    write_rows(path, nodes, &TOPOLOGY_HEADER)
}

pub fn save_functions_csv(path: &Path, functions: &[FunctionSpec]) -> Result<()> {
    write_rows(path, functions, &FUNCTIONS_HEADER)
}

pub fn save_trace_csv(path: &Path, trace: &[Request]) -> Result<()> {
    write_rows(path, trace, &TRACE_HEADER)
}

/// Loads a scenario from the three CSV files in `dir` (no `scenario.json`).
pub fn load_csv_dir(dir: &Path, link_model: LinkModel, rng_seed: u64) -> Result<Scenario> {
    let topo = load_topology_csv(&dir.join("topology.csv"))?;
    let functions = load_functions_csv(&dir.join("functions.csv"))?;
    let trace = load_trace_csv(&dir.join("trace.csv"), &functions, &topo.nodes)?;
    let sc = Scenario {
        nodes: topo.nodes,
        functions,
        link_model,
        trace: trace.requests,
        rng_seed,
    };
    sc.validate()?;
    Ok(sc)
}
