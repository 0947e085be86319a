//! Binary checkpoint container shared by the PPO and DQN agents.
//!
//! Layout: the 9-byte magic `SECSCHED1`, a little-endian `u32` header
//! length, the UTF-8 JSON header, then every tensor as little-endian `f32`
//! in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Activation, AdamConfig, AdamState, Mlp, MlpGrads};
use crate::simenv::STATE_VERSION;

pub const MAGIC: &[u8; 9] = b"SECSCHED1";
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetInfo {
    pub sizes: Vec<usize>,
    pub output_activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layout_version: u32,
    pub state_version: u32,
    pub algo: String,
    pub num_nodes: usize,
    pub state_len: usize,
    pub nets: BTreeMap<String, NetInfo>,
    pub config: serde_json::Value,
    pub training_step: u64,
    pub seed: u64,
    #[serde(default)]
    pub resume: Option<serde_json::Value>,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn new(algo: &str, num_nodes: usize, state_len: usize, config: serde_json::Value, training_step: u64, seed: u64) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                layout_version: LAYOUT_VERSION,
                state_version: STATE_VERSION,
                algo: algo.to_string(),
                num_nodes,
                state_len,
                nets: BTreeMap::new(),
                config,
                training_step,
                seed,
                resume: None,
                tensors: Vec::new(),
            },
            tensors: Vec::new(),
        }
    }

    pub fn push_tensor(&mut self, name: &str, data: Vec<f32>) {
        self.header.tensors.push(TensorInfo {
            name: name.to_string(),
            len: data.len(),
        });
        self.tensors.push(data);
    }

    pub fn push_net(&mut self, name: &str, net: &Mlp<f32>) {
        self.header.nets.insert(
            name.to_string(),
            NetInfo {
                sizes: net.layer_sizes(),
                output_activation: net.output_activation,
            },
        );
        self.push_tensor(name, net.params_flat());
    }

    pub fn push_adam(&mut self, name: &str, adam: &AdamState<f32>) {
        self.push_tensor(&format!("adam.{name}.m"), adam.m.flat());
        self.push_tensor(&format!("adam.{name}.v"), adam.v.flat());
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.header
            .tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.tensors[i].as_slice())
    }

    pub fn net(&self, name: &str) -> Result<Mlp<f32>> {
        let info = self
            .header
            .nets
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing network {name}")))?;
        let mut net = Mlp::zeros(&info.sizes, info.output_activation)?;
        let params = self
            .tensor(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        net.set_params_flat(params)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        Ok(net)
    }

    /// Optimizer moments for `net`; a fresh optimizer when they were not saved.
    pub fn adam(&self, name: &str, net: &Mlp<f32>, config: AdamConfig, step: u64) -> Result<AdamState<f32>> {
        let mut adam = AdamState::new(net, config);
        let (Some(m), Some(v)) = (
            self.tensor(&format!("adam.{name}.m")),
            self.tensor(&format!("adam.{name}.v")),
        ) else {
            return Ok(adam);
        };
        adam.m = grads_from_flat(net, m)?;
        adam.v = grads_from_flat(net, v)?;
        adam.step = step;
        Ok(adam)
    }

    /// Rejects checkpoints built for another layout, state encoding,
    /// algorithm or cluster size.
    pub fn check_compatible(&self, algo: &str, num_nodes: usize, state_len: usize) -> Result<()> {
        let h = &self.header;
        if h.layout_version != LAYOUT_VERSION {
            return Err(version("layout_version", h.layout_version, LAYOUT_VERSION));
        }
        if h.state_version != STATE_VERSION {
            return Err(version("state_version", h.state_version, STATE_VERSION));
        }
        if h.algo != algo {
            return Err(version("algo", &h.algo, algo));
        }
        if h.num_nodes != num_nodes {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained for {} nodes, scenario has {num_nodes}",
                h.num_nodes
            )));
        }
        if h.state_len != state_len {
            return Err(Error::Checkpoint(format!(
                "checkpoint state length {} does not match {state_len}",
                h.state_len
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let payload: usize = self.tensors.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + 4 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for x in t {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 4];
        len.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 4]);
        let hlen = u32::from_le_bytes(len) as usize;
        let start = MAGIC.len() + 4;
        let header_bytes = bytes
            .get(start..start + hlen)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
        let payload = &bytes[start + hlen..];
        let expected: usize = header.tensors.iter().map(|t| t.len * 4).sum();
        if payload.len() != expected {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut off = 0;
        for t in &header.tensors {
            let data = payload[off..off + 4 * t.len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            off += 4 * t.len;
            tensors.push(data);
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Writes to a `.partial` sibling first, then renames.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

fn version(what: &str, found: impl ToString, expected: impl ToString) -> Error {
    Error::VersionMismatch {
        what: what.to_string(),
        found: found.to_string(),
        expected: expected.to_string(),
    }
}

pub fn grads_from_flat(net: &Mlp<f32>, flat: &[f32]) -> Result<MlpGrads<f32>> {
    if flat.len() != net.num_params() {
        return Err(Error::Checkpoint(format!(
            "optimizer state has {} entries, network has {}",
            flat.len(),
            net.num_params()
        )));
    }
    let mut g = net.zero_grads();
    let mut it = flat.iter().copied();
    for (w, b) in g.weights.iter_mut().zip(g.biases.iter_mut()) {
        w.iter_mut().for_each(|x| *x = it.next().expect("sized"));
        b.iter_mut().for_each(|x| *x = it.next().expect("sized"));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::neural::InitConfig;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::<f32>::new(&[5, 4, 2], Activation::Identity, InitConfig::default(), &mut rng).unwrap();
        let mut c = Checkpoint::new("ppo", 1, 12, serde_json::json!({"k": 1}), 7, 9);
        c.push_net("actor", &net);
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.net("actor").unwrap().params_flat(), c.net("actor").unwrap().params_flat());
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn compatibility_guards() {
        let mut c = sample();
        assert!(c.check_compatible("ppo", 1, 12).is_ok());
        assert!(c.check_compatible("ppo", 2, 16).is_err());
        assert!(matches!(c.check_compatible("dqn", 1, 12), Err(Error::VersionMismatch { .. })));
        c.header.state_version += 1;
        assert!(matches!(c.check_compatible("ppo", 1, 12), Err(Error::VersionMismatch { .. })));
    }
}
