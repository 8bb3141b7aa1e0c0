use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::numcore::{Tape, Tensor, Var};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const DATA_FILE: &str = "params.bin";

/// Named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl ModelParams {
    /// Weights drawn uniformly from `±1/√fan_in`, biases zero.
    ///
    /// Each tensor has its own stream keyed by `(seed, name)`, so variants
    /// that share a parameter name start from the same values.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let tensors = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = if is_bias(&name) {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in = shape[shape.len() - 2] as f64;
                    let bound = 1.0 / fan_in.sqrt();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
                    Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
                };
                (name, t)
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Hash of names, shapes and exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, t) in &self.tensors {
            bytes.extend(name.as_bytes());
            for &s in t.shape() {
                bytes.extend((s as u64).to_le_bytes());
            }
            for v in t.data() {
                bytes.extend(v.to_bits().to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }

    /// Puts every tensor on the tape, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut bytes = Vec::with_capacity(self.count() * 8);
        for (name, t) in &self.tensors {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: bytes.len() / 8,
            });
            for v in t.data() {
                bytes.extend(v.to_le_bytes());
            }
        }
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            tensors: entries,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("plain data serializes");
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, json).map_err(|e| ModelError::io(&mpath, e))?;
        let dpath = dir.join(DATA_FILE);
        fs::write(&dpath, bytes).map_err(|e| ModelError::io(&dpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| ModelError::io(&mpath, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", mpath.display())))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                manifest.version
            )));
        }
        let dpath = dir.join(DATA_FILE);
        let bytes = fs::read(&dpath).map_err(|e| ModelError::io(&dpath, e))?;
        if bytes.len() % 8 != 0 {
            return Err(ModelError::Checkpoint("truncated parameter file".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut tensors = BTreeMap::new();
        for e in manifest.tensors {
            let len: usize = e.shape.iter().product();
            let data = values
                .get(e.offset..e.offset + len)
                .ok_or_else(|| ModelError::Checkpoint(format!("tensor {} out of range", e.name)))?
                .to_vec();
            let t = Tensor::new(e.shape, data)
                .map_err(|err| ModelError::Checkpoint(format!("tensor {}: {err}", e.name)))?;
            tensors.insert(e.name, t);
        }
        Ok(Self { tensors })
    }
}

fn is_bias(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    last.starts_with('b')
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    tensors: Vec<ManifestEntry>,
}

/// Tape handles for a bound [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
