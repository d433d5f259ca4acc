//! Parameter checkpoints: one little-endian f64 file per tensor plus a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::Network;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub dtype: String,
    /// `param` or `buffer`.
    pub role: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub tensors: Vec<TensorEntry>,
}

fn file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}.f64le")
}

fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_tensor(path: &Path, shape: &[usize]) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let n: usize = shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(NnError::Checkpoint(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            n * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Writes every parameter and running buffer of `net` into `dir`.
pub fn save(net: &Network, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    let named = net
        .param_meta()
        .iter()
        .map(|m| m.name.as_str())
        .zip(net.params())
        .map(|(n, t)| (n, t, "param"))
        .chain(net.buffer_names().zip(net.buffers()).map(|(n, t)| (n, t, "buffer")));
    for (name, t, role) in named {
        let file = file_name(name);
        write_tensor(&dir.join(&file), t)?;
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            file,
            dtype: "f64le".into(),
            role: role.into(),
        });
    }
    let manifest = CheckpointManifest { tensors };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a checkpoint into a network of identical layout.
pub fn load(net: &mut Network, dir: &Path) -> Result<()> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    let lookup = |name: &str, role: &str, shape: &[usize]| -> Result<Tensor> {
        let e = manifest
            .tensors
            .iter()
            .find(|e| e.name == name && e.role == role)
            .ok_or_else(|| NnError::Checkpoint(format!("missing {role} `{name}`")))?;
        if e.shape != shape || e.dtype != "f64le" {
            return Err(NnError::Checkpoint(format!(
                "`{name}`: stored {:?}/{} vs expected {shape:?}/f64le",
                e.shape, e.dtype
            )));
        }
        read_tensor(&dir.join(&e.file), shape)
    };
    let params = net
        .param_meta()
        .iter()
        .map(|m| lookup(&m.name, "param", &m.shape))
        .collect::<Result<Vec<_>>>()?;
    let buffers = net
        .buffer_names()
        .zip(net.buffers())
        .map(|(n, b)| lookup(n, "buffer", b.shape()))
        .collect::<Result<Vec<_>>>()?;
    let mut state = net.state();
    state.params = params;
    net.load_state(state)?;
    net.set_buffers(buffers);
    Ok(())
}
