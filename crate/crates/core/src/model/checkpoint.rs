//! JSON checkpoints.
//!
//! ```json
//! {"config": {...},
//!  "tensors": {"embedding": {"shape": [r, c], "data": [...]}, "W_in": ..., "hidden.0": ..., "W_out": ...}}
//! ```
//!
//! Data is row-major. Floats round-trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{layer_names, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io;

#[derive(Serialize, Deserialize)]
struct TensorFile {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config: ModelConfig,
    tensors: BTreeMap<String, TensorFile>,
}

pub fn save_checkpoint(params: &ModelParams, config: &ModelConfig, path: &Path) -> Result<()> {
    config.validate()?;
    if !params.matches(config) {
        return Err(Error::input(
            "parameter shapes do not match the configuration",
        ));
    }
    let mut tensors = BTreeMap::new();
    for (name, t) in params.named_tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "tensor {name} holds non-finite values"
            )));
        }
        let (r, c) = t.dim();
        tensors.insert(
            name,
            TensorFile {
                shape: [r, c],
                data: t.iter().copied().collect(),
            },
        );
    }
    let file = CheckpointFile {
        config: *config,
        tensors,
    };
    let bytes = serde_json::to_vec(&file).expect("checkpoint serializes");
    io::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let bytes = io::read(path)?;
    let mut file: CheckpointFile =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let config = file.config;
    config.validate()?;

    let mut take = |name: &str, dim: (usize, usize)| -> Result<Array2<f64>> {
        let t = file
            .tensors
            .remove(name)
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        if (t.shape[0], t.shape[1]) != dim {
            return Err(Error::format(
                path,
                format!("tensor {name} has shape {:?}, expected {dim:?}", t.shape),
            ));
        }
        Array2::from_shape_vec(dim, t.data).map_err(|_| {
            Error::format(
                path,
                format!("tensor {name} data length does not match its shape"),
            )
        })
    };

    let template = ModelParams::zeros(&config);
    let embedding = take("embedding", template.embedding.dim())?;
    let names = layer_names(config.num_hidden_blocks);
    let mut layers = Vec::with_capacity(names.len());
    for (l, name) in names.iter().enumerate() {
        layers.push(take(name, template.prunable(l).dim())?);
    }
    if let Some(extra) = file.tensors.keys().next() {
        return Err(Error::format(path, format!("unexpected tensor {extra}")));
    }
    let w_out = layers.pop().expect("at least two prunable layers");
    let w_in = layers.remove(0);
    Ok((
        ModelParams {
            embedding,
            w_in,
            hidden: layers,
            w_out,
        },
        config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let cfg = ModelConfig::tiny();
        let p = init_model(&cfg, 21).unwrap();
        save_checkpoint(&p, &cfg, &path).unwrap();
        let (q, c) = load_checkpoint(&path).unwrap();
        assert_eq!(c, cfg);
        for (a, b) in p.tensors().zip(q.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let cfg = ModelConfig::tiny();
        save_checkpoint(&init_model(&cfg, 1).unwrap(), &cfg, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn invalid_config_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let cfg = ModelConfig::tiny();
        save_checkpoint(&init_model(&cfg, 1).unwrap(), &cfg, &path).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        v["config"]["hidden_dim"] = 130.into();
        std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("h not divisible by M"), "{err}");
    }

    #[test]
    fn wrong_tensor_shape_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let cfg = ModelConfig::tiny();
        save_checkpoint(&init_model(&cfg, 1).unwrap(), &cfg, &path).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        v["tensors"]["W_in"]["data"].as_array_mut().unwrap().pop();
        std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
