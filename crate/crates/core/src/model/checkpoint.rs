//! Single-file checkpoints.
//!
//! Layout: the magic line, one line of JSON header, then every parameter's
//! values as little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelState};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "LANET-CKPT-1";

/// The reduction used by the squared-norm loss terms; echoed for reproducibility.
const LOSS_REDUCTION: &str = "mean";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState,
    pub seed: u64,
    pub epoch: usize,
    /// The full run configuration that produced this state.
    pub config_echo: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    seed: u64,
    epoch: usize,
    loss_reduction: String,
    config: serde_json::Value,
    params: Vec<(String, Vec<usize>)>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        model: ckpt.state.config().clone(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        loss_reduction: LOSS_REDUCTION.into(),
        config: ckpt.config_echo.clone(),
        params: ckpt
            .state
            .params()
            .iter()
            .map(|(k, t)| (k.clone(), t.shape().to_vec()))
            .collect(),
    };
    let mut bytes = format!("{CHECKPOINT_MAGIC}\n").into_bytes();
    bytes.extend(serde_json::to_vec(&header).expect("header serialises"));
    bytes.push(b'\n');
    for t in ckpt.state.params().values() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let magic = format!("{CHECKPOINT_MAGIC}\n");
    if !bytes.starts_with(magic.as_bytes()) {
        return Err(bad(format!("not a {CHECKPOINT_MAGIC} file")));
    }
    let rest = &bytes[magic.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header".into()))?;
    let header: Header = serde_json::from_slice(&rest[..nl]).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.loss_reduction != LOSS_REDUCTION {
        return Err(bad(format!("unsupported loss reduction {:?}", header.loss_reduction)));
    }
    let mut payload = rest[nl + 1..].chunks_exact(8);
    let total: usize = header.params.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if payload.len() != total || !payload.remainder().is_empty() {
        return Err(bad(format!("expected {total} values, found {} bytes", rest.len() - nl - 1)));
    }
    let mut params = BTreeMap::new();
    for (name, shape) in header.params {
        let len = shape.iter().product();
        let data = payload
            .by_ref()
            .take(len)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.insert(name, Tensor::from_vec(&shape, data));
    }
    let state = ModelState::from_params(header.model, params).map_err(|e| match e {
        Error::Checkpoint(m) => bad(m),
        other => bad(other.to_string()),
    })?;
    Ok(Checkpoint {
        state,
        seed: header.seed,
        epoch: header.epoch,
        config_echo: header.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_state;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            nr_curves: 3,
            base_channels: 8,
            detail_blocks: 1,
            ..ModelConfig::default()
        };
        let ckpt = Checkpoint {
            state: init_state(&cfg, 11).unwrap(),
            seed: 11,
            epoch: 4,
            config_echo: serde_json::json!({"train": {"epochs": 4}}),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save_checkpoint(&ckpt, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), ckpt);

        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        fs::write(&p, b"garbage").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
