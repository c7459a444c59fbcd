use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ByolConfig, ModelState};
use crate::augment::{AugmentConfig, NormStats};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::tensor::{tnsr, AdamState, Module, Real, Tensor};

/// Version of the JSON sidecar layout.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a model and reproduce its input pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ByolConfig,
    pub frontend: FrontendConfig,
    pub augment: AugmentConfig,
    pub norm: NormStats,
    /// Frames per training crop.
    pub frames: usize,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
}

/// `model.tnsr` -> `model.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn prefixed<T: Real>(prefix: &str, state: Vec<(String, Tensor<T>)>) -> impl Iterator<Item = (String, Tensor<T>)> + '_ {
    state.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

/// Writes `online.*`, `target.*` and `adam.*` tensors to `path` and the
/// metadata to its `.json` sidecar.
pub fn save_checkpoint<T: Real>(path: &Path, state: &ModelState<T>, meta: &CheckpointMeta) -> Result<()> {
    let mut entries: Vec<(String, Tensor<T>)> = prefixed("online", state.online.named_state()).collect();
    entries.extend(prefixed("target", state.target.named_state()));
    entries.extend(prefixed("adam", state.adam.named_state()));
    tnsr::save(path, &entries)?;
    let mp = meta_path(path);
    let json = serde_json::to_string_pretty(meta)?;
    let mut tmp = mp.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, json + "\n").map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &mp).map_err(|e| Error::io(&mp, e))
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

/// Rebuilds a [`ModelState`] from a checkpoint and its sidecar.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ModelState<T>, CheckpointMeta)> {
    let meta = load_meta(path)?;
    let mut groups: HashMap<&str, HashMap<String, Tensor<T>>> = HashMap::new();
    for (name, t) in tnsr::load::<T>(path)? {
        let (prefix, rest) = name
            .split_once('.')
            .ok_or_else(|| Error::Format(format!("checkpoint entry `{name}` has no prefix")))?;
        let key = match prefix {
            "online" => "online",
            "target" => "target",
            "adam" => "adam",
            _ => return Err(Error::Format(format!("unknown checkpoint entry `{name}`"))),
        };
        groups.entry(key).or_default().insert(rest.to_string(), t);
    }
    let mut state = ModelState::new(meta.model.clone(), meta.seed)?;
    let empty = HashMap::new();
    state.online.load_state(groups.get("online").unwrap_or(&empty))?;
    state.target.load_state(groups.get("target").unwrap_or(&empty))?;
    state.adam = AdamState::load_state(meta.model.adam, groups.get("adam").unwrap_or(&empty))?;
    state.step = meta.step;
    state.epoch = meta.epoch;
    Ok((state, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::byol::tests::tiny_config;

    fn meta(state: &ModelState<f32>) -> CheckpointMeta {
        CheckpointMeta {
            version: CHECKPOINT_VERSION,
            model: state.config.clone(),
            frontend: FrontendConfig::default(),
            augment: AugmentConfig::default(),
            norm: NormStats::new(-5.0, 2.0).unwrap(),
            frames: 8,
            step: state.step,
            epoch: state.epoch,
            seed: state.seed,
        }
    }

    #[test]
    fn roundtrip_preserves_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.tnsr");
        let mut state = ModelState::<f32>::new(tiny_config(), 5).unwrap();
        state.online.visit_params_mut(&mut |_, t| t.data_mut()[0] += 0.5);
        save_checkpoint(&path, &state, &meta(&state)).unwrap();
        let (back, m) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(m, meta(&state));
        assert_eq!(back.online.named_state(), state.online.named_state());
        assert_eq!(back.target.named_state(), state.target.named_state());
        assert!(path.with_extension("json").exists());
    }

    #[test]
    fn names_carry_network_prefixes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.tnsr");
        let state = ModelState::<f32>::new(tiny_config(), 5).unwrap();
        save_checkpoint(&path, &state, &meta(&state)).unwrap();
        let names: Vec<String> = tnsr::load::<f32>(&path).unwrap().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "online.encoder.conv1.weight");
        assert!(names.iter().any(|n| n == "target.projector.fc2.bias"));
        assert!(names.iter().any(|n| n == "adam.step"));
        assert!(!names.iter().any(|n| n.starts_with("target.predictor")));
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.tnsr");
        let state = ModelState::<f32>::new(tiny_config(), 5).unwrap();
        let mut m = meta(&state);
        m.version = 9;
        save_checkpoint(&path, &state, &m).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(Error::Version { found: 9, expected: 1 })
        ));
    }
}
