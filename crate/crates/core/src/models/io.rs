//! Model checkpoints: an ELFT tensor file plus a JSON sidecar with the
//! configuration. Running statistics are stored in the tensor file under
//! `<layer>.running_mean` / `<layer>.running_var`.

use std::path::{Path, PathBuf};

use elf_tensor::{checkpoint, Element, PrngState, Tensor};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelState, RunningStats};
use crate::error::{Error, IoContext, Result};

pub const SIDECAR_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub format: u32,
    pub config: ModelConfig,
    pub dtype: String,
    pub bn_momentum: f64,
    pub bn_layers: Vec<String>,
    /// Free-form provenance, e.g. training epoch.
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

/// `model.elft` → `model.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_model<T: Element>(
    model: &ModelState<T>,
    path: impl AsRef<Path>,
    meta: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let mut named: Vec<(String, Tensor<T>)> = model.params.iter().map(|(k, v)| (k.clone(), v.detach())).collect();
    for (k, s) in &model.bn_stats {
        named.push((format!("{k}.running_mean"), s.mean.clone()));
        named.push((format!("{k}.running_var"), s.var.clone()));
    }
    std::fs::write(path, checkpoint::encode(&named)).at(path)?;
    let sidecar = ModelSidecar {
        format: SIDECAR_FORMAT,
        config: model.config.clone(),
        dtype: T::DTYPE.to_string(),
        bn_momentum: model.bn_momentum,
        bn_layers: model.bn_stats.keys().cloned().collect(),
        meta,
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec_pretty(&sidecar)?).at(&side)?;
    Ok(())
}

/// Loads a checkpoint written by [`save_model`]. Every parameter and running
/// statistic of the configured architecture must be present, and nothing else.
pub fn load_model<T: Element>(path: impl AsRef<Path>) -> Result<(ModelState<T>, ModelSidecar)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let sidecar: ModelSidecar = serde_json::from_slice(&std::fs::read(&side).at(&side)?)?;
    if sidecar.format != SIDECAR_FORMAT {
        return Err(Error::Format(format!(
            "{}: unsupported sidecar format {}",
            side.display(),
            sidecar.format
        )));
    }
    let bytes = std::fs::read(path).at(path)?;
    let tensors = checkpoint::decode::<T>(&bytes)?;
    let mut model = ModelState::<T>::new(&sidecar.config, PrngState::new(0))?;
    model.set_bn_momentum(sidecar.bn_momentum)?;
    let expected = model.params.len() + 2 * model.bn_stats.len();
    if tensors.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} tensors, architecture needs {expected}",
            path.display(),
            tensors.len()
        )));
    }
    let mut stats: indexmap::IndexMap<String, (Option<Tensor<T>>, Option<Tensor<T>>)> = indexmap::IndexMap::new();
    for (name, t) in tensors {
        if let Some(layer) = name.strip_suffix(".running_mean") {
            stats.entry(layer.to_string()).or_default().0 = Some(t);
        } else if let Some(layer) = name.strip_suffix(".running_var") {
            stats.entry(layer.to_string()).or_default().1 = Some(t);
        } else {
            model.set_param(&name, t.requires_grad())?;
        }
    }
    for (layer, pair) in stats {
        match pair {
            (Some(mean), Some(var)) => model.set_bn_stats(&layer, RunningStats { mean, var })?,
            _ => return Err(Error::Format(format!("incomplete running stats for `{layer}`"))),
        }
    }
    Ok((model, sidecar))
}
