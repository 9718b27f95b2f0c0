//! Model checkpoints: a binary parameter file plus a JSON sidecar holding
//! the config and training history.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ContentTable, Dkt, EpochRecord, LlmKt, ModelConfig, ModelError, ModelKind, Net, Result, Sakt,
    TrainedModel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub history: Vec<EpochRecord>,
    pub param_count: usize,
    pub best_epoch: Option<usize>,
}

/// `model.ktpm` -> `model.ktpm.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_model(m: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    numkit::save_params(m.net.as_dyn().params(), path)?;
    let meta = ModelMeta {
        config: m.config.clone(),
        history: m.history.clone(),
        param_count: m.param_count,
        best_epoch: m.best_epoch,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Loads a checkpoint. The content model additionally needs its content
/// table, which is not part of the checkpoint.
pub fn load_model(path: impl AsRef<Path>, content: Option<ContentTable>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let meta: ModelMeta = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let params = numkit::load_params(path)?;
    let cfg = meta.config.clone();
    let bad = |e: ModelError| ModelError::Checkpoint(format!("{}: {e}", path.display()));
    let net = match cfg.kind {
        ModelKind::Dkt => Net::Dkt(Dkt::from_params(cfg.clone(), params).map_err(bad)?),
        ModelKind::Sakt => Net::Sakt(Sakt::from_params(cfg.clone(), params).map_err(bad)?),
        ModelKind::Llmkt => {
            let content = content.ok_or_else(|| {
                ModelError::Config("the content model needs an embedding cache to load".into())
            })?;
            Net::Llmkt(LlmKt::from_params(cfg.clone(), content, params).map_err(bad)?)
        }
        ModelKind::Bias => {
            return Err(ModelError::Checkpoint(
                "bias baselines have no parameter file".into(),
            ))
        }
    };
    let count = super::param_count(net.as_dyn().params());
    if count != meta.param_count {
        return Err(ModelError::Checkpoint(format!(
            "sidecar says {} parameters, file has {count}",
            meta.param_count
        )));
    }
    Ok(TrainedModel {
        config: cfg,
        net,
        history: meta.history,
        param_count: count,
        best_epoch: meta.best_epoch,
    })
}
