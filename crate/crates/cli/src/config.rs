//! Run configuration: a TOML file, then `--set key=value` overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ktbench::bench::{CostModel, LatencyConfig};
use ktbench::llm::EndpointConfig;
use ktbench::models::{ModelConfig, ModelKind, TrainConfig};
use ktbench::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub hidden: Option<usize>,
    pub embed: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub dkt: ModelOverrides,
    pub sakt: ModelOverrides,
    pub llmkt: ModelOverrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Share of students (in id order) used for training; the rest validate.
    pub train_fraction: f64,
    /// Width of synthetic content embeddings.
    pub embed_dim: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_fraction: 2000.0 / 2400.0,
            embed_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialisation and shuffling.
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub models: Models,
    pub latency: LatencyConfig,
    pub cost: CostModel,
    pub endpoint: EndpointConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1234,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            models: Models::default(),
            latency: LatencyConfig::default(),
            cost: CostModel::default(),
            endpoint: EndpointConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn model_config(&self, kind: ModelKind, vocab: usize) -> ModelConfig {
        let o = match kind {
            ModelKind::Dkt => &self.models.dkt,
            ModelKind::Sakt => &self.models.sakt,
            _ => &self.models.llmkt,
        };
        let d = ModelConfig::default_for(kind, vocab);
        ModelConfig {
            hidden: o.hidden.unwrap_or(d.hidden),
            embed: o.embed.unwrap_or(d.embed),
            heads: o.heads.unwrap_or(d.heads),
            layers: o.layers.unwrap_or(d.layers),
            dropout: o.dropout.unwrap_or(d.dropout),
            seed: self.seed,
            ..d
        }
    }
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override `{assignment}` is not of the form key=value");
    };
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let (last, parents) = path.split_last().expect("non-empty");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        table = entry
            .as_table_mut()
            .with_context(|| format!("`{p}` in `{key}` is not a section"))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    load_over(toml::Table::new(), path, overrides)
}

/// Layers `base`, then the file at `path`, then `overrides`.
pub fn load_over(
    base: toml::Table,
    path: Option<&Path>,
    overrides: &[String],
) -> Result<RunConfig> {
    let mut root = base;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .with_context(|| format!("reading config {}", p.display()))?;
        let file: toml::Table = text
            .parse()
            .with_context(|| format!("parsing config {}", p.display()))?;
        merge(&mut root, file);
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(root)
        .try_into()
        .context("invalid configuration")?;
    Ok(cfg)
}
