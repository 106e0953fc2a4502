//! Run configuration files.
//!
//! ```toml
//! preset = "advection2d"      # optional: start from a tuned preset
//! data = "train.lrnrd"        # optional, overridden by --data
//! out = "model.ckpt"          # optional, overridden by --out
//! history = "history.csv"     # optional, overridden by --history
//!
//! [model]
//! width = 64
//! rank = 8                    # or ranks = { weight = [8, 8, 8], bias = [8, 8, 0] }
//! depth = 3
//! hyper_width = 10
//! hyper_depth = 3
//!
//! [train]
//! epochs = 20000
//! lambda_ortho = 1e-2
//! ```

use std::path::{Path, PathBuf};

use lrnr_core::hypernet::ModelShape;
use lrnr_core::lrnr::{Activation, RankSpec};
use lrnr_core::training::{preset, TrainConfig};
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    /// Uniform rank per block; ignored when `ranks` is given.
    pub rank: usize,
    pub ranks: Option<RankSpec>,
    pub depth: usize,
    pub output_bias_rank: usize,
    pub hyper_width: usize,
    pub hyper_depth: usize,
    pub activation: String,
    pub hyper_activation: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            width: 64,
            rank: 8,
            ranks: None,
            depth: 3,
            output_bias_rank: 0,
            hyper_width: 10,
            hyper_depth: 3,
            activation: "relu".into(),
            hyper_activation: "tanh".into(),
        }
    }
}

impl ModelSection {
    pub fn shape(&self, input_dim: usize, output_dim: usize) -> Result<ModelShape, CliError> {
        let ranks = match &self.ranks {
            Some(r) => r.clone(),
            None => RankSpec::uniform(self.depth, self.rank, self.output_bias_rank)?,
        };
        if ranks.depth() != self.depth {
            return Err(CliError::Config(format!(
                "ranks describe {} layers but depth is {}",
                ranks.depth(),
                self.depth
            )));
        }
        Ok(ModelShape {
            input_dim,
            output_dim,
            width: self.width,
            ranks,
            activation: Activation::parse(&self.activation)?,
            hyper_width: self.hyper_width,
            hyper_depth: self.hyper_depth,
            hyper_activation: Activation::parse(&self.hyper_activation)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub history: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Values in `over` replace those in `base`; tables merge recursively.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn preset_table(name: &str) -> Result<Table, CliError> {
    let p = preset(name).ok_or_else(|| CliError::Config(format!("unknown preset `{name}`")))?;
    let mut model = Table::new();
    for (k, v) in [
        ("width", p.width),
        ("rank", p.rank),
        ("depth", p.depth),
        ("hyper_width", p.hyper_width),
        ("hyper_depth", p.hyper_depth),
    ] {
        model.insert(k.into(), Value::Integer(v as i64));
    }
    let train = Table::try_from(p.train_config()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut t = Table::new();
    t.insert("model".into(), Value::Table(model));
    t.insert("train".into(), Value::Table(train));
    Ok(t)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let user: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let merged = match user.get("preset") {
            Some(Value::String(name)) => {
                let mut base = preset_table(name)?;
                merge(&mut base, user);
                base
            }
            Some(_) => return Err(CliError::Config("`preset` must be a string".into())),
            None => user,
        };
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse("[train]\nepochs = 7\n").unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.model, ModelSection::default());
    }

    #[test]
    fn preset_then_user_values() {
        let cfg = RunConfig::parse("preset = \"burgers2d\"\n[model]\nwidth = 32\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.model.width, 32);
        assert_eq!(cfg.model.rank, 170);
        assert_eq!(cfg.train.lambda_sparse, 2.71e-11);
        assert_eq!(cfg.train.gamma, 1.05);
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("[train]\nepoch = 7\n").is_err());
        assert!(RunConfig::parse("[model]\nwidht = 7\n").is_err());
        assert!(RunConfig::parse("colour = 1\n").is_err());
        assert!(RunConfig::parse("preset = \"nope\"\n").is_err());
    }

    #[test]
    fn explicit_ranks() {
        let cfg = RunConfig::parse("[model]\ndepth = 2\nranks = { weight = [2, 1], bias = [1, 0] }\n").unwrap();
        let shape = cfg.model.shape(1, 1).unwrap();
        assert_eq!(shape.ranks.total(), 4);
    }
}
