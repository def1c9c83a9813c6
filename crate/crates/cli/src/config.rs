//! TOML configuration file: one file covers generation, training and
//! network sections; every key has a default, so an empty (or absent) file
//! is a complete desk-scale configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use graphfuse_core::{Construction, GatConfig, GeneratorConfig, TrainConfig};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub generate: GeneratorConfig,
    pub train: TrainSection,
    pub network: NetworkSection,
}

/// Training keys; mirrors the library's training configuration with a flat
/// construction spelling (`construction = "knn"` plus `knn_k`).
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Desk-scale default; set 120 for the full protocol.
    pub epochs: usize,
    pub fraction_min: f64,
    pub fraction_max: f64,
    pub construction: String,
    pub knn_k: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::desk_scale();
        TrainSection {
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            epochs: base.epochs,
            fraction_min: base.fraction_min,
            fraction_max: base.fraction_max,
            construction: "delaunay".to_string(),
            knn_k: 8,
            val_fraction: base.val_fraction,
            seed: base.seed,
        }
    }
}

impl TrainSection {
    pub fn construction(&self) -> Result<Construction> {
        match self.construction.as_str() {
            "delaunay" => Ok(Construction::Delaunay),
            "knn" => Ok(Construction::Knn { k: self.knn_k }),
            other => bail!("unknown construction {other:?} (expected \"delaunay\" or \"knn\")"),
        }
    }

    pub fn to_train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            fraction_min: self.fraction_min,
            fraction_max: self.fraction_max,
            construction: self.construction()?,
            val_fraction: self.val_fraction,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_channels: usize,
    pub heads: usize,
    pub layers: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let base = GatConfig::default();
        NetworkSection {
            hidden_channels: base.hidden_channels,
            heads: base.heads,
            layers: base.layers,
        }
    }
}

impl NetworkSection {
    pub fn to_gat_config(&self, classes: usize) -> GatConfig {
        GatConfig {
            hidden_channels: self.hidden_channels,
            heads: self.heads,
            layers: self.layers,
            classes,
            ..GatConfig::default()
        }
    }
}

impl FileConfig {
    /// Loads the file when given, otherwise the all-defaults configuration.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: FileConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    /// Applies the global `--seed` override to every seeded stage.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.generate.seed = s;
            self.train.seed = s;
        }
    }
}
