use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Topology;
use crate::error::{Error, Result};
use crate::moe::{HeadConfig, HeadKind};

/// Environment variable overriding the default seed.
pub const SEED_ENV: &str = "MOEDEP_SEED";
pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inputs {
    Both,
    ReadOnly,
    InterviewOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Block,
    Concat,
    None,
}

/// Architecture, training hyperparameters and ablation switches.
///
/// Serialized as flat TOML; unknown keys are rejected. Every key is
/// optional and falls back to [`ModelConfig::default`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub inputs: Inputs,
    pub fusion: FusionKind,
    /// Signed square root and L2 normalization inside block fusion.
    pub fusion_normalize: bool,
    pub encoder_shared: bool,
    pub encoder_topology: Topology,
    pub head: HeadKind,
    /// Defaults to 4 for the sparse head and 3 for the μMoE heads.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_experts: Option<usize>,
    pub k: usize,
    pub cp_rank: usize,
    pub tr_ranks: [usize; 3],
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            inputs: Inputs::Both,
            fusion: FusionKind::Block,
            fusion_normalize: true,
            encoder_shared: true,
            encoder_topology: Topology::Tiny,
            head: HeadKind::TrMumoe,
            n_experts: None,
            k: 3,
            cp_rank: 4,
            tr_ranks: [4, 4, 4],
            alpha: 0.1,
            lr: 1e-4,
            epochs: 30,
            batch_size: 8,
            folds: 5,
            runs: 4,
            seed: default_seed(),
        }
    }
}

/// [`DEFAULT_SEED`] unless the `MOEDEP_SEED` environment variable holds an integer.
pub fn default_seed() -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_SEED)
}

impl ModelConfig {
    pub fn n_experts(&self) -> usize {
        self.n_experts
            .unwrap_or_else(|| self.head.default_experts())
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            kind: self.head,
            input_dim: crate::encoder::EMBEDDING_DIM,
            n_experts: self.n_experts(),
            k: self.k,
            cp_rank: self.cp_rank,
            tr_ranks: self.tr_ranks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let single = self.inputs != Inputs::Both;
        if single != (self.fusion == FusionKind::None) {
            return Err(Error::Config(
                "fusion = \"none\" is required exactly when a single input branch is used".into(),
            ));
        }
        let n = self.n_experts();
        if n == 0 {
            return Err(Error::Config("n_experts must be positive".into()));
        }
        if self.head == HeadKind::SparseMoe && (self.k == 0 || self.k > n) {
            return Err(Error::Config(format!(
                "k must be in 1..={n}, got {}",
                self.k
            )));
        }
        if self.cp_rank == 0 || self.tr_ranks.contains(&0) {
            return Err(Error::Config("ranks must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.runs == 0 {
            return Err(Error::Config(
                "epochs, batch_size and runs must be positive".into(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ModelConfig {
            head: HeadKind::SparseMoe,
            n_experts: Some(8),
            seed: 11,
            ..Default::default()
        };
        assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ModelConfig::from_toml("learning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ModelConfig::from_toml("head = \"cp_mumoe\"\nepochs = 2\n").unwrap();
        assert_eq!(cfg.head, HeadKind::CpMumoe);
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.n_experts(), 3);
    }

    #[test]
    fn single_branch_needs_no_fusion() {
        let cfg = ModelConfig {
            inputs: Inputs::ReadOnly,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            inputs: Inputs::ReadOnly,
            fusion: FusionKind::None,
            ..Default::default()
        };
        assert!(cfg.validate().is_ok());
    }
}
