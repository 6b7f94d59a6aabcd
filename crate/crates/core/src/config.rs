//! Runtime configuration loaded from TOML with environment overlays.
//!
//! ```toml
//! projection_seed = 24301
//! evolution_interval = 0.1
//! provider = "deterministic-local"
//!
//! [field]
//! grid_size = 128
//! diffusion = 0.02
//!
//! [weights]
//! w_sim = 0.6
//! w_field = 0.15
//! w_importance = 0.15
//! w_recency = 0.1
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, LocalEmbedder, ProviderKind, RemoteConfig, RemoteEmbedder};
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::retrieval::RetrievalWeights;
use crate::store::{StoreConfig, DEFAULT_PROJECTION_SEED, DEFAULT_RECENCY_TAU};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub field: FieldParams,
    pub weights: RetrievalWeights,
    pub projection_seed: u64,
    pub recency_tau: f64,
    /// Defaults to `field.dt`.
    pub evolution_interval: Option<f64>,
    pub prune_every: u64,
    pub provider: ProviderKind,
    pub remote: RemoteConfig,
    pub snapshot: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            field: FieldParams::default(),
            weights: RetrievalWeights::default(),
            projection_seed: DEFAULT_PROJECTION_SEED,
            recency_tau: DEFAULT_RECENCY_TAU,
            evolution_interval: None,
            prune_every: 1,
            provider: ProviderKind::DeterministicLocal,
            remote: RemoteConfig::default(),
            snapshot: None,
        }
    }
}

impl Config {
    /// Parse and validate a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Config =
            toml::from_str(text).map_err(|e| Error::InvalidParams(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Overlay the `EMBED_*` environment variables onto the remote settings.
    pub fn apply_env(&mut self) -> Result<()> {
        self.remote.apply_env()
    }

    pub fn validate(&self) -> Result<()> {
        self.store_config().validate()?;
        if self.provider == ProviderKind::Remote && self.remote.dimension == 0 {
            return Err(Error::InvalidParams(
                "remote.dimension must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            params: self.field,
            projection_seed: self.projection_seed,
            weights: self.weights,
            recency_tau: self.recency_tau,
            evolution_interval: self.evolution_interval.unwrap_or(self.field.dt),
            prune_every: self.prune_every,
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        match self.provider {
            ProviderKind::DeterministicLocal => Ok(Arc::new(LocalEmbedder::default())),
            ProviderKind::Remote => Ok(Arc::new(RemoteEmbedder::new(self.remote.clone()))),
            ProviderKind::Precomputed => Err(Error::InvalidParams(
                "the precomputed provider is library-only; use deterministic-local or remote"
                    .into(),
            )),
        }
    }
}
