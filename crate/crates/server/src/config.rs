use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use disclosure_core::game_core::SessionConfig;
use disclosure_core::puzzle_gen::{Bundle, Template};
use disclosure_core::signal_rubric::RubricParams;
use serde::Deserialize;

use crate::ServerError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    pub admin_token: String,
    /// Directories written by `genpuzzle`.
    #[serde(default)]
    pub bundles: Vec<PathBuf>,
    /// Puzzles generated in memory at startup.
    #[serde(default)]
    pub generate: Vec<GenerateSpec>,
    /// Sessions created at startup unless their log already exists.
    #[serde(default)]
    pub sessions: Vec<SessionSeed>,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub template: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSeed {
    pub id: String,
    pub config: SessionConfig,
    pub roster: Vec<String>,
}

fn default_bind() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("static address")
}

fn default_snapshot_every() -> u64 {
    50
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>, admin_token: impl Into<String>) -> Self {
        Self {
            bind: default_bind(),
            data_dir: data_dir.into(),
            admin_token: admin_token.into(),
            bundles: Vec::new(),
            generate: Vec::new(),
            sessions: Vec::new(),
            snapshot_every: default_snapshot_every(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ServerError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ServerConfig = toml::from_str(&text).map_err(|e| ServerError::Config(e.to_string()))?;
        if cfg.admin_token.trim().is_empty() {
            return Err(ServerError::Config("admin_token must not be empty".into()));
        }
        Ok(cfg)
    }

    /// Loads bundle directories and generates the configured puzzles.
    pub fn load_catalog(&self) -> Result<BTreeMap<String, Arc<Bundle>>, ServerError> {
        let mut out = BTreeMap::new();
        for dir in &self.bundles {
            let b = Bundle::read(dir).map_err(|e| ServerError::Config(format!("{}: {e}", dir.display())))?;
            out.insert(b.puzzle.id.clone(), Arc::new(b));
        }
        for g in &self.generate {
            let t = Template::from_name(&g.template)
                .ok_or_else(|| ServerError::Config(format!("unknown template {:?}", g.template)))?;
            let b = Bundle::generate(t, g.seed, &RubricParams::default())
                .map_err(|e| ServerError::Config(e.to_string()))?;
            out.insert(b.puzzle.id.clone(), Arc::new(b));
        }
        Ok(out)
    }
}
