//! The structured config file. Precedence is flag > environment > file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use spacetime::curation::{CurationConfig, Judge};
use spacetime::ingestion::DEFAULT_TARGET_FPS;
use spacetime::{EpisodeConfig, Error, Result, SelectionConfig};

pub const ENV_MODEL_URL: &str = "LAST_MODEL_URL";
pub const ENV_TOOLS_URL: &str = "LAST_TOOLS_URL";
pub const ENV_EMBED_URL: &str = "LAST_EMBED_URL";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub selection: SelectionConfig,
    pub episode: EpisodeConfig,
    pub curation: CurationSection,
    pub endpoints: Endpoints,
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSection {
    pub judge: Judge,
    pub workers: usize,
    pub target_fps: f64,
    pub initial_frames: usize,
}

impl Default for CurationSection {
    fn default() -> Self {
        Self {
            judge: Judge::Auto,
            workers: 4,
            target_fps: DEFAULT_TARGET_FPS,
            initial_frames: 16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub model: Option<String>,
    pub tools: Option<String>,
    pub embed: Option<String>,
}

/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        let p = &mut cfg.paths;
        for path in [&mut p.manifest, &mut p.embeddings, &mut p.fixtures, &mut p.corpus, &mut p.output]
            .into_iter()
            .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        for input in [&p.manifest, &p.embeddings, &p.fixtures, &p.corpus].into_iter().flatten() {
            if !input.exists() {
                return Err(Error::InvalidConfig(format!("{}: no such file", input.display())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The file at `path` if given, else defaults; then environment overrides.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        let e = &mut self.endpoints;
        for (key, slot) in [(ENV_MODEL_URL, &mut e.model), (ENV_TOOLS_URL, &mut e.tools), (ENV_EMBED_URL, &mut e.embed)] {
            if let Some(v) = var(key).filter(|v| !v.is_empty()) {
                *slot = Some(v);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.episode.validate()?;
        if self.curation.initial_frames == 0 {
            return Err(Error::InvalidConfig("curation.initial_frames must be at least 1".into()));
        }
        Ok(())
    }

    pub fn curation(&self) -> CurationConfig {
        CurationConfig {
            episode: self.episode.clone(),
            selection: self.selection,
            judge: self.curation.judge,
            target_fps: self.curation.target_fps,
            initial_frames: self.curation.initial_frames,
        }
    }
}
