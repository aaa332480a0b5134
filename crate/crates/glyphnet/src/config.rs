//! Whole-pipeline configuration: defaults, a flat `key=value` config file
//! with section dots (`render.width=150`), and override application order
//! defaults -> file -> command-line flags.

use crate::error::{Error, Result};
use crate::glyphs::GenerationConfig;
use crate::model::{ModelConfig, TrainConfig};
use crate::render::RenderConfig;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub domains: PathBuf,
    /// Glyph pool file; the built-in pool when absent.
    pub pool: Option<PathBuf>,
    pub workdir: PathBuf,
    pub render: RenderConfig,
    pub generation: GenerationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// train/val/test fractions.
    pub ratios: (f64, f64, f64),
    /// Single global seed; each stage hashes its own stream out of it.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            domains: PathBuf::from("data/top_domains_10k.txt"),
            pool: None,
            workdir: PathBuf::from("glyphnet-work"),
            render: RenderConfig::default(),
            generation: GenerationConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ratios: (0.7, 0.2, 0.1),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// Apply every `key=value` line of a config file in order. `#` comments
    /// and blank lines are skipped; errors carry the file and line.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let located = |msg: String| {
                Error::InvalidConfig(format!("{} line {}: {msg}", path.display(), i + 1))
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| located(format!("expected key=value, got {line:?}")))?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::InvalidConfig(msg) => located(msg),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Apply one setting by its config key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, value)?,
            "paths.domains" => self.domains = PathBuf::from(value),
            "paths.pool" => self.pool = Some(PathBuf::from(value)),
            "paths.workdir" => self.workdir = PathBuf::from(value),
            "split.train" => self.ratios.0 = num(key, value)?,
            "split.val" => self.ratios.1 = num(key, value)?,
            "split.test" => self.ratios.2 = num(key, value)?,
            "render.width" => self.render.width = num(key, value)?,
            "render.height" => self.render.height = num(key, value)?,
            "render.font_px" => self.render.font_px = num(key, value)?,
            "render.left_margin" => self.render.left_margin = num(key, value)?,
            "render.foreground" => self.render.foreground = num(key, value)?,
            "render.background" => self.render.background = num(key, value)?,
            "generation.noise_k" => self.generation.noise_k = num(key, value)?,
            "generation.sigma_scale" => self.generation.sigma_scale = num(key, value)?,
            "model.input_h" => self.model.input_h = num(key, value)?,
            "model.input_w" => self.model.input_w = num(key, value)?,
            "model.filters" => self.model.filters = filters(key, value)?,
            "model.kernel" => self.model.kernel = num(key, value)?,
            "model.reduction" => self.model.reduction = num(key, value)?,
            "model.spatial_kernel" => self.model.spatial_kernel = num(key, value)?,
            "model.hidden" => self.model.hidden = num(key, value)?,
            "model.threshold" => self.model.threshold = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.lr" => self.train.lr = num(key, value)?,
            "train.max_epochs" => self.train.max_epochs = num(key, value)?,
            "train.patience" => self.train.patience = num(key, value)?,
            "train.min_delta" => self.train.min_delta = num(key, value)?,
            _ => {
                return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key}: cannot parse {value:?} ({e})")))
}

/// Comma-separated per-block filter counts, exactly four.
fn filters(key: &str, value: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::InvalidConfig(format!(
            "{key}: expected four comma-separated counts, got {value:?}"
        )));
    }
    let mut out = [0usize; 4];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = num(key, part)?;
    }
    Ok(out)
}
