//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::{ClipConfig, ShapeKind};
use crate::error::{Error, Result};
use crate::losses::{LossMode, LossWeights, DISC_WIDTHS};
use crate::model::{BipnConfig, NOISE_DIM};
use crate::scalar::DType;
use crate::tensor::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    /// Fixed random conv network.
    Conv,
    Identity,
}

impl ExtractorKind {
    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::Conv => "conv",
            ExtractorKind::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub precision: DType,
    pub seed: u64,
    pub iterations: u64,
    pub batch_size: usize,
    pub mode: LossMode,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Evaluate on the held-out set every this many iterations; 0 disables.
    pub eval_every: u64,
    pub eval_clips: usize,
    pub output_dir: Option<PathBuf>,
    pub model: BipnConfig,
    pub extractor: ExtractorKind,
    pub disc_channels: [usize; 3],
    pub n_shapes: usize,
    pub velocity_range: (u32, u32),
    pub size_range: (u32, u32),
    pub kinds: Vec<ShapeKind>,
    /// Train on a directory of clips instead of generated shapes.
    pub data_dir: Option<PathBuf>,
    /// Held-out clips for directory training.
    pub eval_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let clip = ClipConfig::default();
        Self {
            precision: DType::F32,
            seed: 0,
            iterations: 2000,
            batch_size: 8,
            mode: LossMode::Deterministic,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            eval_every: 0,
            eval_clips: 64,
            output_dir: None,
            model: BipnConfig::default(),
            extractor: ExtractorKind::Conv,
            disc_channels: DISC_WIDTHS,
            n_shapes: clip.n_shapes,
            velocity_range: clip.velocity_range,
            size_range: clip.size_range,
            kinds: Vec::new(),
            data_dir: None,
            eval_dir: None,
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("`{key}={value}`: expected {expected}"))
}

fn num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value.parse().map_err(|_| bad(key, value, "a number"))
}

fn triple(key: &str, value: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad(key, value, "three comma-separated widths"));
    }
    Ok([
        num(key, parts[0])?,
        num(key, parts[1])?,
        num(key, parts[2])?,
    ])
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl TrainConfig {
    /// Every accepted key, in the order [`TrainConfig::to_text`] writes them.
    pub const KEYS: [&'static str; 32] = [
        "precision",
        "seed",
        "iterations",
        "batch_size",
        "mode",
        "w_rec",
        "w_feat",
        "w_adv",
        "lr",
        "beta1",
        "beta2",
        "epsilon",
        "eval_every",
        "eval_clips",
        "output_dir",
        "scales",
        "frames",
        "resolution",
        "channels",
        "enc_channels",
        "dec_channels",
        "noise",
        "extractor",
        "disc_channels",
        "n_shapes",
        "velocity_min",
        "velocity_max",
        "size_min",
        "size_max",
        "kinds",
        "data_dir",
        "eval_dir",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "precision" => {
                self.precision = match value {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(bad(key, value, "f32 or f64")),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "mode" => {
                self.mode = LossMode::parse(value)
                    .ok_or_else(|| bad(key, value, "deterministic or multimodal"))?
            }
            "w_rec" => self.weights.rec = num(key, value)?,
            "w_feat" => self.weights.feat = num(key, value)?,
            "w_adv" => self.weights.adv = num(key, value)?,
            "lr" => self.adam.learning_rate = num(key, value)?,
            "beta1" => self.adam.beta1 = num(key, value)?,
            "beta2" => self.adam.beta2 = num(key, value)?,
            "epsilon" => self.adam.epsilon = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_clips" => self.eval_clips = num(key, value)?,
            "output_dir" => self.output_dir = opt_path(value),
            "scales" => self.model.scales = num(key, value)?,
            "frames" => self.model.frames = num(key, value)?,
            "resolution" => self.model.resolution = num(key, value)?,
            "channels" => self.model.channels = num(key, value)?,
            "enc_channels" => self.model.enc_channels = triple(key, value)?,
            "dec_channels" => self.model.dec_channels = triple(key, value)?,
            "noise" => self.model.noise_dim = flag(key, value)?.then_some(NOISE_DIM),
            "extractor" => {
                self.extractor = match value {
                    "conv" => ExtractorKind::Conv,
                    "identity" => ExtractorKind::Identity,
                    _ => return Err(bad(key, value, "conv or identity")),
                }
            }
            "disc_channels" => self.disc_channels = triple(key, value)?,
            "n_shapes" => self.n_shapes = num(key, value)?,
            "velocity_min" => self.velocity_range.0 = num(key, value)?,
            "velocity_max" => self.velocity_range.1 = num(key, value)?,
            "size_min" => self.size_range.0 = num(key, value)?,
            "size_max" => self.size_range.1 = num(key, value)?,
            "kinds" => {
                self.kinds = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|k| {
                            ShapeKind::parse(k.trim())
                                .ok_or_else(|| bad(key, value, "circle, square or triangle"))
                        })
                        .collect::<Result<_>>()?
                }
            }
            "data_dir" => self.data_dir = opt_path(value),
            "eval_dir" => self.eval_dir = opt_path(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: `{line}` is not key=value", n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Canonical text form; parsing it reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("precision", self.precision.name().to_string());
        kv("seed", self.seed.to_string());
        kv("iterations", self.iterations.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("mode", self.mode.name().to_string());
        kv("w_rec", self.weights.rec.to_string());
        kv("w_feat", self.weights.feat.to_string());
        kv("w_adv", self.weights.adv.to_string());
        kv("lr", self.adam.learning_rate.to_string());
        kv("beta1", self.adam.beta1.to_string());
        kv("beta2", self.adam.beta2.to_string());
        kv("epsilon", self.adam.epsilon.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("eval_clips", self.eval_clips.to_string());
        kv("output_dir", path_text(&self.output_dir));
        kv("scales", self.model.scales.to_string());
        kv("frames", self.model.frames.to_string());
        kv("resolution", self.model.resolution.to_string());
        kv("channels", self.model.channels.to_string());
        kv("enc_channels", join(&self.model.enc_channels));
        kv("dec_channels", join(&self.model.dec_channels));
        kv("noise", self.model.noise_enabled().to_string());
        kv("extractor", self.extractor.name().to_string());
        kv("disc_channels", join(&self.disc_channels));
        kv("n_shapes", self.n_shapes.to_string());
        kv("velocity_min", self.velocity_range.0.to_string());
        kv("velocity_max", self.velocity_range.1.to_string());
        kv("size_min", self.size_range.0.to_string());
        kv("size_max", self.size_range.1.to_string());
        kv(
            "kinds",
            self.kinds
                .iter()
                .map(|k| k.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("data_dir", path_text(&self.data_dir));
        kv("eval_dir", path_text(&self.eval_dir));
        s
    }

    /// Generated-clip settings: `l + 2` frames at the model resolution.
    pub fn clip_config(&self) -> ClipConfig {
        ClipConfig {
            frames: self.model.frames + 2,
            n_shapes: self.n_shapes,
            channels: self.model.channels,
            height: self.model.resolution,
            width: self.model.resolution,
            velocity_range: self.velocity_range,
            size_range: self.size_range,
            kinds: self.kinds.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.mode == LossMode::Multimodal && !self.model.noise_enabled() {
            return Err(Error::Config("multimodal mode requires noise=true".into()));
        }
        let w = self.weights;
        if [w.rec, w.feat, w.adv]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        let a = self.adam;
        if !(a.learning_rate > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon > 0.0)
        {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        if self.disc_channels.contains(&0) {
            return Err(Error::Config("disc_channels must be positive".into()));
        }
        self.model.validate()?;
        if self.data_dir.is_none() {
            self.clip_config().validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = TrainConfig::default();
        cfg.set("lr", "0.0007").unwrap();
        cfg.set("kinds", "circle,triangle").unwrap();
        cfg.set("n_shapes", "2").unwrap();
        cfg.set("noise", "true").unwrap();
        cfg.set("output_dir", "/tmp/run").unwrap();
        cfg.set("precision", "f64").unwrap();
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
        for key in TrainConfig::KEYS {
            assert!(cfg.to_text().contains(&format!("\n{key}=")) || cfg.to_text().starts_with(key));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::from_text("bogus=1").is_err());
        assert!(TrainConfig::from_text("seed").is_err());
        assert!(TrainConfig::from_text("seed=x").is_err());
        assert!(TrainConfig::from_text("# comment\n\nseed=3").unwrap().seed == 3);
        let cfg = TrainConfig::from_text("mode=multimodal").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig::from_text("iterations=0").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig::from_text("resolution=36").unwrap();
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
