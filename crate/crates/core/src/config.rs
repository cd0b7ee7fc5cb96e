//! Run configuration, parsed strictly from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::dsp::{FRAME_SIZE, HOP, SAMPLE_RATE};
use crate::enhancer::{Enhancer, ParameterSpace};
use crate::error::{Error, Result};
use crate::metrics::{NelderMeadOptions, TuneWeights};
use crate::policy::PolicyConfig;
use crate::trainer::{ActionMode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspConfig {
    pub frame_size: usize,
    pub hop: usize,
    pub window: String,
    pub sample_rate: u32,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            frame_size: FRAME_SIZE,
            hop: HOP,
            window: "hann".into(),
            sample_rate: SAMPLE_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhancerConfig {
    pub lead_in_frames: usize,
    pub space: ParameterSpace,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            lead_in_frames: Enhancer::default().lead_in_frames,
            space: ParameterSpace::default(),
        }
    }
}

impl EnhancerConfig {
    pub fn enhancer(&self) -> Enhancer {
        Enhancer {
            lead_in_frames: self.lead_in_frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub synth: SynthConfig,
    pub snr_grid: Vec<f64>,
    pub ratios: [f64; 3],
    pub use_rir: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            snr_grid: vec![0.0, 10.0, 20.0, 30.0],
            ratios: [75.0, 15.0, 15.0],
            use_rir: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub nelder_mead: NelderMeadOptions,
    pub weights: TuneWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: String,
    pub action_mode: ActionMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: "test".into(),
            action_mode: ActionMode::Sample,
        }
    }
}

/// Output locations; relative paths resolve against `root`, and a relative
/// `root` against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub root: PathBuf,
    pub corpus: PathBuf,
    pub manifest: PathBuf,
    pub mixed: PathBuf,
    pub params: PathBuf,
    pub train: PathBuf,
    pub eval: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            root: "work".into(),
            corpus: "corpus".into(),
            manifest: "manifest.json".into(),
            mixed: "mixed".into(),
            params: "baseline_params.json".into(),
            train: "train".into(),
            eval: "eval".into(),
        }
    }
}

impl PathsConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Root of every random sub-stream.
    pub seed: u64,
    pub dsp: DspConfig,
    pub enhancer: EnhancerConfig,
    pub policy: PolicyConfig,
    pub trainer: TrainConfig,
    pub tune: TuneConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        let d = &self.dsp;
        if d.frame_size != FRAME_SIZE || d.hop != HOP || !d.window.eq_ignore_ascii_case("hann") {
            return Err(Error::Config(format!(
                "dsp: only frame_size = {FRAME_SIZE}, hop = {HOP}, window = \"hann\" are supported"
            )));
        }
        if d.sample_rate != SAMPLE_RATE || self.data.synth.sample_rate != SAMPLE_RATE {
            return Err(Error::Config(format!("sample rate must be {SAMPLE_RATE} Hz")));
        }
        self.enhancer.enhancer().validate().map_err(cfg_err)?;
        self.enhancer.space.validate().map_err(cfg_err)?;
        self.policy.validate().map_err(cfg_err)?;
        self.trainer.validate().map_err(cfg_err)?;
        self.tune.nelder_mead.validate().map_err(cfg_err)?;
        self.data.synth.validate().map_err(cfg_err)?;
        if self.data.snr_grid.is_empty() || self.data.snr_grid.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("data.snr_grid must be non-empty and finite".into()));
        }
        crate::data::split_sizes(1, self.data.ratios).map_err(cfg_err)?;
        self.eval.split.parse::<crate::data::Split>().map_err(cfg_err)?;
        Ok(())
    }
}
