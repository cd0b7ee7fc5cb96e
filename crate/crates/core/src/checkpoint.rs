//! Persisted artifacts: policy checkpoints and tuned parameter documents.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "ADNSCKPT"
//! version    u32
//! meta_len   u64
//! meta       meta_len bytes of JSON (configs, shapes, optimiser scalars)
//! theta      u64 count, then count × f64
//! adam m     u64 count, then count × f64
//! adam v     u64 count, then count × f64
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::enhancer::{ParameterSet, ParameterSpace};
use crate::error::{Error, Result};
use crate::policy::{AdamState, PolicyParameters, PolicyShape};
use crate::trainer::{BaselineEstimator, PolicySetup, RewardNormalizer, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADNSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const PARAMS_VERSION: u32 = 1;

/// Complete training state: weights, optimiser, reward and baseline
/// statistics, and the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub theta: PolicyParameters,
    pub adam: AdamState,
    pub normalizer: RewardNormalizer,
    pub baseline: BaselineEstimator,
    pub setup: PolicySetup,
    pub train: TrainConfig,
    /// Root seed of the run.
    pub seed: u64,
    pub episodes: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    shape: PolicyShape,
    adam_step_count: u64,
    adam_learning_rate: f64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_epsilon: f64,
    normalizer: RewardNormalizer,
    baseline: BaselineEstimator,
    setup: PolicySetup,
    train: TrainConfig,
    seed: u64,
    episodes: u64,
}

fn put_array(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Parse("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array(&mut self) -> Result<Vec<f64>> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::Parse("array length overflow".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Parse("array length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            shape: self.theta.shape(),
            adam_step_count: self.adam.step_count,
            adam_learning_rate: self.adam.learning_rate,
            adam_beta1: self.adam.beta1,
            adam_beta2: self.adam.beta2,
            adam_epsilon: self.adam.epsilon,
            normalizer: self.normalizer,
            baseline: self.baseline,
            setup: self.setup.clone(),
            train: self.train.clone(),
            seed: self.seed,
            episodes: self.episodes,
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Parse(e.to_string()))?;
        let mut out = Vec::with_capacity(32 + json.len() + 24 * self.theta.as_slice().len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        put_array(&mut out, self.theta.as_slice());
        put_array(&mut out, &self.adam.first_moment);
        put_array(&mut out, &self.adam.second_moment);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::UnsupportedFormat("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedFormat(format!("checkpoint version {version}")));
        }
        let meta_len = usize::try_from(r.u64()?).map_err(|_| Error::Parse("metadata length overflow".into()))?;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Parse(format!("checkpoint metadata: {e}")))?;
        let theta = PolicyParameters::from_values(meta.shape, r.array()?)?;
        let first_moment = r.array()?;
        let second_moment = r.array()?;
        if r.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes after checkpoint".into()));
        }
        let n = theta.as_slice().len();
        if first_moment.len() != n || second_moment.len() != n {
            return Err(Error::Parse("optimiser moments do not match parameter count".into()));
        }
        if !theta.is_finite() {
            return Err(Error::Numeric("checkpoint contains non-finite weights".into()));
        }
        Ok(Self {
            theta,
            adam: AdamState {
                first_moment,
                second_moment,
                step_count: meta.adam_step_count,
                learning_rate: meta.adam_learning_rate,
                beta1: meta.adam_beta1,
                beta2: meta.adam_beta2,
                epsilon: meta.adam_epsilon,
            },
            normalizer: meta.normalizer,
            baseline: meta.baseline,
            setup: meta.setup,
            train: meta.train,
            seed: meta.seed,
            episodes: meta.episodes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Fixed parameter set produced by offline tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub version: u32,
    pub params: ParameterSet,
    pub space: ParameterSpace,
    pub objective: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl ParamsDocument {
    pub fn new(params: ParameterSet, space: ParameterSpace, objective: f64, iterations: usize, seed: u64) -> Self {
        Self {
            version: PARAMS_VERSION,
            params,
            space,
            objective,
            iterations,
            seed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Self = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if doc.version != PARAMS_VERSION {
            return Err(Error::UnsupportedFormat(format!("parameter document version {}", doc.version)));
        }
        doc.space.validate()?;
        doc.space.check(&doc.params)?;
        Ok(doc)
    }
}
