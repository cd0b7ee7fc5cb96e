//! Episode rollouts of the policy against the suppressor, reward shaping,
//! variance-reduction baselines and the REINFORCE training loop.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Utterance;
use crate::dsp::{self, Complex64, FeatureVector, FRAME_SIZE};
use crate::enhancer::{self, Enhancer, EnhancerState, ParameterSet, ParameterSpace, Schedule};
use crate::error::{Error, Result};
use crate::metrics;
use crate::policy::{
    self, Action, AdamState, HiddenState, PolicyConfig, PolicyParameters, PolicyShape, StepRef,
};
use crate::rng::{self, Rng};

/// Lower bound of the normaliser's running scale.
pub const NORMALIZER_EPS: f64 = 1e-12;

/// One frame of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub feature: FeatureVector,
    /// Exact vector fed to the LSTM at this step.
    pub input: Vec<f64>,
    pub action: Action,
    pub log_prob: f64,
    /// Normalised reward, the quantity the gradient uses.
    pub reward: f64,
    pub raw_reward: f64,
    pub params_applied: ParameterSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode_id: u64,
    pub records: Vec<StepRecord>,
    pub total_return: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    pub fn raw_return(&self) -> f64 {
        self.records.iter().map(|r| r.raw_reward).sum()
    }

    pub fn params_schedule(&self) -> Vec<ParameterSet> {
        self.records.iter().map(|r| r.params_applied).collect()
    }
}

/// Frame-level negated squared error −Σ(g − ĝ)².
pub fn frame_reward(clean: &[f64], enhanced: &[f64]) -> Result<f64> {
    if clean.len() != enhanced.len() {
        return Err(Error::invalid(format!(
            "frame lengths differ: {} vs {}",
            clean.len(),
            enhanced.len()
        )));
    }
    Ok(-clean
        .iter()
        .zip(enhanced)
        .map(|(g, e)| (g - e).powi(2))
        .sum::<f64>())
}

/// Domain in which the per-frame reward compares clean and enhanced frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardDomain {
    /// Spectral magnitudes of all one-sided bins.
    #[default]
    Magnitude,
    /// Windowed time-domain frames, evaluated through Parseval on the
    /// complex spectra.
    Time,
}

fn spectral_reward(domain: RewardDomain, clean: &[Complex64], enhanced: &[Complex64]) -> Result<f64> {
    match domain {
        RewardDomain::Magnitude => {
            let g: Vec<f64> = clean.iter().map(|c| c.norm()).collect();
            let e: Vec<f64> = enhanced.iter().map(|c| c.norm()).collect();
            frame_reward(&g, &e)
        }
        RewardDomain::Time => {
            if clean.len() != enhanced.len() {
                return Err(Error::invalid("frame lengths differ"));
            }
            let n = clean.len();
            let err: f64 = clean
                .iter()
                .zip(enhanced)
                .enumerate()
                .map(|(k, (a, b))| {
                    let w = if k == 0 || k == n - 1 { 1.0 } else { 2.0 };
                    w * (a - b).norm_sqr()
                })
                .sum();
            Ok(-err / FRAME_SIZE as f64)
        }
    }
}

/// Online scaling of rewards into [−1, 1] by a running max-abs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    pub running_max_abs: f64,
    pub decay: f64,
}

impl RewardNormalizer {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::invalid(format!("normalizer decay {decay} outside (0, 1]")));
        }
        Ok(Self {
            running_max_abs: NORMALIZER_EPS,
            decay,
        })
    }

    /// Normalizer whose running max starts at the max-abs of `rewards`.
    pub fn primed(decay: f64, rewards: &[f64]) -> Result<Self> {
        let mut n = Self::new(decay)?;
        n.running_max_abs = rewards.iter().fold(NORMALIZER_EPS, |m, r| m.max(r.abs()));
        if !n.running_max_abs.is_finite() {
            return Err(Error::Numeric("non-finite reference reward".into()));
        }
        Ok(n)
    }

    pub fn normalize(&mut self, r: f64) -> Result<f64> {
        if !r.is_finite() {
            return Err(Error::Numeric(format!("reward {r} is not finite")));
        }
        self.running_max_abs = (self.decay * self.running_max_abs)
            .max(r.abs())
            .max(NORMALIZER_EPS);
        Ok((r / self.running_max_abs).clamp(-1.0, 1.0))
    }
}

impl Default for RewardNormalizer {
    fn default() -> Self {
        Self {
            running_max_abs: NORMALIZER_EPS,
            decay: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// Plain REINFORCE.
    None,
    /// Running mean over previous episodes of each episode's mean
    /// return-to-go.
    #[default]
    EpisodeMean,
    /// Exponential moving average of the same per-episode means.
    Ema,
    /// Return-to-go of a rollout that holds the episode's initial
    /// parameters fixed on the same utterance.
    Reference,
}

/// Which rewards share one running max.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizerScope {
    /// One normaliser carried across all episodes.
    #[default]
    Global,
    /// A fresh normaliser per utterance, primed with the max-abs of the
    /// fixed-parameter rewards on that utterance.
    Utterance,
}

/// Per-step baseline values b_t subtracted from the return-to-go.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimator {
    pub mode: BaselineMode,
    pub ema_value: f64,
    pub ema_decay: f64,
    pub mean_value: f64,
    pub episodes_seen: u64,
}

impl BaselineEstimator {
    pub fn new(mode: BaselineMode, ema_decay: f64) -> Result<Self> {
        if !(ema_decay > 0.0 && ema_decay < 1.0) {
            return Err(Error::invalid(format!("ema decay {ema_decay} outside (0, 1)")));
        }
        Ok(Self {
            mode,
            ema_value: 0.0,
            ema_decay,
            mean_value: 0.0,
            episodes_seen: 0,
        })
    }

    /// Baselines for `trajectory`; the estimator's history is then updated
    /// with the episode so the values never depend on the episode's own
    /// actions. `reference` carries the normalised rewards of the
    /// fixed-parameter rollout and is only consulted in
    /// [`BaselineMode::Reference`].
    pub fn values(&mut self, trajectory: &Trajectory, reference: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = trajectory.len();
        let rtg = policy::returns_to_go(&trajectory.rewards());
        let episode_mean = if n == 0 { 0.0 } else { rtg.iter().sum::<f64>() / n as f64 };
        let out = match self.mode {
            BaselineMode::None => vec![0.0; n],
            BaselineMode::EpisodeMean => {
                let b = vec![self.mean_value; n];
                self.episodes_seen += 1;
                self.mean_value += (episode_mean - self.mean_value) / self.episodes_seen as f64;
                b
            }
            BaselineMode::Ema => {
                let b = vec![self.ema_value; n];
                self.ema_value = self.ema_decay * self.ema_value + (1.0 - self.ema_decay) * episode_mean;
                self.episodes_seen += 1;
                b
            }
            BaselineMode::Reference => {
                let reference = reference
                    .ok_or_else(|| Error::invalid("reference baseline needs reference rewards"))?;
                if reference.len() != n {
                    return Err(Error::invalid(format!(
                        "reference has {} rewards for {n} steps",
                        reference.len()
                    )));
                }
                self.episodes_seen += 1;
                policy::returns_to_go(reference)
            }
        };
        Ok(out)
    }
}

/// Gradient (ascent direction) of Σ_t log π(s_t)·(R_t − b_t).
pub fn reinforce_gradient(theta: &PolicyParameters, trajectory: &Trajectory, baseline: &[f64]) -> Result<PolicyParameters> {
    if baseline.len() != trajectory.len() {
        return Err(Error::invalid(format!(
            "baseline has {} values for {} steps",
            baseline.len(),
            trajectory.len()
        )));
    }
    let rtg = policy::returns_to_go(&trajectory.rewards());
    let advantages: Vec<f64> = rtg.iter().zip(baseline).map(|(r, b)| r - b).collect();
    let steps: Vec<StepRef<'_>> = trajectory
        .records
        .iter()
        .map(|r| StepRef {
            input: &r.input,
            action: &r.action,
        })
        .collect();
    policy::surrogate_gradient(theta, &steps, &advantages)
}

/// The controller's view of the world: an observation per step and a
/// scalar reward for the parameters chosen at that step.
pub trait Environment {
    fn num_steps(&self) -> usize;

    fn observe(&self, t: usize) -> &FeatureVector;

    /// Applies `params` (already updated by `action`) at step `t`; returns
    /// the raw reward.
    fn step(&mut self, t: usize, action: &Action, params: &ParameterSet) -> Result<f64>;
}

/// The suppressor driven frame by frame; the clean signal is consulted only
/// to score each enhanced frame.
pub struct EnhancerEnv {
    clean: Option<dsp::Spectrogram>,
    noisy: dsp::Spectrogram,
    features: Vec<FeatureVector>,
    state: EnhancerState,
    domain: RewardDomain,
}

impl EnhancerEnv {
    pub fn new(enhancer: &Enhancer, clean: &dsp::AudioSignal, noisy: &dsp::AudioSignal, domain: RewardDomain) -> Result<Self> {
        if clean.len() != noisy.len() || clean.sample_rate != noisy.sample_rate {
            return Err(Error::invalid(format!(
                "clean ({} @ {} Hz) and noisy ({} @ {} Hz) are not aligned",
                clean.len(),
                clean.sample_rate,
                noisy.len(),
                noisy.sample_rate
            )));
        }
        let mut env = Self::without_reference(enhancer, noisy, domain)?;
        env.clean = Some(enhancer::analyze(clean)?);
        Ok(env)
    }

    /// Environment with no clean reference: every reward is 0.
    pub fn without_reference(enhancer: &Enhancer, noisy: &dsp::AudioSignal, domain: RewardDomain) -> Result<Self> {
        let noisy = enhancer::analyze(noisy)?;
        let features = noisy
            .frames
            .iter()
            .map(|f| dsp::features(f))
            .collect::<Result<Vec<_>>>()?;
        let state = enhancer.bootstrap(&noisy)?;
        Ok(Self {
            clean: None,
            noisy,
            features,
            state,
            domain,
        })
    }
}

impl Environment for EnhancerEnv {
    fn num_steps(&self) -> usize {
        self.noisy.num_frames()
    }

    fn observe(&self, t: usize) -> &FeatureVector {
        &self.features[t]
    }

    fn step(&mut self, t: usize, _action: &Action, params: &ParameterSet) -> Result<f64> {
        let out = enhancer::process_frame(&mut self.state, &self.noisy.frames[t], params)?;
        match &self.clean {
            Some(clean) => spectral_reward(self.domain, &clean.frames[t], &out.enhanced_spectrum),
            None => Ok(0.0),
        }
    }
}

/// Bandit used to sanity-check the learner: reward 1 whenever the first
/// head chooses "increase", 0 otherwise. Observations are silent frames.
pub struct BanditEnv {
    steps: usize,
    observation: FeatureVector,
}

impl BanditEnv {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            observation: FeatureVector(vec![0.0; dsp::FEATURE_DIM]),
        }
    }
}

impl Environment for BanditEnv {
    fn num_steps(&self) -> usize {
        self.steps
    }

    fn observe(&self, _t: usize) -> &FeatureVector {
        &self.observation
    }

    fn step(&mut self, _t: usize, action: &Action, _params: &ParameterSet) -> Result<f64> {
        Ok(if action.choices[0] == 1 { 1.0 } else { 0.0 })
    }
}

/// How actions are chosen from the policy's distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionMode {
    #[default]
    Sample,
    Greedy,
}

/// Rollout knobs shared by training and evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions<'a> {
    pub space: &'a ParameterSpace,
    pub initial_params: ParameterSet,
    pub action_mode: ActionMode,
    /// Feed the previous normalised reward back into the policy input.
    pub feed_reward: bool,
}

/// Runs one episode of `env` under `theta`.
pub fn rollout<E: Environment + ?Sized>(
    theta: &PolicyParameters,
    env: &mut E,
    opts: RolloutOptions<'_>,
    normalizer: &mut RewardNormalizer,
    rng: &mut Rng,
    episode_id: u64,
) -> Result<Trajectory> {
    opts.space.check(&opts.initial_params)?;
    let n = env.num_steps();
    let mut params = opts.initial_params;
    let mut state = HiddenState::zeros(theta.shape().hidden);
    let mut prev_reward = 0.0;
    let mut records = Vec::with_capacity(n);
    let mut total = 0.0;
    for t in 0..n {
        let feature = env.observe(t).clone();
        let input = policy::policy_input(
            feature.as_slice(),
            &opts.space.normalize(&params),
            if opts.feed_reward { prev_reward } else { 0.0 },
        );
        state = policy::lstm_step(theta, &input, &state)?;
        let dist = policy::action_distribution(theta, &state.h)?;
        let (action, log_prob) = match opts.action_mode {
            ActionMode::Sample => policy::sample_action(&dist, rng),
            ActionMode::Greedy => policy::greedy_action(&dist),
        };
        params = policy::apply_action(opts.space, &params, &action);
        let raw_reward = env.step(t, &action, &params)?;
        let reward = normalizer.normalize(raw_reward)?;
        total += reward;
        prev_reward = reward;
        records.push(StepRecord {
            feature,
            input,
            action,
            log_prob,
            reward,
            raw_reward,
            params_applied: params,
        });
    }
    Ok(Trajectory {
        episode_id,
        records,
        total_return: total,
    })
}

/// Policy-controlled enhancement of one aligned (clean, noisy) pair.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    theta: &PolicyParameters,
    enhancer: &Enhancer,
    clean: &dsp::AudioSignal,
    noisy: &dsp::AudioSignal,
    opts: RolloutOptions<'_>,
    domain: RewardDomain,
    normalizer: &mut RewardNormalizer,
    rng: &mut Rng,
    episode_id: u64,
) -> Result<Trajectory> {
    let mut env = EnhancerEnv::new(enhancer, clean, noisy, domain)?;
    rollout(theta, &mut env, opts, normalizer, rng, episode_id)
}

/// Raw per-frame rewards of the suppressor run with fixed `params`.
pub fn fixed_rewards(
    enhancer: &Enhancer,
    clean: &dsp::AudioSignal,
    noisy: &dsp::AudioSignal,
    params: &ParameterSet,
    domain: RewardDomain,
) -> Result<Vec<f64>> {
    let mut env = EnhancerEnv::new(enhancer, clean, noisy, domain)?;
    let hold = Action::hold(ParameterSet::COUNT);
    (0..env.num_steps())
        .map(|t| env.step(t, &hold, params))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many episodes in total (0 = no cap).
    pub max_episodes: usize,
    pub baseline_mode: BaselineMode,
    pub ema_decay: f64,
    pub normalizer_decay: f64,
    pub normalizer_scope: NormalizerScope,
    pub reward_domain: RewardDomain,
    pub feed_reward: bool,
    /// Action selection for validation and evaluation rollouts.
    pub eval_action_mode: ActionMode,
    /// Candidate learning rates for validation-driven selection.
    pub lr_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 5,
            max_episodes: 0,
            baseline_mode: BaselineMode::EpisodeMean,
            ema_decay: 0.9,
            normalizer_decay: 1.0,
            normalizer_scope: NormalizerScope::Global,
            reward_domain: RewardDomain::Magnitude,
            feed_reward: true,
            eval_action_mode: ActionMode::Sample,
            lr_grid: vec![1e-2, 3e-3, 1e-3, 3e-4],
        }
    }
}

impl TrainConfig {
    /// Whether episodes need the fixed-parameter rewards of their utterance.
    pub fn needs_reference_rewards(&self) -> bool {
        self.baseline_mode == BaselineMode::Reference || self.normalizer_scope == NormalizerScope::Utterance
    }

    /// Normaliser for one episode: the shared one, or a fresh one primed
    /// from `reference_raw` under utterance scope.
    fn episode_normalizer<'a>(
        &self,
        shared: &'a mut RewardNormalizer,
        local: &'a mut Option<RewardNormalizer>,
        reference_raw: Option<&[f64]>,
    ) -> Result<&'a mut RewardNormalizer> {
        match self.normalizer_scope {
            NormalizerScope::Global => Ok(shared),
            NormalizerScope::Utterance => {
                let raw = reference_raw.ok_or_else(|| Error::invalid("utterance normaliser needs reference rewards"))?;
                Ok(local.insert(RewardNormalizer::primed(self.normalizer_decay, raw)?))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        RewardNormalizer::new(self.normalizer_decay)?;
        BaselineEstimator::new(self.baseline_mode, self.ema_decay)?;
        if self.lr_grid.iter().any(|lr| !(lr.is_finite() && *lr >= 0.0)) {
            return Err(Error::invalid("lr_grid entries must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One line of the per-episode training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub epoch: usize,
    pub utterance_id: String,
    pub seed: u64,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub raw_return: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationLog {
    pub epoch: usize,
    pub episodes: u64,
    /// Raw return under global scope, normalised return under utterance
    /// scope.
    pub mean_return: f64,
    pub snr_db: f64,
    pub lsd: f64,
    pub mse: f64,
}

/// Result of [`train`]: the best-by-validation checkpoint plus logs.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub episodes: Vec<EpisodeLog>,
    pub validation: Vec<ValidationLog>,
    pub wall_times: Vec<f64>,
}

/// Everything a policy rollout needs besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySetup {
    pub enhancer: Enhancer,
    pub space: ParameterSpace,
    pub initial_params: ParameterSet,
    pub policy: PolicyConfig,
}

/// Seed of the rollout stream for `episode`, as recorded in the log.
pub fn episode_seed(root: u64, episode: u64) -> u64 {
    rng::derive_seed(root, "rollout", episode)
}

/// Policy-controlled enhancement of `noisy`. With a `clean` reference the
/// trajectory carries true rewards (fed back to the policy when the run was
/// trained that way); without one every reward is 0.
pub fn enhance_with_policy(
    ckpt: &Checkpoint,
    noisy: &dsp::AudioSignal,
    clean: Option<&dsp::AudioSignal>,
    action_mode: ActionMode,
    seed: u64,
) -> Result<(Trajectory, dsp::AudioSignal)> {
    let setup = &ckpt.setup;
    let mut env = match clean {
        Some(c) => EnhancerEnv::new(&setup.enhancer, c, noisy, ckpt.train.reward_domain)?,
        None => EnhancerEnv::without_reference(&setup.enhancer, noisy, ckpt.train.reward_domain)?,
    };
    let reference = match clean {
        Some(c) if ckpt.train.normalizer_scope == NormalizerScope::Utterance => Some(fixed_rewards(
            &setup.enhancer,
            c,
            noisy,
            &setup.initial_params,
            ckpt.train.reward_domain,
        )?),
        _ => None,
    };
    let mut normalizer = match reference {
        Some(raw) => RewardNormalizer::primed(ckpt.train.normalizer_decay, &raw)?,
        None => ckpt.normalizer,
    };
    let mut rng = rng::substream(seed, "eval", 0);
    let opts = RolloutOptions {
        space: &setup.space,
        initial_params: setup.initial_params,
        action_mode,
        feed_reward: ckpt.train.feed_reward,
    };
    let traj = rollout(&ckpt.theta, &mut env, opts, &mut normalizer, &mut rng, 0)?;
    let schedule = traj.params_schedule();
    let enhanced = setup
        .enhancer
        .enhance_utterance(noisy, Schedule::PerFrame(&schedule))?;
    Ok((traj, enhanced))
}

/// [`enhance_with_policy`] on a manifest utterance, scored against its
/// reference.
pub fn evaluate_utterance(
    ckpt: &Checkpoint,
    utt: &Utterance,
    action_mode: ActionMode,
    seed: u64,
) -> Result<(Trajectory, dsp::AudioSignal)> {
    enhance_with_policy(ckpt, &utt.noisy, Some(&utt.clean), action_mode, seed)
}

fn validate_policy(ckpt: &Checkpoint, val: &[Utterance], epoch: usize, episodes: u64) -> Result<ValidationLog> {
    let mode = ckpt.train.eval_action_mode;
    let seed = ckpt.seed;
    let rows = val
        .par_iter()
        .enumerate()
        .map(|(i, utt)| {
            let (traj, enhanced) = evaluate_utterance(ckpt, utt, mode, rng::derive_seed(seed, "validation", i as u64))?;
            let m = metrics::UtteranceMetrics::compute(&utt.clean, &enhanced)?;
            let ret = match ckpt.train.normalizer_scope {
                NormalizerScope::Global => traj.raw_return(),
                NormalizerScope::Utterance => traj.total_return,
            };
            Ok((ret, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len().max(1) as f64;
    let mut out = ValidationLog {
        epoch,
        episodes,
        mean_return: 0.0,
        snr_db: 0.0,
        lsd: 0.0,
        mse: 0.0,
    };
    for (ret, m) in &rows {
        out.mean_return += ret / n;
        out.snr_db += m.snr_db / n;
        out.lsd += m.lsd / n;
        out.mse += m.mse / n;
    }
    Ok(out)
}

impl Checkpoint {
    /// Untrained state: freshly initialised weights, zeroed optimiser and
    /// statistics.
    pub fn fresh(setup: PolicySetup, train: TrainConfig, seed: u64) -> Result<Self> {
        train.validate()?;
        setup.policy.validate()?;
        setup.enhancer.validate()?;
        setup.space.check(&setup.initial_params)?;
        let shape = PolicyShape::standard(setup.policy.hidden_size);
        let theta = PolicyParameters::init(shape, &setup.policy, &mut rng::substream(seed, "policy-init", 0));
        Ok(Self {
            theta,
            adam: AdamState::new(shape.len(), train.learning_rate),
            normalizer: RewardNormalizer::new(train.normalizer_decay)?,
            baseline: BaselineEstimator::new(train.baseline_mode, train.ema_decay)?,
            setup,
            train,
            seed,
            episodes: 0,
        })
    }

    /// One REINFORCE update from a sampled episode of `env`. `reference_raw`
    /// holds the fixed-parameter rewards for the reference baseline.
    /// Returns the trajectory and the pre-clip gradient norm.
    pub fn learn_episode<E: Environment + ?Sized>(
        &mut self,
        env: &mut E,
        reference_raw: Option<&[f64]>,
    ) -> Result<(Trajectory, f64)> {
        let episode = self.episodes;
        let mut rng = rng::substream(self.seed, "rollout", episode);
        let mut local = None;
        let normalizer = self.train.episode_normalizer(&mut self.normalizer, &mut local, reference_raw)?;
        let reference = reference_raw
            .map(|raw| raw.iter().map(|&r| normalizer.normalize(r)).collect::<Result<Vec<_>>>())
            .transpose()?;
        let opts = RolloutOptions {
            space: &self.setup.space,
            initial_params: self.setup.initial_params,
            action_mode: ActionMode::Sample,
            feed_reward: self.train.feed_reward,
        };
        let traj = rollout(&self.theta, env, opts, normalizer, &mut rng, episode)?;
        let baseline = self.baseline.values(&traj, reference.as_deref())?;
        let mut grad = reinforce_gradient(&self.theta, &traj, &baseline)?;
        let grad_norm = policy::clip_global_norm(grad.as_mut_slice(), self.setup.policy.clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient at episode {episode}")));
        }
        // ascent on the objective as descent on its negation
        grad.as_mut_slice().iter_mut().for_each(|g| *g = -*g);
        policy::adam_update(self.theta.as_mut_slice(), grad.as_slice(), &mut self.adam)?;
        self.episodes += 1;
        Ok((traj, grad_norm))
    }
}

/// REINFORCE with batch size 1: one gradient step per utterance, epochs
/// over the training split, validation after every epoch.
pub fn train(
    config: &TrainConfig,
    setup: &PolicySetup,
    seed: u64,
    train_set: &[Utterance],
    val_set: &[Utterance],
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }

    let mut ckpt = Checkpoint::fresh(setup.clone(), config.clone(), seed)?;

    let mut episodes = Vec::new();
    let mut validation = Vec::new();
    let mut wall_times = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let cap = if config.max_episodes == 0 { u64::MAX } else { config.max_episodes as u64 };

    'epochs: for epoch in 0..config.epochs {
        for utt in train_set {
            if ckpt.episodes >= cap {
                break 'epochs;
            }
            let started = Instant::now();
            let episode = ckpt.episodes;
            let reference = if config.needs_reference_rewards() {
                Some(fixed_rewards(&setup.enhancer, &utt.clean, &utt.noisy, &setup.initial_params, config.reward_domain)?)
            } else {
                None
            };
            let mut env = EnhancerEnv::new(&setup.enhancer, &utt.clean, &utt.noisy, config.reward_domain)?;
            let (traj, grad_norm) = ckpt
                .learn_episode(&mut env, reference.as_deref())
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("{m} (utterance {})", utt.id)),
                    other => other,
                })?;

            episodes.push(EpisodeLog {
                episode,
                epoch,
                utterance_id: utt.id.clone(),
                seed: episode_seed(seed, episode),
                total_return: traj.total_return,
                raw_return: traj.raw_return(),
                gradient_norm: grad_norm,
            });
            wall_times.push(started.elapsed().as_secs_f64());
        }
        let v = validate_policy(&ckpt, val_set, epoch, ckpt.episodes)?;
        if best.as_ref().is_none_or(|(score, _)| v.mean_return > *score) {
            best = Some((v.mean_return, ckpt.clone()));
        }
        validation.push(v);
    }

    let best = best.map(|(_, c)| c).unwrap_or_else(|| ckpt.clone());
    Ok(TrainOutcome {
        best,
        last: ckpt,
        episodes,
        validation,
        wall_times,
    })
}

/// Trains once per learning rate in `config.lr_grid` and keeps the run with
/// the best final validation return.
pub fn select_learning_rate(
    config: &TrainConfig,
    setup: &PolicySetup,
    seed: u64,
    train_set: &[Utterance],
    val_set: &[Utterance],
) -> Result<(f64, TrainOutcome)> {
    if config.lr_grid.is_empty() {
        return Err(Error::invalid("lr_grid is empty"));
    }
    let mut best: Option<(f64, f64, TrainOutcome)> = None;
    for &lr in &config.lr_grid {
        let cfg = TrainConfig {
            learning_rate: lr,
            ..config.clone()
        };
        let out = train(&cfg, setup, seed, train_set, val_set)?;
        let score = out
            .validation
            .iter()
            .map(|v| v.mean_return)
            .fold(f64::NEG_INFINITY, f64::max);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, lr, out));
        }
    }
    let (_, lr, out) = best.expect("grid is non-empty");
    Ok((lr, out))
}

/// Writes `best.ckpt`, `last.ckpt`, `train_log.csv`, `validation.csv` and
/// `timing.csv` into `dir`.
pub fn write_outcome(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    outcome.best.save(&dir.join("best.ckpt"))?;
    outcome.last.save(&dir.join("last.ckpt"))?;
    write_csv(&dir.join("train_log.csv"), &outcome.episodes)?;
    write_csv(&dir.join("validation.csv"), &outcome.validation)?;
    let path = dir.join("timing.csv");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut text = String::from("episode,wall_time_s\n");
    for (i, t) in outcome.wall_times.iter().enumerate() {
        text.push_str(&format!("{i},{t:.6}\n"));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}
