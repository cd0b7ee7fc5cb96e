//! Recurrent stochastic policy over parameter adjustments.
//!
//! A single-layer LSTM reads one input vector per frame. Each control
//! parameter has its own softmax head over {decrease, hold, increase}; the
//! heads share the LSTM trunk and are sampled independently.
//!
//! All weights live in one flat buffer (see [`PolicyShape`] for the layout),
//! which is also the layout of gradients and Adam moments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FEATURE_DIM;
use crate::enhancer::{ParameterSet, ParameterSpace};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 196;
/// Features, normalised parameter values and the previous reward.
pub const INPUT_DIM: usize = FEATURE_DIM + ParameterSet::COUNT + 1;
pub const NUM_CHOICES: usize = 3;

// Feature compression: log10(m + FEATURE_EPS) / FEATURE_LOG_SCALE.
const FEATURE_EPS: f64 = 1e-3;
const FEATURE_LOG_SCALE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden_size: usize,
    /// Matrices are drawn from uniform(-init_scale, init_scale).
    pub init_scale: f64,
    pub forget_bias: f64,
    /// Initial logit of each head's hold action; 0 gives uniform heads.
    pub hold_bias: f64,
    /// Global gradient-norm clip applied before each update.
    pub clip_norm: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden_size: DEFAULT_HIDDEN,
            init_scale: 0.08,
            forget_bias: 1.0,
            hold_bias: 0.0,
            clip_norm: 5.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::invalid("hidden_size must be positive"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::invalid("init_scale must be finite and >= 0"));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::invalid("forget_bias must be finite"));
        }
        if !self.hold_bias.is_finite() {
            return Err(Error::invalid("hold_bias must be finite"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be finite and > 0"));
        }
        Ok(())
    }
}

/// Dimensions of the network and the offsets of each block in the flat
/// parameter buffer:
///
/// | block             | shape            |
/// |-------------------|------------------|
/// | input weights     | `4H × D`         |
/// | recurrent weights | `4H × H`         |
/// | gate biases       | `4H`             |
/// | head weights      | `P × 3 × H`      |
/// | head biases       | `P × 3`          |
///
/// Gate rows are ordered input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyShape {
    pub input: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl PolicyShape {
    pub fn new(input: usize, hidden: usize, heads: usize) -> Self {
        Self {
            input,
            hidden,
            heads,
        }
    }

    pub fn standard(hidden: usize) -> Self {
        Self::new(INPUT_DIM, hidden, ParameterSet::COUNT)
    }

    fn gates(&self) -> usize {
        4 * self.hidden
    }

    fn recurrent_offset(&self) -> usize {
        self.gates() * self.input
    }

    fn bias_offset(&self) -> usize {
        self.recurrent_offset() + self.gates() * self.hidden
    }

    fn head_weight_offset(&self) -> usize {
        self.bias_offset() + self.gates()
    }

    fn head_bias_offset(&self) -> usize {
        self.head_weight_offset() + self.heads * NUM_CHOICES * self.hidden
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.head_bias_offset() + self.heads * NUM_CHOICES
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Policy weights θ.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    shape: PolicyShape,
    values: Vec<f64>,
}

impl PolicyParameters {
    pub fn zeros(shape: PolicyShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn from_values(shape: PolicyShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::invalid(format!(
                "{} values for a policy of {} parameters",
                values.len(),
                shape.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("policy parameters must be finite".into()));
        }
        Ok(Self { shape, values })
    }

    /// Uniform matrices, zero biases except the forget gate.
    pub fn init<R: Rng>(shape: PolicyShape, config: &PolicyConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let s = config.init_scale;
        let draw = |rng: &mut R| if s > 0.0 { rng.random_range(-s..s) } else { 0.0 };
        let (w_end, b_start) = (shape.bias_offset(), shape.head_weight_offset());
        let hb = shape.head_bias_offset();
        for v in &mut p.values[..w_end] {
            *v = draw(rng);
        }
        for v in &mut p.values[b_start..hb] {
            *v = draw(rng);
        }
        let h = shape.hidden;
        for v in &mut p.biases_mut()[h..2 * h] {
            *v = config.forget_bias;
        }
        for k in 0..shape.heads {
            p.head_biases_mut(k)[1] = config.hold_bias;
        }
        p
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn input_weights(&self) -> &[f64] {
        &self.values[..self.shape.recurrent_offset()]
    }

    pub fn recurrent_weights(&self) -> &[f64] {
        &self.values[self.shape.recurrent_offset()..self.shape.bias_offset()]
    }

    pub fn biases(&self) -> &[f64] {
        &self.values[self.shape.bias_offset()..self.shape.head_weight_offset()]
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.shape.bias_offset(), self.shape.head_weight_offset());
        &mut self.values[a..b]
    }

    /// `3 × H` weights of head `p`.
    pub fn head_weights(&self, p: usize) -> &[f64] {
        let n = NUM_CHOICES * self.shape.hidden;
        let start = self.shape.head_weight_offset() + p * n;
        &self.values[start..start + n]
    }

    pub fn head_weights_mut(&mut self, p: usize) -> &mut [f64] {
        let n = NUM_CHOICES * self.shape.hidden;
        let start = self.shape.head_weight_offset() + p * n;
        &mut self.values[start..start + n]
    }

    pub fn head_biases(&self, p: usize) -> &[f64] {
        let start = self.shape.head_bias_offset() + p * NUM_CHOICES;
        &self.values[start..start + NUM_CHOICES]
    }

    pub fn head_biases_mut(&mut self, p: usize) -> &mut [f64] {
        let start = self.shape.head_bias_offset() + p * NUM_CHOICES;
        &mut self.values[start..start + NUM_CHOICES]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// LSTM hidden and cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Per-parameter choice in {-1, 0, +1}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub choices: Vec<i8>,
}

impl Action {
    pub fn hold(n: usize) -> Self {
        Self {
            choices: vec![0; n],
        }
    }

    /// Category index (0 = decrease, 1 = hold, 2 = increase) of head `p`.
    pub fn index(&self, p: usize) -> usize {
        (self.choices[p] + 1) as usize
    }
}

/// Probability triples, one per control parameter.
pub type ActionDistribution = Vec<[f64; NUM_CHOICES]>;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gate activations kept for backpropagation.
#[derive(Debug, Clone)]
struct StepCache {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn check_step_shapes(theta: &PolicyParameters, input: &[f64], state: &HiddenState) -> Result<()> {
    let s = theta.shape;
    if input.len() != s.input {
        return Err(Error::invalid(format!(
            "input has {} entries, policy expects {}",
            input.len(),
            s.input
        )));
    }
    if state.h.len() != s.hidden || state.c.len() != s.hidden {
        return Err(Error::invalid(format!(
            "hidden state sizes ({}, {}) do not match hidden size {}",
            state.h.len(),
            state.c.len(),
            s.hidden
        )));
    }
    Ok(())
}

fn forward_step(theta: &PolicyParameters, x: &[f64], prev: &HiddenState) -> (HiddenState, StepCache) {
    let s = theta.shape;
    let (d, h) = (s.input, s.hidden);
    let w = theta.input_weights();
    let u = theta.recurrent_weights();
    let mut z = theta.biases().to_vec();
    for (r, zr) in z.iter_mut().enumerate() {
        let wr = &w[r * d..(r + 1) * d];
        let ur = &u[r * h..(r + 1) * h];
        *zr += dot(wr, x) + dot(ur, &prev.h);
    }
    let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..h).map(|j| f[j] * prev.c[j] + i[j] * g[j]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let hn: Vec<f64> = (0..h).map(|j| o[j] * tanh_c[j]).collect();
    (
        HiddenState { h: hn, c },
        StepCache { i, f, g, o, tanh_c },
    )
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One LSTM cell update.
pub fn lstm_step(theta: &PolicyParameters, input: &[f64], state: &HiddenState) -> Result<HiddenState> {
    check_step_shapes(theta, input, state)?;
    Ok(forward_step(theta, input, state).0)
}

fn head_logits(theta: &PolicyParameters, h: &[f64], p: usize) -> [f64; NUM_CHOICES] {
    let hidden = theta.shape.hidden;
    let w = theta.head_weights(p);
    let b = theta.head_biases(p);
    std::array::from_fn(|a| b[a] + dot(&w[a * hidden..(a + 1) * hidden], h))
}

/// Numerically stable softmax of three logits.
pub fn softmax3(logits: [f64; NUM_CHOICES]) -> [f64; NUM_CHOICES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let z: f64 = e.iter().sum();
    e.map(|v| v / z)
}

pub fn action_distribution(theta: &PolicyParameters, h: &[f64]) -> Result<ActionDistribution> {
    if h.len() != theta.shape.hidden {
        return Err(Error::invalid(format!(
            "hidden vector has {} entries, expected {}",
            h.len(),
            theta.shape.hidden
        )));
    }
    Ok((0..theta.shape.heads)
        .map(|p| softmax3(head_logits(theta, h, p)))
        .collect())
}

/// Independent categorical draw per head.
pub fn sample_action<R: Rng>(dist: &ActionDistribution, rng: &mut R) -> (Action, f64) {
    let mut log_prob = 0.0;
    let choices = dist
        .iter()
        .map(|probs| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = NUM_CHOICES - 1;
            for (a, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = a;
                    break;
                }
            }
            // guard against rounding in the cumulative sum landing on a
            // zero-probability tail entry
            while probs[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            log_prob += probs[pick].ln();
            pick as i8 - 1
        })
        .collect();
    (Action { choices }, log_prob)
}

/// Most probable choice per head (ties resolve towards "hold").
pub fn greedy_action(dist: &ActionDistribution) -> (Action, f64) {
    let mut log_prob = 0.0;
    let choices = dist
        .iter()
        .map(|probs| {
            let mut best = 1;
            for a in [0, 2] {
                if probs[a] > probs[best] {
                    best = a;
                }
            }
            log_prob += probs[best].ln();
            best as i8 - 1
        })
        .collect();
    (Action { choices }, log_prob)
}

pub fn log_prob(dist: &ActionDistribution, action: &Action) -> f64 {
    dist.iter()
        .enumerate()
        .map(|(p, probs)| probs[action.index(p)].ln())
        .sum()
}

/// Moves each parameter by `choice × step` and clamps it to its bounds.
pub fn apply_action(space: &ParameterSpace, params: &ParameterSet, action: &Action) -> ParameterSet {
    let specs = space.specs();
    let mut v = params.to_array();
    for ((x, s), &choice) in v.iter_mut().zip(&specs).zip(&action.choices) {
        *x = s.clamp(*x + choice as f64 * s.step);
    }
    ParameterSet::from_array(v)
}

/// Policy input: compressed magnitudes ⊕ normalised parameters ⊕ previous
/// reward.
pub fn policy_input(features: &[f64], normalized_params: &[f64], prev_reward: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(features.len() + normalized_params.len() + 1);
    x.extend(
        features
            .iter()
            .map(|m| (m + FEATURE_EPS).log10() / FEATURE_LOG_SCALE),
    );
    x.extend_from_slice(normalized_params);
    x.push(prev_reward);
    x
}

/// One step of a frozen episode as seen by the gradient computation.
#[derive(Debug, Clone, Copy)]
pub struct StepRef<'a> {
    pub input: &'a [f64],
    pub action: &'a Action,
}

fn check_episode(theta: &PolicyParameters, steps: &[StepRef<'_>], advantages: &[f64]) -> Result<()> {
    if steps.len() != advantages.len() {
        return Err(Error::invalid(format!(
            "{} steps but {} advantages",
            steps.len(),
            advantages.len()
        )));
    }
    let s = theta.shape;
    for (t, st) in steps.iter().enumerate() {
        if st.input.len() != s.input {
            return Err(Error::invalid(format!("step {t}: input size {}", st.input.len())));
        }
        if st.action.choices.len() != s.heads || st.action.choices.iter().any(|c| !(-1..=1).contains(c)) {
            return Err(Error::invalid(format!("step {t}: malformed action")));
        }
    }
    Ok(())
}

/// Σ_t log π(a_t | x_≤t) · A_t over a frozen episode.
pub fn surrogate_objective(theta: &PolicyParameters, steps: &[StepRef<'_>], advantages: &[f64]) -> Result<f64> {
    check_episode(theta, steps, advantages)?;
    let mut state = HiddenState::zeros(theta.shape.hidden);
    let mut total = 0.0;
    for (st, &adv) in steps.iter().zip(advantages) {
        state = forward_step(theta, st.input, &state).0;
        let dist = action_distribution(theta, &state.h)?;
        total += log_prob(&dist, st.action) * adv;
    }
    Ok(total)
}

/// Undiscounted return-to-go R_t = Σ_{t' ≥ t} r_t'.
pub fn returns_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    out
}

/// Gradient (ascent direction) of [`surrogate_objective`] by full
/// backpropagation through time.
pub fn surrogate_gradient(
    theta: &PolicyParameters,
    steps: &[StepRef<'_>],
    advantages: &[f64],
) -> Result<PolicyParameters> {
    check_episode(theta, steps, advantages)?;
    let shape = theta.shape;
    let (d, hid) = (shape.input, shape.hidden);
    let gates = shape.gates();

    let mut states = Vec::with_capacity(steps.len() + 1);
    let mut caches = Vec::with_capacity(steps.len());
    let mut dists = Vec::with_capacity(steps.len());
    states.push(HiddenState::zeros(hid));
    for st in steps {
        let (next, cache) = forward_step(theta, st.input, states.last().unwrap());
        dists.push(action_distribution(theta, &next.h)?);
        states.push(next);
        caches.push(cache);
    }

    let mut grad = PolicyParameters::zeros(shape);
    let (rec_off, bias_off) = (shape.recurrent_offset(), shape.bias_offset());
    let (hw_off, hb_off) = (shape.head_weight_offset(), shape.head_bias_offset());
    let u = theta.recurrent_weights();

    let mut dh_next = vec![0.0; hid];
    let mut dc_next = vec![0.0; hid];
    let mut dz = vec![0.0; gates];
    for t in (0..steps.len()).rev() {
        let adv = advantages[t];
        let h_t = &states[t + 1].h;
        let mut dh = std::mem::take(&mut dh_next);
        if adv != 0.0 {
            for p in 0..shape.heads {
                let probs = &dists[t][p];
                let chosen = steps[t].action.index(p);
                let w = theta.head_weights(p);
                for a in 0..NUM_CHOICES {
                    let dl = adv * ((a == chosen) as u8 as f64 - probs[a]);
                    grad.values[hb_off + p * NUM_CHOICES + a] += dl;
                    let row = hw_off + (p * NUM_CHOICES + a) * hid;
                    for j in 0..hid {
                        grad.values[row + j] += dl * h_t[j];
                        dh[j] += dl * w[a * hid + j];
                    }
                }
            }
        }

        let c = &caches[t];
        let c_prev = &states[t].c;
        for j in 0..hid {
            let do_ = dh[j] * c.tanh_c[j];
            let dc = dh[j] * c.o[j] * (1.0 - c.tanh_c[j] * c.tanh_c[j]) + dc_next[j];
            let di = dc * c.g[j];
            let dg = dc * c.i[j];
            let df = dc * c_prev[j];
            dc_next[j] = dc * c.f[j];
            dz[j] = di * c.i[j] * (1.0 - c.i[j]);
            dz[hid + j] = df * c.f[j] * (1.0 - c.f[j]);
            dz[2 * hid + j] = dg * (1.0 - c.g[j] * c.g[j]);
            dz[3 * hid + j] = do_ * c.o[j] * (1.0 - c.o[j]);
        }

        let x = steps[t].input;
        let h_prev = &states[t].h;
        let mut dhp = vec![0.0; hid];
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            grad.values[bias_off + r] += dzr;
            let gw = &mut grad.values[r * d..(r + 1) * d];
            for (gv, xv) in gw.iter_mut().zip(x) {
                *gv += dzr * xv;
            }
            let gu = &mut grad.values[rec_off + r * hid..rec_off + (r + 1) * hid];
            for (gv, hv) in gu.iter_mut().zip(h_prev) {
                *gv += dzr * hv;
            }
            let ur = &u[r * hid..(r + 1) * hid];
            for (acc, uv) in dhp.iter_mut().zip(ur) {
                *acc += dzr * uv;
            }
        }
        dh_next = dhp;
    }
    Ok(grad)
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Adam moments and hyperparameters for a flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam descent step on `theta` along `grad`.
///
/// A non-finite gradient is rejected and leaves both `theta` and `opt`
/// untouched.
pub fn adam_update(theta: &mut [f64], grad: &[f64], opt: &mut AdamState) -> Result<()> {
    if theta.len() != grad.len() || opt.first_moment.len() != theta.len() || opt.second_moment.len() != theta.len() {
        return Err(Error::invalid(format!(
            "shape mismatch: theta {}, grad {}, moments {}/{}",
            theta.len(),
            grad.len(),
            opt.first_moment.len(),
            opt.second_moment.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient entry {i} is not finite")));
    }
    opt.step_count += 1;
    let t = opt.step_count as i32;
    let (b1, b2) = (opt.beta1, opt.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((th, &g), m), v) in theta
        .iter_mut()
        .zip(grad)
        .zip(&mut opt.first_moment)
        .zip(&mut opt.second_moment)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *th -= opt.learning_rate * m_hat / (v_hat.sqrt() + opt.epsilon);
    }
    Ok(())
}
