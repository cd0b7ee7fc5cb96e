//! Objective metrics, evaluation reports, and the Nelder–Mead tuner that
//! produces the fixed-parameter baseline.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Utterance;
use crate::dsp::{self, AudioSignal, Spectrogram, FRAME_SIZE, HOP};
use crate::enhancer::{Enhancer, ParameterSet, ParameterSpace, Schedule};
use crate::error::{Error, Result};
use crate::trainer::{self, ActionMode, BaselineMode};

pub const SNR_CAP_DB: f64 = 100.0;
pub const LSD_EPS: f64 = 1e-10;

fn same_len(a: &AudioSignal, b: &AudioSignal) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("signal lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// 10·log10(Σg² / Σ(g−ĝ)²), capped at [`SNR_CAP_DB`].
pub fn snr_db(clean: &AudioSignal, estimate: &AudioSignal) -> Result<f64> {
    same_len(clean, estimate)?;
    let sig: f64 = clean.samples.iter().map(|g| g * g).sum();
    if sig <= 0.0 {
        return Err(Error::invalid("clean signal is all zeros"));
    }
    let err: f64 = clean
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(g, e)| (g - e).powi(2))
        .sum();
    if err < 1e-20 * sig {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (sig / err).log10()).min(SNR_CAP_DB))
}

/// Mean over frames of the RMS (over bins) log-magnitude difference in dB.
pub fn lsd(clean: &Spectrogram, estimate: &Spectrogram) -> Result<f64> {
    if clean.num_frames() != estimate.num_frames() || clean.num_bins() != estimate.num_bins() {
        return Err(Error::invalid(format!(
            "spectrogram shapes differ: {}x{} vs {}x{}",
            clean.num_frames(),
            clean.num_bins(),
            estimate.num_frames(),
            estimate.num_bins()
        )));
    }
    if clean.num_frames() == 0 {
        return Err(Error::invalid("empty spectrogram"));
    }
    let total: f64 = clean
        .frames
        .iter()
        .zip(&estimate.frames)
        .map(|(g, e)| {
            if g.len() != e.len() {
                return f64::NAN;
            }
            let ms: f64 = g
                .iter()
                .zip(e)
                .map(|(a, b)| (20.0 * ((a.norm() + LSD_EPS) / (b.norm() + LSD_EPS)).log10()).powi(2))
                .sum::<f64>()
                / g.len() as f64;
            ms.sqrt()
        })
        .sum();
    if total.is_nan() {
        return Err(Error::invalid("frames have inconsistent bin counts"));
    }
    Ok(total / clean.num_frames() as f64)
}

pub fn mse_time(clean: &AudioSignal, estimate: &AudioSignal) -> Result<f64> {
    same_len(clean, estimate)?;
    if clean.is_empty() {
        return Ok(0.0);
    }
    Ok(clean
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(g, e)| (g - e).powi(2))
        .sum::<f64>()
        / clean.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub snr_db: f64,
    pub lsd: f64,
    pub mse: f64,
}

impl UtteranceMetrics {
    pub fn compute(clean: &AudioSignal, estimate: &AudioSignal) -> Result<Self> {
        let gs = dsp::stft(clean, FRAME_SIZE, HOP)?;
        let es = dsp::stft(estimate, FRAME_SIZE, HOP)?;
        Ok(Self {
            snr_db: snr_db(clean, estimate)?,
            lsd: lsd(&gs, &es)?,
            mse: mse_time(clean, estimate)?,
        })
    }

    fn mean<'a>(items: impl Iterator<Item = &'a UtteranceMetrics>) -> Self {
        let mut n = 0usize;
        let mut s = Self::default();
        for m in items {
            n += 1;
            s.snr_db += m.snr_db;
            s.lsd += m.lsd;
            s.mse += m.mse;
        }
        if n > 0 {
            let k = n as f64;
            s.snr_db /= k;
            s.lsd /= k;
            s.mse /= k;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRow {
    pub utterance_id: String,
    pub target_snr_db: f64,
    #[serde(flatten)]
    pub metrics: UtteranceMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub target_snr_db: f64,
    pub count: usize,
    #[serde(flatten)]
    pub metrics: UtteranceMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub utterances: Vec<UtteranceRow>,
    pub aggregate: UtteranceMetrics,
    pub buckets: Vec<BucketRow>,
}

impl MetricReport {
    pub fn from_rows(method: impl Into<String>, utterances: Vec<UtteranceRow>) -> Self {
        let aggregate = UtteranceMetrics::mean(utterances.iter().map(|r| &r.metrics));
        let mut targets: Vec<f64> = utterances.iter().map(|r| r.target_snr_db).collect();
        targets.sort_by(f64::total_cmp);
        targets.dedup();
        let buckets = targets
            .into_iter()
            .map(|t| {
                let rows: Vec<&UtteranceRow> = utterances.iter().filter(|r| r.target_snr_db == t).collect();
                BucketRow {
                    target_snr_db: t,
                    count: rows.len(),
                    metrics: UtteranceMetrics::mean(rows.iter().map(|r| &r.metrics)),
                }
            })
            .collect();
        Self {
            method: method.into(),
            utterances,
            aggregate,
            buckets,
        }
    }

    pub fn bucket(&self, target_snr_db: f64) -> Option<&BucketRow> {
        self.buckets.iter().find(|b| b.target_snr_db == target_snr_db)
    }
}

/// CSV columns of [`write_report_csv`], in order.
pub const REPORT_COLUMNS: [&str; 6] = ["method", "row", "target_snr_db", "snr_db", "lsd", "mse"];

/// One row per utterance, then one per SNR bucket (`row = bucket`), then
/// the aggregate (`row = mean`), for every report.
pub fn write_report_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| trainer::csv_err(path, e))?;
    w.write_record(REPORT_COLUMNS).map_err(|e| trainer::csv_err(path, e))?;
    let f = |v: f64| format!("{v}");
    for r in reports {
        for u in &r.utterances {
            w.write_record([
                r.method.clone(),
                u.utterance_id.clone(),
                f(u.target_snr_db),
                f(u.metrics.snr_db),
                f(u.metrics.lsd),
                f(u.metrics.mse),
            ])
            .map_err(|e| trainer::csv_err(path, e))?;
        }
        for b in &r.buckets {
            w.write_record([
                r.method.clone(),
                "bucket".into(),
                f(b.target_snr_db),
                f(b.metrics.snr_db),
                f(b.metrics.lsd),
                f(b.metrics.mse),
            ])
            .map_err(|e| trainer::csv_err(path, e))?;
        }
        w.write_record([
            r.method.clone(),
            "mean".into(),
            String::new(),
            f(r.aggregate.snr_db),
            f(r.aggregate.lsd),
            f(r.aggregate.mse),
        ])
        .map_err(|e| trainer::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-bucket summary: one row per (method, target SNR).
pub fn write_bucket_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| trainer::csv_err(path, e))?;
    w.write_record(["method", "target_snr_db", "count", "snr_db", "lsd", "mse"])
        .map_err(|e| trainer::csv_err(path, e))?;
    for r in reports {
        for b in &r.buckets {
            w.write_record([
                r.method.clone(),
                format!("{}", b.target_snr_db),
                b.count.to_string(),
                format!("{}", b.metrics.snr_db),
                format!("{}", b.metrics.lsd),
                format!("{}", b.metrics.mse),
            ])
            .map_err(|e| trainer::csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fixed-width results table; metrics outside this toolkit print as n/a.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut s = format!(
        "{:<14} {:>6} {:>6} {:>6} {:>10} {:>9} {:>12}\n",
        "method", "WER", "SER", "PESQ", "SNR (dB)", "LSD (dB)", "MSE"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<14} {:>6} {:>6} {:>6} {:>10.3} {:>9.3} {:>12.6e}\n",
            r.method, "n/a", "n/a", "n/a", r.aggregate.snr_db, r.aggregate.lsd, r.aggregate.mse
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop once max − min of the vertex values drops below this.
    pub tol: f64,
    /// Edge length of the initial simplex in the unit cube.
    pub initial_step: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-10,
            initial_step: 0.1,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
        }
    }
}

impl NelderMeadOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol >= 0.0
            && self.initial_step > 0.0
            && self.initial_step <= 1.0
            && self.reflection > 0.0
            && self.expansion > 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Nelder-Mead options {self:?}")))
        }
    }
}

/// Vertices and values of a simplex in the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexState {
    pub vertices: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub iteration: usize,
}

impl SimplexState {
    fn best(&self) -> usize {
        (0..self.values.len())
            .min_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))
            .unwrap_or(0)
    }

    fn spread(&self) -> f64 {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub best_value: f64,
    pub spread: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
}

fn project(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// `x0` plus one vertex per axis offset by `step`, reflected inward at the
/// upper face.
pub fn initial_simplex(x0: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut out = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] = if v[i] + step <= 1.0 { v[i] + step } else { v[i] - step };
        project(&mut v);
        out.push(v);
    }
    out
}

/// Minimises `f` over the unit cube starting from `x0`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<NelderMeadResult> {
    if x0.is_empty() {
        return Err(Error::invalid("empty starting point"));
    }
    let mut start = x0.to_vec();
    project(&mut start);
    nelder_mead_from(f, initial_simplex(&start, opts.initial_step), None, opts)
}

/// Nelder–Mead from an explicit simplex; `values` may supply already
/// evaluated vertex values.
pub fn nelder_mead_from<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    vertices: Vec<Vec<f64>>,
    values: Option<Vec<f64>>,
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult> {
    opts.validate()?;
    let n = vertices.first().map_or(0, Vec::len);
    if n == 0 || vertices.len() != n + 1 || vertices.iter().any(|v| v.len() != n) {
        return Err(Error::invalid("simplex must have n + 1 vertices of dimension n >= 1"));
    }
    let mut evaluations = 0usize;
    let values = match values {
        Some(v) if v.len() == n + 1 => v,
        Some(_) => return Err(Error::invalid("values must match the vertex count")),
        None => vertices
            .iter()
            .map(|v| {
                evaluations += 1;
                f(v)
            })
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "objective is not finite at initial vertex {i}: {}",
            values[i]
        )));
    }
    let mut s = SimplexState {
        vertices,
        values,
        iteration: 0,
    };
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..=n).collect();
    loop {
        order.sort_by(|&a, &b| s.values[a].total_cmp(&s.values[b]).then(a.cmp(&b)));
        let spread = s.spread();
        trace.push(TraceRow {
            iteration: s.iteration,
            best_value: s.values[order[0]],
            spread,
            evaluations,
        });
        if spread < opts.tol || s.iteration >= opts.max_iter {
            break;
        }
        s.iteration += 1;
        let worst = order[n];
        let second = order[n - 1];
        let best = order[0];
        let mut centroid = vec![0.0; n];
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&s.vertices[i]) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&s.vertices[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p);
            p
        };
        let xr = along(opts.reflection);
        let fr = eval(&xr, &mut evaluations);
        if fr < s.values[best] {
            let xe = along(opts.reflection * opts.expansion);
            let fe = eval(&xe, &mut evaluations);
            if fe < fr {
                s.vertices[worst] = xe;
                s.values[worst] = fe;
            } else {
                s.vertices[worst] = xr;
                s.values[worst] = fr;
            }
            continue;
        }
        if fr < s.values[second] {
            s.vertices[worst] = xr;
            s.values[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < s.values[worst] {
            let xc = along(opts.reflection * opts.contraction);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        } else {
            let xc = along(-opts.contraction);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        };
        if fc < fr.min(s.values[worst]) {
            s.vertices[worst] = xc;
            s.values[worst] = fc;
            continue;
        }
        let anchor = s.vertices[best].clone();
        for &i in &order[1..] {
            let mut p: Vec<f64> = anchor
                .iter()
                .zip(&s.vertices[i])
                .map(|(a, v)| a + opts.shrink * (v - a))
                .collect();
            project(&mut p);
            s.values[i] = eval(&p, &mut evaluations);
            s.vertices[i] = p;
        }
    }
    let b = s.best();
    Ok(NelderMeadResult {
        x: s.vertices[b].clone(),
        value: s.values[b],
        iterations: s.iteration,
        evaluations,
        trace,
    })
}

/// Nelder–Mead over a [`ParameterSpace`] through its normalised cube.
pub fn nelder_mead_params<F: FnMut(&ParameterSet) -> f64>(
    space: &ParameterSpace,
    mut f: F,
    initial: &ParameterSet,
    opts: &NelderMeadOptions,
) -> Result<(ParameterSet, NelderMeadResult)> {
    space.check(initial)?;
    let res = nelder_mead(|x| f(&space.denormalize(x)), &space.normalize(initial), opts)?;
    Ok((space.denormalize(&res.x), res))
}

/// Equal-weight objective used for offline tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneWeights {
    pub snr: f64,
    pub lsd: f64,
    pub mse: f64,
}

impl Default for TuneWeights {
    fn default() -> Self {
        Self {
            snr: 1.0 / 3.0,
            lsd: 1.0 / 3.0,
            mse: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub params: ParameterSet,
    pub objective: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

/// Mean metrics of the suppressor with fixed `params` over `utts`.
pub fn mean_fixed_metrics(enhancer: &Enhancer, utts: &[Utterance], params: &ParameterSet) -> Result<UtteranceMetrics> {
    let rows = utts
        .par_iter()
        .map(|u| {
            let out = enhancer.enhance_utterance(&u.noisy, Schedule::Fixed(params))?;
            UtteranceMetrics::compute(&u.clean, &out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UtteranceMetrics::mean(rows.iter()))
}

/// Tunes a fixed parameter set on `train` by minimising
/// w₁·(−SNR) + w₂·LSD + w₃·MSE with each metric min-max scaled over the
/// initial simplex.
pub fn tune_baseline(
    train: &[Utterance],
    enhancer: &Enhancer,
    space: &ParameterSpace,
    initial: &ParameterSet,
    weights: TuneWeights,
    opts: &NelderMeadOptions,
) -> Result<TuneResult> {
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    space.check(initial)?;
    let simplex = initial_simplex(&space.normalize(initial), opts.initial_step);
    let raw = simplex
        .iter()
        .map(|v| mean_fixed_metrics(enhancer, train, &space.denormalize(v)))
        .collect::<Result<Vec<_>>>()?;
    let range = |get: fn(&UtteranceMetrics) -> f64| {
        let lo = raw.iter().map(get).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(get).fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi - lo > 0.0 { hi - lo } else { 1.0 })
    };
    let (snr_lo, snr_r) = range(|m| m.snr_db);
    let (lsd_lo, lsd_r) = range(|m| m.lsd);
    let (mse_lo, mse_r) = range(|m| m.mse);
    let score = move |m: &UtteranceMetrics| {
        weights.snr * -((m.snr_db - snr_lo) / snr_r) + weights.lsd * (m.lsd - lsd_lo) / lsd_r + weights.mse * (m.mse - mse_lo) / mse_r
    };
    let values: Vec<f64> = raw.iter().map(score).collect();
    let mut failure: Option<Error> = None;
    let res = nelder_mead_from(
        |x| match mean_fixed_metrics(enhancer, train, &space.denormalize(x)) {
            Ok(m) => score(&m),
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        simplex,
        Some(values),
        opts,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(TuneResult {
        params: space.denormalize(&res.x),
        objective: res.value,
        iterations: res.iterations,
        trace: res.trace,
    })
}

/// What produced the enhanced signals being scored.
#[derive(Debug, Clone)]
pub enum Method<'a> {
    Noisy,
    Fixed {
        enhancer: &'a Enhancer,
        params: ParameterSet,
    },
    Policy {
        checkpoint: &'a Checkpoint,
        action_mode: ActionMode,
        seed: u64,
    },
    Clean,
}

impl Method<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Noisy => "noisy",
            Method::Fixed { .. } => "baseline",
            Method::Policy { checkpoint, .. } => {
                if checkpoint.train.baseline_mode == BaselineMode::None {
                    "rl-unbiased"
                } else {
                    "rl-baselined"
                }
            }
            Method::Clean => "clean",
        }
    }
}

/// Scores `method` on every utterance; per-utterance work runs in parallel
/// and rows keep input order.
pub fn evaluate(utts: &[Utterance], method: &Method<'_>) -> Result<MetricReport> {
    let rows = utts
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let estimate = match method {
                Method::Noisy => u.noisy.clone(),
                Method::Clean => u.clean.clone(),
                Method::Fixed { enhancer, params } => enhancer.enhance_utterance(&u.noisy, Schedule::Fixed(params))?,
                Method::Policy {
                    checkpoint,
                    action_mode,
                    seed,
                } => {
                    let s = crate::rng::derive_seed(*seed, "evaluate", i as u64);
                    trainer::evaluate_utterance(checkpoint, u, *action_mode, s)?.1
                }
            };
            Ok(UtteranceRow {
                utterance_id: u.id.clone(),
                target_snr_db: u.target_snr_db,
                metrics: UtteranceMetrics::compute(&u.clean, &estimate)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_rows(method.label(), rows))
}
