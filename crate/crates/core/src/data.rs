//! Corpus construction: WAV I/O, mixing at a target SNR, room-impulse
//! convolution, manifests and a seeded synthetic corpus.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioSignal, Complex64, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const MANIFEST_VERSION: u32 = 1;

/// Above this many taps [`convolve_rir`] switches to FFT convolution.
pub const DIRECT_CONV_MAX_TAPS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

// The file is already open when hound runs, so a read failure inside it
// means short or malformed data.
fn wav_read_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Parse(format!("{}: truncated or unreadable data ({io})", path.display())),
        other => wav_err(path, other),
    }
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => Error::UnsupportedFormat(format!("{}: unsupported WAV encoding", path.display())),
        other => Error::Parse(format!("{}: {other}", path.display())),
    }
}

/// Reads a mono PCM16 or float32 WAV. PCM values are scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioSignal> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| wav_read_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    }
    .map_err(|e| wav_read_err(path, e))?;
    AudioSignal::new(samples, spec.sample_rate).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Writes a mono WAV. PCM16 output rounds to the nearest step and clips to
/// the representable range.
pub fn write_wav(path: &Path, signal: &AudioSignal, format: WavFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &signal.samples {
        match format {
            WavFormat::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_sample(v)
            }
            WavFormat::Float32 => w.write_sample(s as f32),
        }
        .map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

fn wav_len(path: &Path) -> Result<(usize, u32)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let r = hound::WavReader::new(BufReader::new(file)).map_err(|e| wav_read_err(path, e))?;
    Ok((r.duration() as usize, r.spec().sample_rate))
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Noise gain k that puts `noise` at `target_snr_db` below `clean`.
pub fn snr_scale(clean: &[f64], noise: &[f64], target_snr_db: f64) -> Result<f64> {
    let pc = power(clean);
    let pn = power(noise);
    if pc <= 0.0 {
        return Err(Error::invalid("clean signal has zero power"));
    }
    if pn <= 0.0 {
        return Err(Error::invalid("noise segment has zero power"));
    }
    if !target_snr_db.is_finite() {
        return Err(Error::invalid("target SNR must be finite"));
    }
    Ok((pc / (pn * 10f64.powf(target_snr_db / 10.0))).sqrt())
}

/// `clean + k·noise[offset..offset + len]` with k chosen so the SNR over
/// the clean length equals `target_snr_db`.
pub fn mix_at_snr(clean: &AudioSignal, noise: &AudioSignal, target_snr_db: f64, offset: usize) -> Result<AudioSignal> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::invalid(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate, noise.sample_rate
        )));
    }
    let end = offset
        .checked_add(clean.len())
        .filter(|&e| e <= noise.len())
        .ok_or_else(|| {
            Error::invalid(format!(
                "noise of {} samples cannot cover {} samples from offset {offset}",
                noise.len(),
                clean.len()
            ))
        })?;
    let segment = &noise.samples[offset..end];
    let k = snr_scale(&clean.samples, segment, target_snr_db)?;
    let samples = clean.samples.iter().zip(segment).map(|(c, n)| c + k * n).collect();
    AudioSignal::new(samples, clean.sample_rate)
}

/// Uniform crop offset for a noise file of `noise_len` covering `clean_len`.
pub fn random_offset(rng: &mut Rng, clean_len: usize, noise_len: usize) -> Result<usize> {
    if noise_len < clean_len {
        return Err(Error::invalid(format!(
            "noise ({noise_len} samples) shorter than clean ({clean_len} samples)"
        )));
    }
    Ok(rng.random_range(0..=noise_len - clean_len))
}

fn direct_convolution(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let kmax = n.min(h.len() - 1);
            (0..=kmax).map(|k| h[k] * x[n - k]).sum()
        })
        .collect()
}

fn fft_convolution(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let load = |v: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for (d, &s) in b.iter_mut().zip(v) {
            d.re = s;
        }
        b
    };
    let mut a = load(x);
    let mut b = load(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a[..x.len()].iter().map(|c| c.re * scale).collect()
}

/// Linear convolution with `rir`, truncated to the input length.
pub fn convolve_rir(signal: &AudioSignal, rir: &AudioSignal) -> Result<AudioSignal> {
    if rir.is_empty() {
        return Err(Error::invalid("room impulse response is empty"));
    }
    if signal.is_empty() {
        return AudioSignal::new(Vec::new(), signal.sample_rate);
    }
    let out = if rir.len() > DIRECT_CONV_MAX_TAPS {
        fft_convolution(&signal.samples, &rir.samples)
    } else {
        direct_convolution(&signal.samples, &rir.samples)
    };
    AudioSignal::new(out, signal.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}' (train, val, test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub rir_path: Option<PathBuf>,
    pub target_snr_db: f64,
    pub split: Split,
    pub noise_offset: usize,
    /// Rendered mixture, written by the mixing step.
    #[serde(default)]
    pub noisy_path: Option<PathBuf>,
    /// Rendered reference (reverberant clean when an RIR is applied).
    #[serde(default)]
    pub reference_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub sample_rate: u32,
    pub ratios: [f64; 3],
    pub snr_grid: Vec<f64>,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

/// Split sizes for `n` items by largest-remainder rounding of `ratios`.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid(format!("invalid split ratios {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    let exact: Vec<f64> = ratios.iter().map(|r| r / total * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    // stable: ties go to the earlier split
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Seeded assignment of noise, RIR, SNR and split to every clean file.
///
/// Clean files are shuffled and cut into train/val/test by `ratios`; SNRs
/// are assigned round-robin over the grid in that order, so every split
/// sees the grid values equally often up to one.
pub fn build_manifest(
    clean_dir: &Path,
    noise_dir: &Path,
    rir_dir: Option<&Path>,
    snr_grid: &[f64],
    ratios: [f64; 3],
    seed: u64,
) -> Result<Manifest> {
    if snr_grid.is_empty() || snr_grid.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("snr grid must be non-empty and finite"));
    }
    let clean = list_wavs(clean_dir)?;
    let noise = list_wavs(noise_dir)?;
    if clean.is_empty() {
        return Err(Error::invalid(format!("no WAV files in {}", clean_dir.display())));
    }
    if noise.is_empty() {
        return Err(Error::invalid(format!("no WAV files in {}", noise_dir.display())));
    }
    let rirs = match rir_dir {
        Some(d) => {
            let r = list_wavs(d)?;
            if r.is_empty() {
                return Err(Error::invalid(format!("no WAV files in {}", d.display())));
            }
            r
        }
        None => Vec::new(),
    };
    let ids: BTreeSet<String> = clean.iter().map(|p| stem(p)).collect();
    if ids.len() != clean.len() {
        return Err(Error::invalid("clean files must have distinct names"));
    }

    let clean_info = clean.iter().map(|p| wav_len(p)).collect::<Result<Vec<_>>>()?;
    let noise_info = noise.iter().map(|p| wav_len(p)).collect::<Result<Vec<_>>>()?;
    let sample_rate = clean_info[0].1;
    for ((_, sr), p) in clean_info.iter().chain(&noise_info).zip(clean.iter().chain(&noise)) {
        if *sr != sample_rate {
            return Err(Error::UnsupportedFormat(format!(
                "{}: sample rate {sr} differs from {sample_rate}",
                p.display()
            )));
        }
    }

    let sizes = split_sizes(clean.len(), ratios)?;
    let mut order: Vec<usize> = (0..clean.len()).collect();
    order.shuffle(&mut rng::substream(seed, "manifest-split", 0));

    let mut entries = Vec::with_capacity(clean.len());
    for (pos, &ci) in order.iter().enumerate() {
        let split = if pos < sizes[0] {
            Split::Train
        } else if pos < sizes[0] + sizes[1] {
            Split::Val
        } else {
            Split::Test
        };
        let mut r = rng::substream(seed, "manifest-entry", ci as u64);
        let ni = r.random_range(0..noise.len());
        let rir_path = if rirs.is_empty() {
            None
        } else {
            Some(rirs[r.random_range(0..rirs.len())].clone())
        };
        let noise_offset = random_offset(&mut r, clean_info[ci].0, noise_info[ni].0)
            .map_err(|e| Error::invalid(format!("{}: {e}", noise[ni].display())))?;
        entries.push(ManifestEntry {
            utterance_id: stem(&clean[ci]),
            clean_path: clean[ci].clone(),
            noise_path: noise[ni].clone(),
            rir_path,
            target_snr_db: snr_grid[pos % snr_grid.len()],
            split,
            noise_offset,
            noisy_path: None,
            reference_path: None,
        });
    }
    Ok(Manifest {
        schema_version: MANIFEST_VERSION,
        sample_rate,
        ratios,
        snr_grid: snr_grid.to_vec(),
        seed,
        entries,
    })
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "manifest schema version {}",
                self.schema_version
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::invalid(format!("utterance '{}' listed twice", e.utterance_id)));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a manifest; relative paths inside it resolve against the
    /// manifest's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        m.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for e in &mut m.entries {
            fix(&mut e.clean_path);
            fix(&mut e.noise_path);
            if let Some(p) = e.rir_path.as_mut() {
                fix(p);
            }
            if let Some(p) = e.noisy_path.as_mut() {
                fix(p);
            }
            if let Some(p) = e.reference_path.as_mut() {
                fix(p);
            }
        }
        Ok(m)
    }
}

/// Aligned reference and mixture for one manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub split: Split,
    pub target_snr_db: f64,
    /// Reference the enhancer is scored against.
    pub clean: AudioSignal,
    pub noisy: AudioSignal,
}

fn read_at_rate(path: &Path, rate: u32) -> Result<AudioSignal> {
    let s = read_wav(path)?;
    if s.sample_rate != rate {
        return Err(Error::UnsupportedFormat(format!(
            "{}: sample rate {} (expected {rate}; resampling is not supported)",
            path.display(),
            s.sample_rate
        )));
    }
    Ok(s)
}

/// Renders an entry in double precision from its sources: the RIR is
/// applied to clean and noise separately, then the noise gain is set on the
/// reverberant components.
pub fn render_entry(entry: &ManifestEntry, sample_rate: u32) -> Result<Utterance> {
    let clean = read_at_rate(&entry.clean_path, sample_rate)?;
    let noise = read_at_rate(&entry.noise_path, sample_rate)?;
    let end = entry
        .noise_offset
        .checked_add(clean.len())
        .filter(|&e| e <= noise.len())
        .ok_or_else(|| Error::invalid(format!("{}: noise too short for offset", entry.utterance_id)))?;
    let mut segment = AudioSignal::new(noise.samples[entry.noise_offset..end].to_vec(), sample_rate)?;
    let mut reference = clean;
    if let Some(rp) = &entry.rir_path {
        let rir = read_at_rate(rp, sample_rate)?;
        reference = convolve_rir(&reference, &rir)?;
        segment = convolve_rir(&segment, &rir)?;
    }
    let noisy = mix_at_snr(&reference, &segment, entry.target_snr_db, 0)
        .map_err(|e| Error::invalid(format!("{}: {e}", entry.utterance_id)))?;
    Ok(Utterance {
        id: entry.utterance_id.clone(),
        split: entry.split,
        target_snr_db: entry.target_snr_db,
        clean: reference,
        noisy,
    })
}

/// Renders every entry of `split` in manifest order.
pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<Utterance>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    entries
        .par_iter()
        .map(|e| render_entry(e, manifest.sample_rate))
        .collect()
}

/// Generator settings for the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_clean: usize,
    pub num_noise: usize,
    pub num_rir: usize,
    pub duration_s: f64,
    pub noise_duration_s: f64,
    pub f0_range_hz: [f64; 2],
    pub rt60_range_s: [f64; 2],
    /// Leading silence before the first syllable.
    pub lead_silence_s: f64,
    pub sample_rate: u32,
    pub format: WavFormat,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_clean: 140,
            num_noise: 9,
            num_rir: 4,
            duration_s: 4.0,
            noise_duration_s: 10.0,
            f0_range_hz: [90.0, 250.0],
            rt60_range_s: [0.15, 0.5],
            lead_silence_s: 0.15,
            sample_rate: SAMPLE_RATE,
            format: WavFormat::Float32,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clean == 0 || self.num_noise == 0 {
            return Err(Error::invalid("num_clean and num_noise must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("duration_s must be positive"));
        }
        if !(self.noise_duration_s >= self.duration_s && self.noise_duration_s.is_finite()) {
            return Err(Error::invalid("noise_duration_s must be at least duration_s"));
        }
        let [lo, hi] = self.f0_range_hz;
        if !(lo > 0.0 && lo <= hi && hi < self.sample_rate as f64 / 4.0) {
            return Err(Error::invalid(format!("invalid f0 range [{lo}, {hi}]")));
        }
        let [lo, hi] = self.rt60_range_s;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!("invalid rt60 range [{lo}, {hi}]")));
        }
        if !(self.lead_silence_s >= 0.0 && self.lead_silence_s < self.duration_s) {
            return Err(Error::invalid("lead_silence_s must lie in [0, duration_s)"));
        }
        Ok(())
    }
}

// Harmonic-complex syllable with gliding pitch and two resonances.
fn syllable(rng: &mut Rng, out: &mut [f64], sr: f64, f0_range: [f64; 2]) {
    let n = out.len();
    let f0_start = rng.random_range(f0_range[0]..=f0_range[1]);
    let f0_end = (f0_start * rng.random_range(0.8..1.2)).clamp(f0_range[0], f0_range[1]);
    let formants = [rng.random_range(300.0..900.0), rng.random_range(900.0..2500.0)];
    let bandwidth = [90.0, 150.0];
    let vibrato = rng.random_range(3.0..6.0);
    let nyquist_guard = sr * 0.45;
    let harmonics = (nyquist_guard.min(4000.0) / f0_range[0]) as usize;
    let amps: Vec<f64> = (1..=harmonics)
        .map(|k| {
            let f = k as f64 * (f0_start + f0_end) / 2.0;
            let res: f64 = formants
                .iter()
                .zip(bandwidth)
                .map(|(&fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)))
                .sum();
            (0.15 + res) / k as f64
        })
        .collect();
    let mut phase = 0.0;
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    for (i, o) in out.iter_mut().enumerate() {
        let u = i as f64 / n as f64;
        let f0 = (f0_start + (f0_end - f0_start) * u) * (1.0 + 0.01 * (2.0 * PI * vibrato * i as f64 / sr).sin());
        phase += 2.0 * PI * f0 / sr;
        let env = (PI * u).sin().powf(0.6);
        let mut s = 0.0;
        for (k, (&a, &p)) in amps.iter().zip(&phases).enumerate() {
            let h = (k + 1) as f64;
            if h * f0 < nyquist_guard {
                s += a * (h * phase + p).sin();
            }
        }
        *o += env * s;
    }
}

fn normalize_rms(x: &mut [f64], target_dbfs: f64) {
    let p = power(x);
    if p > 0.0 {
        let g = 10f64.powf(target_dbfs / 20.0) / p.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        x.iter_mut().for_each(|v| *v *= 0.99 / peak);
    }
}

/// Speech-like utterance: syllables separated by silent gaps, starting
/// after `lead_silence_s` seconds of silence.
pub fn synth_speech(rng: &mut Rng, cfg: &SynthConfig) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let n = (cfg.duration_s * sr).round() as usize;
    let mut x = vec![0.0; n];
    let mut pos = (cfg.lead_silence_s * sr) as usize;
    while pos < n {
        let len = (rng.random_range(0.12..0.35) * sr) as usize;
        let end = (pos + len).min(n);
        if end - pos > (0.04 * sr) as usize {
            let gain = rng.random_range(0.5..1.0);
            let mut buf = vec![0.0; end - pos];
            syllable(rng, &mut buf, sr, cfg.f0_range_hz);
            for (o, b) in x[pos..end].iter_mut().zip(&buf) {
                *o += gain * b;
            }
        }
        pos = end + (rng.random_range(0.06..0.4) * sr) as usize;
    }
    normalize_rms(&mut x, -22.0);
    x
}

pub fn white_noise(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Noise with a 1/f power spectrum, shaped in the frequency domain.
pub fn pink_noise(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> = white_noise(rng, n).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..n {
        let f = k.min(n - k) as f64;
        buf[k] /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Overlapping speech-like talkers with a slow amplitude modulation.
pub fn babble_noise(rng: &mut Rng, n: usize, cfg: &SynthConfig) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let talker = SynthConfig {
        duration_s: n as f64 / sr,
        lead_silence_s: 0.0,
        ..cfg.clone()
    };
    let mut x = vec![0.0; n];
    for _ in 0..6 {
        for (o, v) in x.iter_mut().zip(synth_speech(rng, &talker)) {
            *o += v;
        }
    }
    let rate = rng.random_range(0.5..2.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    for (i, v) in x.iter_mut().enumerate() {
        *v *= 1.0 + 0.3 * (2.0 * PI * rate * i as f64 / sr + phase).sin();
    }
    x
}

/// Exponentially decaying noise tail behind a unit direct path.
pub fn synth_rir(rng: &mut Rng, rt60_s: f64, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let len = ((rt60_s * sr) as usize).max(2);
    let decay = 3.0 * 10f64.ln() / (rt60_s * sr);
    let pre_delay = (0.002 * sr) as usize;
    let mut h = vec![0.0; len];
    h[0] = 1.0;
    for (i, v) in h.iter_mut().enumerate().skip(pre_delay.max(1)) {
        let z: f64 = StandardNormal.sample(rng);
        *v = 0.25 * z * (-decay * i as f64).exp();
    }
    h
}

/// Files written by [`synth_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLayout {
    pub clean_dir: PathBuf,
    pub noise_dir: PathBuf,
    pub rir_dir: Option<PathBuf>,
    pub clean: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
    pub rirs: Vec<PathBuf>,
}

/// Writes `clean/`, `noise/` and (when `num_rir > 0`) `rir/` under `out`.
/// Noise types cycle white, pink, babble.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64, out: &Path) -> Result<CorpusLayout> {
    cfg.validate()?;
    let clean_dir = out.join("clean");
    let noise_dir = out.join("noise");
    let rir_dir = (cfg.num_rir > 0).then(|| out.join("rir"));
    for d in [Some(&clean_dir), Some(&noise_dir), rir_dir.as_ref()].into_iter().flatten() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let sr = cfg.sample_rate;
    let write = |path: PathBuf, x: Vec<f64>, format: WavFormat| -> Result<PathBuf> {
        write_wav(&path, &AudioSignal::new(x, sr)?, format)?;
        Ok(path)
    };

    let clean = (0..cfg.num_clean)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, "corpus-clean", i as u64);
            write(clean_dir.join(format!("utt_{i:04}.wav")), synth_speech(&mut r, cfg), cfg.format)
        })
        .collect::<Result<Vec<_>>>()?;

    let noise_len = (cfg.noise_duration_s * sr as f64).round() as usize;
    let noise = (0..cfg.num_noise)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, "corpus-noise", i as u64);
            let (kind, mut x) = match i % 3 {
                0 => ("white", white_noise(&mut r, noise_len)),
                1 => ("pink", pink_noise(&mut r, noise_len)),
                _ => ("babble", babble_noise(&mut r, noise_len, cfg)),
            };
            normalize_rms(&mut x, -25.0);
            write(noise_dir.join(format!("{kind}_{i:03}.wav")), x, cfg.format)
        })
        .collect::<Result<Vec<_>>>()?;

    let rirs = match &rir_dir {
        Some(dir) => (0..cfg.num_rir)
            .map(|i| {
                let mut r = rng::substream(seed, "corpus-rir", i as u64);
                let rt60 = r.random_range(cfg.rt60_range_s[0]..=cfg.rt60_range_s[1]);
                write(dir.join(format!("rir_{i:03}.wav")), synth_rir(&mut r, rt60, sr), WavFormat::Float32)
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    Ok(CorpusLayout {
        clean_dir,
        noise_dir,
        rir_dir,
        clean,
        noise,
        rirs,
    })
}
