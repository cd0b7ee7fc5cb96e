//! Framing, Hann windowing, forward/inverse STFT and magnitude features.
//!
//! Analysis uses a periodic Hann window at 50% overlap. Synthesis applies the
//! same window again and normalises by the summed squared window, which for
//! this window/hop pair is constant-overlap-add on the interior.

use std::f64::consts::PI;

pub use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_SIZE: usize = 512;
pub const HOP: usize = FRAME_SIZE / 2;
pub const NUM_BINS: usize = FRAME_SIZE / 2 + 1;
pub const FEATURE_DIM: usize = FRAME_SIZE / 2;

// Below this summed squared window the synthesis normalisation would amplify
// modified spectra without bound; only the outer edge samples are affected.
const WINDOW_SUM_FLOOR: f64 = 1e-2;

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
}

/// Sequence of one-sided spectra (`frame_size / 2 + 1` bins each).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub frame_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Length of the signal spanned by the frames.
    pub fn signal_len(&self) -> usize {
        match self.frames.len() {
            0 => 0,
            n => (n - 1) * self.hop + self.frame_size,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frame_size < 2 || !self.frame_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "frame size {} must be even and >= 2",
                self.frame_size
            )));
        }
        if self.hop != self.frame_size / 2 {
            return Err(Error::invalid(format!(
                "hop {} must be half the frame size {}",
                self.hop, self.frame_size
            )));
        }
        let bins = self.num_bins();
        if let Some(t) = self.frames.iter().position(|f| f.len() != bins) {
            return Err(Error::invalid(format!(
                "frame {t} has {} bins, expected {bins}",
                self.frames[t].len()
            )));
        }
        Ok(())
    }
}

/// Policy-facing magnitude features (Nyquist bin dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Periodic (DFT-even) Hann window.
pub fn hann_window(length: usize) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(Error::invalid(format!(
            "window length {length} must be at least 2"
        )));
    }
    let n = length as f64;
    Ok((0..length)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n).cos()))
        .collect())
}

/// Number of full frames that fit in `len` samples.
pub fn frame_count(len: usize, frame_size: usize, hop: usize) -> usize {
    if len < frame_size {
        0
    } else {
        (len - frame_size) / hop + 1
    }
}

/// Smallest length `>= len` that is covered exactly by whole frames.
pub fn padded_len(len: usize, frame_size: usize, hop: usize) -> usize {
    if len <= frame_size {
        frame_size
    } else {
        frame_size + (len - frame_size).div_ceil(hop) * hop
    }
}

pub fn stft(signal: &AudioSignal, frame_size: usize, hop: usize) -> Result<Spectrogram> {
    stft_samples(&signal.samples, frame_size, hop)
}

pub(crate) fn stft_samples(samples: &[f64], frame_size: usize, hop: usize) -> Result<Spectrogram> {
    if frame_size < 2 || !frame_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "frame size {frame_size} must be even and >= 2"
        )));
    }
    if hop != frame_size / 2 {
        return Err(Error::invalid(format!(
            "hop {hop} must be half the frame size {frame_size}"
        )));
    }
    if samples.len() < frame_size {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one frame ({frame_size})",
            samples.len()
        )));
    }
    let window = hann_window(frame_size)?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_size);
    let bins = frame_size / 2 + 1;
    let count = frame_count(samples.len(), frame_size, hop);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_size];
    let mut frames = Vec::with_capacity(count);
    for t in 0..count {
        let start = t * hop;
        for ((b, &x), &w) in buf
            .iter_mut()
            .zip(&samples[start..start + frame_size])
            .zip(&window)
        {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..bins].to_vec());
    }
    Ok(Spectrogram {
        frames,
        frame_size,
        hop,
        window: Window::Hann,
    })
}

/// Weighted overlap-add inverse of [`stft`].
pub fn istft(spec: &Spectrogram) -> Result<AudioSignal> {
    Ok(AudioSignal {
        samples: istft_samples(spec)?,
        sample_rate: SAMPLE_RATE,
    })
}

pub(crate) fn istft_samples(spec: &Spectrogram) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.frame_size;
    let bins = spec.num_bins();
    let window = hann_window(n)?;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let len = spec.signal_len();
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for (t, frame) in spec.frames.iter().enumerate() {
        buf[..bins].copy_from_slice(frame);
        // Hermitian extension; DC and Nyquist imaginary parts are dropped.
        buf[0].im = 0.0;
        buf[bins - 1].im = 0.0;
        for k in 1..bins - 1 {
            buf[n - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * spec.hop;
        for (i, (&w, b)) in window.iter().zip(&buf).enumerate() {
            out[start + i] += w * b.re * scale;
            norm[start + i] += w * w;
        }
    }
    for (o, &s) in out.iter_mut().zip(&norm) {
        *o /= s.max(WINDOW_SUM_FLOOR);
    }
    Ok(out)
}

/// Magnitudes of bins `0..frame_size/2` of a one-sided spectrum.
pub fn features(frame: &[Complex64]) -> Result<FeatureVector> {
    if frame.len() != NUM_BINS {
        return Err(Error::invalid(format!(
            "spectrum has {} bins, expected {NUM_BINS}",
            frame.len()
        )));
    }
    Ok(FeatureVector(
        frame[..FEATURE_DIM].iter().map(|c| c.norm()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, seed: u64) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioSignal::new(
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            SAMPLE_RATE,
        )
        .unwrap()
    }

    fn interior_rel_rms(x: &[f64], y: &[f64], lo: usize, hi: usize) -> f64 {
        let err: f64 = (lo..hi).map(|i| (x[i] - y[i]).powi(2)).sum();
        let sig: f64 = (lo..hi).map(|i| x[i].powi(2)).sum();
        (err / sig).sqrt()
    }

    #[test]
    fn hann_closed_form_length_four() {
        // cos(2πk/4) = 1, 0, -1, 0
        let w = hann_window(4).unwrap();
        let expected = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hann_starts_at_zero_and_is_cola() {
        for len in [2, 3, 17, 512] {
            assert_eq!(hann_window(len).unwrap()[0], 0.0);
        }
        let w = hann_window(512).unwrap();
        for k in 0..256 {
            assert!((w[k] + w[k + 256] - 1.0).abs() < 1e-12);
        }
        assert!(matches!(hann_window(1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn frame_count_formula() {
        let s = random_signal(1600, 1);
        assert_eq!(stft(&s, 512, 256).unwrap().num_frames(), 5);
        assert_eq!(frame_count(1600, 512, 256), 5);
        assert_eq!(padded_len(1600, 512, 256), 1792);
        assert_eq!(padded_len(1536, 512, 256), 1536);
        assert_eq!(padded_len(10, 512, 256), 512);
    }

    #[test]
    fn zero_signal_gives_zero_frames() {
        let s = AudioSignal::new(vec![0.0; 1024], SAMPLE_RATE).unwrap();
        let spec = stft(&s, FRAME_SIZE, HOP).unwrap();
        assert!(spec.frames.iter().flatten().all(|c| c.norm() == 0.0));
        let back = istft(&spec).unwrap();
        assert!(back.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_short_signal_and_bad_hop() {
        let s = random_signal(100, 2);
        assert!(matches!(stft(&s, 512, 256), Err(Error::InvalidArgument(_))));
        let s = random_signal(2048, 2);
        assert!(matches!(stft(&s, 512, 128), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bin_centred_cosine_concentrates_energy() {
        let k0 = 20;
        let n = 2048;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * k0 as f64 * i as f64 / FRAME_SIZE as f64).cos())
            .collect();
        let spec = stft(&AudioSignal::new(x.clone(), SAMPLE_RATE).unwrap(), 512, 256).unwrap();
        let w = hann_window(512).unwrap();
        for (t, frame) in spec.frames.iter().enumerate() {
            // brute-force DFT of the windowed frame as the oracle
            let seg: Vec<f64> = (0..512).map(|i| x[t * 256 + i] * w[i]).collect();
            let dft = |k: usize| -> f64 {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in seg.iter().enumerate() {
                    let ph = -2.0 * PI * (k * i) as f64 / 512.0;
                    re += v * ph.cos();
                    im += v * ph.sin();
                }
                re * re + im * im
            };
            let total: f64 = (0..NUM_BINS).map(dft).sum();
            let near: f64 = (k0 - 1..=k0 + 1).map(dft).sum();
            assert!(near / total >= 0.99);
            let ours: f64 = (k0 - 1..=k0 + 1).map(|k| frame[k].norm_sqr()).sum();
            assert!((ours - near).abs() < 1e-9 * near);
        }
    }

    #[test]
    fn round_trip_interior() {
        let x = random_signal(16_000, 3);
        let spec = stft(&x, FRAME_SIZE, HOP).unwrap();
        let y = istft(&spec).unwrap();
        let hi = spec.signal_len() - HOP;
        assert!(interior_rel_rms(&x.samples, &y.samples, HOP, hi) < 1e-10);
    }

    #[test]
    fn scaled_frames_scale_output() {
        let x = random_signal(4096, 4);
        let mut spec = stft(&x, FRAME_SIZE, HOP).unwrap();
        spec.frames.iter_mut().flatten().for_each(|c| *c *= 2.0);
        let y = istft(&spec).unwrap();
        let doubled: Vec<f64> = x.samples.iter().map(|v| 2.0 * v).collect();
        assert!(interior_rel_rms(&doubled, &y.samples, HOP, spec.signal_len() - HOP) < 1e-10);
    }

    #[test]
    fn istft_rejects_inconsistent_frames() {
        let x = random_signal(2048, 5);
        let mut spec = stft(&x, FRAME_SIZE, HOP).unwrap();
        spec.frames[2].pop();
        assert!(matches!(istft(&spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn features_contract() {
        let zero = vec![Complex64::new(0.0, 0.0); NUM_BINS];
        assert!(features(&zero).unwrap().0.iter().all(|&v| v == 0.0));
        let mut one = zero.clone();
        one[3] = Complex64::new(3.0, 4.0);
        let f = features(&one).unwrap();
        assert_eq!(f.0.len(), FEATURE_DIM);
        assert_eq!(f.0[3], 5.0);
        assert!(matches!(features(&zero[..10]), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_round_trip(seed in any::<u64>(), extra in 0usize..700) {
            let x = random_signal(2 * FRAME_SIZE + extra, seed);
            let spec = stft(&x, FRAME_SIZE, HOP).unwrap();
            let y = istft(&spec).unwrap();
            let hi = spec.signal_len() - HOP;
            prop_assert!(interior_rel_rms(&x.samples, &y.samples, HOP, hi) < 1e-10);
        }

        #[test]
        fn prop_parseval(seed in any::<u64>()) {
            let x = random_signal(1536, seed);
            let spec = stft(&x, FRAME_SIZE, HOP).unwrap();
            let w = hann_window(FRAME_SIZE).unwrap();
            for (t, frame) in spec.frames.iter().enumerate() {
                let time: f64 = (0..FRAME_SIZE).map(|i| (x.samples[t * HOP + i] * w[i]).powi(2)).sum();
                let interior: f64 = frame[1..NUM_BINS - 1].iter().map(|c| c.norm_sqr()).sum();
                let freq = (frame[0].norm_sqr() + 2.0 * interior + frame[NUM_BINS - 1].norm_sqr())
                    / FRAME_SIZE as f64;
                prop_assert!((time - freq).abs() <= 1e-9 * time);
            }
        }

        #[test]
        fn prop_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let x = random_signal(1536, seed);
            let y = random_signal(1536, seed.wrapping_add(1));
            let mix = AudioSignal::new(
                x.samples.iter().zip(&y.samples).map(|(p, q)| a * p + b * q).collect(),
                SAMPLE_RATE,
            ).unwrap();
            let (sx, sy, sm) = (
                stft(&x, 512, 256).unwrap(),
                stft(&y, 512, 256).unwrap(),
                stft(&mix, 512, 256).unwrap(),
            );
            for t in 0..sm.num_frames() {
                for k in 0..NUM_BINS {
                    let d = sm.frames[t][k] - (sx.frames[t][k] * a + sy.frames[t][k] * b);
                    prop_assert!(d.norm() < 1e-12);
                }
            }
        }

        #[test]
        fn prop_features_non_negative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frame: Vec<Complex64> = (0..NUM_BINS)
                .map(|_| Complex64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            prop_assert!(features(&frame).unwrap().0.iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
    }
}
