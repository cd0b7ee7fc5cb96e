//! Shared fixtures for the criterion benches.

use adaptive_denoise::data;
use adaptive_denoise::dsp::{AudioSignal, SAMPLE_RATE};
use adaptive_denoise::rng;

/// Speech-like clean signal and a 5 dB mixture of it with pink noise.
pub fn utterance_pair(seconds: f64, seed: u64) -> (AudioSignal, AudioSignal) {
    let cfg = data::SynthConfig {
        duration_s: seconds,
        ..data::SynthConfig::default()
    };
    let clean = AudioSignal::new(data::synth_speech(&mut rng::substream(seed, "bench-clean", 0), &cfg), SAMPLE_RATE)
        .expect("valid signal");
    let noise = AudioSignal::new(data::pink_noise(&mut rng::substream(seed, "bench-noise", 0), clean.len()), SAMPLE_RATE)
        .expect("valid signal");
    let noisy = data::mix_at_snr(&clean, &noise, 5.0, 0).expect("mixable");
    (clean, noisy)
}
