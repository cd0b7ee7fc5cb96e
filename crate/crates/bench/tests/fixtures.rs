use adaptive_denoise::metrics;
use adaptive_denoise_bench::utterance_pair;

#[test]
fn utterance_pair_is_deterministic_and_mixed_at_5_db() {
    let (clean, noisy) = utterance_pair(1.0, 3);
    assert_eq!(clean.len(), 16_000);
    assert_eq!(noisy.len(), clean.len());
    assert!((metrics::snr_db(&clean, &noisy).unwrap() - 5.0).abs() < 1e-9);
    let (clean2, noisy2) = utterance_pair(1.0, 3);
    assert_eq!(clean, clean2);
    assert_eq!(noisy, noisy2);
}
