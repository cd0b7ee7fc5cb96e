use std::hint::black_box;

use adaptive_denoise::dsp::{self, FRAME_SIZE, HOP};
use adaptive_denoise::enhancer::{Enhancer, ParameterSet, ParameterSpace, Schedule};
use adaptive_denoise::policy::PolicyConfig;
use adaptive_denoise::trainer::{self, ActionMode, PolicySetup, RewardDomain, RolloutOptions, TrainConfig};
use adaptive_denoise::{rng, Checkpoint};
use adaptive_denoise_bench::utterance_pair;
use criterion::{criterion_group, criterion_main, Criterion};

fn stft_round_trip(c: &mut Criterion) {
    let (_, noisy) = utterance_pair(1.0, 1);
    c.bench_function("stft+istft 1 s", |b| {
        b.iter(|| {
            let spec = dsp::stft(black_box(&noisy), FRAME_SIZE, HOP).unwrap();
            dsp::istft(&spec).unwrap()
        })
    });
}

fn enhance_fixed(c: &mut Criterion) {
    let (_, noisy) = utterance_pair(4.0, 2);
    let enh = Enhancer::default();
    let params = ParameterSet::default();
    c.bench_function("enhance 4 s fixed params", |b| {
        b.iter(|| enh.enhance_utterance(black_box(&noisy), Schedule::Fixed(&params)).unwrap())
    });
}

fn policy_episode(c: &mut Criterion) {
    let (clean, noisy) = utterance_pair(4.0, 3);
    let setup = PolicySetup {
        enhancer: Enhancer::default(),
        space: ParameterSpace::default(),
        initial_params: ParameterSet::default(),
        policy: PolicyConfig::default(),
    };
    let ckpt = Checkpoint::fresh(setup, TrainConfig::default(), 4).unwrap();
    let opts = RolloutOptions {
        space: &ckpt.setup.space,
        initial_params: ckpt.setup.initial_params,
        action_mode: ActionMode::Sample,
        feed_reward: true,
    };
    let mut group = c.benchmark_group("policy 4 s episode");
    group.sample_size(10);
    group.bench_function("rollout", |b| {
        b.iter(|| {
            let mut env = trainer::EnhancerEnv::new(&ckpt.setup.enhancer, &clean, &noisy, RewardDomain::Magnitude).unwrap();
            let mut norm = ckpt.normalizer;
            trainer::rollout(&ckpt.theta, &mut env, opts, &mut norm, &mut rng::substream(5, "bench", 0), 0).unwrap()
        })
    });
    group.bench_function("rollout+update", |b| {
        b.iter_batched(
            || ckpt.clone(),
            |mut ck| {
                let mut env = trainer::EnhancerEnv::new(&ck.setup.enhancer, &clean, &noisy, RewardDomain::Magnitude).unwrap();
                ck.learn_episode(&mut env, None).unwrap()
            },
            criterion::BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, stft_round_trip, enhance_fixed, policy_episode);
criterion_main!(benches);
