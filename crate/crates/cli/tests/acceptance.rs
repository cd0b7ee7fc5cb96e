//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Criteria 11 and 12 drive the release binary end to end.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use adaptive_denoise::data;
use adaptive_denoise::dsp::{self, AudioSignal, FRAME_SIZE, HOP, NUM_BINS, SAMPLE_RATE};
use adaptive_denoise::enhancer::{self, Enhancer, ParameterSet, ParameterSpace};
use adaptive_denoise::metrics::{self, MetricReport, NelderMeadOptions};
use adaptive_denoise::policy::{
    self, Action, AdamState, HiddenState, PolicyConfig, PolicyParameters, PolicyShape, StepRef,
};
use adaptive_denoise::rng;
use adaptive_denoise::trainer::{
    self, ActionMode, BanditEnv, BaselineEstimator, BaselineMode, PolicySetup, RewardNormalizer, RolloutOptions,
    TrainConfig,
};
use adaptive_denoise::Checkpoint;
use rand::Rng;

const SEED: u64 = 20240607;

/// Configuration of the desk-scale end-to-end run.
const DESK_CONFIG: &str = r#"
seed = 7

[policy]
hold_bias = 3.0

[trainer]
learning_rate = 3e-3
epochs = 5
max_episodes = 500
baseline_mode = "reference"
normalizer_scope = "utterance"
feed_reward = false
eval_action_mode = "greedy"

[tune.nelder_mead]
max_iter = 200
tol = 1e-6

[eval]
action_mode = "greedy"
"#;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_signal(len: usize, seed: u64) -> AudioSignal {
    let mut r = rng::substream(seed, "acceptance-signal", 0);
    AudioSignal::new((0..len).map(|_| r.random_range(-1.0..1.0)).collect(), SAMPLE_RATE).unwrap()
}

fn c1_stft_round_trip() -> Outcome {
    let x = random_signal(SAMPLE_RATE as usize, SEED);
    let start = Instant::now();
    let spec = dsp::stft(&x, FRAME_SIZE, HOP).unwrap();
    let y = dsp::istft(&spec).unwrap();
    let elapsed = start.elapsed();
    let hi = spec.signal_len() - HOP;
    let (mut num, mut den) = (0.0, 0.0);
    for n in HOP..hi {
        num += (x.samples[n] - y.samples[n]).powi(2);
        den += x.samples[n].powi(2);
    }
    let rel = (num / den).sqrt();
    outcome(
        rel < 1e-10 && elapsed < Duration::from_secs(1),
        format!("relative RMS error {rel:.2e} (< 1e-10), {:.1} ms (< 1 s)", elapsed.as_secs_f64() * 1e3),
    )
}

fn c2_cola() -> Outcome {
    let w = dsp::hann_window(FRAME_SIZE).unwrap();
    let worst = (0..HOP).map(|k| (w[k] + w[k + HOP] - 1.0).abs()).fold(0.0, f64::max);
    outcome(worst < 1e-12, format!("max |w[k] + w[k+256] - 1| = {worst:.2e} (< 1e-12)"))
}

fn c3_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut r = rng::substream(SEED, "acceptance-gradient", 0);
    let shape = PolicyShape::new(3, 4, 2);
    let cfg = PolicyConfig {
        init_scale: 0.5,
        ..PolicyConfig::default()
    };
    let mut theta = PolicyParameters::init(shape, &cfg, &mut r);
    for v in theta.as_mut_slice() {
        *v += r.random_range(-0.2..0.2);
    }
    let inputs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let actions: Vec<Action> = (0..5)
        .map(|_| Action {
            choices: (0..2).map(|_| r.random_range(-1..=1)).collect(),
        })
        .collect();
    let adv: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
    let steps: Vec<StepRef<'_>> = inputs
        .iter()
        .zip(&actions)
        .map(|(x, a)| StepRef { input: x, action: a })
        .collect();
    let grad = policy::surrogate_gradient(&theta, &steps, &adv).unwrap();
    let h = 1e-5;
    let (mut worst, mut checked) = (0.0f64, 0);
    for i in 0..shape.len() {
        let mut plus = theta.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = theta.clone();
        minus.as_mut_slice()[i] -= h;
        let fd = (policy::surrogate_objective(&plus, &steps, &adv).unwrap()
            - policy::surrogate_objective(&minus, &steps, &adv).unwrap())
            / (2.0 * h);
        let g = grad.as_slice()[i];
        if g.abs() > 1e-8 {
            checked += 1;
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && checked > 0 && elapsed < Duration::from_secs(10),
        format!(
            "max relative error {worst:.2e} (< 1e-4) over {checked}/{} coordinates, {:.2} s (< 10 s)",
            shape.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c4_adam_oracle() -> Outcome {
    // θ ← θ − 0.1·m̂/(√v̂ + 1e-8) on f(θ) = θ², evaluated by hand
    let expected = [0.9000000005, 0.8004122286917928, 0.7015862729460303];
    let mut theta = [1.0];
    let mut opt = AdamState::new(1, 0.1);
    let mut worst: f64 = 0.0;
    for e in expected {
        let g = [2.0 * theta[0]];
        policy::adam_update(&mut theta, &g, &mut opt).unwrap();
        worst = worst.max((theta[0] - e).abs());
    }
    outcome(worst <= 1e-12, format!("max deviation from hand computation {worst:.2e} (<= 1e-12)"))
}

fn c5_nelder_mead() -> Outcome {
    let target = [0.3, 0.7, 0.5, 0.1, 0.9, 0.45];
    let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let res = metrics::nelder_mead(f, &[0.5; 6], &NelderMeadOptions::default()).unwrap();
    let dist = res.x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    outcome(
        dist < 1e-3 && res.iterations <= 2000,
        format!("distance to optimum {dist:.2e} (< 1e-3) after {} iterations (<= 2000)", res.iterations),
    )
}

fn c6_noise_tracker() -> Outcome {
    let frames = 200;
    let len = (frames - 1) * HOP + FRAME_SIZE;
    let noise = AudioSignal::new(
        data::white_noise(&mut rng::substream(SEED, "acceptance-noise", 0), len)
            .into_iter()
            .map(|v| 0.05 * v)
            .collect(),
        SAMPLE_RATE,
    )
    .unwrap();
    let spec = dsp::stft(&noise, FRAME_SIZE, HOP).unwrap();
    let params = ParameterSet {
        noise_beta: 0.999,
        ..ParameterSet::default()
    };
    let enh = Enhancer { lead_in_frames: frames };
    let mut state = enh.bootstrap(&spec).unwrap();
    for f in &spec.frames {
        enhancer::process_frame(&mut state, f, &params).unwrap();
    }
    // independent per-bin sample variance via a direct DFT
    let w: Vec<f64> = (0..FRAME_SIZE)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FRAME_SIZE as f64).cos())
        .collect();
    let mut within = 0;
    for k in 0..NUM_BINS {
        let mut acc = 0.0;
        for t in 0..frames {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, wi) in w.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * ((k * i) % FRAME_SIZE) as f64 / FRAME_SIZE as f64;
                let x = noise.samples[t * HOP + i] * wi;
                re += x * ph.cos();
                im += x * ph.sin();
            }
            acc += re * re + im * im;
        }
        let var = acc / frames as f64;
        if (state.noise_psd[k] - var).abs() <= 0.1 * var {
            within += 1;
        }
    }
    let frac = within as f64 / NUM_BINS as f64;
    outcome(
        frac >= 0.95,
        format!("{within}/{NUM_BINS} bins within 10% ({:.1}%, need >= 95%)", 100.0 * frac),
    )
}

fn c7_mixing() -> Outcome {
    let mut r = rng::substream(SEED, "acceptance-mix", 0);
    let grid = [0.0, 10.0, 20.0, 30.0];
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = r.random_range(4000..20000);
        let nlen = len + r.random_range(0..20000);
        let clean = AudioSignal::new(data::white_noise(&mut r, len).iter().map(|v| 0.1 * v).collect(), SAMPLE_RATE).unwrap();
        let noise = AudioSignal::new(data::pink_noise(&mut r, nlen), SAMPLE_RATE).unwrap();
        let target = grid[r.random_range(0..grid.len())];
        let offset = data::random_offset(&mut r, len, nlen).unwrap();
        let mix = data::mix_at_snr(&clean, &noise, target, offset).unwrap();
        let resid: Vec<f64> = mix.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect();
        let ps: f64 = clean.samples.iter().map(|v| v * v).sum();
        let pn: f64 = resid.iter().map(|v| v * v).sum();
        let measured = 10.0 * (ps / pn).log10();
        worst = worst.max((measured - target).abs());
    }
    outcome(worst <= 1e-9, format!("max |measured - target| = {worst:.2e} dB over 100 pairs (<= 1e-9)"))
}

fn c8_reward_contract() -> Outcome {
    let mut r = rng::substream(SEED, "acceptance-reward", 0);
    let mut iff_ok = true;
    for _ in 0..1000 {
        let g: Vec<f64> = (0..NUM_BINS).map(|_| r.random_range(0.0..10.0)).collect();
        iff_ok &= trainer::frame_reward(&g, &g).unwrap() == 0.0;
        let mut e = g.clone();
        let k = r.random_range(0..NUM_BINS);
        e[k] += r.random_range(1e-6..1.0);
        iff_ok &= trainer::frame_reward(&g, &e).unwrap() < 0.0;
    }
    let mut norms = [RewardNormalizer::default(), RewardNormalizer::new(0.9).unwrap()];
    let mut in_range = 0usize;
    let draws = 100_000;
    for _ in 0..draws {
        let scale = 10f64.powf(r.random_range(-6.0..6.0));
        let g: Vec<f64> = (0..8).map(|_| scale * r.random_range(0.0..1.0)).collect();
        let e: Vec<f64> = (0..8).map(|_| scale * r.random_range(0.0..1.0)).collect();
        let raw = trainer::frame_reward(&g, &e).unwrap();
        let ok = norms.iter_mut().all(|n| (-1.0..=1.0).contains(&n.normalize(raw).unwrap()));
        in_range += ok as usize;
    }
    outcome(
        iff_ok && in_range == draws,
        format!("r = 0 iff identical: {iff_ok}; {in_range}/{draws} normalized rewards in [-1, 1]"),
    )
}

fn bandit_setup() -> (PolicySetup, TrainConfig) {
    let setup = PolicySetup {
        enhancer: Enhancer::default(),
        space: ParameterSpace::default(),
        initial_params: ParameterSet::default(),
        policy: PolicyConfig::default(),
    };
    (setup, TrainConfig::default())
}

fn p_increase(ckpt: &Checkpoint) -> f64 {
    let setup = &ckpt.setup;
    let x = policy::policy_input(
        &vec![0.0; dsp::FEATURE_DIM],
        &setup.space.normalize(&setup.initial_params),
        0.0,
    );
    let h = policy::lstm_step(&ckpt.theta, &x, &HiddenState::zeros(ckpt.theta.shape().hidden)).unwrap();
    policy::action_distribution(&ckpt.theta, &h.h).unwrap()[0][2]
}

fn c9_bandit() -> Outcome {
    let (setup, train) = bandit_setup();
    let mut ckpt = Checkpoint::fresh(setup, train, SEED).unwrap();
    let start = p_increase(&ckpt);
    let mut reached = None;
    for episode in 1..=2000 {
        ckpt.learn_episode(&mut BanditEnv::new(1), None).unwrap();
        if p_increase(&ckpt) > 0.9 {
            reached = Some(episode);
            break;
        }
    }
    match reached {
        Some(n) => outcome(
            true,
            format!("P(increase) {start:.3} -> {:.3} after {n} episodes (> 0.9 within 2000)", p_increase(&ckpt)),
        ),
        None => outcome(false, format!("P(increase) {:.3} after 2000 episodes", p_increase(&ckpt))),
    }
}

fn c10_variance() -> Outcome {
    let (setup, train) = bandit_setup();
    let ckpt = Checkpoint::fresh(setup, train, SEED).unwrap();
    let n = ckpt.theta.as_slice().len();
    let rollouts = 100;
    let mut baseline = BaselineEstimator::new(BaselineMode::EpisodeMean, 0.9).unwrap();
    let mut normalizer = RewardNormalizer::default();
    let (mut su, mut squ, mut sb, mut sqb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let opts = RolloutOptions {
        space: &ckpt.setup.space,
        initial_params: ckpt.setup.initial_params,
        action_mode: ActionMode::Sample,
        feed_reward: true,
    };
    for i in 0..rollouts {
        let mut r = rng::substream(SEED, "acceptance-variance", i);
        let traj = trainer::rollout(&ckpt.theta, &mut BanditEnv::new(1), opts, &mut normalizer, &mut r, i).unwrap();
        let b = baseline.values(&traj, None).unwrap();
        let gb = trainer::reinforce_gradient(&ckpt.theta, &traj, &b).unwrap();
        let gu = trainer::reinforce_gradient(&ckpt.theta, &traj, &vec![0.0; traj.len()]).unwrap();
        for k in 0..n {
            let (u, v) = (gu.as_slice()[k], gb.as_slice()[k]);
            su[k] += u;
            squ[k] += u * u;
            sb[k] += v;
            sqb[k] += v * v;
        }
    }
    let m = rollouts as f64;
    let (mut active, mut lower, mut agree) = (0usize, 0usize, 0usize);
    for k in 0..n {
        let (mu, mb) = (su[k] / m, sb[k] / m);
        let var_u = ((squ[k] - m * mu * mu) / (m - 1.0)).max(0.0);
        let var_b = ((sqb[k] - m * mb * mb) / (m - 1.0)).max(0.0);
        if var_u == 0.0 && var_b == 0.0 {
            continue;
        }
        active += 1;
        if var_b <= var_u {
            lower += 1;
        }
        if (mu - mb).abs() <= 2.0 * ((var_u + var_b) / m).sqrt() {
            agree += 1;
        }
    }
    let frac = lower as f64 / active.max(1) as f64;
    outcome(
        active > 0 && frac >= 0.9 && agree == active,
        format!(
            "var(baselined) <= var(unbiased) on {:.1}% of {active} active coordinates (>= 90%); means within 2 SE on {agree}/{active}",
            100.0 * frac
        ),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_adaptive-denoise")
}

fn run_cli(config: &Path, args: &[&str]) -> std::result::Result<String, String> {
    let out = Command::new(bin())
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "{args:?} exited with {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn desk_config(root: &Path) -> PathBuf {
    let path = root.join("desk.toml");
    let text = format!("{DESK_CONFIG}\n[paths]\nroot = {:?}\n", root.join("work"));
    std::fs::write(&path, text).unwrap();
    path
}

fn c11_end_to_end(root: &Path) -> Outcome {
    let cfg = desk_config(root);
    let start = Instant::now();
    let mut stage_times = Vec::new();
    for stage in [&["synth"][..], &["mix"], &["tune"], &["train"]] {
        let t = Instant::now();
        if let Err(e) = run_cli(&cfg, stage) {
            return outcome(false, e);
        }
        stage_times.push(format!("{} {:.0}s", stage[0], t.elapsed().as_secs_f64()));
    }
    let ckpt = root.join("work/train/best.ckpt");
    if let Err(e) = run_cli(&cfg, &["eval", "--checkpoint", ckpt.to_str().unwrap()]) {
        return outcome(false, e);
    }
    let elapsed = start.elapsed();
    let text = std::fs::read_to_string(root.join("work/eval/report.json")).unwrap();
    let reports: Vec<MetricReport> = serde_json::from_str(&text).unwrap();
    let find = |m: &str| reports.iter().find(|r| r.method.starts_with(m)).unwrap();
    let (noisy, base, rl) = (find("noisy"), find("baseline"), find("rl-"));
    let n = rl.utterances.len();
    let improvement = rl
        .utterances
        .iter()
        .zip(&base.utterances)
        .map(|(a, b)| a.metrics.snr_db - b.metrics.snr_db)
        .sum::<f64>()
        / n as f64;
    let a = base.aggregate.snr_db - noisy.aggregate.snr_db;
    let pass_a = a >= 1.0;
    let pass_b = rl.aggregate.snr_db >= base.aggregate.snr_db && improvement > 0.0 && rl.aggregate.mse <= base.aggregate.mse;
    let pass_t = elapsed <= Duration::from_secs(30 * 60);
    outcome(
        pass_a && pass_b && pass_t,
        format!(
            "test n={n}: SNR noisy {:.3} / baseline {:.3} / RL {:.3} dB; (a) baseline gain {a:+.3} dB (>= 1); \
             (b) RL gain {improvement:+.4} dB (> 0), MSE {:.4e} vs {:.4e} (<=); {:.1} min [{}] (<= 30)",
            noisy.aggregate.snr_db,
            base.aggregate.snr_db,
            rl.aggregate.snr_db,
            rl.aggregate.mse,
            base.aggregate.mse,
            elapsed.as_secs_f64() / 60.0,
            stage_times.join(", ")
        ),
    )
}

fn c12_determinism(root: &Path) -> Outcome {
    let cfg = desk_config(root);
    if !root.join("work/manifest.json").exists() {
        for stage in [&["synth"][..], &["mix"], &["tune"]] {
            if let Err(e) = run_cli(&cfg, stage) {
                return outcome(false, e);
            }
        }
    }
    let dirs = [root.join("det_a"), root.join("det_b")];
    for d in &dirs {
        if let Err(e) = run_cli(&cfg, &["train", "--max-episodes", "60", "--epochs", "2", "--out", d.to_str().unwrap()]) {
            return outcome(false, e);
        }
    }
    let files = ["best.ckpt", "last.ckpt", "train_log.csv", "validation.csv"];
    let same: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dirs[0].join(f)).ok() == std::fs::read(dirs[1].join(f)).ok())
        .collect();
    outcome(
        same.len() == files.len(),
        format!("byte-identical across two runs: {}/{} ({})", same.len(), files.len(), same.join(", ")),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path().to_path_buf();
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "STFT round trip", Box::new(c1_stft_round_trip)),
        (2, "COLA identity", Box::new(c2_cola)),
        (3, "REINFORCE gradient check", Box::new(c3_gradient_check)),
        (4, "Adam oracle", Box::new(c4_adam_oracle)),
        (5, "Nelder-Mead sphere", Box::new(c5_nelder_mead)),
        (6, "noise tracker", Box::new(c6_noise_tracker)),
        (7, "mixing accuracy", Box::new(c7_mixing)),
        (8, "reward contract", Box::new(c8_reward_contract)),
        (9, "bandit convergence", Box::new(c9_bandit)),
        (10, "variance reduction", Box::new(c10_variance)),
        (11, "desk-scale end to end", Box::new({
            let r = root.clone();
            move || c11_end_to_end(&r)
        })),
        (12, "training determinism", Box::new({
            let r = root.clone();
            move || c12_determinism(&r)
        })),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in &criteria {
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} [{tag}] {name}: {} ({:.1}s)",
            result.detail,
            t.elapsed().as_secs_f64()
        );
        if !result.pass {
            failed.push(*id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
