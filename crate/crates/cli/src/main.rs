use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_denoise::checkpoint::{Checkpoint, ParamsDocument};
use adaptive_denoise::config::Config;
use adaptive_denoise::data::{self, Manifest, Split, WavFormat};
use adaptive_denoise::dsp::HOP;
use adaptive_denoise::enhancer::{ParameterSet, Schedule};
use adaptive_denoise::metrics::{self, Method};
use adaptive_denoise::trainer::{self, BaselineMode, PolicySetup};
use adaptive_denoise::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "adaptive-denoise", version, about = "Adaptive spectral noise suppression with a REINFORCE-trained controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration file (defaults apply when omitted)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed; overrides the config's `seed`
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic clean/noise/RIR corpus
    Synth {
        /// Corpus directory (default: paths.corpus)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the manifest and render noisy mixtures
    Mix(MixArgs),
    /// Tune the fixed-parameter baseline with Nelder-Mead on the train split
    Tune {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Parameter document to write (default: paths.params)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Iteration trace CSV (default: next to the parameter document)
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train the policy with REINFORCE
    Train(TrainArgs),
    /// Enhance one WAV file with a checkpoint or a fixed parameter document
    Enhance(EnhanceArgs),
    /// Score methods on a manifest split
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct MixArgs {
    #[arg(long)]
    clean_dir: Option<PathBuf>,
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    #[arg(long)]
    rir_dir: Option<PathBuf>,
    /// Skip room-impulse convolution
    #[arg(long)]
    no_rir: bool,
    /// Comma-separated target SNRs in dB
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_grid: Option<Vec<f64>>,
    /// Manifest to write (default: paths.manifest)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory for rendered mixtures (default: paths.mixed)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Tuned parameter document giving the initial parameters
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output directory (default: paths.train)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_baseline_mode)]
    baseline_mode: Option<BaselineMode>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_episodes: Option<usize>,
    /// Pick the learning rate from trainer.lr_grid by validation return
    #[arg(long)]
    select_lr: bool,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[arg(long, conflicts_with = "params", required_unless_present = "params")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Per-frame parameter CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Clean reference, used only to feed rewards back to the policy
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "float32")]
    format: FormatArg,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Pcm16,
    Float32,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// train, val or test (default: eval.split)
    #[arg(long)]
    split: Option<String>,
    /// Tuned parameter document for the baseline row
    #[arg(long)]
    params: Option<PathBuf>,
    /// Policy checkpoints, one row each
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Output directory (default: paths.eval)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_baseline_mode(s: &str) -> std::result::Result<BaselineMode, String> {
    match s {
        "none" => Ok(BaselineMode::None),
        "episode-mean" => Ok(BaselineMode::EpisodeMean),
        "ema" => Ok(BaselineMode::Ema),
        "reference" => Ok(BaselineMode::Reference),
        other => Err(format!("unknown baseline mode '{other}' (none, episode-mean, ema, reference)")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn load_config(g: &Global) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p).map_err(|e| match e {
            Error::NotFound(p) => Error::Config(format!("config file {} not found", p.display())),
            other => other,
        })?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn cmd_synth(cfg: &Config, out: Option<PathBuf>) -> Result<()> {
    let dir = out.unwrap_or_else(|| cfg.paths.resolve(&cfg.paths.corpus));
    let synth = data::SynthConfig {
        num_rir: if cfg.data.use_rir { cfg.data.synth.num_rir } else { 0 },
        ..cfg.data.synth.clone()
    };
    let layout = data::synth_corpus(&synth, cfg.seed, &dir)?;
    eprintln!(
        "wrote {} clean, {} noise, {} RIR files",
        layout.clean.len(),
        layout.noise.len(),
        layout.rirs.len()
    );
    println!("{}", layout.clean_dir.display());
    println!("{}", layout.noise_dir.display());
    if let Some(d) = &layout.rir_dir {
        println!("{}", d.display());
    }
    Ok(())
}

fn cmd_mix(cfg: &Config, a: MixArgs) -> Result<()> {
    let corpus = cfg.paths.resolve(&cfg.paths.corpus);
    let clean_dir = a.clean_dir.unwrap_or_else(|| corpus.join("clean"));
    let noise_dir = a.noise_dir.unwrap_or_else(|| corpus.join("noise"));
    let rir_dir = if a.no_rir || !cfg.data.use_rir {
        None
    } else {
        Some(a.rir_dir.unwrap_or_else(|| corpus.join("rir")))
    };
    let grid = a.snr_grid.unwrap_or_else(|| cfg.data.snr_grid.clone());
    let manifest_path = a.manifest.unwrap_or_else(|| cfg.paths.resolve(&cfg.paths.manifest));
    let out_dir = a.out_dir.unwrap_or_else(|| cfg.paths.resolve(&cfg.paths.mixed));
    if !clean_dir.is_dir() {
        return Err(Error::NotFound(clean_dir));
    }
    let mut manifest = data::build_manifest(&clean_dir, &noise_dir, rir_dir.as_deref(), &grid, cfg.data.ratios, cfg.seed)?;
    ensure_dir(&out_dir)?;
    let mut worst: f64 = 0.0;
    for e in &mut manifest.entries {
        let u = data::render_entry(e, manifest.sample_rate)?;
        let resid: Vec<f64> = u.noisy.samples.iter().zip(&u.clean.samples).map(|(n, c)| n - c).collect();
        let measured = 10.0 * (data::power(&u.clean.samples) / data::power(&resid)).log10();
        worst = worst.max((measured - e.target_snr_db).abs());
        let noisy = out_dir.join(format!("{}_noisy.wav", e.utterance_id));
        let reference = out_dir.join(format!("{}_reference.wav", e.utterance_id));
        data::write_wav(&noisy, &u.noisy, WavFormat::Float32)?;
        data::write_wav(&reference, &u.clean, WavFormat::Float32)?;
        e.noisy_path = Some(noisy);
        e.reference_path = Some(reference);
    }
    if worst > 1e-9 {
        return Err(Error::Numeric(format!("mixture SNR off target by {worst:e} dB")));
    }
    ensure_parent(&manifest_path)?;
    manifest.save(&manifest_path)?;
    eprintln!(
        "{} entries, max |SNR error| {worst:.3e} dB",
        manifest.entries.len()
    );
    println!("{}", manifest_path.display());
    Ok(())
}

fn load_manifest(cfg: &Config, path: Option<PathBuf>) -> Result<Manifest> {
    Manifest::load(&path.unwrap_or_else(|| cfg.paths.resolve(&cfg.paths.manifest)))
}

fn cmd_tune(cfg: &Config, manifest: Option<PathBuf>, out: Option<PathBuf>, trace: Option<PathBuf>) -> Result<()> {
    let manifest = load_manifest(cfg, manifest)?;
    let train = data::load_split(&manifest, Split::Train)?;
    let space = &cfg.enhancer.space;
    let res = metrics::tune_baseline(
        &train,
        &cfg.enhancer.enhancer(),
        space,
        &space.defaults(),
        cfg.tune.weights,
        &cfg.tune.nelder_mead,
    )?;
    let out = out.unwrap_or_else(|| cfg.paths.resolve(&cfg.paths.params));
    let trace = trace.unwrap_or_else(|| out.with_extension("trace.csv"));
    ensure_parent(&out)?;
    ensure_parent(&trace)?;
    ParamsDocument::new(res.params, *space, res.objective, res.iterations, cfg.seed).save(&out)?;
    trainer::write_csv(&trace, &res.trace)?;
    eprintln!("objective {:.6} after {} iterations", res.objective, res.iterations);
    println!("{}", out.display());
    Ok(())
}

fn load_params(cfg: &Config, path: Option<PathBuf>) -> Result<ParamsDocument> {
    let doc = ParamsDocument::load(&path.unwrap_or_else(|| cfg.paths.resolve(&cfg.paths.params)))?;
    if doc.space != cfg.enhancer.space {
        return Err(Error::Config("parameter document was tuned in a different parameter space".into()));
    }
    Ok(doc)
}

fn cmd_train(cfg: &Config, a: TrainArgs) -> Result<()> {
    let manifest = load_manifest(cfg, a.manifest)?;
    let params = load_params(cfg, a.params)?;
    let mut tc = cfg.trainer.clone();
    if let Some(m) = a.baseline_mode {
        tc.baseline_mode = m;
    }
    if let Some(lr) = a.lr {
        tc.learning_rate = lr;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(m) = a.max_episodes {
        tc.max_episodes = m;
    }
    tc.validate().map_err(|e| Error::Config(e.to_string()))?;
    let setup = PolicySetup {
        enhancer: cfg.enhancer.enhancer(),
        space: cfg.enhancer.space,
        initial_params: params.params,
        policy: cfg.policy,
    };
    let train = data::load_split(&manifest, Split::Train)?;
    let val = data::load_split(&manifest, Split::Val)?;
    let outcome = if a.select_lr {
        let (lr, out) = trainer::select_learning_rate(&tc, &setup, cfg.seed, &train, &val)?;
        eprintln!("selected learning rate {lr}");
        out
    } else {
        trainer::train(&tc, &setup, cfg.seed, &train, &val)?
    };
    for v in &outcome.validation {
        eprintln!(
            "epoch {} episodes {} val return {:.4} snr {:.3} dB lsd {:.3} mse {:.3e}",
            v.epoch, v.episodes, v.mean_return, v.snr_db, v.lsd, v.mse
        );
    }
    let dir = a.out.unwrap_or_else(|| cfg.paths.resolve(&cfg.paths.train));
    trainer::write_outcome(&outcome, &dir)?;
    println!("{}", dir.join("best.ckpt").display());
    Ok(())
}

fn write_trace(path: &Path, schedule: &[ParameterSet], sample_rate: u32) -> Result<()> {
    let mut rows = String::from("frame,time_s");
    for n in ParameterSet::NAMES {
        rows.push(',');
        rows.push_str(n);
    }
    rows.push('\n');
    for (t, p) in schedule.iter().enumerate() {
        // frame t is centred on input sample t·HOP
        rows.push_str(&format!("{t},{}", (t * HOP) as f64 / sample_rate as f64));
        for v in p.to_array() {
            rows.push_str(&format!(",{v}"));
        }
        rows.push('\n');
    }
    ensure_parent(path)?;
    std::fs::write(path, rows).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_enhance(cfg: &Config, a: EnhanceArgs) -> Result<()> {
    let noisy = data::read_wav(&a.input)?;
    let (schedule, enhanced) = if let Some(ck) = &a.checkpoint {
        let ckpt = Checkpoint::load(ck)?;
        let reference = a.reference.as_deref().map(data::read_wav).transpose()?;
        let (traj, out) = trainer::enhance_with_policy(&ckpt, &noisy, reference.as_ref(), cfg.eval.action_mode, cfg.seed)?;
        (traj.params_schedule(), out)
    } else {
        let doc = load_params(cfg, a.params)?;
        let enhancer = cfg.enhancer.enhancer();
        let out = enhancer.enhance_utterance(&noisy, Schedule::Fixed(&doc.params))?;
        let frames = adaptive_denoise::enhancer::utterance_frames(noisy.len());
        (vec![doc.params; frames], out)
    };
    ensure_parent(&a.output)?;
    let format = match a.format {
        FormatArg::Pcm16 => WavFormat::Pcm16,
        FormatArg::Float32 => WavFormat::Float32,
    };
    data::write_wav(&a.output, &enhanced, format)?;
    if let Some(t) = &a.trace {
        write_trace(t, &schedule, noisy.sample_rate)?;
    }
    println!("{}", a.output.display());
    Ok(())
}

fn cmd_eval(cfg: &Config, a: EvalArgs) -> Result<()> {
    let manifest = load_manifest(cfg, a.manifest)?;
    let split: Split = a
        .split
        .as_deref()
        .unwrap_or(&cfg.eval.split)
        .parse()
        .map_err(|e: Error| Error::Config(e.to_string()))?;
    let utts = data::load_split(&manifest, split)?;
    if utts.is_empty() {
        return Err(Error::InvalidArgument(format!("split {} is empty", split.name())));
    }
    let enhancer = cfg.enhancer.enhancer();
    let params = load_params(cfg, a.params)?;
    let ckpts = a.checkpoint.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;

    let mut reports = vec![metrics::evaluate(&utts, &Method::Noisy)?];
    reports.push(metrics::evaluate(
        &utts,
        &Method::Fixed {
            enhancer: &enhancer,
            params: params.params,
        },
    )?);
    for ck in &ckpts {
        reports.push(metrics::evaluate(
            &utts,
            &Method::Policy {
                checkpoint: ck,
                action_mode: cfg.eval.action_mode,
                seed: cfg.seed,
            },
        )?);
    }
    reports.push(metrics::evaluate(&utts, &Method::Clean)?);

    let dir = a.out.unwrap_or_else(|| cfg.paths.resolve(&cfg.paths.eval));
    ensure_dir(&dir)?;
    metrics::write_report_csv(&dir.join("report.csv"), &reports)?;
    metrics::write_bucket_csv(&dir.join("buckets.csv"), &reports)?;
    let json = serde_json::to_string_pretty(&reports).map_err(|e| Error::Parse(e.to_string()))?;
    let path = dir.join("report.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::Io { path, source: e })?;
    print!("{}", metrics::format_table(&reports));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Synth { out } => cmd_synth(&cfg, out),
        Command::Mix(a) => cmd_mix(&cfg, a),
        Command::Tune { manifest, out, trace } => cmd_tune(&cfg, manifest, out, trace),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Enhance(a) => cmd_enhance(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
