//! `pldnet` batch front end.
//!
//! Settings resolve in order: built-in defaults, `--config FILE`,
//! `--set key=value` (repeatable), then subcommand flags. Every output file
//! gets a `<output>.cfg` sidecar holding the effective configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use log::{info, warn};

use pldnet::config::RunConfig;
use pldnet::dsp::wav::{read_wav, write_wav};
use pldnet::dsp::{AudioBuffer, SAMPLE_RATE};
use pldnet::enhance::{Enhancer, Mode};
use pldnet::metrics::evaluate_manifest;
use pldnet::model::{load_examples, train_toy, ModelConfig};
use pldnet::pld::write_trace_csv;
use pldnet::selftest;
use pldnet::sim::{
    build_dataset, distance, image_method_rir, schroeder_rt60, write_synthetic_corpus, DatasetConfig, RoomSpec,
    MANIFEST_NAME, SOURCE_POS,
};
use pldnet::tensor::{load_checkpoint, save_checkpoint, DType};

#[derive(Debug, Parser)]
#[command(name = "pldnet", version, about = "Dual-microphone speech enhancement toolkit")]
struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key (repeatable), e.g. `--set pld.k_low=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a simulated two-microphone corpus with a manifest.
    Simulate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes (`sim.scenes`).
        #[arg(long)]
        scenes: Option<usize>,
        /// Seed of the first scene; scene i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory of mono speech WAVs (a synthetic corpus is generated when absent).
        #[arg(long)]
        speech: Option<PathBuf>,
        /// Directory of mono noise WAVs.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Interfering talkers per scene (`sim.interferers`).
        #[arg(long)]
        interferers: Option<usize>,
        /// Fixed RT60 (s) instead of a random draw.
        #[arg(long)]
        rt60: Option<f64>,
        /// Fixed SNR (dB); `inf` disables diffuse noise.
        #[arg(long)]
        snr: Option<f64>,
        /// Fixed SIR (dB).
        #[arg(long)]
        sir: Option<f64>,
        /// Fixed mixture level (dBFS).
        #[arg(long)]
        level: Option<f64>,
        /// Length of generated corpus clips (s).
        #[arg(long)]
        clip_seconds: Option<f64>,
    },
    /// Enhance a 2-channel WAV (channel 0 primary, channel 1 secondary).
    Enhance {
        /// pld | net | full.
        #[arg(long)]
        mode: Option<Mode>,
        /// Input 2-channel WAV.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Output mono 32-bit float WAV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Weights for the `net` and `full` modes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the per-frame pre-filter trace as CSV.
        #[arg(long)]
        dump_trace: Option<PathBuf>,
    },
    /// Train the network on a simulated corpus.
    Train {
        /// Corpus directory holding `manifest.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Optimizer steps (`train.steps`).
        #[arg(long)]
        steps: Option<usize>,
        /// Seed for initialization and batch order.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path; the loss curve goes to `<out>.loss.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Maximum number of clips (0 = all).
        #[arg(long)]
        clips: Option<usize>,
        /// Truncate clips to this length (s, 0 = keep).
        #[arg(long)]
        clip_seconds: Option<f64>,
    },
    /// Score an enhancement mode on a manifest (SI-SDR, segmental SNR).
    Eval {
        /// Scene manifest written by `simulate`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// pld | net | full.
        #[arg(long)]
        mode: Option<Mode>,
        /// Weights for the `net` and `full` modes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Per-scene CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write an image-method room impulse response.
    Rir {
        /// Source-microphone distance (m).
        #[arg(long, default_value_t = 1.0)]
        dist: f64,
        /// Reverberation time (s).
        #[arg(long)]
        rt60: Option<f64>,
        /// Output mono WAV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant suites.
    Selftest {
        /// Seed of the randomized probes.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(pldnet::Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")).into());
        };
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match path {
        Some(p) => Ok(p.clone()),
        None => Err(pldnet::Error::Config(format!("{what} is not set")).into()),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(())
}

fn build_enhancer(cfg: &RunConfig) -> Result<Enhancer> {
    let model = if cfg.mode.uses_model() {
        let ck = require(&cfg.io.checkpoint, "io.checkpoint (--checkpoint)")?;
        let (manifest, params) = load_checkpoint(&ck)?;
        Some((ModelConfig::from_manifest(&manifest)?, params))
    } else {
        None
    };
    Ok(Enhancer::new(cfg.mode, cfg.frontend()?, model)?)
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (speech, noise) = match (&cfg.io.speech, &cfg.io.noise) {
        (Some(s), Some(n)) => (s.clone(), n.clone()),
        (None, None) => {
            let n_speech = cfg.sim.scenes.max(cfg.sim.interferers + 1);
            info!("writing synthetic corpus ({n_speech} speech, 4 noise clips)");
            write_synthetic_corpus(&out.join("corpus"), n_speech, 4, cfg.sim.clip_seconds, cfg.seed)?
        }
        _ => return Err(pldnet::Error::Config("--speech and --noise must be given together".into()).into()),
    };
    let rows = build_dataset(&DatasetConfig {
        num_scenes: cfg.sim.scenes,
        speech_dir: speech,
        noise_dir: noise,
        out_dir: out.to_path_buf(),
        seed: cfg.seed,
        overrides: cfg.scene_overrides(),
    })?;
    let manifest = out.join(MANIFEST_NAME);
    cfg.write_sidecar(&manifest)?;
    println!("{} scenes -> {}", rows.len(), manifest.display());
    Ok(())
}

fn enhance(cfg: &RunConfig) -> Result<()> {
    let input = require(&cfg.io.input, "io.input (--in)")?;
    let output = require(&cfg.io.output, "io.output (--out)")?;
    let mix = read_wav(&input)?;
    let out = build_enhancer(cfg)?.run(&mix)?;
    ensure_parent(&output)?;
    write_wav(&output, &AudioBuffer::mono(out.audio, mix.sample_rate())?)?;
    cfg.write_sidecar(&output)?;
    if let Some(trace) = &cfg.io.trace {
        if out.trace.is_empty() {
            warn!("mode {} has no pre-filter trace", cfg.mode);
        }
        ensure_parent(trace)?;
        write_trace_csv(trace, &out.trace)?;
    }
    println!("{} -> {}", input.display(), output.display());
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let data = require(&cfg.io.data, "io.data (--data)")?;
    let output = require(&cfg.io.output, "io.output (--out)")?;
    let manifest = if data.is_dir() { data.join(MANIFEST_NAME) } else { data };
    let examples = load_examples(&manifest, cfg.train.clips, cfg.train.clip_seconds)?;
    info!("training on {} clips for {} steps", examples.len(), cfg.train.steps);
    let report = train_toy(&cfg.model, &cfg.train_config()?, &examples, None)?;
    ensure_parent(&output)?;
    save_checkpoint(&output, &cfg.model.to_manifest(), &report.params, DType::F64)?;
    cfg.write_sidecar(&output)?;
    let mut curve = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        curve.push_str(&format!("{i},{l:e}\n"));
    }
    let mut loss_path = output.as_os_str().to_owned();
    loss_path.push(".loss.csv");
    fs::write(&loss_path, curve).with_context(|| format!("writing {}", PathBuf::from(&loss_path).display()))?;
    let first = report.losses.first().copied().unwrap_or(f64::NAN);
    println!(
        "loss {first:.4e} -> {:.4e} ({:.3} of initial), checkpoint {}",
        report.final_loss,
        report.final_loss / first,
        output.display()
    );
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let manifest = require(&cfg.io.manifest, "io.manifest (--manifest)")?;
    let enhancer = build_enhancer(cfg)?;
    let out = cfg.io.output.clone();
    if let Some(p) = &out {
        ensure_parent(p)?;
    }
    let report = evaluate_manifest(&manifest, |m| enhancer.run(m).map(|e| e.audio), out.as_deref())?;
    if let Some(p) = &out {
        cfg.write_sidecar(p)?;
    }
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
    println!(
        "mode {}  scenes {}  si-sdr in {}  out {}  delta {}  improved {}  seg-snr {}",
        cfg.mode,
        report.rows.len(),
        fmt(report.mean_si_sdr_in()),
        fmt(report.mean_si_sdr_out()),
        fmt(report.mean_delta()),
        fmt(report.improved_fraction()),
        fmt(report.mean_seg_snr_out()),
    );
    if !report.failures.is_empty() {
        bail!("{} of {} scenes failed", report.failures.len(), report.failures.len() + report.rows.len());
    }
    Ok(())
}

fn rir(cfg: &RunConfig, dist: f64, out: &Path) -> Result<()> {
    let room = RoomSpec {
        rt60: cfg.sim.rt60.unwrap_or(RoomSpec::default().rt60),
        ..RoomSpec::default()
    };
    let mic = [SOURCE_POS[0] - dist, SOURCE_POS[1], SOURCE_POS[2]];
    if dist.is_nan() || dist <= 0.0 || !room.contains(mic) {
        return Err(pldnet::Error::InvalidInput(format!("distance {dist} m leaves the room")).into());
    }
    let r = image_method_rir(&room, SOURCE_POS, mic, SAMPLE_RATE)?;
    ensure_parent(out)?;
    write_wav(out, &AudioBuffer::mono(r.taps.clone(), SAMPLE_RATE)?)?;
    cfg.write_sidecar(out)?;
    let expected = distance(SOURCE_POS, mic) / room.speed_of_sound * SAMPLE_RATE as f64;
    let est = schroeder_rt60(&r.taps, SAMPLE_RATE).map(|t| format!("{t:.3} s")).unwrap_or_else(|| "n/a".into());
    println!(
        "{} taps, direct path at sample {} (expected {expected:.2}), rt60 {:.3} s requested, {est} measured",
        r.taps.len(),
        r.peak_index(),
        room.rt60
    );
    Ok(())
}

fn run_selftest(seed: u64) -> Result<()> {
    let results = selftest::run_all(seed);
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!("{:<18} {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
    }
    if failed > 0 {
        bail!("{failed} of {} suites failed", results.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    macro_rules! over {
        ($field:expr, $v:expr) => {
            if let Some(v) = $v {
                $field = v;
            }
        };
    }
    macro_rules! over_opt {
        ($field:expr, $v:expr) => {
            if let Some(v) = $v {
                $field = Some(v);
            }
        };
    }
    match cli.command {
        Command::Simulate {
            out,
            scenes,
            seed,
            speech,
            noise,
            interferers,
            rt60,
            snr,
            sir,
            level,
            clip_seconds,
        } => {
            over!(cfg.sim.scenes, scenes);
            over!(cfg.seed, seed);
            over_opt!(cfg.io.speech, speech);
            over_opt!(cfg.io.noise, noise);
            over!(cfg.sim.interferers, interferers);
            over_opt!(cfg.sim.rt60, rt60);
            over_opt!(cfg.sim.snr_db, snr);
            over_opt!(cfg.sim.sir_db, sir);
            over_opt!(cfg.sim.level_db, level);
            over!(cfg.sim.clip_seconds, clip_seconds);
            cfg.io.data = Some(out.clone());
            cfg.validate()?;
            simulate(&cfg, &out)
        }
        Command::Enhance {
            mode,
            input,
            out,
            checkpoint,
            dump_trace,
        } => {
            over!(cfg.mode, mode);
            over_opt!(cfg.io.input, input);
            over_opt!(cfg.io.output, out);
            over_opt!(cfg.io.checkpoint, checkpoint);
            over_opt!(cfg.io.trace, dump_trace);
            cfg.validate()?;
            enhance(&cfg)
        }
        Command::Train {
            data,
            steps,
            seed,
            out,
            clips,
            clip_seconds,
        } => {
            over_opt!(cfg.io.data, data);
            over!(cfg.train.steps, steps);
            over!(cfg.seed, seed);
            over_opt!(cfg.io.output, out);
            over!(cfg.train.clips, clips);
            over!(cfg.train.clip_seconds, clip_seconds);
            cfg.validate()?;
            train(&cfg)
        }
        Command::Eval {
            manifest,
            mode,
            checkpoint,
            out,
        } => {
            over_opt!(cfg.io.manifest, manifest);
            over!(cfg.mode, mode);
            over_opt!(cfg.io.checkpoint, checkpoint);
            over_opt!(cfg.io.output, out);
            cfg.validate()?;
            eval(&cfg)
        }
        Command::Rir { dist, rt60, out } => {
            over_opt!(cfg.sim.rt60, rt60);
            cfg.io.output = Some(out.clone());
            cfg.validate()?;
            rir(&cfg, dist, &out)
        }
        Command::Selftest { seed } => {
            over!(cfg.seed, seed);
            run_selftest(cfg.seed)
        }
    }
}

/// Usage-type failures (bad configuration or input) exit with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<pldnet::Error>() {
        Some(pldnet::Error::Config(_) | pldnet::Error::InvalidInput(_) | pldnet::Error::Shape(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
