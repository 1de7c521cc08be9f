//! Flat `key=value` run configuration.
//!
//! One setting per line; `#` starts a comment. Keys are grouped by prefix:
//! `mode`, `seed`, `stft.*`, `pld.*`, `omlsa.*`, `tracker.*`, `model.*`,
//! `train.*`, `sim.*` and `io.*`. [`RunConfig::to_text`] lists every key
//! with its effective value.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dsp::StftConfig;
use crate::enhance::Mode;
use crate::error::{Error, Result};
use crate::model::{Frontend, ModelConfig, TrainConfig};
use crate::noise::NoiseTrackerParams;
use crate::pld::{OmlsaParams, PldConstants};
use crate::sim::{SceneOverrides, DEFAULT_INTERFERERS};
use crate::tensor::{OptimizerConfig, OptimizerKind};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    /// Maximum number of training pairs taken from the data set (0 = all).
    pub clips: usize,
    /// Clip length in seconds (longer pairs are truncated, 0 = keep).
    pub clip_seconds: f64,
    pub optimizer: OptimizerConfig,
    pub alpha: f64,
    pub log_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 0,
            clips: 0,
            clip_seconds: 0.0,
            optimizer: OptimizerConfig::default(),
            alpha: 1.0,
            log_every: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub scenes: usize,
    pub interferers: usize,
    /// Length of generated corpus clips (s).
    pub clip_seconds: f64,
    pub rt60: Option<f64>,
    pub snr_db: Option<f64>,
    pub sir_db: Option<f64>,
    pub level_db: Option<f64>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            scenes: 20,
            interferers: DEFAULT_INTERFERERS,
            clip_seconds: 2.0,
            rt60: None,
            snr_db: None,
            sir_db: None,
            level_db: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IoSettings {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub speech: Option<PathBuf>,
    pub noise: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub stft_win_len: usize,
    pub stft_hop: usize,
    pub stft_fft_size: usize,
    pub pld: PldConstants,
    pub omlsa: OmlsaParams,
    pub tracker: NoiseTrackerParams,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub sim: SimSettings,
    pub io: IoSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pld,
            seed: 0,
            stft_win_len: 512,
            stft_hop: 256,
            stft_fft_size: 512,
            pld: PldConstants::default(),
            omlsa: OmlsaParams::default(),
            tracker: NoiseTrackerParams::default(),
            model: ModelConfig::default(),
            train: TrainSettings::default(),
            sim: SimSettings::default(),
            io: IoSettings::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse '{v}'")))
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "none" || v.is_empty() {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true|false, got '{v}'"))),
    }
}

fn opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

fn path_opt(v: &Option<PathBuf>) -> String {
    v.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into())
}

impl RunConfig {
    /// Applies one setting; unknown keys and malformed values name the field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let p = |v: &str| -> Option<PathBuf> { (v != "none" && !v.is_empty()).then(|| PathBuf::from(v)) };
        match key {
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "stft.win_len" => self.stft_win_len = parse(key, v)?,
            "stft.hop" => self.stft_hop = parse(key, v)?,
            "stft.fft_size" => self.stft_fft_size = parse(key, v)?,
            "pld.k_low" => self.pld.k_low = parse(key, v)?,
            "pld.k_high" => self.pld.k_high = parse(key, v)?,
            "pld.gamma_thresh" => self.pld.gamma_thresh = parse(key, v)?,
            "pld.psi_tilde_thresh" => self.pld.psi_tilde_thresh = parse(key, v)?,
            "pld.kappa_low" => self.pld.kappa_low = parse(key, v)?,
            "pld.kappa_high" => self.pld.kappa_high = parse(key, v)?,
            "pld.gamma_low" => self.pld.gamma_low = parse(key, v)?,
            "pld.gamma_high" => self.pld.gamma_high = parse(key, v)?,
            "omlsa.dd_alpha" => self.omlsa.dd_alpha = parse(key, v)?,
            "omlsa.xi_min" => self.omlsa.xi_min = parse(key, v)?,
            "omlsa.g_min" => self.omlsa.g_min = parse(key, v)?,
            "omlsa.q_max" => self.omlsa.q_max = parse(key, v)?,
            "tracker.alpha_s" => self.tracker.alpha_s = parse(key, v)?,
            "tracker.alpha_d" => self.tracker.alpha_d = parse(key, v)?,
            "tracker.sub_window_len" => self.tracker.sub_window_len = parse(key, v)?,
            "tracker.num_sub_windows" => self.tracker.num_sub_windows = parse(key, v)?,
            "tracker.bias_comp" => self.tracker.bias_comp = parse(key, v)?,
            "tracker.presence_ratio" => self.tracker.presence_ratio = parse(key, v)?,
            "tracker.lambda_floor" => self.tracker.lambda_floor = parse(key, v)?,
            "train.steps" => self.train.steps = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.clips" => self.train.clips = parse(key, v)?,
            "train.clip_seconds" => self.train.clip_seconds = parse(key, v)?,
            "train.optimizer" => {
                self.train.optimizer.kind = match v {
                    "novograd" => OptimizerKind::NovoGrad,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(Error::config(format!("{key}: expected novograd|adam, got '{v}'"))),
                }
            }
            "train.lr" => self.train.optimizer.lr = parse(key, v)?,
            "train.beta1" => self.train.optimizer.beta1 = parse(key, v)?,
            "train.beta2" => self.train.optimizer.beta2 = parse(key, v)?,
            "train.eps" => self.train.optimizer.eps = parse(key, v)?,
            "train.weight_decay" => self.train.optimizer.weight_decay = parse(key, v)?,
            "train.grad_averaging" => self.train.optimizer.grad_averaging = parse_bool(key, v)?,
            "train.alpha" => self.train.alpha = parse(key, v)?,
            "train.log_every" => self.train.log_every = parse(key, v)?,
            "sim.scenes" => self.sim.scenes = parse(key, v)?,
            "sim.interferers" => self.sim.interferers = parse(key, v)?,
            "sim.clip_seconds" => self.sim.clip_seconds = parse(key, v)?,
            "sim.rt60" => self.sim.rt60 = parse_opt(key, v)?,
            "sim.snr_db" => self.sim.snr_db = parse_opt(key, v)?,
            "sim.sir_db" => self.sim.sir_db = parse_opt(key, v)?,
            "sim.level_db" => self.sim.level_db = parse_opt(key, v)?,
            "io.input" => self.io.input = p(v),
            "io.output" => self.io.output = p(v),
            "io.checkpoint" => self.io.checkpoint = p(v),
            "io.data" => self.io.data = p(v),
            "io.manifest" => self.io.manifest = p(v),
            "io.speech" => self.io.speech = p(v),
            "io.noise" => self.io.noise = p(v),
            "io.trace" => self.io.trace = p(v),
            _ => match key.strip_prefix("model.") {
                Some(k) if self.model.set(k, v)? => {}
                _ => return Err(Error::config(format!("unknown config key '{key}'"))),
            },
        }
        Ok(())
    }

    /// Applies every line of a config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value, got '{line}'", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn stft(&self) -> Result<StftConfig> {
        StftConfig::new(self.stft_win_len, self.stft_hop, self.stft_fft_size)
    }

    pub fn frontend(&self) -> Result<Frontend> {
        let stft = self.stft()?;
        self.pld.validate(stft.num_bins())?;
        self.omlsa.validate()?;
        self.tracker.validate()?;
        Ok(Frontend {
            stft,
            pld: self.pld.clone(),
            omlsa: self.omlsa.clone(),
            tracker: self.tracker.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fe = self.frontend()?;
        self.model.validate()?;
        if self.model.fft_bins != fe.stft.num_bins() {
            return Err(Error::config(format!(
                "model.fft_bins {} does not match the STFT's {} bins",
                self.model.fft_bins,
                fe.stft.num_bins()
            )));
        }
        let mut opt = self.train.optimizer.clone();
        opt.total_steps = self.train.steps.max(1);
        opt.validate()?;
        if !(self.train.alpha >= 0.0) || !(self.train.clip_seconds >= 0.0) {
            return Err(Error::config("train.alpha and train.clip_seconds must be non-negative"));
        }
        if !(self.sim.clip_seconds > 0.0) {
            return Err(Error::config("sim.clip_seconds must be positive"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            steps: self.train.steps,
            seed: self.seed,
            batch_size: self.train.batch_size,
            optimizer: self.train.optimizer.clone(),
            alpha: self.train.alpha,
            use_pld: self.mode.uses_pld(),
            frontend: self.frontend()?,
            log_every: self.train.log_every,
        })
    }

    pub fn scene_overrides(&self) -> SceneOverrides {
        SceneOverrides {
            rt60: self.sim.rt60,
            snr_db: self.sim.snr_db,
            sir_db: self.sim.sir_db,
            level_db: self.sim.level_db,
            num_interferers: Some(self.sim.interferers),
            ..Default::default()
        }
    }

    /// Every key with its effective value, in a fixed order.
    pub fn to_text(&self) -> String {
        let o = &self.train.optimizer;
        let mut lines = vec![
            format!("mode={}", self.mode),
            format!("seed={}", self.seed),
            format!("stft.win_len={}", self.stft_win_len),
            format!("stft.hop={}", self.stft_hop),
            format!("stft.fft_size={}", self.stft_fft_size),
            format!("pld.k_low={}", self.pld.k_low),
            format!("pld.k_high={}", self.pld.k_high),
            format!("pld.gamma_thresh={}", self.pld.gamma_thresh),
            format!("pld.psi_tilde_thresh={}", self.pld.psi_tilde_thresh),
            format!("pld.kappa_low={}", self.pld.kappa_low),
            format!("pld.kappa_high={}", self.pld.kappa_high),
            format!("pld.gamma_low={}", self.pld.gamma_low),
            format!("pld.gamma_high={}", self.pld.gamma_high),
            format!("omlsa.dd_alpha={}", self.omlsa.dd_alpha),
            format!("omlsa.xi_min={}", self.omlsa.xi_min),
            format!("omlsa.g_min={}", self.omlsa.g_min),
            format!("omlsa.q_max={}", self.omlsa.q_max),
            format!("tracker.alpha_s={}", self.tracker.alpha_s),
            format!("tracker.alpha_d={}", self.tracker.alpha_d),
            format!("tracker.sub_window_len={}", self.tracker.sub_window_len),
            format!("tracker.num_sub_windows={}", self.tracker.num_sub_windows),
            format!("tracker.bias_comp={}", self.tracker.bias_comp),
            format!("tracker.presence_ratio={}", self.tracker.presence_ratio),
            format!("tracker.lambda_floor={}", self.tracker.lambda_floor),
        ];
        lines.extend(self.model.to_manifest().lines().map(|l| format!("model.{l}")));
        lines.extend([
            format!("train.steps={}", self.train.steps),
            format!("train.batch_size={}", self.train.batch_size),
            format!("train.clips={}", self.train.clips),
            format!("train.clip_seconds={}", self.train.clip_seconds),
            format!(
                "train.optimizer={}",
                match o.kind {
                    OptimizerKind::NovoGrad => "novograd",
                    OptimizerKind::Adam => "adam",
                }
            ),
            format!("train.lr={}", o.lr),
            format!("train.beta1={}", o.beta1),
            format!("train.beta2={}", o.beta2),
            format!("train.eps={}", o.eps),
            format!("train.weight_decay={}", o.weight_decay),
            format!("train.grad_averaging={}", o.grad_averaging),
            format!("train.alpha={}", self.train.alpha),
            format!("train.log_every={}", self.train.log_every),
            format!("sim.scenes={}", self.sim.scenes),
            format!("sim.interferers={}", self.sim.interferers),
            format!("sim.clip_seconds={}", self.sim.clip_seconds),
            format!("sim.rt60={}", opt(&self.sim.rt60)),
            format!("sim.snr_db={}", opt(&self.sim.snr_db)),
            format!("sim.sir_db={}", opt(&self.sim.sir_db)),
            format!("sim.level_db={}", opt(&self.sim.level_db)),
            format!("io.input={}", path_opt(&self.io.input)),
            format!("io.output={}", path_opt(&self.io.output)),
            format!("io.checkpoint={}", path_opt(&self.io.checkpoint)),
            format!("io.data={}", path_opt(&self.io.data)),
            format!("io.manifest={}", path_opt(&self.io.manifest)),
            format!("io.speech={}", path_opt(&self.io.speech)),
            format!("io.noise={}", path_opt(&self.io.noise)),
            format!("io.trace={}", path_opt(&self.io.trace)),
        ]);
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    /// Writes the effective configuration to `<output>.cfg`.
    pub fn write_sidecar(&self, output: &Path) -> Result<PathBuf> {
        let mut name = output.as_os_str().to_owned();
        name.push(".cfg");
        let path = PathBuf::from(name);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
