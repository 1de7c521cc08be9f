//! End-to-end enhancement of a dual-microphone recording.

use std::fmt;
use std::str::FromStr;

use crate::dsp::{istft, AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::{enhance_spectrum, Frontend, ModelConfig};
use crate::pld::PldFrameState;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// PLD pre-filter only.
    Pld,
    /// Network with the pre-filter bypassed (primary spectrum as guide).
    Net,
    /// Pre-filter followed by the network.
    Full,
}

impl Mode {
    pub fn uses_model(self) -> bool {
        self != Mode::Pld
    }

    pub fn uses_pld(self) -> bool {
        self != Mode::Net
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pld" => Ok(Mode::Pld),
            "net" => Ok(Mode::Net),
            "full" => Ok(Mode::Full),
            _ => Err(Error::config(format!("mode: expected pld|net|full, got '{s}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pld => "pld",
            Mode::Net => "net",
            Mode::Full => "full",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Enhanced {
    pub audio: Vec<f64>,
    /// Per-frame pre-filter state (empty in `net` mode).
    pub trace: Vec<PldFrameState>,
}

#[derive(Debug, Clone)]
pub struct Enhancer {
    pub mode: Mode,
    pub frontend: Frontend,
    pub model: Option<(ModelConfig, ParamSet)>,
}

impl Enhancer {
    pub fn new(mode: Mode, frontend: Frontend, model: Option<(ModelConfig, ParamSet)>) -> Result<Self> {
        if mode.uses_model() && model.is_none() {
            return Err(Error::config(format!("mode {mode} needs a checkpoint")));
        }
        Ok(Self { mode, frontend, model })
    }

    /// Enhanced primary-microphone signal, same length as the input.
    pub fn run(&self, mix: &AudioBuffer) -> Result<Enhanced> {
        let a = self.frontend.analyze(mix, self.mode.uses_pld())?;
        let spec = match (&self.model, self.mode) {
            (_, Mode::Pld) => a.guide,
            (Some((cfg, params)), _) => enhance_spectrum(params, cfg, &a.y1, &a.y2, &a.guide)?,
            (None, m) => return Err(Error::config(format!("mode {m} needs a checkpoint"))),
        };
        let out = istft(&spec, &self.frontend.stft, a.num_samples)?;
        debug_assert_eq!(out.sample_rate(), SAMPLE_RATE);
        Ok(Enhanced {
            audio: out.into_channels().swap_remove(0),
            trace: a.trace,
        })
    }
}
