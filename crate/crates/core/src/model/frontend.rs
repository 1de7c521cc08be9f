use crate::dsp::{stft, AudioBuffer, ComplexSpectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::noise::NoiseTrackerParams;
use crate::pld::{pld_process_stream, OmlsaParams, PldConstants, PldFrameState};

/// Analysis settings shared by training and inference.
#[derive(Debug, Clone, Default)]
pub struct Frontend {
    pub stft: StftConfig,
    pub pld: PldConstants,
    pub omlsa: OmlsaParams,
    pub tracker: NoiseTrackerParams,
}

/// Spectra of one dual-microphone clip, ready for the network.
#[derive(Debug, Clone)]
pub struct Analyzed {
    pub y1: ComplexSpectrogram,
    pub y2: ComplexSpectrogram,
    /// PLD pre-filter output, or `y1` again when the pre-filter is bypassed.
    pub guide: ComplexSpectrogram,
    pub trace: Vec<PldFrameState>,
    pub num_samples: usize,
}

impl Frontend {
    /// STFT of both microphones plus, when `use_pld`, the pre-filtered
    /// primary spectrum.
    pub fn analyze(&self, mix: &AudioBuffer, use_pld: bool) -> Result<Analyzed> {
        if mix.num_channels() != 2 {
            return Err(Error::invalid(format!(
                "expected 2 channels, got {}",
                mix.num_channels()
            )));
        }
        mix.require_pipeline_rate()?;
        let y = stft(mix, &self.stft)?;
        let y1 = y.channel(0);
        let y2 = y.channel(1);
        let (guide, trace) = if use_pld {
            pld_process_stream(&y, &self.pld, &self.omlsa, &self.tracker)?
        } else {
            (y1.clone(), Vec::new())
        };
        Ok(Analyzed {
            y1,
            y2,
            guide,
            trace,
            num_samples: mix.num_samples(),
        })
    }
}
