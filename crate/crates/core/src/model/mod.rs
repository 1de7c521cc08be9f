//! PLDNet: phase encoder, three-stage U-Net with TFCM and GCAFA blocks,
//! deep-filter MEA head, hybrid waveform/spectral loss and a toy trainer.

mod frontend;
mod layers;
mod loss;
mod net;
mod train;
mod weights;

pub use frontend::{Analyzed, Frontend};
pub use layers::{
    compressed_magnitude, downsample, gcafa_forward, mea_apply, phase_encode, tfcm_forward, upsample,
    MEA_PHASE_EPS,
};
pub use loss::{
    istft_tensor, loss_spec, loss_spec_grad, loss_total, loss_total_grad, loss_total_tensor, loss_wave,
    loss_wave_grad, SPEC_RESOLUTIONS,
};
pub use net::{enhance_spectrum, macs_per_frame, model_forward, spectra_to_input, NetInput};
pub use train::{check_param_gradients, load_examples, train_toy, TrainConfig, TrainExample, TrainReport};
pub use weights::{init_weights, param_count, Weights};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub pe_out_ch: usize,
    /// Complex time-kernel length of the phase encoder.
    pub pe_kernel_t: usize,
    /// Magnitude compression exponent of the phase encoder.
    pub pe_compression: f64,
    pub enc_channels: Vec<usize>,
    pub dc_kernel_f: usize,
    pub dc_stride_f: usize,
    pub tfcm_depth: usize,
    pub tfcm_kernel: (usize, usize),
    /// `C' = C / gcafa_ratio` at every attention site.
    pub gcafa_ratio: usize,
    pub backbone_blocks: usize,
    pub mea_taps: usize,
    pub fft_bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pe_out_ch: 4,
            pe_kernel_t: 3,
            pe_compression: 0.5,
            enc_channels: vec![16, 24, 40],
            dc_kernel_f: 7,
            dc_stride_f: 4,
            tfcm_depth: 6,
            tfcm_kernel: (3, 3),
            gcafa_ratio: 2,
            backbone_blocks: 2,
            mea_taps: 3,
            fft_bins: 257,
        }
    }
}

impl ModelConfig {
    /// Frequency padding of every DC/UC layer.
    pub fn dc_padding(&self) -> usize {
        self.dc_kernel_f / 2
    }

    /// Decoder output channels, deepest stage first.
    pub fn dec_channels(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.enc_channels.iter().rev().skip(1).copied().collect();
        out.push(self.pe_out_ch);
        out
    }

    /// Frequency sizes from the input down to the bottleneck.
    pub fn freq_trace(&self) -> Result<Vec<usize>> {
        let mut f = self.fft_bins;
        let mut trace = vec![f];
        for _ in &self.enc_channels {
            let padded = f + 2 * self.dc_padding();
            if padded < self.dc_kernel_f {
                return Err(Error::config(format!("frequency axis too short at {f} bins")));
            }
            f = (padded - self.dc_kernel_f) / self.dc_stride_f + 1;
            trace.push(f);
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_channels.len() != 3 {
            return Err(Error::config("enc_channels must list 3 stages"));
        }
        let positive = [
            self.pe_out_ch,
            self.pe_kernel_t,
            self.dc_kernel_f,
            self.dc_stride_f,
            self.tfcm_kernel.0,
            self.tfcm_kernel.1,
            self.gcafa_ratio,
            self.mea_taps,
            self.fft_bins,
        ];
        if positive.contains(&0) || self.enc_channels.contains(&0) {
            return Err(Error::config("model sizes must be positive"));
        }
        if self.dc_kernel_f.is_multiple_of(2) || self.tfcm_kernel.0.is_multiple_of(2) {
            return Err(Error::config("frequency kernels must be odd"));
        }
        if !(self.pe_compression > 0.0 && self.pe_compression <= 1.0) {
            return Err(Error::config("pe_compression must be in (0, 1]"));
        }
        for &c in self.enc_channels.iter().chain([self.pe_out_ch].iter()) {
            if c % self.gcafa_ratio != 0 {
                return Err(Error::config(format!(
                    "{c} channels not divisible by gcafa_ratio {}",
                    self.gcafa_ratio
                )));
            }
        }
        // upsampling has to land exactly on the encoder sizes
        let trace = self.freq_trace()?;
        for w in trace.windows(2) {
            let up = (w[1] - 1) * self.dc_stride_f + self.dc_kernel_f - 2 * self.dc_padding();
            if up != w[0] {
                return Err(Error::config(format!(
                    "fft_bins {} does not round-trip through the DC/UC stack ({} -> {} -> {up})",
                    self.fft_bins, w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Flat `key=value` lines, one per field.
    pub fn to_manifest(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "pe_out_ch={}\npe_kernel_t={}\npe_compression={}\nenc_channels={}\ndc_kernel_f={}\n\
             dc_stride_f={}\ntfcm_depth={}\ntfcm_kernel={},{}\ngcafa_ratio={}\nbackbone_blocks={}\n\
             mea_taps={}\nfft_bins={}\n",
            self.pe_out_ch,
            self.pe_kernel_t,
            self.pe_compression,
            list(&self.enc_channels),
            self.dc_kernel_f,
            self.dc_stride_f,
            self.tfcm_depth,
            self.tfcm_kernel.0,
            self.tfcm_kernel.1,
            self.gcafa_ratio,
            self.backbone_blocks,
            self.mea_taps,
            self.fft_bins,
        )
    }

    /// Applies one `key=value` setting. Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::config(format!("{key}: cannot parse '{v}'")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',').map(|p| num(key, p)).collect()
        }
        match key {
            "pe_out_ch" => self.pe_out_ch = num(key, value)?,
            "pe_kernel_t" => self.pe_kernel_t = num(key, value)?,
            "pe_compression" => self.pe_compression = num(key, value)?,
            "enc_channels" => self.enc_channels = list(key, value)?,
            "dc_kernel_f" => self.dc_kernel_f = num(key, value)?,
            "dc_stride_f" => self.dc_stride_f = num(key, value)?,
            "tfcm_depth" => self.tfcm_depth = num(key, value)?,
            "tfcm_kernel" => match list(key, value)?.as_slice() {
                &[f, t] => self.tfcm_kernel = (f, t),
                _ => return Err(Error::config("tfcm_kernel: expected 'kf,kt'")),
            },
            "gcafa_ratio" => self.gcafa_ratio = num(key, value)?,
            "backbone_blocks" => self.backbone_blocks = num(key, value)?,
            "mea_taps" => self.mea_taps = num(key, value)?,
            "fft_bins" => self.fft_bins = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("malformed manifest line '{line}'")))?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(Error::config(format!("unknown model key '{}'", k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
