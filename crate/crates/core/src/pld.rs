//! Power-level-difference pre-filter.
//!
//! Per frame: posterior SNR of both microphones against their stationary
//! noise estimates, the noise-subtracted power ratio between the primary and
//! secondary microphone, local and band-averaged speech presence, the
//! resulting signal absence probability, and an OMLSA gain applied to the
//! primary spectrum.

use std::io::Write;
use std::path::Path;

use crate::dsp::{Complex64, ComplexSpectrogram};
use crate::error::{Error, Result};
use crate::noise::{init_tracker, NoiseTrackerParams, NoiseTrackerState};
use crate::special::expint_e1;

/// Relative floor for the secondary channel's noise-subtracted power.
pub const KAPPA_DEN_EPS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct PldConstants {
    pub k_low: usize,
    pub k_high: usize,
    pub gamma_thresh: f64,
    pub psi_tilde_thresh: f64,
    pub kappa_low: f64,
    pub kappa_high: f64,
    pub gamma_low: f64,
    pub gamma_high: f64,
}

impl Default for PldConstants {
    fn default() -> Self {
        Self {
            k_low: 8,
            k_high: 113,
            gamma_thresh: 1.69,
            psi_tilde_thresh: 0.25,
            kappa_low: 1.5,
            kappa_high: 3.0,
            gamma_low: 1.0,
            gamma_high: 4.6,
        }
    }
}

impl PldConstants {
    pub fn validate(&self, bins: usize) -> Result<()> {
        if !(self.k_low < self.k_high && self.k_high < bins) {
            return Err(Error::config(format!(
                "need k_low < k_high < {bins}, got {} and {}",
                self.k_low, self.k_high
            )));
        }
        if !(self.kappa_low > 0.0 && self.kappa_low < self.kappa_high) {
            return Err(Error::config("need 0 < kappa_low < kappa_high"));
        }
        if !(self.gamma_low > 0.0 && self.gamma_low < self.gamma_high) {
            return Err(Error::config("need 0 < gamma_low < gamma_high"));
        }
        if !(self.gamma_thresh > 0.0 && self.psi_tilde_thresh > 0.0) {
            return Err(Error::config("thresholds must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmlsaParams {
    pub dd_alpha: f64,
    pub xi_min: f64,
    pub g_min: f64,
    pub q_max: f64,
}

impl Default for OmlsaParams {
    fn default() -> Self {
        Self {
            dd_alpha: 0.92,
            xi_min: 10f64.powf(-15.0 / 10.0),
            g_min: 10f64.powf(-25.0 / 20.0),
            q_max: 0.999,
        }
    }
}

impl OmlsaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dd_alpha > 0.0 && self.dd_alpha < 1.0) {
            return Err(Error::config("dd_alpha must lie in (0, 1)"));
        }
        if !(self.g_min > 0.0 && self.g_min < 1.0) {
            return Err(Error::config("g_min must lie in (0, 1)"));
        }
        if !(self.xi_min > 0.0) || !(self.q_max > 0.0 && self.q_max < 1.0) {
            return Err(Error::config("xi_min must be positive and q_max in (0, 1)"));
        }
        Ok(())
    }
}

/// Everything computed for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PldFrameState {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub kappa: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_tilde: f64,
    pub q_hat: Vec<f64>,
    pub xi: Vec<f64>,
    pub gain: Vec<f64>,
}

pub fn posterior_snr(frame_power: &[f64], lambda: &[f64]) -> Vec<f64> {
    frame_power.iter().zip(lambda).map(|(p, l)| p / l).collect()
}

/// Noise-subtracted power ratio between the microphones, kept non-negative
/// and finite.
pub fn pld_ratio(power1: &[f64], lambda1: &[f64], power2: &[f64], lambda2: &[f64]) -> Vec<f64> {
    (0..power1.len())
        .map(|k| {
            let num = (power1[k] - lambda1[k]).max(0.0);
            let den = (power2[k] - lambda2[k]).max(KAPPA_DEN_EPS * lambda2[k]);
            num / den
        })
        .collect()
}

pub fn speech_presence(gamma1: &[f64], kappa: &[f64], c: &PldConstants) -> Vec<f64> {
    gamma1
        .iter()
        .zip(kappa)
        .map(|(&g, &k)| {
            if g <= c.gamma_thresh || k <= c.kappa_low {
                0.0
            } else if k >= c.kappa_high {
                1.0
            } else {
                (k - c.kappa_low) / (c.kappa_high - c.kappa_low)
            }
        })
        .collect()
}

pub fn global_spp(psi: &[f64], c: &PldConstants) -> f64 {
    let band = &psi[c.k_low..=c.k_high];
    band.iter().sum::<f64>() / band.len() as f64
}

pub fn signal_absence(gamma1: &[f64], psi: &[f64], psi_tilde: f64, c: &PldConstants) -> Vec<f64> {
    gamma1
        .iter()
        .zip(psi)
        .map(|(&g, &p)| {
            if g <= c.gamma_low || psi_tilde <= c.psi_tilde_thresh {
                1.0
            } else {
                let ramp = (c.gamma_high - g) / (c.gamma_high - c.gamma_low);
                ramp.max(1.0 - p).clamp(0.0, 1.0)
            }
        })
        .collect()
}

/// Decision-directed a-priori SNR.
pub fn a_priori_snr(prev_gain: f64, prev_gamma: f64, gamma: f64, p: &OmlsaParams) -> f64 {
    let dd = p.dd_alpha * prev_gain * prev_gain * prev_gamma
        + (1.0 - p.dd_alpha) * (gamma - 1.0).max(0.0);
    dd.max(p.xi_min)
}

/// OMLSA gain of one bin given its posterior SNR, absence probability and
/// a-priori SNR.
pub fn omlsa_bin_gain(gamma: f64, q_hat: f64, xi: f64, p: &OmlsaParams) -> f64 {
    if q_hat >= 1.0 {
        return p.g_min;
    }
    let v = gamma * xi / (1.0 + xi);
    let q = q_hat.min(p.q_max);
    let presence = 1.0 / (1.0 + q / (1.0 - q) * (1.0 + xi) * (-v).exp());
    if presence <= 0.0 {
        return p.g_min;
    }
    let log_gh1 = (xi / (1.0 + xi)).ln() + 0.5 * expint_e1(v);
    let log_g = presence * log_gh1 + (1.0 - presence) * p.g_min.ln();
    log_g.exp().clamp(p.g_min, 1.0)
}

/// Decision-directed recursion state, one entry per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct OmlsaState {
    prev_gain: Vec<f64>,
    prev_gamma: Vec<f64>,
}

impl OmlsaState {
    pub fn new(bins: usize) -> Self {
        Self {
            prev_gain: vec![1.0; bins],
            prev_gamma: vec![0.0; bins],
        }
    }

    pub fn from_previous(prev_gain: Vec<f64>, prev_gamma: Vec<f64>) -> Self {
        Self {
            prev_gain,
            prev_gamma,
        }
    }
}

/// Gain for one frame; returns `(gain, xi)` and advances `state`.
pub fn omlsa_gain(
    gamma1: &[f64],
    q_hat: &[f64],
    state: &mut OmlsaState,
    p: &OmlsaParams,
) -> (Vec<f64>, Vec<f64>) {
    let n = gamma1.len();
    let mut gain = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    for k in 0..n {
        let x = a_priori_snr(state.prev_gain[k], state.prev_gamma[k], gamma1[k], p);
        let g = omlsa_bin_gain(gamma1[k], q_hat[k], x, p);
        state.prev_gain[k] = g;
        state.prev_gamma[k] = gamma1[k];
        gain.push(g);
        xi.push(x);
    }
    (gain, xi)
}

pub fn apply_pld(y1: &[Complex64], gain: &[f64]) -> Vec<Complex64> {
    y1.iter().zip(gain).map(|(y, g)| y * g).collect()
}

fn power(frame: &[Complex64]) -> Vec<f64> {
    frame.iter().map(|c| c.norm_sqr()).collect()
}

/// Frame-by-frame PLD filter for one dual-microphone stream.
#[derive(Debug, Clone)]
pub struct PldProcessor {
    constants: PldConstants,
    omlsa: OmlsaParams,
    tracker_params: NoiseTrackerParams,
    trackers: Option<[NoiseTrackerState; 2]>,
    dd_state: OmlsaState,
    bins: usize,
}

impl PldProcessor {
    pub fn new(
        bins: usize,
        constants: PldConstants,
        omlsa: OmlsaParams,
        tracker_params: NoiseTrackerParams,
    ) -> Result<Self> {
        constants.validate(bins)?;
        omlsa.validate()?;
        tracker_params.validate()?;
        Ok(Self {
            constants,
            omlsa,
            tracker_params,
            trackers: None,
            dd_state: OmlsaState::new(bins),
            bins,
        })
    }

    pub fn process_frame(
        &mut self,
        y1: &[Complex64],
        y2: &[Complex64],
    ) -> Result<(Vec<Complex64>, PldFrameState)> {
        if y1.len() != self.bins || y2.len() != self.bins {
            return Err(Error::shape(format!(
                "frame has {}/{} bins, expected {}",
                y1.len(),
                y2.len(),
                self.bins
            )));
        }
        let (p1, p2) = (power(y1), power(y2));
        let trackers = match &mut self.trackers {
            Some(t) => {
                t[0].update(&p1)?;
                t[1].update(&p2)?;
                t
            }
            none => none.insert([
                init_tracker(std::slice::from_ref(&p1), self.tracker_params.clone())?,
                init_tracker(std::slice::from_ref(&p2), self.tracker_params.clone())?,
            ]),
        };
        let (l1, l2) = (trackers[0].lambda(), trackers[1].lambda());
        let c = &self.constants;
        let gamma1 = posterior_snr(&p1, l1);
        let gamma2 = posterior_snr(&p2, l2);
        let kappa = pld_ratio(&p1, l1, &p2, l2);
        let psi = speech_presence(&gamma1, &kappa, c);
        let psi_tilde = global_spp(&psi, c);
        let q_hat = signal_absence(&gamma1, &psi, psi_tilde, c);
        let (gain, xi) = omlsa_gain(&gamma1, &q_hat, &mut self.dd_state, &self.omlsa);
        let out = apply_pld(y1, &gain);
        Ok((
            out,
            PldFrameState {
                gamma1,
                gamma2,
                kappa,
                psi,
                psi_tilde,
                q_hat,
                xi,
                gain,
            },
        ))
    }
}

/// Runs the full pre-filter over a two-channel spectrogram (channel 0 is the
/// primary microphone).
pub fn pld_process_stream(
    y: &ComplexSpectrogram,
    constants: &PldConstants,
    omlsa: &OmlsaParams,
    tracker_params: &NoiseTrackerParams,
) -> Result<(ComplexSpectrogram, Vec<PldFrameState>)> {
    if y.num_channels() != 2 {
        return Err(Error::invalid(format!(
            "expected 2 channels, got {}",
            y.num_channels()
        )));
    }
    let mut proc = PldProcessor::new(
        y.num_bins(),
        constants.clone(),
        omlsa.clone(),
        tracker_params.clone(),
    )?;
    let mut out = ComplexSpectrogram::zeros(1, y.num_bins(), y.num_frames());
    let mut trace = Vec::with_capacity(y.num_frames());
    for l in 0..y.num_frames() {
        let (x, st) = proc.process_frame(y.frame(0, l), y.frame(1, l))?;
        out.frame_mut(0, l).copy_from_slice(&x);
        trace.push(st);
    }
    Ok((out, trace))
}

/// CSV with columns `frame,psi_tilde,mean_gain,mean_qhat`.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[PldFrameState]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("frame,psi_tilde,mean_gain,mean_qhat\n");
    for (l, st) in trace.iter().enumerate() {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        body.push_str(&format!(
            "{l},{},{},{}\n",
            st.psi_tilde,
            mean(&st.gain),
            mean(&st.q_hat)
        ));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}
