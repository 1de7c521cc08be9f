use super::layers::{downsample, gcafa_forward, mea_apply, phase_encode, tfcm_forward, upsample};
use super::weights::{dc_spec, pe_spec, tfcm_depthwise, uc_spec, Weights};
use super::ModelConfig;
use crate::dsp::{Complex64, ComplexSpectrogram};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, scale, sigmoid, ConvSpec, ParamSet, Tensor};

/// Network inputs in tensor form.
#[derive(Debug, Clone)]
pub struct NetInput {
    /// `[1, 6, F, T]`: real parts of (Y1, Y2, X_pld), then imaginary parts.
    pub features: Tensor,
    /// `[1, 2, F, T]`: Y1 as (real, imaginary).
    pub y1: Tensor,
}

fn single(s: &ComplexSpectrogram, what: &str) -> Result<()> {
    if s.num_channels() != 1 {
        return Err(Error::shape(format!(
            "{what}: expected a single-channel spectrogram, got {}",
            s.num_channels()
        )));
    }
    Ok(())
}

/// Packs three aligned single-channel spectrograms.
pub fn spectra_to_input(y1: &ComplexSpectrogram, y2: &ComplexSpectrogram, x_pld: &ComplexSpectrogram) -> Result<NetInput> {
    single(y1, "Y1")?;
    single(y2, "Y2")?;
    single(x_pld, "X_pld")?;
    let (f, t) = (y1.num_bins(), y1.num_frames());
    for s in [y2, x_pld] {
        if (s.num_bins(), s.num_frames()) != (f, t) {
            return Err(Error::shape(format!(
                "spectra differ in size: {}x{} vs {}x{}",
                f,
                t,
                s.num_bins(),
                s.num_frames()
            )));
        }
    }
    let plane = f * t;
    let mut feat = vec![0.0; 6 * plane];
    for (k, s) in [y1, y2, x_pld].iter().enumerate() {
        for ti in 0..t {
            for (fi, c) in s.frame(0, ti).iter().enumerate() {
                feat[k * plane + fi * t + ti] = c.re;
                feat[(3 + k) * plane + fi * t + ti] = c.im;
            }
        }
    }
    let mut yd = feat[..plane].to_vec();
    yd.extend_from_slice(&feat[3 * plane..4 * plane]);
    Ok(NetInput {
        features: Tensor::new(feat, &[1, 6, f, t])?,
        y1: Tensor::new(yd, &[1, 2, f, t])?,
    })
}

/// Full network: PE, encoder, backbone, decoder with skips, MEA head.
/// Returns the enhanced primary spectrum as `[1, 2, F, T]`.
pub fn model_forward(w: &Weights, cfg: &ModelConfig, input: &NetInput) -> Result<Tensor> {
    let [_, _, f, _] = input.features.dims4()?;
    if f != cfg.fft_bins {
        return Err(Error::shape(format!("model expects {} bins, got {f}", cfg.fft_bins)));
    }
    let mut x = phase_encode(w, &input.features, cfg)?;
    let mut skips = Vec::with_capacity(cfg.enc_channels.len());
    for s in 0..cfg.enc_channels.len() {
        x = downsample(w, &x, s, cfg)?;
        x = tfcm_forward(w, &format!("enc{s}.tfcm"), &x, cfg)?;
        x = gcafa_forward(w, &format!("enc{s}.gcafa"), &x, cfg)?;
        skips.push(x.clone());
    }
    for k in 0..cfg.backbone_blocks {
        x = tfcm_forward(w, &format!("bb{k}.tfcm0"), &x, cfg)?;
        x = tfcm_forward(w, &format!("bb{k}.tfcm1"), &x, cfg)?;
        x = gcafa_forward(w, &format!("bb{k}.gcafa"), &x, cfg)?;
    }
    for (s, skip) in skips.iter().rev().enumerate() {
        x = upsample(w, &x, skip, s, cfg)?;
        x = tfcm_forward(w, &format!("dec{s}.tfcm"), &x, cfg)?;
        x = gcafa_forward(w, &format!("dec{s}.gcafa"), &x, cfg)?;
    }
    let [_, c, _, _] = x.dims4()?;
    let head = |name: &str, out: usize| -> Result<Tensor> {
        conv2d(&x, w.get(&format!("{name}.w"))?, Some(w.get(&format!("{name}.b"))?), &ConvSpec::pointwise(c, out))
    };
    let taps = scale(&sigmoid(&head("mea.taps", cfg.mea_taps)?)?, 2.0)?;
    let phase = head("mea.phase", 2)?;
    mea_apply(&taps, &phase, &input.y1)
}

/// Inference helper: no graph retained.
pub fn enhance_spectrum(
    params: &ParamSet,
    cfg: &ModelConfig,
    y1: &ComplexSpectrogram,
    y2: &ComplexSpectrogram,
    x_pld: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    let input = spectra_to_input(y1, y2, x_pld)?;
    let w = Weights::bind(params, false);
    let out = model_forward(&w, cfg, &input)?;
    let (f, t) = (y1.num_bins(), y1.num_frames());
    let d = out.data();
    let frames = (0..t)
        .map(|ti| (0..f).map(|fi| Complex64::new(d[fi * t + ti], d[f * t + fi * t + ti])).collect())
        .collect();
    ComplexSpectrogram::from_frames(vec![frames])
}

/// Multiply-accumulate count per STFT frame (informational).
pub fn macs_per_frame(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let trace = cfg.freq_trace()?;
    let conv = |s: &ConvSpec, f_out: usize| -> usize {
        let w: usize = s.weight_shape().iter().product();
        if s.transposed {
            // every input bin touches the whole kernel
            w * (f_out - 1 + s.stride.0) / s.stride.0
        } else {
            w * f_out
        }
    };
    let tfcm = |c: usize, f: usize| -> usize {
        (0..cfg.tfcm_depth)
            .map(|i| 2 * conv(&ConvSpec::pointwise(c, c), f) + conv(&tfcm_depthwise(c, i, cfg), f))
            .sum()
    };
    let gcafa = |c: usize, f: usize| -> usize {
        let ci = c / cfg.gcafa_ratio;
        conv(&ConvSpec::pointwise(c, 6 * ci), f)
            + 2 * ci * f * f
            + conv(&ConvSpec::pointwise(ci, c), f)
            + conv(&ConvSpec::pointwise(c, 2 * c), f)
    };
    let mut total = 2 * 2 * conv(&pe_spec(cfg), trace[0]);
    let mut cin = cfg.pe_out_ch;
    for (s, &c) in cfg.enc_channels.iter().enumerate() {
        let f = trace[s + 1];
        total += conv(&dc_spec(cfg, cin, c), f) + tfcm(c, f) + gcafa(c, f);
        cin = c;
    }
    let fb = *trace.last().expect("non-empty trace");
    total += cfg.backbone_blocks * (2 * tfcm(cin, fb) + gcafa(cin, fb));
    let skips: Vec<usize> = cfg.enc_channels.iter().rev().copied().collect();
    for (s, (&c, &skip)) in cfg.dec_channels().iter().zip(&skips).enumerate() {
        let f = trace[trace.len() - 2 - s];
        total += conv(&uc_spec(cfg, cin + skip, c), f) + tfcm(c, f) + gcafa(c, f);
        cin = c;
    }
    total += (cfg.mea_taps + 2) * cin * trace[0] + cfg.mea_taps * trace[0];
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(rng: &mut ChaCha8Rng, t: usize) -> ComplexSpectrogram {
        let frames = (0..t)
            .map(|_| (0..257).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
            .collect();
        ComplexSpectrogram::from_frames(vec![frames]).unwrap()
    }

    #[test]
    fn output_shape_follows_input() {
        let cfg = ModelConfig {
            tfcm_depth: 2,
            ..Default::default()
        };
        let p = init_weights(&cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in [1, 2, 7, 64] {
            let s = random_spec(&mut rng, t);
            let out = enhance_spectrum(&p, &cfg, &s, &s, &s).unwrap();
            assert_eq!((out.num_bins(), out.num_frames()), (257, t));
            assert!(out.as_slice().iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spec(&mut rng, 4);
        let b = random_spec(&mut rng, 5);
        assert!(matches!(spectra_to_input(&a, &b, &a), Err(Error::Shape(_))));
        let cfg = ModelConfig::default();
        let p = init_weights(&cfg, 0).unwrap();
        let small = ComplexSpectrogram::zeros(1, 129, 3);
        assert!(enhance_spectrum(&p, &cfg, &small, &small, &small).is_err());
    }

    #[test]
    fn work_estimate_is_positive() {
        let m = macs_per_frame(&ModelConfig::default()).unwrap();
        assert!(m > 500_000 && m < 5_000_000, "{m}");
    }
}
