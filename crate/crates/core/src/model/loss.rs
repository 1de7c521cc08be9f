//! Hybrid waveform + multi-resolution spectral loss and the differentiable
//! inverse STFT that feeds it.

use crate::dsp::{istft_channel, rfft_adjoint, stft_channel, Complex64, StftConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Window sizes of the spectral loss (hop = size / 4).
pub const SPEC_RESOLUTIONS: [usize; 6] = [64, 128, 256, 512, 1024, 2048];
const WAVE_EPS: f64 = 1e-8;
const SPEC_EPS: f64 = 1e-8;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("loss: lengths {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::shape("loss on empty signals"));
    }
    Ok(())
}

/// `sum |x_hat - x| / (sum |x| + eps)`.
pub fn loss_wave(x_hat: &[f64], x: &[f64]) -> Result<f64> {
    Ok(loss_wave_grad(x_hat, x)?.0)
}

pub fn loss_wave_grad(x_hat: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(x_hat, x)?;
    let den = x.iter().map(|v| v.abs()).sum::<f64>() + WAVE_EPS;
    let num: f64 = x_hat.iter().zip(x).map(|(a, b)| (a - b).abs()).sum();
    let grad = x_hat
        .iter()
        .zip(x)
        .map(|(a, b)| {
            let d = a - b;
            if d > 0.0 {
                1.0 / den
            } else if d < 0.0 {
                -1.0 / den
            } else {
                0.0
            }
        })
        .collect();
    Ok((num / den, grad))
}

fn spec_config(k: usize) -> Result<StftConfig> {
    StftConfig::new(k, k / 4, k)
}

/// Sum over resolutions of a global and a per-bin normalized squared error.
pub fn loss_spec(x_hat: &[f64], x: &[f64]) -> Result<f64> {
    Ok(loss_spec_grad(x_hat, x)?.0)
}

pub fn loss_spec_grad(x_hat: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(x_hat, x)?;
    let mut grad = vec![0.0; x.len()];
    let mut total = 0.0;
    for &k in &SPEC_RESOLUTIONS {
        total += spec_term_grad(x_hat, x, k, &mut grad)?;
    }
    Ok((total, grad))
}

/// One resolution of the spectral loss; accumulates its gradient into `grad`.
fn spec_term_grad(x_hat: &[f64], x: &[f64], k: usize, grad: &mut [f64]) -> Result<f64> {
    let n = x.len();
    let cfg = spec_config(k)?;
    let sh = stft_channel(x_hat, &cfg)?;
    let sx = stft_channel(x, &cfg)?;
    let bins = cfg.num_bins() * sx.len();
    let energy: f64 = sx.iter().flatten().map(|c| c.norm_sqr()).sum();
    let eps_bin = 1e-6 * energy / bins as f64 + 1e-12;
    let global = 1.0 / (energy + SPEC_EPS);
    let pad = cfg.left_pad();
    let window = cfg.analysis_window();
    let mut total = 0.0;
    for (l, (fh, fx)) in sh.iter().zip(&sx).enumerate() {
        let mut g = Vec::with_capacity(fh.len());
        for (a, b) in fh.iter().zip(fx) {
            let d = a - b;
            let w = global + 1.0 / (b.norm_sqr() + eps_bin);
            total += d.norm_sqr() * w;
            g.push(d * (2.0 * w));
        }
        let seg = rfft_adjoint(&g, k, k);
        let start = (l * cfg.hop()) as isize - pad as isize;
        for (m, (s, w)) in seg.iter().zip(window).enumerate() {
            let i = start + m as isize;
            if i >= 0 && (i as usize) < n {
                grad[i as usize] += s * w;
            }
        }
    }
    Ok(total)
}

/// `L_wave + alpha * L_spec` and its gradient with respect to `x_hat`.
pub fn loss_total_grad(x_hat: &[f64], x: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    let (lw, mut g) = loss_wave_grad(x_hat, x)?;
    if alpha == 0.0 {
        return Ok((lw, g));
    }
    let (ls, gs) = loss_spec_grad(x_hat, x)?;
    for (a, b) in g.iter_mut().zip(gs) {
        *a += alpha * b;
    }
    Ok((lw + alpha * ls, g))
}

pub fn loss_total(x_hat: &[f64], x: &[f64], alpha: f64) -> Result<f64> {
    let lw = loss_wave(x_hat, x)?;
    if alpha == 0.0 {
        return Ok(lw);
    }
    Ok(lw + alpha * loss_spec(x_hat, x)?)
}

/// Graph node for [`loss_total`] on a waveform tensor against a fixed target.
pub fn loss_total_tensor(x_hat: &Tensor, x: &[f64], alpha: f64) -> Result<Tensor> {
    let (value, grad) = loss_total_grad(x_hat.data(), x, alpha)?;
    Tensor::from_op(vec![value], vec![], vec![x_hat.clone()], move |g, _, _| {
        vec![Some(grad.iter().map(|v| v * g[0]).collect())]
    })
}

/// Overlap-add synthesis of a `[B, 2, F, T]` (real, imaginary) spectrum into
/// `[B, out_len]` waveforms.
pub fn istft_tensor(spec: &Tensor, cfg: &StftConfig, out_len: usize) -> Result<Tensor> {
    let [b, two, f, t] = spec.dims4()?;
    if two != 2 || f != cfg.num_bins() {
        return Err(Error::shape(format!(
            "istft expects [B, 2, {}, T], got {:?}",
            cfg.num_bins(),
            spec.shape()
        )));
    }
    let plane = f * t;
    let sd = spec.data();
    let mut out = Vec::with_capacity(b * out_len);
    for bi in 0..b {
        let frames: Vec<Vec<Complex64>> = (0..t)
            .map(|ti| {
                (0..f)
                    .map(|fi| {
                        let p = fi * t + ti;
                        Complex64::new(sd[(bi * 2) * plane + p], sd[(bi * 2 + 1) * plane + p])
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[Complex64]> = frames.iter().map(Vec::as_slice).collect();
        out.extend(istft_channel(&refs, cfg, out_len));
    }
    let cfg = cfg.clone();
    Tensor::from_op(out, vec![b, out_len], vec![spec.clone()], move |g, _, _| {
        let mut gs = vec![0.0; b * 2 * plane];
        let pad = cfg.left_pad() as isize;
        let win = cfg.win_len();
        let mut seg = vec![0.0; win];
        for bi in 0..b {
            for ti in 0..t {
                let start = (ti * cfg.hop()) as isize - pad;
                for (m, s) in seg.iter_mut().enumerate() {
                    let i = start + m as isize;
                    *s = if i >= 0 && (i as usize) < out_len {
                        g[bi * out_len + i as usize]
                    } else {
                        0.0
                    };
                }
                let gc = cfg.synthesize_frame_adjoint(&seg);
                for (fi, c) in gc.iter().enumerate() {
                    let p = fi * t + ti;
                    gs[(bi * 2) * plane + p] = c.re;
                    gs[(bi * 2 + 1) * plane + p] = c.im;
                }
            }
        }
        vec![Some(gs)]
    })
}
