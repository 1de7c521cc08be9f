//! Invariant suites runnable from a release binary.
//!
//! Each check returns the measured quantity so callers can apply their own
//! tolerance; [`run_all`] applies the default ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{istft, stft, AudioBuffer, Complex64, ComplexSpectrogram, StftConfig, SAMPLE_RATE};
use crate::error::Result;
use crate::metrics::si_sdr;
use crate::model::{
    check_param_gradients, compressed_magnitude, gcafa_forward, init_weights, istft_tensor, mea_apply, model_forward,
    ModelConfig, NetInput, TrainConfig, TrainExample, Weights,
};
use crate::noise::NoiseTrackerParams;
use crate::pld::{
    global_spp, omlsa_bin_gain, pld_process_stream, signal_absence, speech_presence, OmlsaParams, PldConstants,
};
use crate::sim::{
    image_method_rir, render_mixture, sample_scene, schroeder_rt60, synth_noise, synth_speech, RoomSpec, SceneOverrides,
};
use crate::tensor::{
    conv2d, conv2d_transpose, freq_attention, grad_check, layer_norm_channels, mul, powf, prelu, sigmoid, softmax,
    sum, ConvSpec, Tensor,
};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(rand_vec(rng, shape.iter().product()), shape).expect("shape matches data")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative L2 error of an STFT/iSTFT round trip on 1 s of noise, measured
/// on samples `[win_len, N - win_len)`.
pub fn stft_round_trip_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_vec(&mut rng, SAMPLE_RATE as usize);
    let cfg = StftConfig::default();
    let spec = stft(&AudioBuffer::mono(x.clone(), SAMPLE_RATE)?, &cfg)?;
    let y = istft(&spec, &cfg, x.len())?;
    let (a, b) = (cfg.win_len(), x.len() - cfg.win_len());
    let err: f64 = (a..b).map(|i| (x[i] - y.channel(0)[i]).powi(2)).sum();
    Ok((err / dot(&x[a..b], &x[a..b])).sqrt())
}

/// Largest relative mismatch of `<A x, y> = <x, A^T y>` over frequency-only
/// convolution geometries (the transposed layer is the adjoint only for a
/// time kernel of 1, since a causal conv has an anti-causal adjoint).
pub fn conv_adjoint_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = [
        (
            ConvSpec::new(3, 5, (7, 1)).stride(4, 1).freq_padding(3, 3),
            ConvSpec::new(5, 3, (7, 1)).stride(4, 1).freq_padding(3, 3).transposed(0),
            257,
        ),
        (
            ConvSpec::new(4, 6, (3, 1)).freq_padding(1, 1),
            ConvSpec::new(6, 4, (3, 1)).freq_padding(1, 1).transposed(0),
            33,
        ),
    ];
    let mut worst = 0.0f64;
    for (fwd, tr, f) in pairs {
        let x = rand_tensor(&mut rng, &[2, fwd.in_ch, f, 9]);
        let w = rand_tensor(&mut rng, &fwd.weight_shape());
        let y = conv2d(&x, &w, None, &fwd)?;
        let v = rand_tensor(&mut rng, y.shape());
        let z = conv2d_transpose(&v, &w, None, &tr)?;
        let lhs = dot(y.data(), v.data());
        let rhs = dot(x.data(), z.data());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    Ok(worst)
}

/// Largest |si_sdr(a x_hat, x) - si_sdr(x_hat, x)| in dB over random gains.
pub fn si_sdr_scale_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = rand_vec(&mut rng, 4000);
        let y: Vec<f64> = x.iter().map(|v| v + 0.5 * rng.random_range(-1.0..1.0)).collect();
        let a = 10f64.powf(rng.random_range(-3.0..3.0));
        let ys: Vec<f64> = y.iter().map(|v| v * a).collect();
        worst = worst.max((si_sdr(&ys, &x)? - si_sdr(&y, &x)?).abs());
    }
    Ok(worst)
}

/// Randomized frames through presence, global presence, absence and gain.
/// Returns the number of range violations.
pub fn pld_bound_violations(frames: usize, seed: u64) -> Result<usize> {
    let c = PldConstants::default();
    let p = OmlsaParams::default();
    let bins = 257;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    let mut bad = 0;
    for _ in 0..frames {
        // log-uniform posterior SNR and PLD ratios, with exact zeros mixed in
        let draw = |rng: &mut ChaCha8Rng| {
            if rng.random_bool(0.05) {
                0.0
            } else {
                10f64.powf(rng.random_range(-4.0..4.0))
            }
        };
        let gamma: Vec<f64> = (0..bins).map(|_| draw(&mut rng)).collect();
        let kappa: Vec<f64> = (0..bins).map(|_| draw(&mut rng)).collect();
        let psi = speech_presence(&gamma, &kappa, &c);
        let psi_t = global_spp(&psi, &c);
        let q = signal_absence(&gamma, &psi, psi_t, &c);
        bad += psi.iter().filter(|&&v| !unit(v)).count();
        bad += q.iter().filter(|&&v| !unit(v)).count();
        bad += usize::from(!unit(psi_t));
        for k in 0..bins {
            let xi = 10f64.powf(rng.random_range(-3.0..3.0));
            let g = omlsa_bin_gain(gamma[k], q[k], xi, &p);
            bad += usize::from(!(g >= p.g_min && g <= 1.0));
        }
    }
    Ok(bad)
}

/// Branch examples of the presence and absence rules with the default
/// constants; returns the labels of any that disagree.
pub fn pld_branch_mismatches() -> Vec<&'static str> {
    let c = PldConstants::default();
    let mut bad = Vec::new();
    if speech_presence(&[2.0], &[4.0], &c) != [1.0] {
        bad.push("presence: gamma 2, kappa 4 -> 1");
    }
    if speech_presence(&[1.0], &[10.0], &c) != [0.0] {
        bad.push("presence: gamma 1 -> 0");
    }
    if speech_presence(&[2.0], &[2.25], &c) != [0.5] {
        bad.push("presence: kappa 2.25 -> 0.5");
    }
    if signal_absence(&[0.9], &[1.0], 0.9, &c) != [1.0] {
        bad.push("absence: gamma 0.9 -> 1");
    }
    if signal_absence(&[3.0, 9.0], &[1.0, 1.0], 0.2, &c) != [1.0, 1.0] {
        bad.push("absence: global presence 0.2 -> 1");
    }
    if signal_absence(&[4.6], &[1.0], 0.5, &c) != [0.0] {
        bad.push("absence: gamma 4.6, psi 1 -> 0");
    }
    bad
}

fn random_stereo_spec(rng: &mut ChaCha8Rng, bins: usize, frames: usize) -> Result<ComplexSpectrogram> {
    let chan = |rng: &mut ChaCha8Rng, g: f64| -> Vec<Vec<Complex64>> {
        (0..frames)
            .map(|_| {
                (0..bins)
                    .map(|_| Complex64::new(g * rng.random_range(-1.0..1.0), g * rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect()
    };
    let a = chan(rng, 1.0);
    let b = chan(rng, 0.5);
    ComplexSpectrogram::from_frames(vec![a, b])
}

/// Perturbs one random frame of the pre-filter input per probe and counts
/// earlier output frames (spectrum or trace) that changed at all.
pub fn pld_causality_violations(probes: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bins, frames) = (257, 48);
    let base = random_stereo_spec(&mut rng, bins, frames)?;
    let (c, o, t) = (PldConstants::default(), OmlsaParams::default(), NoiseTrackerParams::default());
    let (out0, tr0) = pld_process_stream(&base, &c, &o, &t)?;
    let mut bad = 0;
    for _ in 0..probes {
        let l = rng.random_range(1..frames);
        let mut y = base.clone();
        for ch in 0..2 {
            for v in y.frame_mut(ch, l).iter_mut() {
                *v *= rng.random_range(0.0..4.0);
            }
        }
        let (out, tr) = pld_process_stream(&y, &c, &o, &t)?;
        for e in 0..l {
            if out.frame(0, e) != out0.frame(0, e) || tr[e] != tr0[e] {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

/// Same probe on the full network with random weights and inputs.
pub fn model_causality_violations(probes: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::default();
    let params = init_weights(&cfg, seed)?;
    let w = Weights::bind(&params, false);
    let (f, t) = (cfg.fft_bins, 20);
    let feat = rand_vec(&mut rng, 6 * f * t);
    let y1: Vec<f64> = (0..2).flat_map(|k| feat[k * 3 * f * t..(k * 3 + 1) * f * t].to_vec()).collect();
    let run = |feat: &[f64], y1: &[f64]| -> Result<Vec<f64>> {
        let input = NetInput {
            features: Tensor::new(feat.to_vec(), &[1, 6, f, t])?,
            y1: Tensor::new(y1.to_vec(), &[1, 2, f, t])?,
        };
        Ok(model_forward(&w, &cfg, &input)?.data().to_vec())
    };
    let out0 = run(&feat, &y1)?;
    let mut bad = 0;
    for _ in 0..probes {
        let l = rng.random_range(1..t);
        let (mut fp, mut yp) = (feat.clone(), y1.clone());
        for (i, v) in fp.iter_mut().enumerate() {
            if i % t == l {
                *v += rng.random_range(-1.0..1.0);
            }
        }
        for (i, v) in yp.iter_mut().enumerate() {
            if i % t == l {
                *v += rng.random_range(-1.0..1.0);
            }
        }
        let out = run(&fp, &yp)?;
        bad += out
            .iter()
            .zip(&out0)
            .enumerate()
            .filter(|(i, (a, b))| i % t < l && a != b)
            .count();
    }
    Ok(bad)
}

/// Finite-difference errors of the autograd primitives (`eps = 1e-5`).
pub fn primitive_grad_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [1, 4, 6, 5];
    let x = rand_tensor(&mut rng, &shape);
    let probe = rand_tensor(&mut rng, &shape);
    let dot_probe = |y: Tensor, p: &Tensor| -> Result<Tensor> { sum(&mul(&y, p)?) };
    let mut out = Vec::new();
    let e = 1e-5;
    out.push(("sigmoid", grad_check(|v| dot_probe(sigmoid(v)?, &probe), &x, e, 60, seed)?));
    let slope = rand_tensor(&mut rng, &[4]);
    out.push(("prelu", grad_check(|v| dot_probe(prelu(v, &slope)?, &probe), &x, e, 60, seed)?));
    let pos = Tensor::new(x.data().iter().map(|v| v.abs() + 0.5).collect(), &shape)?;
    out.push(("powf", grad_check(|v| dot_probe(powf(v, 0.5)?, &probe), &pos, e, 60, seed)?));
    let im = rand_tensor(&mut rng, &shape);
    out.push((
        "compressed_magnitude",
        grad_check(|v| dot_probe(compressed_magnitude(v, &im, 0.5)?, &probe), &x, 1e-6, 60, seed)?,
    ));
    out.push(("softmax", grad_check(|v| dot_probe(softmax(v, 2)?, &probe), &x, e, 60, seed)?));
    let (k, v) = (rand_tensor(&mut rng, &shape), rand_tensor(&mut rng, &shape));
    out.push(("freq_attention", grad_check(|q| dot_probe(freq_attention(q, &k, &v)?, &probe), &x, e, 60, seed)?));
    let (g, b) = (rand_tensor(&mut rng, &[4]), rand_tensor(&mut rng, &[4]));
    out.push((
        "layer_norm",
        grad_check(|v| dot_probe(layer_norm_channels(v, &g, &b, 1e-5)?, &probe), &x, e, 60, seed)?,
    ));
    let spec = ConvSpec::new(4, 4, (3, 3)).dilation(1, 2).freq_padding(1, 1);
    let w = rand_tensor(&mut rng, &spec.weight_shape());
    let yp = rand_tensor(&mut rng, &shape);
    out.push(("conv2d", grad_check(|v| dot_probe(conv2d(v, &w, None, &spec)?, &yp), &x, e, 60, seed)?));
    out.push(("conv2d_weight", grad_check(|v| dot_probe(conv2d(&x, v, None, &spec)?, &yp), &w, e, 60, seed)?));
    let up = ConvSpec::new(4, 2, (7, 1)).stride(4, 1).freq_padding(3, 3).transposed(0);
    let wu = rand_tensor(&mut rng, &up.weight_shape());
    let xu = rand_tensor(&mut rng, &[1, 4, 5, 3]);
    let pu = rand_tensor(&mut rng, &[1, 2, 17, 3]);
    out.push((
        "conv2d_transpose",
        grad_check(|v| dot_probe(conv2d_transpose(v, &wu, None, &up)?, &pu), &xu, e, 60, seed)?,
    ));
    let taps = Tensor::new(rand_vec(&mut rng, 3 * 30).iter().map(|v| v + 1.0).collect(), &[1, 3, 6, 5])?;
    let phase = rand_tensor(&mut rng, &[1, 2, 6, 5]);
    let ys = rand_tensor(&mut rng, &[1, 2, 6, 5]);
    let pm = rand_tensor(&mut rng, &[1, 2, 6, 5]);
    out.push(("mea_taps", grad_check(|v| dot_probe(mea_apply(v, &phase, &ys)?, &pm), &taps, e, 60, seed)?));
    out.push(("mea_phase", grad_check(|v| dot_probe(mea_apply(&taps, v, &ys)?, &pm), &phase, e, 60, seed)?));
    let cfg = StftConfig::new(16, 8, 16)?;
    let spec_in = rand_tensor(&mut rng, &[1, 2, 9, 6]);
    let wp = rand_tensor(&mut rng, &[1, 40]);
    out.push(("istft", grad_check(|v| dot_probe(istft_tensor(v, &cfg, 40)?, &wp), &spec_in, e, 60, seed)?));
    Ok(out)
}

/// Finite-difference error of one GCAFA module (input gradient) at the
/// first encoder stage with initial weights.
pub fn gcafa_grad_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::default();
    let params = init_weights(&cfg, seed)?;
    let w = Weights::bind(&params, false);
    let shape = [1, cfg.enc_channels[0], 16, 4];
    let x = rand_tensor(&mut rng, &shape);
    let probe = rand_tensor(&mut rng, &shape);
    grad_check(
        |v| sum(&mul(&gcafa_forward(&w, "enc0.gcafa", v, &cfg)?, &probe)?),
        &x,
        1e-5,
        200,
        seed,
    )
}

/// Simulated training pair of `seconds` length: a random scene with
/// synthetic speech, speech-like interferers and one noise clip.
pub fn toy_example(seed: u64, seconds: f64) -> Result<TrainExample> {
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let scene = sample_scene(seed, &SceneOverrides::default())?;
    let mono = |x: Vec<f64>| AudioBuffer::mono(x, SAMPLE_RATE);
    let speech = mono(synth_speech(n, SAMPLE_RATE, seed))?;
    let interferers = (1..=scene.interferer_positions.len() as u64)
        .map(|k| mono(synth_speech(n, SAMPLE_RATE, seed.wrapping_add(100 * k))))
        .collect::<Result<Vec<_>>>()?;
    let noise = mono(synth_noise(n, seed.wrapping_add(7)))?;
    let m = render_mixture(&scene, &speech, &interferers, &[noise])?;
    Ok(TrainExample {
        target: m.target.channel(0).to_vec(),
        mix: m.mix,
    })
}

/// Finite-difference error of the composed training loss (pre-filter
/// guided network, STFT, waveform and spectral terms) over `samples`
/// random parameter coordinates.
pub fn network_grad_error(samples: usize, seed: u64) -> Result<f64> {
    let cfg = ModelConfig::default();
    let params = init_weights(&cfg, seed)?;
    check_param_gradients(&cfg, &TrainConfig::default(), &params, &toy_example(seed, 0.25)?, 1e-6, samples, seed)
}

/// Direct-path peak index check and Schroeder RT60 at the range corners
/// for a room-scale source/microphone pair: `(peak_exact, [(target, measured)])`.
pub fn rir_checks() -> Result<(bool, Vec<(f64, Option<f64>)>)> {
    let src = [5.0, 3.5, 1.5];
    let near = [5.03, 3.5, 1.5];
    let room = |rt60| RoomSpec {
        rt60,
        ..Default::default()
    };
    let rir = image_method_rir(&room(0.3), src, near, SAMPLE_RATE)?;
    let peak_ok = rir.peak_index() == (0.03 / 343.0 * SAMPLE_RATE as f64).round() as usize;
    let far = [2.2, 2.4, 1.5];
    let mut decay = Vec::new();
    for rt60 in [0.2, 0.35, 0.5] {
        let r = image_method_rir(&room(rt60), src, far, SAMPLE_RATE)?;
        decay.push((rt60, schroeder_rt60(&r.taps, SAMPLE_RATE)));
    }
    Ok((peak_ok, decay))
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn suite(name: &'static str, r: Result<(bool, String)>) -> SuiteResult {
    match r {
        Ok((passed, detail)) => SuiteResult { name, passed, detail },
        Err(e) => SuiteResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs every suite with its default tolerance.
pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    vec![
        suite(
            "stft-round-trip",
            stft_round_trip_error(seed).map(|e| (e <= 1e-6, format!("relative error {e:.2e}"))),
        ),
        suite(
            "conv-adjoint",
            conv_adjoint_error(seed).map(|e| (e <= 1e-10, format!("relative mismatch {e:.2e}"))),
        ),
        suite(
            "si-sdr-scale",
            si_sdr_scale_error(seed).map(|e| (e <= 1e-9, format!("max change {e:.2e} dB"))),
        ),
        suite(
            "pld-bounds",
            pld_bound_violations(10_000, seed).map(|v| {
                let branches = pld_branch_mismatches();
                (
                    v == 0 && branches.is_empty(),
                    format!("{v} violations in 10000 frames, {} branch mismatches", branches.len()),
                )
            }),
        ),
        suite(
            "grad-check",
            primitive_grad_errors(seed).map(|errs| {
                let worst = errs.iter().cloned().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
                (worst.1 < 1e-6, format!("worst {} at {:.2e}", worst.0, worst.1))
            }),
        ),
        suite(
            "gcafa-grad",
            gcafa_grad_error(seed).map(|e| (e < 1e-4, format!("relative error {e:.2e}"))),
        ),
        suite(
            "network-grad",
            network_grad_error(24, seed).map(|e| (e < 1e-3, format!("worst relative error {e:.2e} over 24 coordinates"))),
        ),
        suite(
            "causality",
            pld_causality_violations(16, seed).and_then(|a| {
                let b = model_causality_violations(16, seed)?;
                Ok((a == 0 && b == 0, format!("{a} pre-filter and {b} network violations")))
            }),
        ),
        suite(
            "rir",
            rir_checks().map(|(peak, decay)| {
                let ok = decay
                    .iter()
                    .all(|(t, m)| m.is_some_and(|m| (m - t).abs() <= 0.3 * t));
                let d: Vec<String> = decay
                    .iter()
                    .map(|(t, m)| format!("{t}->{}", m.map(|m| format!("{m:.3}")).unwrap_or("none".into())))
                    .collect();
                (peak && ok, format!("direct path exact: {peak}; rt60 {}", d.join(", ")))
            }),
        ),
    ]
}
