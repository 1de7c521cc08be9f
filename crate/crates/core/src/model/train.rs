use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::frontend::Frontend;
use super::loss::{istft_tensor, loss_total_tensor};
use super::net::{model_forward, spectra_to_input};
use super::weights::{init_weights, Weights};
use super::ModelConfig;
use crate::dsp::wav::read_wav;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::sim::read_manifest;
use crate::tensor::{OptimizerConfig, OptimizerState, ParamSet, Tensor};

/// One (stereo mixture, clean target) pair.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub mix: AudioBuffer,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    /// Examples per step; 0 uses the whole dataset every step.
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Spectral-loss weight.
    pub alpha: f64,
    /// Feed the PLD output as the third network input.
    pub use_pld: bool,
    pub frontend: Frontend,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            seed: 0,
            batch_size: 0,
            optimizer: OptimizerConfig::default(),
            alpha: 1.0,
            use_pld: true,
            frontend: Frontend::default(),
            log_every: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ParamSet,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
    /// Mean loss over the whole dataset with the returned weights.
    pub final_loss: f64,
}

/// Loads up to `max_clips` (0 = all) (mixture, target) pairs listed in a
/// scene manifest, truncated to `clip_seconds` when positive.
pub fn load_examples(manifest: &Path, max_clips: usize, clip_seconds: f64) -> Result<Vec<TrainExample>> {
    let rows = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let take = if max_clips == 0 { rows.len() } else { max_clips.min(rows.len()) };
    rows[..take]
        .iter()
        .map(|r| {
            let mix = read_wav(base.join(&r.mix))?;
            let target = read_wav(base.join(&r.target))?;
            let mut n = mix.num_samples().min(target.num_samples());
            if clip_seconds > 0.0 {
                n = n.min((clip_seconds * mix.sample_rate() as f64).round() as usize);
            }
            let chans = mix.channels().iter().map(|c| c[..n].to_vec()).collect();
            Ok(TrainExample {
                mix: AudioBuffer::new(chans, mix.sample_rate())?,
                target: target.channel(0)[..n].to_vec(),
            })
        })
        .collect()
}

/// Thread-transferable cached network input.
struct Cached {
    features: Vec<f64>,
    y1: Vec<f64>,
    shape: (usize, usize),
    target: Vec<f64>,
}

fn prepare(ex: &TrainExample, tc: &TrainConfig) -> Result<Cached> {
    if ex.target.len() != ex.mix.num_samples() {
        return Err(Error::invalid(format!(
            "target has {} samples, mixture {}",
            ex.target.len(),
            ex.mix.num_samples()
        )));
    }
    let a = tc.frontend.analyze(&ex.mix, tc.use_pld)?;
    let input = spectra_to_input(&a.y1, &a.y2, &a.guide)?;
    Ok(Cached {
        features: input.features.data().to_vec(),
        y1: input.y1.data().to_vec(),
        shape: (a.y1.num_bins(), a.y1.num_frames()),
        target: ex.target.clone(),
    })
}

/// Loss and (optionally) parameter gradients for one cached example.
fn example_loss(
    params: &ParamSet,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    c: &Cached,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let (f, t) = c.shape;
    let input = super::net::NetInput {
        features: Tensor::new(c.features.clone(), &[1, 6, f, t])?,
        y1: Tensor::new(c.y1.clone(), &[1, 2, f, t])?,
    };
    let w = Weights::bind(params, with_grad);
    let spec = model_forward(&w, cfg, &input)?;
    let wave = istft_tensor(&spec, &tc.frontend.stft, c.target.len())?;
    let loss = loss_total_tensor(&wave, &c.target, tc.alpha)?;
    let value = loss.item();
    if !with_grad {
        return Ok((value, None));
    }
    loss.backward()?;
    Ok((value, Some(w.grads())))
}

/// Mean loss of `params` over `data` (no gradients).
fn dataset_loss(params: &ParamSet, cfg: &ModelConfig, tc: &TrainConfig, cached: &[Cached]) -> Result<f64> {
    let losses = cached
        .par_iter()
        .map(|c| example_loss(params, cfg, tc, c, false).map(|r| r.0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Overfits the network on a small dataset. Initialization, batch order and
/// gradient reduction are all deterministic under `tc.seed`.
pub fn train_toy(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    data: &[TrainExample],
    init: Option<ParamSet>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    cfg.validate()?;
    let mut params = match init {
        Some(p) => p,
        None => init_weights(cfg, tc.seed)?,
    };
    let cached = data.par_iter().map(|ex| prepare(ex, tc)).collect::<Result<Vec<_>>>()?;
    let mut opt_cfg = tc.optimizer.clone();
    opt_cfg.total_steps = tc.steps.max(1);
    let mut opt = OptimizerState::new(opt_cfg, &params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x9e37_79b9_7f4a_7c15);
    let batch = if tc.batch_size == 0 { data.len() } else { tc.batch_size.min(data.len()) };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut losses = Vec::with_capacity(tc.steps);

    for step in 0..tc.steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                if batch < data.len() {
                    order.shuffle(&mut rng);
                }
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let results = idx
            .par_iter()
            .map(|&i| example_loss(&params, cfg, tc, &cached[i], true))
            .collect::<Result<Vec<_>>>()?;
        // fixed-order reduction keeps the trajectory bit-reproducible
        let scale = 1.0 / batch as f64;
        let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let mut loss = 0.0;
        for (l, g) in results {
            loss += l * scale;
            for (acc, gi) in grads.iter_mut().zip(g.expect("gradients requested")) {
                for (a, v) in acc.iter_mut().zip(gi) {
                    *a += v * scale;
                }
            }
        }
        let lr = opt.step(&mut params, &grads)?;
        losses.push(loss);
        if tc.log_every > 0 && (step % tc.log_every == 0 || step + 1 == tc.steps) {
            info!("step {step:>5}  loss {loss:.6}  lr {lr:.3e}");
        } else {
            debug!("step {step:>5}  loss {loss:.6}");
        }
    }
    let final_loss = dataset_loss(&params, cfg, tc, &cached)?;
    Ok(TrainReport {
        params,
        losses,
        final_loss,
    })
}

/// Finite-difference audit of the full training loss with respect to
/// `samples` randomly chosen parameter coordinates. Each coordinate is
/// compared with central differences at steps `eps`, `10 eps`, `100 eps`
/// and `1000 eps` and scored by the closest one: small steps lose weak
/// coordinates to rounding of the loss, large steps cross activation
/// kinks. Returns the
/// largest per-coordinate `|fd - an| / max(|fd|, |an|, 1e-8)`.
pub fn check_param_gradients(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    params: &ParamSet,
    example: &TrainExample,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let cached = prepare(example, tc)?;
    let (_, grads) = example_loss(params, cfg, tc, &cached, true)?;
    let grads = grads.expect("gradients requested");
    let total = params.num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, samples.min(total)).into_vec();
    let mut worst = 0.0f64;
    for flat in picks {
        // locate (tensor, offset) of a flat coordinate
        let mut rem = flat;
        let mut which = 0;
        while rem >= params.params()[which].numel() {
            rem -= params.params()[which].numel();
            which += 1;
        }
        let eval = |delta: f64| -> Result<f64> {
            let mut p = params.clone();
            p.params_mut()[which].data[rem] += delta;
            Ok(example_loss(&p, cfg, tc, &cached, false)?.0)
        };
        let an = grads[which][rem];
        let mut best = f64::INFINITY;
        for h in [eps, 10.0 * eps, 100.0 * eps, 1000.0 * eps] {
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            best = best.min((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
        }
        worst = worst.max(best);
    }
    Ok(worst)
}
