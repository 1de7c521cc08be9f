use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Param, ParamSet, Tensor};

/// Graph leaves for one forward pass, addressable by parameter name.
pub struct Weights {
    index: HashMap<String, usize>,
    tensors: Vec<Tensor>,
}

impl Weights {
    pub fn bind(params: &ParamSet, requires_grad: bool) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Self {
            index,
            tensors: params.leaves(requires_grad),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::config(format!("missing weight '{name}'")))
    }

    /// Accumulated gradients in parameter order (zeros where none arrived).
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }
}

struct Builder {
    rng: ChaCha8Rng,
    params: ParamSet,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.params.push(Param::new(name, shape, data)?)?;
        Ok(())
    }

    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> Result<()> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.push(name, shape, data)
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f64) -> Result<()> {
        self.push(name, shape, vec![v; shape.iter().product()])
    }

    fn conv(&mut self, prefix: &str, spec: &ConvSpec, bias: bool) -> Result<()> {
        let ws = spec.weight_shape();
        let fan_in = ws[1] * ws[2] * ws[3];
        self.uniform(format!("{prefix}.w"), &ws, 1.0 / (fan_in as f64).sqrt())?;
        if bias {
            self.constant(format!("{prefix}.b"), &[spec.out_ch], 0.0)?;
        }
        Ok(())
    }

    fn prelu(&mut self, name: String, c: usize) -> Result<()> {
        self.constant(name, &[c], 0.25)
    }

    fn tfcm(&mut self, prefix: &str, c: usize, cfg: &ModelConfig) -> Result<()> {
        for i in 0..cfg.tfcm_depth {
            let p = format!("{prefix}.{i}");
            self.conv(&format!("{p}.pw1"), &ConvSpec::pointwise(c, c), true)?;
            self.prelu(format!("{p}.act1"), c)?;
            self.conv(&format!("{p}.dw"), &tfcm_depthwise(c, i, cfg), true)?;
            self.prelu(format!("{p}.act2"), c)?;
            self.conv(&format!("{p}.pw2"), &ConvSpec::pointwise(c, c), true)?;
        }
        Ok(())
    }

    fn gcafa(&mut self, prefix: &str, c: usize, cfg: &ModelConfig) -> Result<()> {
        let ci = c / cfg.gcafa_ratio;
        self.conv(&format!("{prefix}.gate_a"), &ConvSpec::pointwise(c, 6 * ci), true)?;
        self.constant(format!("{prefix}.ln.g"), &[ci], 1.0)?;
        self.constant(format!("{prefix}.ln.b"), &[ci], 0.0)?;
        self.conv(&format!("{prefix}.proj"), &ConvSpec::pointwise(ci, c), true)?;
        self.prelu(format!("{prefix}.proj_act"), c)?;
        self.conv(&format!("{prefix}.gate_b"), &ConvSpec::pointwise(c, 2 * c), true)
    }
}

pub(crate) fn tfcm_depthwise(c: usize, i: usize, cfg: &ModelConfig) -> ConvSpec {
    let (kf, kt) = cfg.tfcm_kernel;
    ConvSpec::new(c, c, (kf, kt))
        .dilation(1, 1 << i)
        .freq_padding(kf / 2, kf / 2)
        .groups(c)
}

pub(crate) fn dc_spec(cfg: &ModelConfig, cin: usize, cout: usize) -> ConvSpec {
    let p = cfg.dc_padding();
    ConvSpec::new(cin, cout, (cfg.dc_kernel_f, 1))
        .stride(cfg.dc_stride_f, 1)
        .freq_padding(p, p)
}

pub(crate) fn uc_spec(cfg: &ModelConfig, cin: usize, cout: usize) -> ConvSpec {
    dc_spec(cfg, cin, cout).transposed(0)
}

pub(crate) fn pe_spec(cfg: &ModelConfig) -> ConvSpec {
    ConvSpec::new(3, cfg.pe_out_ch, (1, cfg.pe_kernel_t))
}

/// Seeded initialization: uniform `+-1/sqrt(fan_in)` conv weights, zero
/// biases, PReLU slopes 0.25, unit layer-norm scale. The MEA head starts
/// close to passing the current noisy frame with zero phase rotation.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: ParamSet::new(),
    };
    let pe = pe_spec(cfg);
    b.conv("pe.re", &pe, false)?;
    b.conv("pe.im", &pe, false)?;

    let mut cin = cfg.pe_out_ch;
    for (s, &c) in cfg.enc_channels.iter().enumerate() {
        b.conv(&format!("enc{s}.dc"), &dc_spec(cfg, cin, c), true)?;
        b.prelu(format!("enc{s}.dc_act"), c)?;
        b.tfcm(&format!("enc{s}.tfcm"), c, cfg)?;
        b.gcafa(&format!("enc{s}.gcafa"), c, cfg)?;
        cin = c;
    }
    for k in 0..cfg.backbone_blocks {
        b.tfcm(&format!("bb{k}.tfcm0"), cin, cfg)?;
        b.tfcm(&format!("bb{k}.tfcm1"), cin, cfg)?;
        b.gcafa(&format!("bb{k}.gcafa"), cin, cfg)?;
    }
    let skips: Vec<usize> = cfg.enc_channels.iter().rev().copied().collect();
    for (s, (&c, &skip)) in cfg.dec_channels().iter().zip(&skips).enumerate() {
        b.conv(&format!("dec{s}.uc"), &uc_spec(cfg, cin + skip, c), true)?;
        b.prelu(format!("dec{s}.uc_act"), c)?;
        b.tfcm(&format!("dec{s}.tfcm"), c, cfg)?;
        b.gcafa(&format!("dec{s}.gcafa"), c, cfg)?;
        cin = c;
    }
    b.conv("mea.taps", &ConvSpec::pointwise(cin, cfg.mea_taps), true)?;
    b.conv("mea.phase", &ConvSpec::pointwise(cin, 2), true)?;
    // sigmoid(-4) ~ 0.018: older taps start nearly closed
    let taps_b = b.params.position("mea.taps.b").expect("just added");
    for (j, v) in b.params.params_mut()[taps_b].data.iter_mut().enumerate() {
        *v = if j == 0 { 0.0 } else { -4.0 };
    }
    let phase_b = b.params.position("mea.phase.b").expect("just added");
    b.params.params_mut()[phase_b].data[0] = 1.0;
    Ok(b.params)
}

/// Trainable scalar count for a configuration.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    Ok(init_weights(cfg, 0)?.num_scalars())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form count from the layer arithmetic.
    fn expected(cfg: &ModelConfig) -> usize {
        let (kf, kt) = cfg.tfcm_kernel;
        let tfcm = |c: usize| cfg.tfcm_depth * (2 * (c * c + c) + c * kf * kt + c + 2 * c);
        let gcafa = |c: usize| {
            let ci = c / cfg.gcafa_ratio;
            (6 * ci * c + 6 * ci) + 2 * ci + (ci * c + c) + c + (2 * c * c + 2 * c)
        };
        let k = cfg.dc_kernel_f;
        let mut n = 2 * 3 * cfg.pe_out_ch * cfg.pe_kernel_t;
        let mut cin = cfg.pe_out_ch;
        for &c in &cfg.enc_channels {
            n += cin * c * k + 2 * c + tfcm(c) + gcafa(c);
            cin = c;
        }
        n += cfg.backbone_blocks * (2 * tfcm(cin) + gcafa(cin));
        let skips: Vec<usize> = cfg.enc_channels.iter().rev().copied().collect();
        for (&c, &s) in cfg.dec_channels().iter().zip(&skips) {
            n += (cin + s) * c * k + 2 * c + tfcm(c) + gcafa(c);
            cin = c;
        }
        n + (cin * cfg.mea_taps + cfg.mea_taps) + (cin * 2 + 2)
    }

    #[test]
    fn count_matches_layer_arithmetic() {
        let cfg = ModelConfig::default();
        let n = param_count(&cfg).unwrap();
        assert_eq!(n, expected(&cfg));
        assert!((100_000..=250_000).contains(&n), "{n}");
    }

    #[test]
    fn seeded_and_finite() {
        let cfg = ModelConfig::default();
        let a = init_weights(&cfg, 7).unwrap();
        assert_eq!(a, init_weights(&cfg, 7).unwrap());
        assert_ne!(a, init_weights(&cfg, 8).unwrap());
        assert!(a.iter().all(|p| p.data.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn binding_resolves_names() {
        let p = init_weights(&ModelConfig::default(), 0).unwrap();
        let w = Weights::bind(&p, true);
        assert_eq!(w.get("enc0.dc.w").unwrap().shape(), &[16, 4, 7, 1]);
        assert_eq!(w.get("dec0.uc.w").unwrap().shape(), &[80, 24, 7, 1]);
        assert!(w.get("nope").is_err());
        assert_eq!(w.grads().len(), p.len());
    }
}
