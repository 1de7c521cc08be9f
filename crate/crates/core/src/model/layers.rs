use super::weights::{dc_spec, pe_spec, tfcm_depthwise, uc_spec, Weights};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{
    add, chunk_channels, concat_channels, conv2d, conv2d_transpose, freq_attention, layer_norm_channels,
    mul, prelu, sigmoid, slice_channels, sub, ConvSpec, Tensor,
};

/// Added under the square root when normalizing the MEA phase pair.
pub const MEA_PHASE_EPS: f64 = 1e-12;
const LN_EPS: f64 = 1e-5;

fn conv_named(w: &Weights, prefix: &str, x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv2d(x, w.get(&format!("{prefix}.w"))?, Some(w.get(&format!("{prefix}.b"))?), spec)
}

fn gate(x: &Tensor) -> Result<Tensor> {
    let halves = chunk_channels(x, 2)?;
    mul(&halves[0], &sigmoid(&halves[1])?)
}

/// `(re^2 + im^2)^(p/2)` elementwise. The derivative is taken as zero at the
/// origin.
pub fn compressed_magnitude(re: &Tensor, im: &Tensor, p: f64) -> Result<Tensor> {
    if re.shape() != im.shape() {
        return Err(Error::shape("compressed_magnitude: re/im shapes differ"));
    }
    let data: Vec<f64> = re
        .data()
        .iter()
        .zip(im.data())
        .map(|(a, b)| (a * a + b * b).powf(p / 2.0))
        .collect();
    Tensor::from_op(data, re.shape().to_vec(), vec![re.clone(), im.clone()], move |g, y, ps| {
        let (rd, id) = (ps[0].data(), ps[1].data());
        let n = g.len();
        let mut gr = vec![0.0; n];
        let mut gi = vec![0.0; n];
        for i in 0..n {
            let m2 = rd[i] * rd[i] + id[i] * id[i];
            if m2 > 1e-300 {
                let s = g[i] * p * y[i] / m2;
                gr[i] = s * rd[i];
                gi[i] = s * id[i];
            }
        }
        vec![ps[0].requires_grad().then_some(gr), ps[1].requires_grad().then_some(gi)]
    })
}

/// Complex causal conv over the three stacked spectra followed by compressed
/// magnitude. `input` is `[B, 6, F, T]`: real parts of (Y1, Y2, X_pld) then
/// their imaginary parts.
pub fn phase_encode(w: &Weights, input: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let [_, c, _, _] = input.dims4()?;
    if c != 6 {
        return Err(Error::shape(format!("phase encoder expects 6 real channels, got {c}")));
    }
    let spec = pe_spec(cfg);
    let xr = slice_channels(input, 0, 3)?;
    let xi = slice_channels(input, 3, 3)?;
    let (wr, wi) = (w.get("pe.re.w")?, w.get("pe.im.w")?);
    let re = sub(&conv2d(&xr, wr, None, &spec)?, &conv2d(&xi, wi, None, &spec)?)?;
    let im = add(&conv2d(&xi, wr, None, &spec)?, &conv2d(&xr, wi, None, &spec)?)?;
    compressed_magnitude(&re, &im, cfg.pe_compression)
}

/// Stack of residual pointwise/depthwise/pointwise sub-blocks with time
/// dilation `2^i`.
pub fn tfcm_forward(w: &Weights, prefix: &str, x: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let [_, c, _, _] = x.dims4()?;
    let pw = ConvSpec::pointwise(c, c);
    let mut h = x.clone();
    for i in 0..cfg.tfcm_depth {
        let p = format!("{prefix}.{i}");
        let mut y = conv_named(w, &format!("{p}.pw1"), &h, &pw)?;
        y = prelu(&y, w.get(&format!("{p}.act1"))?)?;
        y = conv_named(w, &format!("{p}.dw"), &y, &tfcm_depthwise(c, i, cfg))?;
        y = prelu(&y, w.get(&format!("{p}.act2"))?)?;
        y = conv_named(w, &format!("{p}.pw2"), &y, &pw)?;
        h = add(&h, &y)?;
    }
    Ok(h)
}

/// Gated conv, frequency attention, projection with the first residual,
/// then a second gated conv with the second residual.
pub fn gcafa_forward(w: &Weights, prefix: &str, x: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let [_, c, _, _] = x.dims4()?;
    if c % cfg.gcafa_ratio != 0 || c / cfg.gcafa_ratio == 0 {
        return Err(Error::config(format!(
            "GCAFA needs channels divisible by {}, got {c}",
            cfg.gcafa_ratio
        )));
    }
    let ci = c / cfg.gcafa_ratio;
    let a = gate(&conv_named(w, &format!("{prefix}.gate_a"), x, &ConvSpec::pointwise(c, 6 * ci))?)?;
    let qkv = chunk_channels(&a, 3)?;
    let att = freq_attention(&qkv[0], &qkv[1], &qkv[2])?;
    let normed = layer_norm_channels(&att, w.get(&format!("{prefix}.ln.g"))?, w.get(&format!("{prefix}.ln.b"))?, LN_EPS)?;
    let proj = conv_named(w, &format!("{prefix}.proj"), &normed, &ConvSpec::pointwise(ci, c))?;
    let proj = prelu(&proj, w.get(&format!("{prefix}.proj_act"))?)?;
    let r1 = add(x, &proj)?;
    let b = gate(&conv_named(w, &format!("{prefix}.gate_b"), &r1, &ConvSpec::pointwise(c, 2 * c))?)?;
    add(&r1, &b)
}

/// Encoder DC layer (frequency stride, time kernel 1) plus activation.
pub fn downsample(w: &Weights, x: &Tensor, stage: usize, cfg: &ModelConfig) -> Result<Tensor> {
    let [_, cin, _, _] = x.dims4()?;
    let cout = *cfg
        .enc_channels
        .get(stage)
        .ok_or_else(|| Error::config(format!("no encoder stage {stage}")))?;
    let y = conv_named(w, &format!("enc{stage}.dc"), x, &dc_spec(cfg, cin, cout))?;
    prelu(&y, w.get(&format!("enc{stage}.dc_act"))?)
}

/// Skip concatenation followed by the decoder UC layer plus activation.
pub fn upsample(w: &Weights, x: &Tensor, skip: &Tensor, stage: usize, cfg: &ModelConfig) -> Result<Tensor> {
    let cout = *cfg
        .dec_channels()
        .get(stage)
        .ok_or_else(|| Error::config(format!("no decoder stage {stage}")))?;
    let cat = concat_channels(&[x.clone(), skip.clone()])?;
    let [_, cin, _, _] = cat.dims4()?;
    let p = format!("dec{stage}.uc");
    let y = conv2d_transpose(&cat, w.get(&format!("{p}.w"))?, Some(w.get(&format!("{p}.b"))?), &uc_spec(cfg, cin, cout))?;
    prelu(&y, w.get(&format!("dec{stage}.uc_act"))?)
}

/// Deep-filter magnitude plus unit-modulus phase rotation.
///
/// `taps` `[B, J, F, T]` are the (already bounded) real filter taps over the
/// current and `J - 1` past frames of `|Y1|`; `phase` `[B, 2, F, T]` holds the
/// unnormalized `(c, s)` pair; `y1` `[B, 2, F, T]` is the noisy spectrum
/// (real, imaginary). Returns `[B, 2, F, T]`.
pub fn mea_apply(taps: &Tensor, phase: &Tensor, y1: &Tensor) -> Result<Tensor> {
    let [b, j, f, t] = taps.dims4()?;
    if phase.shape() != [b, 2, f, t] || y1.shape() != [b, 2, f, t] {
        return Err(Error::shape(format!(
            "MEA: taps {:?}, phase {:?}, spectrum {:?}",
            taps.shape(),
            phase.shape(),
            y1.shape()
        )));
    }
    let plane = f * t;
    let yd = y1.data();
    // |Y1| and its unit phasor, [B, F, T]
    let mut mag = vec![0.0; b * plane];
    let mut unit = vec![(1.0, 0.0); b * plane];
    for bi in 0..b {
        for p in 0..plane {
            let (re, im) = (yd[(bi * 2) * plane + p], yd[(bi * 2 + 1) * plane + p]);
            let m = re.hypot(im);
            mag[bi * plane + p] = m;
            if m > 0.0 {
                unit[bi * plane + p] = (re / m, im / m);
            }
        }
    }
    let (wd, pd) = (taps.data(), phase.data());
    let mut out = vec![0.0; b * 2 * plane];
    // per bin: (M, c', s', r)
    let mut cache = vec![(0.0, 0.0, 0.0, 0.0); b * plane];
    for bi in 0..b {
        for fi in 0..f {
            for ti in 0..t {
                let p = fi * t + ti;
                let mut m = 0.0;
                for jj in 0..j.min(ti + 1) {
                    m += wd[(bi * j + jj) * plane + p] * mag[bi * plane + p - jj];
                }
                let (c, s) = (pd[(bi * 2) * plane + p], pd[(bi * 2 + 1) * plane + p]);
                let r = (c * c + s * s + MEA_PHASE_EPS).sqrt();
                let (cn, sn) = (c / r, s / r);
                let (ur, ui) = unit[bi * plane + p];
                out[(bi * 2) * plane + p] = m * (ur * cn - ui * sn);
                out[(bi * 2 + 1) * plane + p] = m * (ur * sn + ui * cn);
                cache[bi * plane + p] = (m, cn, sn, r);
            }
        }
    }
    Tensor::from_op(out, vec![b, 2, f, t], vec![taps.clone(), phase.clone(), y1.clone()], move |g, _, ps| {
        let pd = ps[1].data();
        let mut gw = vec![0.0; b * j * plane];
        let mut gp = vec![0.0; b * 2 * plane];
        for bi in 0..b {
            for fi in 0..f {
                for ti in 0..t {
                    let p = fi * t + ti;
                    let (m, cn, sn, r) = cache[bi * plane + p];
                    let (ur, ui) = unit[bi * plane + p];
                    let (gre, gim) = (g[(bi * 2) * plane + p], g[(bi * 2 + 1) * plane + p]);
                    let (pr, pi) = (ur * cn - ui * sn, ur * sn + ui * cn);
                    let gm = gre * pr + gim * pi;
                    for jj in 0..j.min(ti + 1) {
                        gw[(bi * j + jj) * plane + p] = gm * mag[bi * plane + p - jj];
                    }
                    let (gpr, gpi) = (gre * m, gim * m);
                    let gcn = gpr * ur + gpi * ui;
                    let gsn = -gpr * ui + gpi * ur;
                    let (c, s) = (pd[(bi * 2) * plane + p], pd[(bi * 2 + 1) * plane + p]);
                    let r3 = r * r * r;
                    gp[(bi * 2) * plane + p] = gcn * (1.0 / r - c * c / r3) - gsn * c * s / r3;
                    gp[(bi * 2 + 1) * plane + p] = gsn * (1.0 / r - s * s / r3) - gcn * c * s / r3;
                }
            }
        }
        vec![
            ps[0].requires_grad().then_some(gw),
            ps[1].requires_grad().then_some(gp),
            None,
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_weights;
    use crate::tensor::{grad_check, scale, sum, Param, ParamSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], amp: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-amp..amp)).collect(), shape).unwrap()
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            tfcm_depth: 3,
            ..Default::default()
        }
    }

    /// Random weights for one GCAFA site at `c` channels.
    fn gcafa_params(c: usize, rng: &mut ChaCha8Rng) -> ParamSet {
        let ci = c / 2;
        let mut s = ParamSet::new();
        let mut add = |name: &str, shape: &[usize], amp: f64| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-amp..amp)).collect();
            s.push(Param::new(format!("g.{name}"), shape, data).unwrap()).unwrap();
        };
        add("gate_a.w", &[6 * ci, c, 1, 1], 0.5);
        add("gate_a.b", &[6 * ci], 0.1);
        add("ln.g", &[ci], 1.0);
        add("ln.b", &[ci], 0.2);
        add("proj.w", &[c, ci, 1, 1], 0.5);
        add("proj.b", &[c], 0.1);
        add("proj_act", &[c], 0.3);
        add("gate_b.w", &[2 * c, c, 1, 1], 0.5);
        add("gate_b.b", &[2 * c], 0.1);
        s
    }

    fn zero_params(s: &mut ParamSet, names: &[&str]) {
        for p in s.params_mut() {
            if names.iter().any(|n| p.name.ends_with(n)) {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    #[test]
    fn phase_encoder_zero_in_zero_out() {
        let cfg = ModelConfig::default();
        let p = init_weights(&cfg, 1).unwrap();
        let w = Weights::bind(&p, false);
        let y = phase_encode(&w, &Tensor::zeros(&[1, 6, 9, 5]), &cfg).unwrap();
        assert_eq!(y.shape(), &[1, 4, 9, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phase_encoder_impulse_by_hand() {
        let cfg = ModelConfig::default();
        let mut p = init_weights(&cfg, 1).unwrap();
        // output channel 0 reads Y1 with complex weights (a + bi) at taps 0..3
        let taps = [(1.0, 0.0), (0.5, -0.5), (0.0, 2.0)];
        for pr in p.params_mut() {
            if pr.name == "pe.re.w" || pr.name == "pe.im.w" {
                pr.data.iter_mut().for_each(|v| *v = 0.0);
                for (k, &(a, b)) in taps.iter().enumerate() {
                    // weight [out 0, in 0, 0, k]; tap k multiplies frame t - (2 - k)
                    pr.data[k] = if pr.name == "pe.re.w" { a } else { b };
                }
            }
        }
        let w = Weights::bind(&p, false);
        // Y1 impulse (3 - 4i) at frame 0 of a single bin
        let mut x = vec![0.0; 6 * 4];
        x[0] = 3.0;
        x[3 * 4] = -4.0;
        let y = phase_encode(&w, &Tensor::new(x, &[1, 6, 1, 4]).unwrap(), &cfg).unwrap();
        let z = (3.0f64, -4.0f64);
        for t in 0..4 {
            let expect = if t <= 2 {
                let (a, b) = taps[2 - t];
                let (re, im) = (a * z.0 - b * z.1, a * z.1 + b * z.0);
                (re * re + im * im).powf(0.25)
            } else {
                0.0
            };
            assert!((y.data()[t] - expect).abs() < 1e-12, "frame {t}");
        }
        assert!(y.data()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phase_encoder_compression_homogeneity() {
        let cfg = ModelConfig::default();
        let p = init_weights(&cfg, 3).unwrap();
        let w = Weights::bind(&p, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[1, 6, 5, 6], 1.0);
        let y = phase_encode(&w, &x, &cfg).unwrap();
        let ys = phase_encode(&w, &scale(&x, 9.0).unwrap(), &cfg).unwrap();
        for (a, b) in y.data().iter().zip(ys.data()) {
            assert!((b - 3.0 * a).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn tfcm_zero_branch_is_identity() {
        let cfg = small_cfg();
        let mut p = init_weights(&cfg, 0).unwrap();
        zero_params(&mut p, &["pw2.w", "pw2.b"]);
        let w = Weights::bind(&p, false);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[1, 16, 7, 10], 1.0);
        let y = tfcm_forward(&w, "enc0.tfcm", &x, &cfg).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn tfcm_receptive_field_is_127_frames() {
        let cfg = ModelConfig::default();
        let mut p = init_weights(&cfg, 5).unwrap();
        // non-negative weights rule out cancellation in the impulse probe
        for pr in p.params_mut() {
            if pr.name.starts_with("enc0.tfcm") && pr.name.ends_with(".w") {
                pr.data.iter_mut().for_each(|v| *v = v.abs() + 0.01);
            }
        }
        let w = Weights::bind(&p, false);
        let t = 160;
        let mut x = vec![0.0; 16 * t];
        x[0] = 1.0; // channel 0, frame 0
        let x = Tensor::new(x, &[1, 16, 1, t]).unwrap();
        let y = tfcm_forward(&w, "enc0.tfcm", &x, &cfg).unwrap();
        let support: Vec<usize> = (0..t)
            .filter(|&tt| (0..16).any(|c| y.data()[c * t + tt] != 0.0))
            .collect();
        assert_eq!(support.first(), Some(&0));
        assert_eq!(support.last(), Some(&126));
    }

    #[test]
    fn tfcm_is_causal() {
        let cfg = small_cfg();
        let p = init_weights(&cfg, 6).unwrap();
        let w = Weights::bind(&p, false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = rand_tensor(&mut rng, &[1, 16, 4, 20], 1.0);
        let mut d = x0.data().to_vec();
        d[2 * 20 + 11] += 0.5;
        let x1 = Tensor::new(d, x0.shape()).unwrap();
        let y0 = tfcm_forward(&w, "enc0.tfcm", &x0, &cfg).unwrap();
        let y1 = tfcm_forward(&w, "enc0.tfcm", &x1, &cfg).unwrap();
        for (i, (a, b)) in y0.data().iter().zip(y1.data()).enumerate() {
            if i % 20 < 11 {
                assert_eq!(a, b);
            }
        }
        assert_ne!(y0.data(), y1.data());
    }

    #[test]
    fn gcafa_zero_projection_and_gate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = gcafa_params(8, &mut rng);
        zero_params(&mut p, &["proj.w", "proj.b"]);
        let x = rand_tensor(&mut rng, &[1, 8, 6, 3], 1.0);
        let cfg = ModelConfig::default();
        // with only the projection zeroed the output is r1 + gate_b(r1), r1 = x
        let w = Weights::bind(&p, false);
        let y = gcafa_forward(&w, "g", &x, &cfg).unwrap();
        let gb = gate(&conv_named(&w, "g.gate_b", &x, &ConvSpec::pointwise(8, 16)).unwrap()).unwrap();
        for ((a, xv), gv) in y.data().iter().zip(x.data()).zip(gb.data()) {
            assert!((a - xv - gv).abs() < 1e-14);
        }
        zero_params(&mut p, &["gate_b.w", "gate_b.b"]);
        let w = Weights::bind(&p, false);
        assert_eq!(gcafa_forward(&w, "g", &x, &cfg).unwrap().data(), x.data());
    }

    #[test]
    fn gcafa_single_bin_matches_per_bin_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = 4;
        let p = gcafa_params(c, &mut rng);
        let x = rand_tensor(&mut rng, &[1, c, 1, 3], 1.0);
        let w = Weights::bind(&p, false);
        let y = gcafa_forward(&w, "g", &x, &ModelConfig::default()).unwrap();
        let get = |n: &str| p.get(&format!("g.{n}")).unwrap().data.clone();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let matvec = |w: &[f64], b: &[f64], v: &[f64]| -> Vec<f64> {
            (0..b.len())
                .map(|o| b[o] + (0..v.len()).map(|i| w[o * v.len() + i] * v[i]).sum::<f64>())
                .collect()
        };
        for t in 0..3 {
            let xv: Vec<f64> = (0..c).map(|ch| x.data()[ch * 3 + t]).collect();
            let a = matvec(&get("gate_a.w"), &get("gate_a.b"), &xv);
            let gated: Vec<f64> = (0..6).map(|i| a[i] * sig(a[6 + i])).collect();
            let v = &gated[4..6]; // single bin: attention returns V
            let m = (v[0] + v[1]) / 2.0;
            let var = ((v[0] - m).powi(2) + (v[1] - m).powi(2)) / 2.0;
            let (lg, lb) = (get("ln.g"), get("ln.b"));
            let ln: Vec<f64> = (0..2).map(|i| (v[i] - m) / (var + LN_EPS).sqrt() * lg[i] + lb[i]).collect();
            let pr = matvec(&get("proj.w"), &get("proj.b"), &ln);
            let slope = get("proj_act");
            let r1: Vec<f64> = (0..c)
                .map(|i| xv[i] + if pr[i] < 0.0 { slope[i] * pr[i] } else { pr[i] })
                .collect();
            let b = matvec(&get("gate_b.w"), &get("gate_b.b"), &r1);
            for i in 0..c {
                let e = r1[i] + b[i] * sig(b[c + i]);
                assert!((y.data()[i * 3 + t] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcafa_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = gcafa_params(8, &mut rng);
        let x = rand_tensor(&mut rng, &[1, 8, 16, 4], 1.0);
        let probe = rand_tensor(&mut rng, &[1, 8, 16, 4], 1.0);
        let w = Weights::bind(&p, false);
        let cfg = ModelConfig::default();
        let err = grad_check(
            |x| sum(&mul(&gcafa_forward(&w, "g", x, &cfg)?, &probe)?),
            &x,
            1e-5,
            200,
            1,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
        assert!(gcafa_forward(&w, "g", &Tensor::zeros(&[1, 7, 2, 2]), &cfg).is_err());
    }

    #[test]
    fn odd_channels_rejected() {
        let cfg = ModelConfig::default();
        let p = init_weights(&cfg, 0).unwrap();
        let w = Weights::bind(&p, false);
        let r = gcafa_forward(&w, "enc0.gcafa", &Tensor::zeros(&[1, 5, 3, 2]), &cfg);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn down_up_shape_trace() {
        let cfg = ModelConfig::default();
        let p = init_weights(&cfg, 0).unwrap();
        let w = Weights::bind(&p, false);
        let t = 3;
        let mut x = Tensor::zeros(&[1, 4, 257, t]);
        let mut skips = Vec::new();
        let mut trace = vec![257];
        for s in 0..3 {
            x = downsample(&w, &x, s, &cfg).unwrap();
            trace.push(x.shape()[2]);
            assert_eq!(x.shape()[3], t);
            skips.push(x.clone());
        }
        assert_eq!(trace, vec![257, 65, 17, 5]);
        let mut back = vec![5];
        for s in 0..3 {
            let skip = &skips[2 - s];
            x = upsample(&w, &x, skip, s, &cfg).unwrap();
            back.push(x.shape()[2]);
            assert_eq!(x.shape()[3], t);
        }
        assert_eq!(back, vec![5, 17, 65, 257]);
        assert_eq!(x.shape()[1], 4);
    }

    fn mea_inputs(rng: &mut ChaCha8Rng, f: usize, t: usize) -> (Tensor, Tensor, Tensor) {
        (
            rand_tensor(rng, &[1, 3, f, t], 1.0),
            rand_tensor(rng, &[1, 2, f, t], 1.0),
            rand_tensor(rng, &[1, 2, f, t], 1.0),
        )
    }

    #[test]
    fn mea_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (f, t) = (5, 4);
        let (_, _, y1) = mea_inputs(&mut rng, f, t);
        let mut taps = vec![0.0; 3 * f * t];
        taps[..f * t].fill(1.0);
        let mut ph = vec![0.0; 2 * f * t];
        ph[..f * t].fill(0.7);
        let out = mea_apply(&Tensor::new(taps, &[1, 3, f, t]).unwrap(), &Tensor::new(ph.clone(), &[1, 2, f, t]).unwrap(), &y1)
            .unwrap();
        for (a, b) in out.data().iter().zip(y1.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = mea_apply(&Tensor::zeros(&[1, 3, f, t]), &Tensor::new(ph, &[1, 2, f, t]).unwrap(), &y1).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mea_bounds_and_unit_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (f, t) = (6, 7);
        let (raw, ph, y1) = mea_inputs(&mut rng, f, t);
        let taps = scale(&sigmoid(&scale(&raw, 4.0).unwrap()).unwrap(), 2.0).unwrap();
        let out = mea_apply(&taps, &ph, &y1).unwrap();
        let ft = f * t;
        let mag = |d: &[f64], p: usize| d[p].hypot(d[ft + p]);
        for fi in 0..f {
            for ti in 0..t {
                let p = fi * t + ti;
                let bound: f64 = (0..3.min(ti + 1)).map(|j| 2.0 * mag(y1.data(), p - j)).sum();
                assert!(mag(out.data(), p) <= bound + 1e-12);
                let m: f64 = (0..3.min(ti + 1)).map(|j| taps.data()[j * ft + p] * mag(y1.data(), p - j)).sum();
                // |out| / M is the modulus of the phase factor
                assert!((mag(out.data(), p) / m - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mea_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (taps, ph, y1) = mea_inputs(&mut rng, 4, 5);
        let probe = rand_tensor(&mut rng, &[1, 2, 4, 5], 1.0);
        let f = |a: &Tensor, b: &Tensor| sum(&mul(&mea_apply(a, b, &y1)?, &probe)?);
        assert!(grad_check(|x| f(x, &ph), &taps, 1e-5, 100, 0).unwrap() < 1e-6);
        assert!(grad_check(|x| f(&taps, x), &ph, 1e-5, 100, 0).unwrap() < 1e-6);
        let re = rand_tensor(&mut rng, &[1, 2, 3, 3], 1.0);
        let im = rand_tensor(&mut rng, &[1, 2, 3, 3], 1.0);
        let g = |a: &Tensor, b: &Tensor| sum(&mul(&compressed_magnitude(a, b, 0.5)?, &re)?);
        assert!(grad_check(|x| g(x, &im), &re, 1e-6, 100, 0).unwrap() < 1e-6);
        assert!(grad_check(|x| g(&re, x), &im, 1e-6, 100, 0).unwrap() < 1e-6);
    }
}
