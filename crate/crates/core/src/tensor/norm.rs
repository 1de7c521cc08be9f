use super::Tensor;
use crate::error::{Error, Result};

/// Layer normalization over the channel axis of `[B, C, F, T]`, separately
/// for every `(b, f, t)`, followed by a per-channel affine map.
pub fn layer_norm_channels(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let [b, c, f, t] = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "layer norm affine {:?}/{:?} for {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    let plane = f * t;
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut xhat = vec![0.0; xd.len()];
    let mut inv = vec![0.0; b * plane];
    let mut out = vec![0.0; xd.len()];
    for bi in 0..b {
        for p in 0..plane {
            let idx = |ci: usize| (bi * c + ci) * plane + p;
            let mean = (0..c).map(|ci| xd[idx(ci)]).sum::<f64>() / c as f64;
            let var = (0..c).map(|ci| (xd[idx(ci)] - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv[bi * plane + p] = is;
            for ci in 0..c {
                let h = (xd[idx(ci)] - mean) * is;
                xhat[idx(ci)] = h;
                out[idx(ci)] = h * gd[ci] + bd[ci];
            }
        }
    }
    Tensor::from_op(out, vec![b, c, f, t], vec![x.clone(), gamma.clone(), beta.clone()], move |g, _, ps| {
        let gd = ps[1].data();
        let mut gx = vec![0.0; g.len()];
        let mut gg = vec![0.0; c];
        let mut gb = vec![0.0; c];
        for bi in 0..b {
            for p in 0..plane {
                let idx = |ci: usize| (bi * c + ci) * plane + p;
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for ci in 0..c {
                    let gh = g[idx(ci)] * gd[ci];
                    s1 += gh;
                    s2 += gh * xhat[idx(ci)];
                    gg[ci] += g[idx(ci)] * xhat[idx(ci)];
                    gb[ci] += g[idx(ci)];
                }
                let is = inv[bi * plane + p];
                let cf = c as f64;
                for ci in 0..c {
                    let gh = g[idx(ci)] * gd[ci];
                    gx[idx(ci)] = is / cf * (cf * gh - s1 - xhat[idx(ci)] * s2);
                }
            }
        }
        vec![
            ps[0].requires_grad().then_some(gx),
            ps[1].requires_grad().then_some(gg),
            ps[2].requires_grad().then_some(gb),
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, mul, sum};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], amp: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-amp..amp)).collect(), shape).unwrap()
    }

    #[test]
    fn normalized_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 6, 5, 3], 4.0);
        let y = layer_norm_channels(&x, &Tensor::new(vec![1.0; 6], &[6]).unwrap(), &Tensor::zeros(&[6]), 0.0).unwrap();
        for b in 0..2 {
            for p in 0..15 {
                let v: Vec<f64> = (0..6).map(|c| y.data()[(b * 6 + c) * 15 + p]).collect();
                let m = v.iter().sum::<f64>() / 6.0;
                let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 6.0;
                assert!(m.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn affine_applies_per_channel() {
        let x = Tensor::new(vec![1.0, 3.0], &[1, 2, 1, 1]).unwrap();
        let g = Tensor::new(vec![2.0, 0.5], &[2]).unwrap();
        let b = Tensor::new(vec![0.1, -0.1], &[2]).unwrap();
        let y = layer_norm_channels(&x, &g, &b, 0.0).unwrap();
        assert!((y.data()[0] + 1.9).abs() < 1e-12);
        assert!((y.data()[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[1, 4, 3, 2], 1.0);
        let g = rand_tensor(&mut rng, &[4], 1.0);
        let b = rand_tensor(&mut rng, &[4], 1.0);
        let p = rand_tensor(&mut rng, &[1, 4, 3, 2], 1.0);
        let f = |x: &Tensor, g: &Tensor, b: &Tensor| sum(&mul(&layer_norm_channels(x, g, b, 1e-5)?, &p)?);
        assert!(grad_check(|v| f(v, &g, &b), &x, 1e-5, 100, 0).unwrap() < 1e-6);
        assert!(grad_check(|v| f(&x, v, &b), &g, 1e-5, 100, 0).unwrap() < 1e-6);
        assert!(grad_check(|v| f(&x, &g, v), &b, 1e-5, 100, 0).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_wrong_affine() {
        let x = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(layer_norm_channels(&x, &Tensor::zeros(&[2]), &Tensor::zeros(&[3]), 1e-5).is_err());
    }
}
