use super::Tensor;
use crate::error::{Error, Result};

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::shape(format!("softmax axis {axis} out of range for {shape:?}")));
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let m = (0..n).map(|j| xd[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (xd[idx(j)] - m).exp();
                out[idx(j)] = e;
                z += e;
            }
            for j in 0..n {
                out[idx(j)] /= z;
            }
        }
    }
    Tensor::from_op(out, shape, vec![x.clone()], move |g, y, _| {
        let mut gx = vec![0.0; y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let s: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                for j in 0..n {
                    gx[idx(j)] = y[idx(j)] * (g[idx(j)] - s);
                }
            }
        }
        vec![Some(gx)]
    })
}

/// Attention across frequency, computed independently for every frame.
///
/// Per `(b, t)` with `Q, K, V` the `C x F` slices:
/// `A = softmax_rows(Q^T K / sqrt(C))`, `O = V A^T`.
pub fn freq_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let [b, c, f, t] = q.dims4()?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape(format!(
            "attention q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let scale = 1.0 / (c as f64).sqrt();
    let at = move |bi: usize, ci: usize, fi: usize, ti: usize| ((bi * c + ci) * f + fi) * t + ti;
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    // attention weights per (b, t): [f_query, f_key]
    let mut weights = vec![0.0; b * t * f * f];
    let mut out = vec![0.0; qd.len()];
    let mut row = vec![0.0; f];
    for bi in 0..b {
        for ti in 0..t {
            let a = &mut weights[(bi * t + ti) * f * f..(bi * t + ti + 1) * f * f];
            for f1 in 0..f {
                for (f2, r) in row.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for ci in 0..c {
                        s += qd[at(bi, ci, f1, ti)] * kd[at(bi, ci, f2, ti)];
                    }
                    *r = s * scale;
                }
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - m).exp();
                    z += *r;
                }
                for (f2, r) in row.iter().enumerate() {
                    a[f1 * f + f2] = r / z;
                }
            }
            for ci in 0..c {
                for f1 in 0..f {
                    let mut s = 0.0;
                    for f2 in 0..f {
                        s += a[f1 * f + f2] * vd[at(bi, ci, f2, ti)];
                    }
                    out[at(bi, ci, f1, ti)] = s;
                }
            }
        }
    }
    Tensor::from_op(out, vec![b, c, f, t], vec![q.clone(), k.clone(), v.clone()], move |g, _, ps| {
        let (qd, kd, vd) = (ps[0].data(), ps[1].data(), ps[2].data());
        let n = qd.len();
        let (mut gq, mut gk, mut gv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut ga = vec![0.0; f * f];
        for bi in 0..b {
            for ti in 0..t {
                let a = &weights[(bi * t + ti) * f * f..(bi * t + ti + 1) * f * f];
                for f1 in 0..f {
                    for f2 in 0..f {
                        let mut s = 0.0;
                        for ci in 0..c {
                            let go = g[at(bi, ci, f1, ti)];
                            s += go * vd[at(bi, ci, f2, ti)];
                            gv[at(bi, ci, f2, ti)] += a[f1 * f + f2] * go;
                        }
                        ga[f1 * f + f2] = s;
                    }
                    // softmax backward, then the 1/sqrt(C) scale
                    let dot: f64 = (0..f).map(|f2| a[f1 * f + f2] * ga[f1 * f + f2]).sum();
                    for f2 in 0..f {
                        let gs = a[f1 * f + f2] * (ga[f1 * f + f2] - dot) * scale;
                        for ci in 0..c {
                            gq[at(bi, ci, f1, ti)] += gs * kd[at(bi, ci, f2, ti)];
                            gk[at(bi, ci, f2, ti)] += gs * qd[at(bi, ci, f1, ti)];
                        }
                    }
                }
            }
        }
        vec![
            ps[0].requires_grad().then_some(gq),
            ps[1].requires_grad().then_some(gk),
            ps[2].requires_grad().then_some(gv),
        ]
    })
}
