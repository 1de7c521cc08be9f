//! 2-D (frequency x time) convolutions with causal time padding.
//!
//! Frequency padding is explicit `(left, right)`; the time axis is always
//! left-padded by `dilation_t * (kernel_t - 1)` so output frame `t` depends on
//! input frames `<= t` only. Transposed convolutions keep the same time
//! direction (`t_out = t_in + k * dilation_t`, cropped to the input length).

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub freq_padding: (usize, usize),
    pub groups: usize,
    pub transposed: bool,
    pub output_padding_f: usize,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: (usize, usize)) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride: (1, 1),
            dilation: (1, 1),
            freq_padding: (0, 0),
            groups: 1,
            transposed: false,
            output_padding_f: 0,
        }
    }

    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self::new(in_ch, out_ch, (1, 1))
    }

    pub fn stride(mut self, f: usize, t: usize) -> Self {
        self.stride = (f, t);
        self
    }

    pub fn dilation(mut self, f: usize, t: usize) -> Self {
        self.dilation = (f, t);
        self
    }

    pub fn freq_padding(mut self, left: usize, right: usize) -> Self {
        self.freq_padding = (left, right);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn transposed(mut self, output_padding_f: usize) -> Self {
        self.transposed = true;
        self.output_padding_f = output_padding_f;
        self
    }

    /// Causal `(left, right)` padding on the time axis.
    pub fn time_padding(&self) -> (usize, usize) {
        (self.dilation.1 * (self.kernel.1 - 1), 0)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        if self.transposed {
            [self.in_ch, self.out_ch / self.groups, self.kernel.0, self.kernel.1]
        } else {
            [self.out_ch, self.in_ch / self.groups, self.kernel.0, self.kernel.1]
        }
    }

    pub fn num_params(&self, bias: bool) -> usize {
        self.weight_shape().iter().product::<usize>() + if bias { self.out_ch } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.in_ch,
            self.out_ch,
            self.kernel.0,
            self.kernel.1,
            self.stride.0,
            self.stride.1,
            self.dilation.0,
            self.dilation.1,
            self.groups,
        ];
        if positive.contains(&0) {
            return Err(Error::config(format!("conv spec has a zero field: {self:?}")));
        }
        if !self.in_ch.is_multiple_of(self.groups) || !self.out_ch.is_multiple_of(self.groups) {
            return Err(Error::config("channels not divisible by groups"));
        }
        if self.transposed && (self.groups != 1 || self.stride.1 != 1) {
            return Err(Error::config(
                "transposed conv supports groups = 1 and time stride 1 only",
            ));
        }
        Ok(())
    }

    /// Output frequency size for an input of `f` bins.
    pub fn out_freq(&self, f: usize) -> Result<usize> {
        let (pl, pr) = self.freq_padding;
        let span = self.dilation.0 * (self.kernel.0 - 1);
        if self.transposed {
            let full = (f - 1) * self.stride.0 + span + 1 + self.output_padding_f;
            full.checked_sub(pl + pr)
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::shape("transposed conv output would be empty"))
        } else {
            let padded = f + pl + pr;
            if padded < span + 1 {
                return Err(Error::shape(format!(
                    "frequency size {f} too small for kernel span {}",
                    span + 1
                )));
            }
            Ok((padded - span - 1) / self.stride.0 + 1)
        }
    }

    pub fn out_time(&self, t: usize) -> usize {
        if self.transposed {
            t
        } else {
            (t - 1) / self.stride.1 + 1
        }
    }
}

fn check(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<[usize; 4]> {
    spec.validate()?;
    let dims = x.dims4()?;
    if dims[1] != spec.in_ch {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            spec.in_ch, dims[1]
        )));
    }
    if w.shape() != spec.weight_shape() {
        return Err(Error::shape(format!(
            "conv weight {:?}, expected {:?}",
            w.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = b {
        if b.shape() != [spec.out_ch] {
            return Err(Error::shape(format!("conv bias {:?}", b.shape())));
        }
    }
    if dims[3] == 0 {
        return Err(Error::shape("conv on zero time frames"));
    }
    Ok(dims)
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Visits every (input row, output row, weight index, time offset) quadruple
/// of a forward convolution. The closure receives row offsets into the
/// flat input/output buffers and the first output frame that is in range.
#[derive(Clone, Copy)]
struct Geometry {
    b: usize,
    cin: usize,
    f: usize,
    t: usize,
    cout: usize,
    fo: usize,
    to: usize,
}

fn for_each_tap(spec: &ConvSpec, g: Geometry, mut visit: impl FnMut(usize, usize, usize, usize, usize, isize)) {
    let (kf, kt) = spec.kernel;
    let (sf, _) = spec.stride;
    let (df, dt) = spec.dilation;
    let pl = spec.freq_padding.0 as isize;
    let pad_t = spec.time_padding().0 as isize;
    let cig = g.cin / spec.groups;
    let cog = g.cout / spec.groups;
    for bi in 0..g.b {
        for oc in 0..g.cout {
            let group = oc / cog;
            for icl in 0..cig {
                let ic = group * cig + icl;
                for kfi in 0..kf {
                    for kti in 0..kt {
                        let widx = ((oc * cig + icl) * kf + kfi) * kt + kti;
                        let toff = (kti * dt) as isize - pad_t;
                        for fo_i in 0..g.fo {
                            let fi = (fo_i * sf) as isize + (kfi * df) as isize - pl;
                            if fi < 0 || fi as usize >= g.f {
                                continue;
                            }
                            let in_row = ((bi * g.cin + ic) * g.f + fi as usize) * g.t;
                            let out_row = ((bi * g.cout + oc) * g.fo + fo_i) * g.to;
                            visit(in_row, out_row, widx, oc, bi, toff);
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation over `[B, C, F, T]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if spec.transposed {
        return conv2d_transpose(x, w, b, spec);
    }
    let [bn, cin, f, t] = check(x, w, b, spec)?;
    let fo = spec.out_freq(f)?;
    let to = spec.out_time(t);
    let cout = spec.out_ch;
    let st = spec.stride.1;
    let geo = Geometry {
        b: bn,
        cin,
        f,
        t,
        cout,
        fo,
        to,
    };
    let plane = fo * to;
    let mut out = vec![0.0; bn * cout * plane];
    if let Some(b) = b {
        for bi in 0..bn {
            for oc in 0..cout {
                let o = (bi * cout + oc) * plane;
                out[o..o + plane].fill(b.data()[oc]);
            }
        }
    }
    let xd = x.data();
    let wd = w.data();
    let pointwise = spec.kernel == (1, 1) && spec.stride == (1, 1) && spec.freq_padding == (0, 0);
    if pointwise {
        let cig = cin / spec.groups;
        let cog = cout / spec.groups;
        for bi in 0..bn {
            for oc in 0..cout {
                let group = oc / cog;
                let o = (bi * cout + oc) * plane;
                for icl in 0..cig {
                    let ic = group * cig + icl;
                    let i = (bi * cin + ic) * plane;
                    axpy(&mut out[o..o + plane], wd[oc * cig + icl], &xd[i..i + plane]);
                }
            }
        }
    } else {
        for_each_tap(spec, geo, |in_row, out_row, widx, _, _, toff| {
            let wv = wd[widx];
            if st == 1 {
                let t0 = (-toff).max(0) as usize;
                if t0 >= to {
                    return;
                }
                let src = (in_row as isize + t0 as isize + toff) as usize;
                axpy(&mut out[out_row + t0..out_row + to], wv, &xd[src..src + to - t0]);
            } else {
                for tt in 0..to {
                    let ti = (tt * st) as isize + toff;
                    if ti >= 0 && (ti as usize) < t {
                        out[out_row + tt] += wv * xd[in_row + ti as usize];
                    }
                }
            }
        });
    }
    let spec = *spec;
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Tensor::from_op(out, vec![bn, cout, fo, to], parents, move |g, _, ps| {
        let xd = ps[0].data();
        let wd = ps[1].data();
        let mut gx = ps[0].requires_grad().then(|| vec![0.0; xd.len()]);
        let mut gw = ps[1].requires_grad().then(|| vec![0.0; wd.len()]);
        if pointwise {
            let cig = cin / spec.groups;
            let cog = cout / spec.groups;
            for bi in 0..bn {
                for oc in 0..cout {
                    let group = oc / cog;
                    let o = (bi * cout + oc) * plane;
                    let go = &g[o..o + plane];
                    for icl in 0..cig {
                        let ic = group * cig + icl;
                        let i = (bi * cin + ic) * plane;
                        let widx = oc * cig + icl;
                        if let Some(gx) = gx.as_mut() {
                            axpy(&mut gx[i..i + plane], wd[widx], go);
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += dot(&xd[i..i + plane], go);
                        }
                    }
                }
            }
        } else {
            for_each_tap(&spec, geo, |in_row, out_row, widx, _, _, toff| {
                if st == 1 {
                    let t0 = (-toff).max(0) as usize;
                    if t0 >= to {
                        return;
                    }
                    let src = (in_row as isize + t0 as isize + toff) as usize;
                    let go = &g[out_row + t0..out_row + to];
                    if let Some(gx) = gx.as_mut() {
                        axpy(&mut gx[src..src + to - t0], wd[widx], go);
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] += dot(&xd[src..src + to - t0], go);
                    }
                } else {
                    for tt in 0..to {
                        let ti = (tt * st) as isize + toff;
                        if ti >= 0 && (ti as usize) < t {
                            let gi = g[out_row + tt];
                            let xi = in_row + ti as usize;
                            if let Some(gx) = gx.as_mut() {
                                gx[xi] += wd[widx] * gi;
                            }
                            if let Some(gw) = gw.as_mut() {
                                gw[widx] += xd[xi] * gi;
                            }
                        }
                    }
                }
            });
        }
        let mut grads = vec![gx, gw];
        if ps.len() == 3 {
            grads.push(ps[2].requires_grad().then(|| bias_grad(g, bn, cout, plane)));
        }
        grads
    })
}

fn bias_grad(g: &[f64], b: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; c];
    for bi in 0..b {
        for (ci, v) in gb.iter_mut().enumerate() {
            let o = (bi * c + ci) * plane;
            *v += g[o..o + plane].iter().sum::<f64>();
        }
    }
    gb
}

/// Visits (input row, output row, weight index, time offset) for a
/// transposed convolution.
fn transpose_taps(spec: &ConvSpec, g: Geometry, mut visit: impl FnMut(usize, usize, usize, usize)) {
    let (kf, kt) = spec.kernel;
    let sf = spec.stride.0;
    let (df, dt) = spec.dilation;
    let pl = spec.freq_padding.0 as isize;
    for bi in 0..g.b {
        for ic in 0..g.cin {
            for oc in 0..g.cout {
                for kfi in 0..kf {
                    for kti in 0..kt {
                        let widx = ((ic * g.cout + oc) * kf + kfi) * kt + kti;
                        let toff = kti * dt;
                        if toff >= g.t {
                            continue;
                        }
                        for fi in 0..g.f {
                            let fo_i = (fi * sf) as isize + (kfi * df) as isize - pl;
                            if fo_i < 0 || fo_i as usize >= g.fo {
                                continue;
                            }
                            let x_row = ((bi * g.cin + ic) * g.f + fi) * g.t;
                            let o_row = ((bi * g.cout + oc) * g.fo + fo_i as usize) * g.t;
                            visit(x_row, o_row, widx, toff);
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution; weight layout `[in_ch, out_ch, k_f, k_t]`.
pub fn conv2d_transpose(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if !spec.transposed {
        return Err(Error::config("conv2d_transpose needs a transposed spec"));
    }
    let [bn, cin, f, t] = check(x, w, b, spec)?;
    let fo = spec.out_freq(f)?;
    let cout = spec.out_ch;
    let plane = fo * t;

    let geo = Geometry {
        b: bn,
        cin,
        f,
        t,
        cout,
        fo,
        to: t,
    };
    let spec = *spec;

    let mut out = vec![0.0; bn * cout * plane];
    if let Some(b) = b {
        for bi in 0..bn {
            for oc in 0..cout {
                let o = (bi * cout + oc) * plane;
                out[o..o + plane].fill(b.data()[oc]);
            }
        }
    }
    {
        let xd = x.data();
        let wd = w.data();
        transpose_taps(&spec, geo, |x_row, o_row, widx, toff| {
            let n = t - toff;
            axpy(&mut out[o_row + toff..o_row + t], wd[widx], &xd[x_row..x_row + n]);
        });
    }
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Tensor::from_op(out, vec![bn, cout, fo, t], parents, move |g, _, ps| {
        let xd = ps[0].data();
        let wd = ps[1].data();
        let mut gx = ps[0].requires_grad().then(|| vec![0.0; xd.len()]);
        let mut gw = ps[1].requires_grad().then(|| vec![0.0; wd.len()]);
        transpose_taps(&spec, geo, |x_row, o_row, widx, toff| {
            let n = t - toff;
            let go = &g[o_row + toff..o_row + t];
            if let Some(gx) = gx.as_mut() {
                axpy(&mut gx[x_row..x_row + n], wd[widx], go);
            }
            if let Some(gw) = gw.as_mut() {
                gw[widx] += dot(&xd[x_row..x_row + n], go);
            }
        });
        let mut grads = vec![gx, gw];
        if ps.len() == 3 {
            grads.push(ps[2].requires_grad().then(|| bias_grad(g, bn, cout, plane)));
        }
        grads
    })
}
