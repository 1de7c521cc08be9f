//! Dense `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every op output keeps `Rc` handles to its inputs plus a backward closure
//! when any input requires a gradient. [`Tensor::backward`] walks the
//! reachable graph in reverse creation order. Layout is row-major with the
//! canonical `[batch, channels, freq, time]` order for feature maps.

mod attention;
mod checkpoint;
mod conv;
mod gradcheck;
mod norm;
mod optim;
mod param;

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use attention::{freq_attention, softmax};
pub use checkpoint::{load_checkpoint, save_checkpoint, DType, CHECKPOINT_MAGIC};
pub use conv::{conv2d, conv2d_transpose, ConvSpec};
pub use gradcheck::grad_check;
pub use norm::layer_norm_channels;
pub use optim::{cosine_lr, OptimizerConfig, OptimizerKind, OptimizerState};
pub use param::{Param, ParamSet};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

type BackwardFn = Box<dyn Fn(&[f64], &[f64], &[Tensor]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        })))
    }

    /// Constant tensor (no gradient).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![0.0; numel(shape)], shape, false).expect("consistent shape")
    }

    pub fn scalar(v: f64) -> Self {
        Self::leaf(vec![v], &[], false).expect("scalar")
    }

    pub(crate) fn from_op<F>(data: Vec<f64>, shape: Vec<usize>, parents: Vec<Tensor>, backward: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &[Tensor]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len());
        if cfg!(debug_assertions) && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value produced by tensor op"));
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward): (Vec<Tensor>, Option<BackwardFn>) = if requires_grad {
            (parents, Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        Ok(Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward,
        })))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tensor::backward`].
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn item(&self) -> f64 {
        self.0.data[0]
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.0.data.clone(), &self.0.shape).expect("consistent shape")
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape() {
            &[b, c, f, t] => Ok([b, c, f, t]),
            s => Err(Error::shape(format!("expected [B, C, F, T], got {s:?}"))),
        }
    }

    /// Reverse-mode pass from a scalar. Leaf gradients accumulate; interior
    /// gradients are released as soon as they have been propagated.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.item().is_finite() {
            return Err(Error::invalid("backward from a non-finite loss"));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            for p in &t.0.parents {
                if p.requires_grad() && !seen.contains(&p.0.id) {
                    stack.push(p.clone());
                }
            }
            order.push(t);
        }
        order.sort_by_key(|n| std::cmp::Reverse(n.0.id));

        accumulate(&self.0.grad, vec![1.0]);
        for t in &order {
            let Some(op) = &t.0.backward else { continue };
            let Some(g) = t.0.grad.borrow_mut().take() else {
                continue;
            };
            let grads = op(&g, &t.0.data, &t.0.parents);
            for (p, gp) in t.0.parents.iter().zip(grads) {
                if let Some(gp) = gp {
                    if p.requires_grad() {
                        debug_assert_eq!(gp.len(), p.numel());
                        accumulate(&p.0.grad, gp);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &RefCell<Option<Vec<f64>>>, g: Vec<f64>) {
    let mut slot = slot.borrow_mut();
    match slot.as_mut() {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone(), b.clone()], |g, _, ps| {
        vec![
            ps[0].requires_grad().then(|| g.to_vec()),
            ps[1].requires_grad().then(|| g.to_vec()),
        ]
    })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "sub")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone(), b.clone()], |g, _, ps| {
        vec![
            ps[0].requires_grad().then(|| g.to_vec()),
            ps[1].requires_grad().then(|| g.iter().map(|v| -v).collect()),
        ]
    })
}

/// Elementwise product (the gating primitive).
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone(), b.clone()], |g, _, ps| {
        let ga = ps[0]
            .requires_grad()
            .then(|| g.iter().zip(ps[1].data()).map(|(g, y)| g * y).collect());
        let gb = ps[1]
            .requires_grad()
            .then(|| g.iter().zip(ps[0].data()).map(|(g, x)| g * x).collect());
        vec![ga, gb]
    })
}

pub fn scale(a: &Tensor, s: f64) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x * s).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], move |g, _, _| {
        vec![Some(g.iter().map(|v| v * s).collect())]
    })
}

pub fn add_scalar(a: &Tensor, s: f64) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x + s).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], |g, _, _| vec![Some(g.to_vec())])
}

pub fn sigmoid(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|&x| sigmoid_scalar(x)).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], |g, y, _| {
        vec![Some(g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())]
    })
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x^p` for strictly positive `x`.
pub fn powf(a: &Tensor, p: f64) -> Result<Tensor> {
    if a.data().iter().any(|&x| x <= 0.0) {
        return Err(Error::invalid("powf needs strictly positive input"));
    }
    let data = a.data().iter().map(|x| x.powf(p)).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], move |g, y, ps| {
        vec![Some(
            g.iter()
                .zip(y)
                .zip(ps[0].data())
                .map(|((g, y), x)| g * p * y / x)
                .collect(),
        )]
    })
}

/// Channel-wise parametric ReLU on `[B, C, F, T]` with one slope per channel.
pub fn prelu(x: &Tensor, slope: &Tensor) -> Result<Tensor> {
    let [b, c, f, t] = x.dims4()?;
    if slope.shape() != [c] {
        return Err(Error::shape(format!(
            "prelu slope {:?} does not match {c} channels",
            slope.shape()
        )));
    }
    let plane = f * t;
    let mut data = x.data().to_vec();
    for bi in 0..b {
        for ci in 0..c {
            let a = slope.data()[ci];
            let o = (bi * c + ci) * plane;
            for v in &mut data[o..o + plane] {
                if *v < 0.0 {
                    *v *= a;
                }
            }
        }
    }
    Tensor::from_op(data, x.shape().to_vec(), vec![x.clone(), slope.clone()], move |g, _, ps| {
        let xd = ps[0].data();
        let sd = ps[1].data();
        let mut gx = ps[0].requires_grad().then(|| vec![0.0; xd.len()]);
        let mut gs = ps[1].requires_grad().then(|| vec![0.0; c]);
        for bi in 0..b {
            for ci in 0..c {
                let o = (bi * c + ci) * plane;
                for i in o..o + plane {
                    let neg = xd[i] < 0.0;
                    if let Some(gx) = gx.as_mut() {
                        gx[i] = if neg { g[i] * sd[ci] } else { g[i] };
                    }
                    if let Some(gs) = gs.as_mut() {
                        if neg {
                            gs[ci] += g[i] * xd[i];
                        }
                    }
                }
            }
        }
        vec![gx, gs]
    })
}

pub fn sum(a: &Tensor) -> Result<Tensor> {
    let s = a.data().iter().sum();
    let n = a.numel();
    Tensor::from_op(vec![s], vec![], vec![a.clone()], move |g, _, _| vec![Some(vec![g[0]; n])])
}

/// Concatenation along the channel axis of `[B, C, F, T]` tensors.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let Some(first) = parts.first() else {
        return Err(Error::shape("concat of zero tensors"));
    };
    let [b, _, f, t] = first.dims4()?;
    let mut chans = Vec::with_capacity(parts.len());
    for p in parts {
        let [pb, pc, pf, pt] = p.dims4()?;
        if (pb, pf, pt) != (b, f, t) {
            return Err(Error::shape(format!(
                "concat: {:?} incompatible with {:?}",
                p.shape(),
                first.shape()
            )));
        }
        chans.push(pc);
    }
    let total: usize = chans.iter().sum();
    let plane = f * t;
    let mut data = Vec::with_capacity(b * total * plane);
    for bi in 0..b {
        for (p, &pc) in parts.iter().zip(&chans) {
            let o = bi * pc * plane;
            data.extend_from_slice(&p.data()[o..o + pc * plane]);
        }
    }
    Tensor::from_op(data, vec![b, total, f, t], parts.to_vec(), move |g, _, ps| {
        let mut out = Vec::with_capacity(ps.len());
        let mut offset = 0;
        for (p, &pc) in ps.iter().zip(&chans) {
            if p.requires_grad() {
                let mut gp = Vec::with_capacity(b * pc * plane);
                for bi in 0..b {
                    let o = (bi * total + offset) * plane;
                    gp.extend_from_slice(&g[o..o + pc * plane]);
                }
                out.push(Some(gp));
            } else {
                out.push(None);
            }
            offset += pc;
        }
        out
    })
}

/// Channels `start..start + len` of a `[B, C, F, T]` tensor.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let [b, c, f, t] = x.dims4()?;
    if start + len > c || len == 0 {
        return Err(Error::shape(format!(
            "channel slice {start}..{} out of 0..{c}",
            start + len
        )));
    }
    let plane = f * t;
    let mut data = Vec::with_capacity(b * len * plane);
    for bi in 0..b {
        let o = (bi * c + start) * plane;
        data.extend_from_slice(&x.data()[o..o + len * plane]);
    }
    Tensor::from_op(data, vec![b, len, f, t], vec![x.clone()], move |g, _, _| {
        let mut gx = vec![0.0; b * c * plane];
        for bi in 0..b {
            let o = (bi * c + start) * plane;
            let src = bi * len * plane;
            gx[o..o + len * plane].copy_from_slice(&g[src..src + len * plane]);
        }
        vec![Some(gx)]
    })
}

/// Splits the channel axis into `n` equal chunks.
pub fn chunk_channels(x: &Tensor, n: usize) -> Result<Vec<Tensor>> {
    let [_, c, _, _] = x.dims4()?;
    if n == 0 || c % n != 0 {
        return Err(Error::shape(format!("cannot split {c} channels into {n}")));
    }
    let len = c / n;
    (0..n).map(|i| slice_channels(x, i * len, len)).collect()
}
