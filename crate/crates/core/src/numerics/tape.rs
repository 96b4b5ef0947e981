//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! A [`Tape`] owns the recorded graph; [`Var`]s are copyable handles into
//! it. Every operation computes its value eagerly and, when gradients are
//! enabled and reachable, records a one-shot backward closure that has
//! captured whatever it needs. [`Tape::backward`] walks the list once in
//! reverse; a tape is single-use.

use std::cell::RefCell;

use indexmap::IndexMap;

use super::layout::LayoutMap;
use super::matmul::{col2im, im2col, matmul_nn, matmul_nt, matmul_tn};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

type BackOp<E> = Box<dyn FnOnce(&Tensor<E>, &mut GradSink<'_, E>)>;

struct TapeInner<E: Element> {
    values: Vec<Tensor<E>>,
    needs: Vec<bool>,
    ops: Vec<Option<BackOp<E>>>,
    grad_enabled: bool,
    consumed: bool,
}

pub struct Tape<E: Element> {
    inner: RefCell<TapeInner<E>>,
}

/// Accumulates gradients flowing to earlier nodes during backward.
pub struct GradSink<'a, E: Element> {
    grads: &'a mut [Option<Tensor<E>>],
    needs: &'a [bool],
}

impl<E: Element> GradSink<'_, E> {
    /// Whether node `id` participates in any gradient path; closures skip
    /// work for parents that do not.
    pub fn wants(&self, id: usize) -> bool {
        self.needs[id]
    }

    pub fn add(&mut self, id: usize, delta: Tensor<E>) {
        match &mut self.grads[id] {
            Some(acc) => {
                for (a, &d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}

/// Gradients keyed by the originating [`Var`].
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: Var<'_, E>) -> Option<&Tensor<E>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

/// A handle to one recorded tensor on a tape.
pub struct Var<'t, E: Element> {
    tape: &'t Tape<E>,
    id: usize,
}

impl<E: Element> Clone for Var<'_, E> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<E: Element> Copy for Var<'_, E> {}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Tape::new(true)
    }
}

impl<E: Element> Tape<E> {
    pub fn new(grad_enabled: bool) -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                values: Vec::new(),
                needs: Vec::new(),
                ops: Vec::new(),
                grad_enabled,
                consumed: false,
            }),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.inner.borrow().grad_enabled
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(&self, value: Tensor<E>, needs: bool, op: Option<BackOp<E>>) -> Var<'_, E> {
        let mut inner = self.inner.borrow_mut();
        let needs = needs && inner.grad_enabled;
        inner.values.push(value);
        inner.needs.push(needs);
        inner.ops.push(if needs { op } else { None });
        Var {
            tape: self,
            id: inner.values.len() - 1,
        }
    }

    /// A differentiable input (parameter) when `requires_grad`, otherwise a
    /// constant.
    pub fn leaf(&self, value: Tensor<E>, requires_grad: bool) -> Var<'_, E> {
        self.record(value, requires_grad, None)
    }

    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, false)
    }

    /// Reverse sweep from a scalar loss. Consumes the recorded closures:
    /// calling backward twice on one tape is an error.
    pub fn backward(&self, loss: Var<'_, E>) -> Result<Gradients<E>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::numeric(
                "tape already consumed: record a fresh forward pass before backward",
            ));
        }
        if !inner.grad_enabled {
            return Err(Error::numeric("backward on a gradient-disabled tape"));
        }
        inner.consumed = true;
        if inner.values[loss.id].numel() != 1 {
            return Err(Error::shape(format!(
                "backward expects a scalar loss, got shape {:?}",
                inner.values[loss.id].shape()
            )));
        }
        let n = inner.values.len();
        let ops = std::mem::take(&mut inner.ops);
        let needs = std::mem::take(&mut inner.needs);
        drop(inner);

        let mut grads: Vec<Option<Tensor<E>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::scalar(E::ONE));
        for (id, op) in ops.into_iter().enumerate().rev() {
            if id > loss.id {
                continue;
            }
            let Some(op) = op else { continue };
            // A node may be unreachable from the loss.
            let Some(g) = grads[id].take() else { continue };
            let mut sink = GradSink {
                grads: &mut grads,
                needs: &needs,
            };
            op(&g, &mut sink);
        }
        Ok(Gradients { grads })
    }
}

/// `(shape, needs)` of two operands plus their cloned values when a
/// backward closure will want them.
macro_rules! same_tape {
    ($a:expr, $b:expr) => {
        if !std::ptr::eq($a.tape, $b.tape) {
            return Err(Error::invalid("operands recorded on different tapes"));
        }
    };
}

impl<'t, E: Element> Var<'t, E> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    pub fn value(&self) -> Tensor<E> {
        self.tape.inner.borrow().values[self.id].clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().values[self.id].shape().to_vec()
    }

    fn needs(&self) -> bool {
        self.tape.inner.borrow().needs[self.id]
    }

    pub fn add(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        same_tape!(self, rhs);
        let inner = self.tape.inner.borrow();
        let out = inner.values[self.id].zip_map(&inner.values[rhs.id], |a, b| a + b)?;
        drop(inner);
        let needs = self.needs() || rhs.needs();
        let (a, b) = (self.id, rhs.id);
        Ok(self.tape.record(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                if sink.wants(a) {
                    sink.add(a, g.clone());
                }
                if sink.wants(b) {
                    sink.add(b, g.clone());
                }
            })),
        ))
    }

    pub fn sub(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        same_tape!(self, rhs);
        let inner = self.tape.inner.borrow();
        let out = inner.values[self.id].zip_map(&inner.values[rhs.id], |a, b| a - b)?;
        drop(inner);
        let needs = self.needs() || rhs.needs();
        let (a, b) = (self.id, rhs.id);
        Ok(self.tape.record(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                if sink.wants(a) {
                    sink.add(a, g.clone());
                }
                if sink.wants(b) {
                    sink.add(b, g.map(|v| -v));
                }
            })),
        ))
    }

    pub fn mul(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        same_tape!(self, rhs);
        let inner = self.tape.inner.borrow();
        let va = &inner.values[self.id];
        let vb = &inner.values[rhs.id];
        let out = va.zip_map(vb, |a, b| a * b)?;
        let needs = inner.needs[self.id] || inner.needs[rhs.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let (a, b) = (self.id, rhs.id);
            let (va, vb) = (va.clone(), vb.clone());
            Some(Box::new(move |g, sink| {
                if sink.wants(a) {
                    sink.add(a, g.zip_map(&vb, |x, y| x * y).expect("shapes match"));
                }
                if sink.wants(b) {
                    sink.add(b, g.zip_map(&va, |x, y| x * y).expect("shapes match"));
                }
            }))
        } else {
            None
        };
        drop(inner);
        Ok(self.tape.record(out, needs, back))
    }

    pub fn scale(self, factor: f64) -> Var<'t, E> {
        let s = E::from_f64(factor);
        let inner = self.tape.inner.borrow();
        let out = inner.values[self.id].map(|v| v * s);
        let needs = inner.needs[self.id];
        drop(inner);
        let id = self.id;
        self.tape.record(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                if sink.wants(id) {
                    sink.add(id, g.map(|v| v * s));
                }
            })),
        )
    }

    pub fn relu(self) -> Var<'t, E> {
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        let out = x.map(|v| v.max(E::ZERO));
        let needs = inner.needs[self.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let x = x.clone();
            let id = self.id;
            Some(Box::new(move |g, sink| {
                if sink.wants(id) {
                    sink.add(
                        id,
                        g.zip_map(&x, |gv, xv| if xv > E::ZERO { gv } else { E::ZERO })
                            .expect("shapes match"),
                    );
                }
            }))
        } else {
            None
        };
        drop(inner);
        self.tape.record(out, needs, back)
    }

    /// GELU with the tanh approximation; smooth everywhere, which keeps
    /// finite-difference checks clean.
    pub fn gelu(self) -> Var<'t, E> {
        let a = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
        let b = E::from_f64(0.044_715);
        let half = E::from_f64(0.5);
        let three = E::from_f64(3.0);
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        let out = x.map(|v| half * v * (E::ONE + (a * (v + b * v * v * v)).tanh()));
        let needs = inner.needs[self.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let x = x.clone();
            let id = self.id;
            Some(Box::new(move |g, sink| {
                if sink.wants(id) {
                    sink.add(
                        id,
                        g.zip_map(&x, |gv, v| {
                            let th = (a * (v + b * v * v * v)).tanh();
                            let sech2 = E::ONE - th * th;
                            gv * (half * (E::ONE + th)
                                + half * v * sech2 * a * (E::ONE + three * b * v * v))
                        })
                        .expect("shapes match"),
                    );
                }
            }))
        } else {
            None
        };
        drop(inner);
        self.tape.record(out, needs, back)
    }

    /// Elementwise absolute value; the subgradient at zero is zero.
    pub fn abs(self) -> Var<'t, E> {
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        let out = x.map(|v| v.abs());
        let needs = inner.needs[self.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let x = x.clone();
            let id = self.id;
            Some(Box::new(move |g, sink| {
                if sink.wants(id) {
                    sink.add(
                        id,
                        g.zip_map(&x, |gv, v| {
                            if v > E::ZERO {
                                gv
                            } else if v < E::ZERO {
                                -gv
                            } else {
                                E::ZERO
                            }
                        })
                        .expect("shapes match"),
                    );
                }
            }))
        } else {
            None
        };
        drop(inner);
        self.tape.record(out, needs, back)
    }

    pub fn sum_all(self) -> Var<'t, E> {
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        let mut acc = E::ZERO;
        for &v in x.data() {
            acc += v;
        }
        let shape = x.shape().to_vec();
        let needs = inner.needs[self.id];
        drop(inner);
        let id = self.id;
        self.tape.record(
            Tensor::scalar(acc),
            needs,
            Some(Box::new(move |g, sink| {
                if sink.wants(id) {
                    let g0 = g.data()[0];
                    sink.add(id, Tensor::full(&shape, g0));
                }
            })),
        )
    }

    pub fn mean_all(self) -> Var<'t, E> {
        let n = {
            let inner = self.tape.inner.borrow();
            inner.values[self.id].numel()
        };
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Row-wise softmax over the last dimension, with max subtraction.
    pub fn softmax_lastdim(self) -> Var<'t, E> {
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        let shape = x.shape().to_vec();
        let cols = *shape.last().expect("non-empty shape");
        let rows = x.numel() / cols;
        let mut data = Vec::with_capacity(x.numel());
        for r in 0..rows {
            let row = &x.data()[r * cols..(r + 1) * cols];
            let mut m = row[0];
            for &v in row {
                m = m.max(v);
            }
            let mut denom = E::ZERO;
            let exps: Vec<E> = row
                .iter()
                .map(|&v| {
                    let e = (v - m).exp();
                    denom += e;
                    e
                })
                .collect();
            data.extend(exps.into_iter().map(|e| e / denom));
        }
        let out = Tensor::new(&shape, data).expect("softmax keeps shape");
        let needs = inner.needs[self.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let y = out.clone();
            let id = self.id;
            Some(Box::new(move |g, sink| {
                if !sink.wants(id) {
                    return;
                }
                let mut din = Vec::with_capacity(y.numel());
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let mut dot = E::ZERO;
                    for (&yv, &gv) in yr.iter().zip(gr) {
                        dot += yv * gv;
                    }
                    din.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                sink.add(id, Tensor::new(y.shape(), din).expect("shape"));
            }))
        } else {
            None
        };
        drop(inner);
        self.tape.record(out, needs, back)
    }

    /// Layer normalization over the last dimension with learned per-channel
    /// scale and shift (`eps = 1e-5`).
    pub fn layer_norm(self, gamma: Var<'t, E>, beta: Var<'t, E>) -> Result<Var<'t, E>> {
        same_tape!(self, gamma);
        same_tape!(self, beta);
        let eps = E::from_f64(1e-5);
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        let gm = &inner.values[gamma.id];
        let bt = &inner.values[beta.id];
        let shape = x.shape().to_vec();
        let cols = *shape.last().expect("non-empty shape");
        if gm.shape() != [cols] || bt.shape() != [cols] {
            return Err(Error::shape(format!(
                "layer_norm over {cols} channels needs gamma/beta of shape [{cols}]"
            )));
        }
        let rows = x.numel() / cols;
        let inv_n = E::from_f64(1.0 / cols as f64);
        let mut xhat = Vec::with_capacity(x.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(x.numel());
        for r in 0..rows {
            let row = &x.data()[r * cols..(r + 1) * cols];
            let mut mean = E::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_n;
            let mut var = E::ZERO;
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let inv = E::ONE / (var + eps).sqrt();
            inv_std.push(inv);
            for (i, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(gm.data()[i] * h + bt.data()[i]);
            }
        }
        let out = Tensor::new(&shape, out).expect("shape");
        let needs =
            inner.needs[self.id] || inner.needs[gamma.id] || inner.needs[beta.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let xhat = Tensor::new(&shape, xhat).expect("shape");
            let gm = gm.clone();
            let (xid, gid, bid) = (self.id, gamma.id, beta.id);
            Some(Box::new(move |g, sink| {
                if sink.wants(gid) {
                    let mut dg = vec![E::ZERO; cols];
                    for r in 0..rows {
                        for i in 0..cols {
                            dg[i] += g.data()[r * cols + i] * xhat.data()[r * cols + i];
                        }
                    }
                    sink.add(gid, Tensor::new(&[cols], dg).expect("shape"));
                }
                if sink.wants(bid) {
                    let mut db = vec![E::ZERO; cols];
                    for r in 0..rows {
                        for i in 0..cols {
                            db[i] += g.data()[r * cols + i];
                        }
                    }
                    sink.add(bid, Tensor::new(&[cols], db).expect("shape"));
                }
                if sink.wants(xid) {
                    let mut dx = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let hr = &xhat.data()[r * cols..(r + 1) * cols];
                        let mut m1 = E::ZERO;
                        let mut m2 = E::ZERO;
                        let dxhat: Vec<E> = gr
                            .iter()
                            .enumerate()
                            .map(|(i, &gv)| {
                                let d = gv * gm.data()[i];
                                m1 += d;
                                m2 += d * hr[i];
                                d
                            })
                            .collect();
                        m1 *= inv_n;
                        m2 *= inv_n;
                        let inv = inv_std[r];
                        dx.extend(
                            dxhat
                                .iter()
                                .zip(hr)
                                .map(|(&d, &h)| inv * (d - m1 - h * m2)),
                        );
                    }
                    sink.add(xid, Tensor::new(xhat.shape(), dx).expect("shape"));
                }
            }))
        } else {
            None
        };
        drop(inner);
        Ok(self.tape.record(out, needs, back))
    }

    /// Fully connected layer over the last dimension: `y = x w^T + b` with
    /// `w` of shape `(out, in)`.
    pub fn linear(self, weight: Var<'t, E>, bias: Var<'t, E>) -> Result<Var<'t, E>> {
        same_tape!(self, weight);
        same_tape!(self, bias);
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        let w = &inner.values[weight.id];
        let b = &inner.values[bias.id];
        if w.ndim() != 2 {
            return Err(Error::shape("linear weight must be 2-D (out, in)"));
        }
        let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
        let x_shape = x.shape().to_vec();
        if *x_shape.last().expect("non-empty") != in_dim {
            return Err(Error::shape(format!(
                "linear: input last dim {} != weight in dim {in_dim}",
                x_shape.last().unwrap()
            )));
        }
        if b.shape() != [out_dim] {
            return Err(Error::shape("linear bias must be (out,)"));
        }
        let rows = x.numel() / in_dim;
        let mut y = vec![E::ZERO; rows * out_dim];
        matmul_nt(x.data(), w.data(), &mut y, rows, in_dim, out_dim);
        for r in 0..rows {
            for (o, &bv) in b.data().iter().enumerate() {
                y[r * out_dim + o] += bv;
            }
        }
        let mut out_shape = x_shape.clone();
        *out_shape.last_mut().unwrap() = out_dim;
        let out = Tensor::new(&out_shape, y)?;
        let needs =
            inner.needs[self.id] || inner.needs[weight.id] || inner.needs[bias.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let x = x.clone();
            let w = w.clone();
            let (xid, wid, bid) = (self.id, weight.id, bias.id);
            let in_shape = x_shape;
            Some(Box::new(move |g, sink| {
                let gd = g.data();
                if sink.wants(wid) {
                    let mut dw = vec![E::ZERO; out_dim * in_dim];
                    matmul_tn(gd, x.data(), &mut dw, out_dim, rows, in_dim);
                    sink.add(wid, Tensor::new(&[out_dim, in_dim], dw).expect("shape"));
                }
                if sink.wants(bid) {
                    let mut db = vec![E::ZERO; out_dim];
                    for r in 0..rows {
                        for (o, dbv) in db.iter_mut().enumerate() {
                            *dbv += gd[r * out_dim + o];
                        }
                    }
                    sink.add(bid, Tensor::new(&[out_dim], db).expect("shape"));
                }
                if sink.wants(xid) {
                    let mut dx = vec![E::ZERO; rows * in_dim];
                    matmul_nn(gd, w.data(), &mut dx, rows, out_dim, in_dim);
                    sink.add(xid, Tensor::new(&in_shape, dx).expect("shape"));
                }
            }))
        } else {
            None
        };
        drop(inner);
        Ok(self.tape.record(out, needs, back))
    }

    /// 2-D convolution (cross-correlation) with stride 1, odd kernel, and
    /// `(k-1)/2` zero padding, so spatial dims are preserved.
    pub fn conv2d(self, weight: Var<'t, E>, bias: Var<'t, E>) -> Result<Var<'t, E>> {
        same_tape!(self, weight);
        same_tape!(self, bias);
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        let w = &inner.values[weight.id];
        let b = &inner.values[bias.id];
        if x.ndim() != 3 || w.ndim() != 4 {
            return Err(Error::shape("conv2d expects x (C,H,W), w (O,C,k,k)"));
        }
        let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, wc, k, k2) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if wc != c_in || k != k2 {
            return Err(Error::shape(format!(
                "conv2d: weight {:?} incompatible with input {:?}",
                w.shape(),
                x.shape()
            )));
        }
        if k % 2 == 0 {
            return Err(Error::shape("conv2d requires an odd kernel size"));
        }
        if b.shape() != [c_out] {
            return Err(Error::shape("conv2d bias must be (C_out,)"));
        }
        let hw = h * wd;
        let ckk = c_in * k * k;
        let cols = im2col(x.data(), c_in, h, wd, k);
        let mut y = vec![E::ZERO; c_out * hw];
        matmul_nn(w.data(), &cols, &mut y, c_out, ckk, hw);
        for (o, &bv) in b.data().iter().enumerate() {
            for v in &mut y[o * hw..(o + 1) * hw] {
                *v += bv;
            }
        }
        let out = Tensor::new(&[c_out, h, wd], y)?;
        let needs =
            inner.needs[self.id] || inner.needs[weight.id] || inner.needs[bias.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let x = x.clone();
            let w = w.clone();
            let (xid, wid, bid) = (self.id, weight.id, bias.id);
            Some(Box::new(move |g, sink| {
                let gd = g.data();
                if sink.wants(wid) {
                    // Recompute the unfolding rather than holding it alive.
                    let cols = im2col(x.data(), c_in, h, wd, k);
                    let mut dw = vec![E::ZERO; c_out * ckk];
                    matmul_nt(gd, &cols, &mut dw, c_out, hw, ckk);
                    sink.add(wid, Tensor::new(w.shape(), dw).expect("shape"));
                }
                if sink.wants(bid) {
                    let db: Vec<E> = (0..c_out)
                        .map(|o| {
                            let mut acc = E::ZERO;
                            for &v in &gd[o * hw..(o + 1) * hw] {
                                acc += v;
                            }
                            acc
                        })
                        .collect();
                    sink.add(bid, Tensor::new(&[c_out], db).expect("shape"));
                }
                if sink.wants(xid) {
                    let mut dcols = vec![E::ZERO; ckk * hw];
                    matmul_tn(w.data(), gd, &mut dcols, ckk, c_out, hw);
                    let dx = col2im(&dcols, c_in, h, wd, k);
                    sink.add(xid, Tensor::new(x.shape(), dx).expect("shape"));
                }
            }))
        } else {
            None
        };
        drop(inner);
        Ok(self.tape.record(out, needs, back))
    }

    /// Batched `a @ b`: `(B, M, K) x (B, K, N) -> (B, M, N)`.
    pub fn bmm(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.bmm_impl(rhs, false)
    }

    /// Batched `a @ b^T`: `(B, M, K) x (B, N, K) -> (B, M, N)`.
    pub fn bmm_nt(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.bmm_impl(rhs, true)
    }

    fn bmm_impl(self, rhs: Var<'t, E>, transpose_b: bool) -> Result<Var<'t, E>> {
        same_tape!(self, rhs);
        let inner = self.tape.inner.borrow();
        let a = &inner.values[self.id];
        let b = &inner.values[rhs.id];
        if a.ndim() != 3 || b.ndim() != 3 || a.shape()[0] != b.shape()[0] {
            return Err(Error::shape("bmm expects matching 3-D batches"));
        }
        let (batch, m, ka) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let (kb, n) = if transpose_b {
            (b.shape()[2], b.shape()[1])
        } else {
            (b.shape()[1], b.shape()[2])
        };
        if ka != kb {
            return Err(Error::shape(format!(
                "bmm: inner dims differ ({ka} vs {kb})"
            )));
        }
        let k = ka;
        let mut y = vec![E::ZERO; batch * m * n];
        for bi in 0..batch {
            let av = &a.data()[bi * m * k..(bi + 1) * m * k];
            let bv = &b.data()[bi * k * n..(bi + 1) * k * n];
            let cv = &mut y[bi * m * n..(bi + 1) * m * n];
            if transpose_b {
                matmul_nt(av, bv, cv, m, k, n);
            } else {
                matmul_nn(av, bv, cv, m, k, n);
            }
        }
        let out = Tensor::new(&[batch, m, n], y)?;
        let needs = inner.needs[self.id] || inner.needs[rhs.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let a = a.clone();
            let b = b.clone();
            let (aid, bid) = (self.id, rhs.id);
            Some(Box::new(move |g, sink| {
                let gd = g.data();
                if sink.wants(aid) {
                    let mut da = vec![E::ZERO; batch * m * k];
                    for bi in 0..batch {
                        let gv = &gd[bi * m * n..(bi + 1) * m * n];
                        let bv = &b.data()[bi * k * n..(bi + 1) * k * n];
                        let dv = &mut da[bi * m * k..(bi + 1) * m * k];
                        if transpose_b {
                            // y = a b^T: da = g @ b, with b stored (N, K).
                            matmul_nn(gv, bv, dv, m, n, k);
                        } else {
                            // y = a b: da = g @ b^T, with b stored (K, N).
                            matmul_nt(gv, bv, dv, m, n, k);
                        }
                    }
                    sink.add(aid, Tensor::new(a.shape(), da).expect("shape"));
                }
                if sink.wants(bid) {
                    let mut db = vec![E::ZERO; b.numel()];
                    let per = b.numel() / batch;
                    for bi in 0..batch {
                        let gv = &gd[bi * m * n..(bi + 1) * m * n];
                        let av = &a.data()[bi * m * k..(bi + 1) * m * k];
                        let dv = &mut db[bi * per..(bi + 1) * per];
                        if transpose_b {
                            // db = g^T a gives (N, K).
                            matmul_tn(gv, av, dv, n, m, k);
                        } else {
                            // db = a^T g gives (K, N).
                            matmul_tn(av, gv, dv, k, m, n);
                        }
                    }
                    sink.add(bid, Tensor::new(b.shape(), db).expect("shape"));
                }
            }))
        } else {
            None
        };
        drop(inner);
        Ok(self.tape.record(out, needs, back))
    }

    /// Apply a bijective layout map (gather); the adjoint scatters through
    /// the same indices.
    pub fn gather(self, map: &LayoutMap) -> Result<Var<'t, E>> {
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        if x.shape() != map.in_shape.as_slice() {
            return Err(Error::shape(format!(
                "gather: input {:?} does not match map input {:?}",
                x.shape(),
                map.in_shape
            )));
        }
        let data: Vec<E> = map.index.iter().map(|&i| x.data()[i as usize]).collect();
        let out = Tensor::new(&map.out_shape, data)?;
        let needs = inner.needs[self.id];
        let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
            let id = self.id;
            let index = map.index.clone();
            let in_shape = map.in_shape.clone();
            Some(Box::new(move |g, sink| {
                if sink.wants(id) {
                    let mut dx = vec![E::ZERO; in_shape.iter().product()];
                    for (out_pos, &in_pos) in index.iter().enumerate() {
                        dx[in_pos as usize] += g.data()[out_pos];
                    }
                    sink.add(id, Tensor::new(&in_shape, dx).expect("shape"));
                }
            }))
        } else {
            None
        };
        drop(inner);
        Ok(self.tape.record(out, needs, back))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, E>> {
        let inner = self.tape.inner.borrow();
        let x = &inner.values[self.id];
        let out = x.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        let needs = inner.needs[self.id];
        drop(inner);
        let id = self.id;
        Ok(self.tape.record(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                if sink.wants(id) {
                    sink.add(id, g.reshape(&in_shape).expect("numel preserved"));
                }
            })),
        ))
    }
}

/// Concatenate along `axis`. All parts must share every other dimension.
pub fn concat<'t, E: Element>(parts: &[Var<'t, E>], axis: usize) -> Result<Var<'t, E>> {
    let first = *parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    for p in parts {
        same_tape!(first, *p);
    }
    let tape = first.tape;
    let inner = tape.inner.borrow();
    let base_shape = inner.values[first.id].shape().to_vec();
    if axis >= base_shape.len() {
        return Err(Error::shape(format!(
            "concat axis {axis} out of range for shape {base_shape:?}"
        )));
    }
    let mut axis_lens = Vec::with_capacity(parts.len());
    for p in parts {
        let s = inner.values[p.id].shape();
        if s.len() != base_shape.len()
            || s.iter()
                .zip(&base_shape)
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(Error::shape(format!(
                "concat: shape {s:?} incompatible with {base_shape:?} along axis {axis}"
            )));
        }
        axis_lens.push(s[axis]);
    }
    let outer: usize = base_shape[..axis].iter().product();
    let inner_len: usize = base_shape[axis + 1..].iter().product();
    let total_axis: usize = axis_lens.iter().sum();
    let mut out_shape = base_shape.clone();
    out_shape[axis] = total_axis;

    let mut data = vec![E::ZERO; outer * total_axis * inner_len];
    let mut offset = 0usize;
    for (p, &alen) in parts.iter().zip(&axis_lens) {
        let src = inner.values[p.id].data();
        for o in 0..outer {
            let dst = &mut data[(o * total_axis + offset) * inner_len..][..alen * inner_len];
            dst.copy_from_slice(&src[o * alen * inner_len..(o + 1) * alen * inner_len]);
        }
        offset += alen;
    }
    let out = Tensor::new(&out_shape, data)?;
    let needs = parts.iter().any(|p| inner.needs[p.id]);
    let back: Option<BackOp<E>> = if inner.grad_enabled && needs {
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let lens = axis_lens.clone();
        let part_shapes: Vec<Vec<usize>> = parts
            .iter()
            .map(|p| inner.values[p.id].shape().to_vec())
            .collect();
        Some(Box::new(move |g, sink| {
            let gd = g.data();
            let mut offset = 0usize;
            for ((&id, &alen), shape) in ids.iter().zip(&lens).zip(&part_shapes) {
                if sink.wants(id) {
                    let mut dp = vec![E::ZERO; outer * alen * inner_len];
                    for o in 0..outer {
                        dp[o * alen * inner_len..(o + 1) * alen * inner_len].copy_from_slice(
                            &gd[(o * total_axis + offset) * inner_len..][..alen * inner_len],
                        );
                    }
                    sink.add(id, Tensor::new(shape, dp).expect("shape"));
                }
                offset += alen;
            }
        }))
    } else {
        None
    };
    drop(inner);
    Ok(tape.record(out, needs, back))
}

/// Parameters bound onto a tape as differentiable leaves, keyed by name.
pub struct BoundParams<'t, E: Element> {
    entries: IndexMap<String, Var<'t, E>>,
}

impl<'t, E: Element> BoundParams<'t, E> {
    pub fn new() -> Self {
        BoundParams {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var<'t, E>) {
        self.entries.insert(name.into(), var);
    }

    pub fn var(&self, name: &str) -> Result<Var<'t, E>> {
        self.entries
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t, E>)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Collect gradients by parameter name; parameters the loss never
    /// touched get zeros.
    pub fn grads(&self, gradients: &Gradients<E>) -> IndexMap<String, Tensor<E>> {
        self.entries
            .iter()
            .map(|(name, &var)| {
                let g = gradients
                    .get(var)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&var.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

impl<E: Element> Default for BoundParams<'_, E> {
    fn default() -> Self {
        Self::new()
    }
}
