//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] owns every tensor produced during a forward pass and records
//! one backward closure per differentiable operation. Operations are
//! appended in topological order by construction; [`Tape::backward`] walks
//! them once in reverse. Leaves created with `requires_grad = false`
//! record nothing, so the same forward code serves inference.
//!
//! `backward` may be called more than once; each call recomputes all
//! gradients from zero (no accumulation across calls).
//!
//! Every completed operation checks its output for NaN/Inf and fails
//! instead of propagating poison.

use crate::error::{Error, Result};
use crate::num::{lit, Scalar};
use crate::tensor::Tensor;

/// Handle to a tensor on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorRef(usize);

type BackFn<T> = Box<dyn Fn(&[Tensor<T>], &mut [Tensor<T>])>;

pub struct Tape<T: Scalar> {
    values: Vec<Tensor<T>>,
    requires: Vec<bool>,
    ops: Vec<BackFn<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            requires: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn node(&mut self, value: Tensor<T>, requires: bool, op: Option<BackFn<T>>, what: &str) -> Result<TensorRef> {
        if !value.all_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        let id = self.values.len();
        self.values.push(value);
        self.requires.push(requires);
        if requires {
            if let Some(f) = op {
                self.ops.push(f);
            }
        }
        Ok(TensorRef(id))
    }

    /// Register an input tensor. Gradients are tracked iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<TensorRef> {
        self.node(value, requires_grad, None, "leaf")
    }

    /// Register a non-differentiated input.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<TensorRef> {
        self.leaf(value, false)
    }

    pub fn value(&self, r: TensorRef) -> &Tensor<T> {
        &self.values[r.0]
    }

    /// Gradient of the last `backward` loss w.r.t. `r`, if computed.
    pub fn grad(&self, r: TensorRef) -> Option<&Tensor<T>> {
        self.grads.get(r.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn requires_any(&self, refs: &[TensorRef]) -> bool {
        refs.iter().any(|r| self.requires[r.0])
    }

    /// Run the backward pass from a scalar loss.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        let mut grads: Vec<Tensor<T>> = self
            .values
            .iter()
            .map(|v| Tensor::zeros(v.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = T::one();
        for op in self.ops.iter().rev() {
            op(&self.values, &mut grads);
        }
        for (i, g) in grads.iter().enumerate() {
            if self.requires[i] && !g.all_finite() {
                return Err(Error::NonFinite("gradient".to_string()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    // ---- elementwise ----------------------------------------------------

    fn unary(
        &mut self,
        x: TensorRef,
        f: fn(T) -> T,
        // derivative as a function of (input, output)
        df: fn(T, T) -> T,
        name: &str,
    ) -> Result<TensorRef> {
        let out = self.values[x.0].map(f);
        let xi = x.0;
        let req = self.requires[xi];
        let back: BackFn<T> = {
            let out_id = self.values.len();
            Box::new(move |values, grads| {
                let go = grads[out_id].clone();
                let xs = values[xi].clone();
                let ys = values[out_id].clone();
                let gx = grads[xi].data_mut();
                for i in 0..gx.len() {
                    gx[i] += go.data()[i] * df(xs.data()[i], ys.data()[i]);
                }
            })
        };
        self.node(out, req, Some(back), name)
    }

    pub fn relu(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            |v, _| if v > T::zero() { T::one() } else { T::zero() },
            "relu",
        )
    }

    pub fn tanh(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y, "tanh")
    }

    pub fn sigmoid(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(
            x,
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
            "sigmoid",
        )
    }

    pub fn neg(&mut self, x: TensorRef) -> Result<TensorRef> {
        self.unary(x, |v| -v, |_, _| -T::one(), "neg")
    }

    fn check_same_shape(&self, a: TensorRef, b: TensorRef, op: &str) -> Result<()> {
        if !self.values[a.0].same_shape(&self.values[b.0]) {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.values[a.0].shape(),
                self.values[b.0].shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.check_same_shape(a, b, "add")?;
        let mut out = self.values[a.0].clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.values[b.0].data()) {
            *o += v;
        }
        let (ai, bi) = (a.0, b.0);
        let req = self.requires_any(&[a, b]);
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let go = grads[out_id].clone();
            for (g, &v) in grads[ai].data_mut().iter_mut().zip(go.data()) {
                *g += v;
            }
            for (g, &v) in grads[bi].data_mut().iter_mut().zip(go.data()) {
                *g += v;
            }
        });
        self.node(out, req, Some(back), "add")
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.check_same_shape(a, b, "mul")?;
        let mut out = self.values[a.0].clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.values[b.0].data()) {
            *o = *o * v;
        }
        let (ai, bi) = (a.0, b.0);
        let req = self.requires_any(&[a, b]);
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |values, grads| {
            let go = grads[out_id].clone();
            let av = values[ai].clone();
            let bv = values[bi].clone();
            {
                let ga = grads[ai].data_mut();
                for i in 0..ga.len() {
                    ga[i] += go.data()[i] * bv.data()[i];
                }
            }
            let gb = grads[bi].data_mut();
            for i in 0..gb.len() {
                gb[i] += go.data()[i] * av.data()[i];
            }
        });
        self.node(out, req, Some(back), "mul")
    }

    /// Broadcast-add a bias over the trailing dimension.
    pub fn add_bias(&mut self, x: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let xs = self.values[x.0].shape().to_vec();
        let c = *xs.last().ok_or_else(|| {
            Error::Dimension("add_bias: input must have at least one axis".into())
        })?;
        if self.values[b.0].shape() != [c] {
            return Err(Error::Dimension(format!(
                "add_bias: bias shape {:?} does not match trailing extent {}",
                self.values[b.0].shape(),
                c
            )));
        }
        let mut out = self.values[x.0].clone();
        let bv = self.values[b.0].data().to_vec();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv[i % c];
        }
        let (xi, bi) = (x.0, b.0);
        let req = self.requires_any(&[x, b]);
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let go = grads[out_id].clone();
            for (g, &v) in grads[xi].data_mut().iter_mut().zip(go.data()) {
                *g += v;
            }
            let gb = grads[bi].data_mut();
            for (i, &v) in go.data().iter().enumerate() {
                gb[i % c] += v;
            }
        });
        self.node(out, req, Some(back), "add_bias")
    }

    // ---- linear algebra -------------------------------------------------

    /// `a[.., m, k] @ b[k, n]`, broadcasting over the leading axes of `a`.
    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let ashape = self.values[a.0].shape().to_vec();
        let bshape = self.values[b.0].shape().to_vec();
        if ashape.len() < 2 || bshape.len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul: need a[.., m, k] and b[k, n], got {:?} and {:?}",
                ashape, bshape
            )));
        }
        let (m, k) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (bk, n) = (bshape[0], bshape[1]);
        if k != bk {
            return Err(Error::Dimension(format!(
                "matmul: inner extents {} and {} differ",
                k, bk
            )));
        }
        let batch: usize = ashape[..ashape.len() - 2].iter().product();
        let mut oshape = ashape[..ashape.len() - 2].to_vec();
        oshape.extend_from_slice(&[m, n]);
        let mut out = Tensor::zeros(&oshape);
        {
            let av = self.values[a.0].data();
            let bv = self.values[b.0].data();
            let ov = out.data_mut();
            for p in 0..batch {
                for i in 0..m {
                    for l in 0..k {
                        let x = av[(p * m + i) * k + l];
                        if x == T::zero() {
                            continue;
                        }
                        let orow = (p * m + i) * n;
                        let brow = l * n;
                        for j in 0..n {
                            ov[orow + j] += x * bv[brow + j];
                        }
                    }
                }
            }
        }
        let (ai, bi) = (a.0, b.0);
        let req = self.requires_any(&[a, b]);
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |values, grads| {
            let go = grads[out_id].clone();
            let av = values[ai].clone();
            let bv = values[bi].clone();
            {
                // dL/dA = dL/dO @ B^T
                let ga = grads[ai].data_mut();
                for p in 0..batch {
                    for i in 0..m {
                        for j in 0..n {
                            let g = go.data()[(p * m + i) * n + j];
                            if g == T::zero() {
                                continue;
                            }
                            for l in 0..k {
                                ga[(p * m + i) * k + l] += g * bv.data()[l * n + j];
                            }
                        }
                    }
                }
            }
            // dL/dB = sum_p A^T @ dL/dO
            let gb = grads[bi].data_mut();
            for p in 0..batch {
                for i in 0..m {
                    for l in 0..k {
                        let x = av.data()[(p * m + i) * k + l];
                        if x == T::zero() {
                            continue;
                        }
                        for j in 0..n {
                            gb[l * n + j] += x * go.data()[(p * m + i) * n + j];
                        }
                    }
                }
            }
        });
        self.node(out, req, Some(back), "matmul")
    }

    /// Affine map over the trailing axis: `x[.., d_in] @ w[d_in, d_out] + b`.
    pub fn linear(&mut self, x: TensorRef, w: TensorRef, b: Option<TensorRef>) -> Result<TensorRef> {
        let xs = self.values[x.0].shape().to_vec();
        let ws = self.values[w.0].shape().to_vec();
        if ws.len() != 2 {
            return Err(Error::Dimension(format!(
                "linear: weight must be 2-d, got {:?}",
                ws
            )));
        }
        let d_in = *xs.last().ok_or_else(|| {
            Error::Dimension("linear: input must have at least one axis".into())
        })?;
        if d_in != ws[0] {
            return Err(Error::Dimension(format!(
                "linear: trailing extent {} does not match weight rows {}",
                d_in, ws[0]
            )));
        }
        let flat = self.reshape_for_matmul(x, d_in)?;
        let y = self.matmul(flat, w)?;
        let mut oshape = xs[..xs.len() - 1].to_vec();
        oshape.push(ws[1]);
        let y = self.reshape(y, &oshape)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    fn reshape_for_matmul(&mut self, x: TensorRef, d_in: usize) -> Result<TensorRef> {
        let rows = self.values[x.0].numel() / d_in;
        self.reshape(x, &[rows, d_in])
    }

    /// Shape change with identical data layout. Gradient passes through.
    pub fn reshape(&mut self, x: TensorRef, shape: &[usize]) -> Result<TensorRef> {
        let out = self.values[x.0].reshape(shape)?;
        let xi = x.0;
        let req = self.requires[xi];
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let go = grads[out_id].clone();
            for (g, &v) in grads[xi].data_mut().iter_mut().zip(go.data()) {
                *g += v;
            }
        });
        self.node(out, req, Some(back), "reshape")
    }

    // ---- convolution ----------------------------------------------------

    /// Causal dilated 2-d convolution.
    ///
    /// `x: [B, C_in, S, T]`, `w: [C_out, C_in, ts, tt]`. The time axis is
    /// implicitly left-padded with `dilation * (tt - 1)` zeros, so the
    /// output at time t depends only on inputs at times <= t and the
    /// temporal length is preserved. No spatial padding: `S' = S - ts + 1`.
    pub fn conv2d_causal(&mut self, x: TensorRef, w: TensorRef, dilation: usize) -> Result<TensorRef> {
        let xs = self.values[x.0].shape().to_vec();
        let ws = self.values[w.0].shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d_causal: need x[B,C,S,T] and w[Co,Ci,ts,tt], got {:?} and {:?}",
                xs, ws
            )));
        }
        if dilation == 0 {
            return Err(Error::Usage("conv2d_causal: dilation must be positive".into()));
        }
        let (bsz, cin, s, t) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, wci, ts, tt) = (ws[0], ws[1], ws[2], ws[3]);
        if cin != wci {
            return Err(Error::Dimension(format!(
                "conv2d_causal: input channels {} vs kernel channels {}",
                cin, wci
            )));
        }
        if ts > s || ts == 0 || tt == 0 || t == 0 {
            return Err(Error::Dimension(format!(
                "conv2d_causal: kernel {}x{} does not fit input {}x{}",
                ts, tt, s, t
            )));
        }
        let sp = s - ts + 1;
        let mut out = Tensor::zeros(&[bsz, cout, sp, t]);
        {
            let xv = self.values[x.0].data();
            let wv = self.values[w.0].data();
            let ov = out.data_mut();
            for b in 0..bsz {
                for co in 0..cout {
                    for so in 0..sp {
                        for to in 0..t {
                            let mut acc = T::zero();
                            for ci in 0..cin {
                                for ks in 0..ts {
                                    for kt in 0..tt {
                                        // kt == tt-1 taps the current time step
                                        let shift = dilation * (tt - 1 - kt);
                                        if shift > to {
                                            continue; // inside the causal zero pad
                                        }
                                        let ti = to - shift;
                                        acc += xv[((b * cin + ci) * s + so + ks) * t + ti]
                                            * wv[((co * cin + ci) * ts + ks) * tt + kt];
                                    }
                                }
                            }
                            ov[((b * cout + co) * sp + so) * t + to] = acc;
                        }
                    }
                }
            }
        }
        let (xi, wi) = (x.0, w.0);
        let req = self.requires_any(&[x, w]);
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |values, grads| {
            let go = grads[out_id].clone();
            let xv = values[xi].clone();
            let wv = values[wi].clone();
            {
                let gx = grads[xi].data_mut();
                for b in 0..bsz {
                    for co in 0..cout {
                        for so in 0..sp {
                            for to in 0..t {
                                let g = go.data()[((b * cout + co) * sp + so) * t + to];
                                if g == T::zero() {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ks in 0..ts {
                                        for kt in 0..tt {
                                            let shift = dilation * (tt - 1 - kt);
                                            if shift > to {
                                                continue;
                                            }
                                            let ti = to - shift;
                                            gx[((b * cin + ci) * s + so + ks) * t + ti] += g
                                                * wv.data()[((co * cin + ci) * ts + ks) * tt + kt];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let gw = grads[wi].data_mut();
            for b in 0..bsz {
                for co in 0..cout {
                    for so in 0..sp {
                        for to in 0..t {
                            let g = go.data()[((b * cout + co) * sp + so) * t + to];
                            if g == T::zero() {
                                continue;
                            }
                            for ci in 0..cin {
                                for ks in 0..ts {
                                    for kt in 0..tt {
                                        let shift = dilation * (tt - 1 - kt);
                                        if shift > to {
                                            continue;
                                        }
                                        let ti = to - shift;
                                        gw[((co * cin + ci) * ts + ks) * tt + kt] += g
                                            * xv.data()[((b * cin + ci) * s + so + ks) * t + ti];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        self.node(out, req, Some(back), "conv2d_causal")
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: TensorRef) -> Result<TensorRef> {
        let s: T = self.values[x.0].data().iter().copied().sum();
        let xi = x.0;
        let req = self.requires[xi];
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let g = grads[out_id].data()[0];
            for gx in grads[xi].data_mut() {
                *gx += g;
            }
        });
        self.node(Tensor::scalar(s), req, Some(back), "sum")
    }

    pub fn mean(&mut self, x: TensorRef) -> Result<TensorRef> {
        let n = self.values[x.0].numel();
        let inv = T::one() / lit::<T>(n as f64);
        let s: T = self.values[x.0].data().iter().copied().sum();
        let xi = x.0;
        let req = self.requires[xi];
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let g = grads[out_id].data()[0] * inv;
            for gx in grads[xi].data_mut() {
                *gx += g;
            }
        });
        self.node(Tensor::scalar(s * inv), req, Some(back), "mean")
    }

    /// Mean of elementwise absolute differences.
    pub fn mean_abs_error(&mut self, x: TensorRef, y: TensorRef) -> Result<TensorRef> {
        self.check_same_shape(x, y, "mean_abs_error")?;
        let n = self.values[x.0].numel();
        let inv = T::one() / lit::<T>(n as f64);
        let s: T = self.values[x.0]
            .data()
            .iter()
            .zip(self.values[y.0].data())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        let (xi, yi) = (x.0, y.0);
        let req = self.requires_any(&[x, y]);
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |values, grads| {
            let g = grads[out_id].data()[0] * inv;
            let xv = values[xi].clone();
            let yv = values[yi].clone();
            {
                let gx = grads[xi].data_mut();
                for i in 0..gx.len() {
                    let d = xv.data()[i] - yv.data()[i];
                    let sg = if d > T::zero() {
                        T::one()
                    } else if d < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    gx[i] += g * sg;
                }
            }
            let gy = grads[yi].data_mut();
            for i in 0..gy.len() {
                let d = xv.data()[i] - yv.data()[i];
                let sg = if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                gy[i] -= g * sg;
            }
        });
        self.node(Tensor::scalar(s * inv), req, Some(back), "mean_abs_error")
    }

    // ---- structural ops for the model -----------------------------------

    /// WaveNet-style gate: split the trailing channel axis into halves
    /// `a | g` and return `tanh(a) * sigmoid(g)`.
    pub fn gated(&mut self, h: TensorRef) -> Result<TensorRef> {
        let hs = self.values[h.0].shape().to_vec();
        let c2 = *hs.last().ok_or_else(|| {
            Error::Dimension("gated: input must have at least one axis".into())
        })?;
        if c2 % 2 != 0 {
            return Err(Error::Dimension(format!(
                "gated: trailing channel count {} is odd",
                c2
            )));
        }
        let c = c2 / 2;
        let groups = self.values[h.0].numel() / c2;
        let mut oshape = hs[..hs.len() - 1].to_vec();
        oshape.push(c);
        let mut out = Tensor::zeros(&oshape);
        {
            let hv = self.values[h.0].data();
            let ov = out.data_mut();
            for g in 0..groups {
                for i in 0..c {
                    let a = hv[g * c2 + i];
                    let gate = hv[g * c2 + c + i];
                    let sg = T::one() / (T::one() + (-gate).exp());
                    ov[g * c + i] = a.tanh() * sg;
                }
            }
        }
        let hi = h.0;
        let req = self.requires[hi];
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |values, grads| {
            let go = grads[out_id].clone();
            let hv = values[hi].clone();
            let gh = grads[hi].data_mut();
            for g in 0..groups {
                for i in 0..c {
                    let a = hv.data()[g * c2 + i];
                    let gate = hv.data()[g * c2 + c + i];
                    let ta = a.tanh();
                    let sg = T::one() / (T::one() + (-gate).exp());
                    let gout = go.data()[g * c + i];
                    gh[g * c2 + i] += gout * sg * (T::one() - ta * ta);
                    gh[g * c2 + c + i] += gout * ta * sg * (T::one() - sg);
                }
            }
        });
        self.node(out, req, Some(back), "gated")
    }

    /// Gather kinematic-chain slabs for the spatio-temporal convolution.
    ///
    /// `x: [B, T, J, C]`, `chains[j] = [grandparent, parent, j]`.
    /// Output `[B*J, C, 3, T]`: one 3-joint spatial slab per joint, laid
    /// out for [`Tape::conv2d_causal`].
    pub fn gather_chains(&mut self, x: TensorRef, chains: &[[usize; 3]]) -> Result<TensorRef> {
        let xs = self.values[x.0].shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::Dimension(format!(
                "gather_chains: need x[B,T,J,C], got {:?}",
                xs
            )));
        }
        let (bsz, t, j, c) = (xs[0], xs[1], xs[2], xs[3]);
        if chains.len() != j {
            return Err(Error::Dimension(format!(
                "gather_chains: chain table covers {} joints, input has {}",
                chains.len(),
                j
            )));
        }
        for (jj, ch) in chains.iter().enumerate() {
            for &u in ch {
                if u >= j {
                    return Err(Error::Validation(format!(
                        "gather_chains: chain for joint {} references joint {} out of range",
                        jj, u
                    )));
                }
            }
        }
        let chains = chains.to_vec();
        let mut out = Tensor::zeros(&[bsz * j, c, 3, t]);
        {
            let xv = self.values[x.0].data();
            let ov = out.data_mut();
            for b in 0..bsz {
                for jj in 0..j {
                    for s in 0..3 {
                        let u = chains[jj][s];
                        for ti in 0..t {
                            for ci in 0..c {
                                ov[(((b * j + jj) * c + ci) * 3 + s) * t + ti] =
                                    xv[((b * t + ti) * j + u) * c + ci];
                            }
                        }
                    }
                }
            }
        }
        let xi = x.0;
        let req = self.requires[xi];
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let go = grads[out_id].clone();
            let gx = grads[xi].data_mut();
            for b in 0..bsz {
                for jj in 0..j {
                    for s in 0..3 {
                        let u = chains[jj][s];
                        for ti in 0..t {
                            for ci in 0..c {
                                gx[((b * t + ti) * j + u) * c + ci] +=
                                    go.data()[(((b * j + jj) * c + ci) * 3 + s) * t + ti];
                            }
                        }
                    }
                }
            }
        });
        self.node(out, req, Some(back), "gather_chains")
    }

    /// Inverse layout change after the per-joint convolution:
    /// `[B*J, C, 1, T] -> [B, T, J, C]`.
    pub fn scatter_joints(&mut self, y: TensorRef, bsz: usize, j: usize) -> Result<TensorRef> {
        let ys = self.values[y.0].shape().to_vec();
        if ys.len() != 4 || ys[0] != bsz * j || ys[2] != 1 {
            return Err(Error::Dimension(format!(
                "scatter_joints: need y[B*J, C, 1, T] with B={bsz}, J={j}, got {:?}",
                ys
            )));
        }
        let (c, t) = (ys[1], ys[3]);
        let mut out = Tensor::zeros(&[bsz, t, j, c]);
        {
            let yv = self.values[y.0].data();
            let ov = out.data_mut();
            for b in 0..bsz {
                for jj in 0..j {
                    for ci in 0..c {
                        for ti in 0..t {
                            ov[((b * t + ti) * j + jj) * c + ci] =
                                yv[((b * j + jj) * c + ci) * t + ti];
                        }
                    }
                }
            }
        }
        let yi = y.0;
        let req = self.requires[yi];
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let go = grads[out_id].clone();
            let gy = grads[yi].data_mut();
            for b in 0..bsz {
                for jj in 0..j {
                    for ci in 0..c {
                        for ti in 0..t {
                            gy[((b * j + jj) * c + ci) * t + ti] +=
                                go.data()[((b * t + ti) * j + jj) * c + ci];
                        }
                    }
                }
            }
        });
        self.node(out, req, Some(back), "scatter_joints")
    }

    /// Row-normalized graph aggregation over the joint axis:
    /// `out[b,t,j,:] = sum_u adj[j,u] * x[b,t,u,:]` with a fixed
    /// (non-learned) `adj` of extent `J*J`, row-major.
    pub fn joint_aggregate(&mut self, x: TensorRef, adj: &[T]) -> Result<TensorRef> {
        let xs = self.values[x.0].shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::Dimension(format!(
                "joint_aggregate: need x[B,T,J,C], got {:?}",
                xs
            )));
        }
        let (bsz, t, j, c) = (xs[0], xs[1], xs[2], xs[3]);
        if adj.len() != j * j {
            return Err(Error::Dimension(format!(
                "joint_aggregate: adjacency has {} entries, expected {}",
                adj.len(),
                j * j
            )));
        }
        let adj = adj.to_vec();
        let mut out = Tensor::zeros(&xs);
        {
            let xv = self.values[x.0].data();
            let ov = out.data_mut();
            for b in 0..bsz {
                for ti in 0..t {
                    let base = (b * t + ti) * j * c;
                    for jj in 0..j {
                        for u in 0..j {
                            let a = adj[jj * j + u];
                            if a == T::zero() {
                                continue;
                            }
                            for ci in 0..c {
                                ov[base + jj * c + ci] += a * xv[base + u * c + ci];
                            }
                        }
                    }
                }
            }
        }
        let xi = x.0;
        let req = self.requires[xi];
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let go = grads[out_id].clone();
            let gx = grads[xi].data_mut();
            for b in 0..bsz {
                for ti in 0..t {
                    let base = (b * t + ti) * j * c;
                    for jj in 0..j {
                        for u in 0..j {
                            let a = adj[jj * j + u];
                            if a == T::zero() {
                                continue;
                            }
                            for ci in 0..c {
                                gx[base + u * c + ci] += a * go.data()[base + jj * c + ci];
                            }
                        }
                    }
                }
            }
        });
        self.node(out, req, Some(back), "joint_aggregate")
    }

    /// Select one index along axis 1: `x[d0, d1, rest..] -> [d0, rest..]`.
    pub fn select_time(&mut self, x: TensorRef, t: usize) -> Result<TensorRef> {
        let xs = self.values[x.0].shape().to_vec();
        if xs.len() < 2 {
            return Err(Error::Dimension(format!(
                "select_time: need at least rank 2, got {:?}",
                xs
            )));
        }
        let (d0, d1) = (xs[0], xs[1]);
        if t >= d1 {
            return Err(Error::Usage(format!(
                "select_time: index {} out of range for extent {}",
                t, d1
            )));
        }
        let rest: usize = xs[2..].iter().product();
        let mut oshape = vec![d0];
        oshape.extend_from_slice(&xs[2..]);
        let mut out = Tensor::zeros(&oshape);
        {
            let xv = self.values[x.0].data();
            let ov = out.data_mut();
            for b in 0..d0 {
                let src = (b * d1 + t) * rest;
                ov[b * rest..(b + 1) * rest].copy_from_slice(&xv[src..src + rest]);
            }
        }
        let xi = x.0;
        let req = self.requires[xi];
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let go = grads[out_id].clone();
            let gx = grads[xi].data_mut();
            for b in 0..d0 {
                let dst = (b * d1 + t) * rest;
                for r in 0..rest {
                    gx[dst + r] += go.data()[b * rest + r];
                }
            }
        });
        self.node(out, req, Some(back), "select_time")
    }

    /// Slide the window one step: drop the oldest frame of
    /// `win[d0, d1, rest..]` along axis 1 and append `frame[d0, rest..]`.
    pub fn shift_append_time(&mut self, win: TensorRef, frame: TensorRef) -> Result<TensorRef> {
        let ws = self.values[win.0].shape().to_vec();
        let fs = self.values[frame.0].shape().to_vec();
        if ws.len() < 2 || fs.len() != ws.len() - 1 || fs[0] != ws[0] || fs[1..] != ws[2..] {
            return Err(Error::Dimension(format!(
                "shift_append_time: window {:?} and frame {:?} incompatible",
                ws, fs
            )));
        }
        let (d0, d1) = (ws[0], ws[1]);
        let rest: usize = ws[2..].iter().product();
        let mut out = Tensor::zeros(&ws);
        {
            let wv = self.values[win.0].data();
            let fv = self.values[frame.0].data();
            let ov = out.data_mut();
            for b in 0..d0 {
                for t in 0..d1 - 1 {
                    let dst = (b * d1 + t) * rest;
                    let src = (b * d1 + t + 1) * rest;
                    ov[dst..dst + rest].copy_from_slice(&wv[src..src + rest]);
                }
                let dst = (b * d1 + d1 - 1) * rest;
                ov[dst..dst + rest].copy_from_slice(&fv[b * rest..(b + 1) * rest]);
            }
        }
        let (wi, fi) = (win.0, frame.0);
        let req = self.requires_any(&[win, frame]);
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let go = grads[out_id].clone();
            {
                let gw = grads[wi].data_mut();
                for b in 0..d0 {
                    for t in 0..d1 - 1 {
                        let src = (b * d1 + t) * rest;
                        let dst = (b * d1 + t + 1) * rest;
                        for r in 0..rest {
                            gw[dst + r] += go.data()[src + r];
                        }
                    }
                }
            }
            let gf = grads[fi].data_mut();
            for b in 0..d0 {
                let src = (b * d1 + d1 - 1) * rest;
                for r in 0..rest {
                    gf[b * rest + r] += go.data()[src + r];
                }
            }
        });
        self.node(out, req, Some(back), "shift_append_time")
    }

    /// Stack per-step frames `[d0, rest..]` into `[d0, H, rest..]`.
    pub fn stack_time(&mut self, frames: &[TensorRef]) -> Result<TensorRef> {
        if frames.is_empty() {
            return Err(Error::Usage("stack_time: no frames".into()));
        }
        let fs = self.values[frames[0].0].shape().to_vec();
        for f in frames {
            if self.values[f.0].shape() != fs.as_slice() {
                return Err(Error::Dimension("stack_time: frame shapes differ".into()));
            }
        }
        let d0 = fs[0];
        let rest: usize = fs[1..].iter().product();
        let h = frames.len();
        let mut oshape = vec![d0, h];
        oshape.extend_from_slice(&fs[1..]);
        let mut out = Tensor::zeros(&oshape);
        {
            let ov = out.data_mut();
            for (k, f) in frames.iter().enumerate() {
                let fv = self.values[f.0].data();
                for b in 0..d0 {
                    let dst = (b * h + k) * rest;
                    ov[dst..dst + rest].copy_from_slice(&fv[b * rest..(b + 1) * rest]);
                }
            }
        }
        let ids: Vec<usize> = frames.iter().map(|f| f.0).collect();
        let req = self.requires_any(frames);
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |_values, grads| {
            let go = grads[out_id].clone();
            for (k, &fi) in ids.iter().enumerate() {
                let gf = grads[fi].data_mut();
                for b in 0..d0 {
                    let src = (b * h + k) * rest;
                    for r in 0..rest {
                        gf[b * rest + r] += go.data()[src + r];
                    }
                }
            }
        });
        self.node(out, req, Some(back), "stack_time")
    }

    /// Normalize groups along the trailing axis to unit Euclidean norm.
    pub fn normalize_lastdim(&mut self, x: TensorRef) -> Result<TensorRef> {
        let xs = self.values[x.0].shape().to_vec();
        let k = *xs.last().ok_or_else(|| {
            Error::Dimension("normalize_lastdim: input must have at least one axis".into())
        })?;
        let groups = self.values[x.0].numel() / k;
        let eps = lit::<T>(1e-12);
        let mut out = self.values[x.0].clone();
        {
            let ov = out.data_mut();
            for g in 0..groups {
                let slice = &mut ov[g * k..(g + 1) * k];
                let n = slice.iter().map(|&v| v * v).sum::<T>().sqrt();
                if n < eps {
                    return Err(Error::DegenerateRotation(
                        "normalize_lastdim: near-zero norm".into(),
                    ));
                }
                for v in slice {
                    *v = *v / n;
                }
            }
        }
        let xi = x.0;
        let req = self.requires[xi];
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |values, grads| {
            let go = grads[out_id].clone();
            let xv = values[xi].clone();
            let gx = grads[xi].data_mut();
            for g in 0..groups {
                let xs_ = &xv.data()[g * k..(g + 1) * k];
                let gs = &go.data()[g * k..(g + 1) * k];
                let n2 = xs_.iter().map(|&v| v * v).sum::<T>();
                let n = n2.sqrt();
                let dot = xs_
                    .iter()
                    .zip(gs.iter())
                    .map(|(&a, &b)| a * b)
                    .sum::<T>();
                let n3 = n2 * n;
                for i in 0..k {
                    gx[g * k + i] += gs[i] / n - xs_[i] * dot / n3;
                }
            }
        });
        self.node(out, req, Some(back), "normalize_lastdim")
    }

    /// Hamilton product over trailing quadruples (scalar-first layout).
    pub fn quat_mul_lastdim(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.check_same_shape(a, b, "quat_mul_lastdim")?;
        let xs = self.values[a.0].shape().to_vec();
        if xs.last() != Some(&4) {
            return Err(Error::Dimension(format!(
                "quat_mul_lastdim: trailing extent must be 4, got {:?}",
                xs
            )));
        }
        let groups = self.values[a.0].numel() / 4;
        let mut out = Tensor::zeros(&xs);
        {
            let av = self.values[a.0].data();
            let bv = self.values[b.0].data();
            let ov = out.data_mut();
            for g in 0..groups {
                let (aw, ax, ay, az) = (av[g * 4], av[g * 4 + 1], av[g * 4 + 2], av[g * 4 + 3]);
                let (bw, bx, by, bz) = (bv[g * 4], bv[g * 4 + 1], bv[g * 4 + 2], bv[g * 4 + 3]);
                ov[g * 4] = aw * bw - ax * bx - ay * by - az * bz;
                ov[g * 4 + 1] = aw * bx + ax * bw + ay * bz - az * by;
                ov[g * 4 + 2] = aw * by - ax * bz + ay * bw + az * bx;
                ov[g * 4 + 3] = aw * bz + ax * by - ay * bx + az * bw;
            }
        }
        let (ai, bi) = (a.0, b.0);
        let req = self.requires_any(&[a, b]);
        let out_id = self.values.len();
        let back: BackFn<T> = Box::new(move |values, grads| {
            let go = grads[out_id].clone();
            let av = values[ai].clone();
            let bv = values[bi].clone();
            for g in 0..groups {
                let (aw, ax, ay, az) = (
                    av.data()[g * 4],
                    av.data()[g * 4 + 1],
                    av.data()[g * 4 + 2],
                    av.data()[g * 4 + 3],
                );
                let (bw, bx, by, bz) = (
                    bv.data()[g * 4],
                    bv.data()[g * 4 + 1],
                    bv.data()[g * 4 + 2],
                    bv.data()[g * 4 + 3],
                );
                let (gw, gx_, gy, gz) = (
                    go.data()[g * 4],
                    go.data()[g * 4 + 1],
                    go.data()[g * 4 + 2],
                    go.data()[g * 4 + 3],
                );
                {
                    let ga = grads[ai].data_mut();
                    ga[g * 4] += gw * bw + gx_ * bx + gy * by + gz * bz;
                    ga[g * 4 + 1] += -gw * bx + gx_ * bw - gy * bz + gz * by;
                    ga[g * 4 + 2] += -gw * by + gx_ * bz + gy * bw - gz * bx;
                    ga[g * 4 + 3] += -gw * bz - gx_ * by + gy * bx + gz * bw;
                }
                let gb = grads[bi].data_mut();
                gb[g * 4] += gw * aw + gx_ * ax + gy * ay + gz * az;
                gb[g * 4 + 1] += -gw * ax + gx_ * aw + gy * az - gz * ay;
                gb[g * 4 + 2] += -gw * ay - gx_ * az + gy * aw + gz * ax;
                gb[g * 4 + 3] += -gw * az + gx_ * ay - gy * ax + gz * aw;
            }
        });
        self.node(out, req, Some(back), "quat_mul_lastdim")
    }
}
