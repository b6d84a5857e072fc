//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every operation records its output value plus a backward closure. A tape
//! is confined to one forward/backward pass; `backward` replays the nodes in
//! reverse execution order exactly once, accumulating gradients in a fixed
//! row-major sequential order. Parameters never reached from the loss keep
//! an exactly-zero gradient.
//!
//! The op set is exactly what the HWRCNet architecture and CTC need:
//! same-padded conv, max-pool, batch norm, dense, the elementwise
//! activations, row log-softmax, and a handful of structural ops. Every
//! forward output is checked finite; NaN/Inf surfaces as an error, never
//! silently.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{lit, Scalar, Tensor, TensorError};

/// Epsilon inside the batch-norm variance square root.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub(crate) fn id(self) -> usize {
        self.0
    }
}

/// Backward closure: `(values, output grad, grads of earlier vars)`.
/// Inputs of a node always precede its output on the tape, so the grad
/// slice is split at the output id.
type BackFn<T> = Box<dyn Fn(&[Tensor<T>], &Tensor<T>, &mut [Tensor<T>])>;

struct Node<T> {
    out: usize,
    backward: BackFn<T>,
}

/// Gradients of every tape value with respect to a scalar loss.
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> &Tensor<T> {
        &self.grads[v.0]
    }
}

pub struct Tape<T> {
    vals: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { vals: Vec::new(), nodes: Vec::new() }
    }

    /// Records an input or parameter; produces no backward node.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.vals.push(value);
        Var(self.vals.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.vals[v.0]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Id the next recorded value will get; backward closures capture it.
    fn next_id(&self) -> usize {
        self.vals.len()
    }

    fn push(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        backward: BackFn<T>,
    ) -> Result<Var, TensorError> {
        value.check_finite(op)?;
        let out = self.vals.len();
        self.vals.push(value);
        self.nodes.push(Node { out, backward });
        Ok(Var(out))
    }

    /// Records an externally computed op (used by the CTC loss node).
    pub(crate) fn push_custom(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        backward: BackFn<T>,
    ) -> Result<Var, TensorError> {
        self.push(op, value, backward)
    }

    /// Runs the backward sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if !self.vals[loss.0].is_scalar() {
            return Err(TensorError::Unsupported {
                op: "backward",
                detail: "loss must be a scalar",
            });
        }
        let mut grads: Vec<Tensor<T>> = self.vals.iter().map(Tensor::zeros_like).collect();
        grads[loss.0].data_mut()[0] = T::one();
        for node in self.nodes.iter().rev() {
            let (earlier, rest) = grads.split_at_mut(node.out);
            (node.backward)(&self.vals, &rest[0], earlier);
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise / structural ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (&self.vals[a.0], &self.vals[b.0]);
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let (ai, bi) = (a.0, b.0);
        self.push(
            "add",
            out,
            Box::new(move |_vals, g, grads| {
                grads[ai].add_assign(g);
                grads[bi].add_assign(g);
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (&self.vals[a.0], &self.vals[b.0]);
        if va.shape() != vb.shape() {
            return Err(shape_err("sub", va.shape(), vb.shape()));
        }
        let data: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("sub shape");
        let (ai, bi) = (a.0, b.0);
        self.push(
            "sub",
            out,
            Box::new(move |_vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[ai].data_mut()[k] = grads[ai].data_mut()[k] + gk;
                    grads[bi].data_mut()[k] = grads[bi].data_mut()[k] - gk;
                }
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (&self.vals[a.0], &self.vals[b.0]);
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va.shape(), vb.shape()));
        }
        let data: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("mul shape");
        let (ai, bi) = (a.0, b.0);
        self.push(
            "mul",
            out,
            Box::new(move |vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[ai].data_mut()[k] = grads[ai].data_mut()[k] + gk * vals[bi].data()[k];
                    grads[bi].data_mut()[k] = grads[bi].data_mut()[k] + gk * vals[ai].data()[k];
                }
            }),
        )
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, TensorError> {
        let out = self.vals[a.0].map(|x| x * factor);
        let ai = a.0;
        self.push(
            "scale",
            out,
            Box::new(move |_vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[ai].data_mut()[k] = grads[ai].data_mut()[k] + gk * factor;
                }
            }),
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.vals[a.0].sum());
        let ai = a.0;
        self.push(
            "sum",
            out,
            Box::new(move |_vals, g, grads| {
                let gv = g.item();
                for x in grads[ai].data_mut() {
                    *x = *x + gv;
                }
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let out = self.vals[a.0].reshaped(shape)?;
        let ai = a.0;
        self.push(
            "reshape",
            out,
            Box::new(move |_vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[ai].data_mut()[k] = grads[ai].data_mut()[k] + gk;
                }
            }),
        )
    }

    /// Adds a vector along the last axis (bias broadcast).
    pub fn add_last_axis(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (vx, vb) = (&self.vals[x.0], &self.vals[b.0]);
        let c = *vx.shape().last().unwrap_or(&0);
        if vb.rank() != 1 || vb.len() != c {
            return Err(shape_err("add_last_axis", vx.shape(), vb.shape()));
        }
        let mut out = vx.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + vb.data()[k % c];
        }
        let (xi, bi) = (x.0, b.0);
        self.push(
            "add_last_axis",
            out,
            Box::new(move |_vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[xi].data_mut()[k] = grads[xi].data_mut()[k] + gk;
                    grads[bi].data_mut()[k % c] = grads[bi].data_mut()[k % c] + gk;
                }
            }),
        )
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var, TensorError> {
        let vx = &self.vals[x.0];
        if vx.rank() != 2 || row >= vx.shape()[0] {
            return Err(shape_err("select_row", vx.shape(), &[row]));
        }
        let c = vx.shape()[1];
        let out = Tensor::new(vec![1, c], vx.data()[row * c..(row + 1) * c].to_vec())
            .expect("select_row shape");
        let xi = x.0;
        self.push(
            "select_row",
            out,
            Box::new(move |_vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    let dst = row * c + k;
                    grads[xi].data_mut()[dst] = grads[xi].data_mut()[dst] + gk;
                }
            }),
        )
    }

    /// Stacks 2-D blocks along axis 0.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Unsupported { op: "concat_rows", detail: "no inputs" });
        }
        let c = self.vals[parts[0].0].shape()[1];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = &self.vals[p.0];
            if v.rank() != 2 || v.shape()[1] != c {
                return Err(shape_err("concat_rows", &[rows, c], v.shape()));
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows, c], data).expect("concat_rows shape");
        let ids: Vec<(usize, usize)> =
            parts.iter().map(|p| (p.0, self.vals[p.0].len())).collect();
        self.push(
            "concat_rows",
            out,
            Box::new(move |_vals, g, grads| {
                let mut offset = 0;
                for &(id, n) in &ids {
                    for k in 0..n {
                        grads[id].data_mut()[k] = grads[id].data_mut()[k] + g.data()[offset + k];
                    }
                    offset += n;
                }
            }),
        )
    }

    /// Concatenates two 2-D tensors along axis 1.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (&self.vals[a.0], &self.vals[b.0]);
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[0] != vb.shape()[0] {
            return Err(shape_err("concat_cols", va.shape(), vb.shape()));
        }
        let (r, ca, cb) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&va.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&vb.data()[i * cb..(i + 1) * cb]);
        }
        let out = Tensor::new(vec![r, ca + cb], data).expect("concat_cols shape");
        let (ai, bi) = (a.0, b.0);
        self.push(
            "concat_cols",
            out,
            Box::new(move |_vals, g, grads| {
                for i in 0..r {
                    for j in 0..ca {
                        let k = i * ca + j;
                        grads[ai].data_mut()[k] =
                            grads[ai].data_mut()[k] + g.data()[i * (ca + cb) + j];
                    }
                    for j in 0..cb {
                        let k = i * cb + j;
                        grads[bi].data_mut()[k] =
                            grads[bi].data_mut()[k] + g.data()[i * (ca + cb) + ca + j];
                    }
                }
            }),
        )
    }

    // ---- activations ----

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.vals[a.0].map(|x| if x > T::zero() { x } else { T::zero() });
        let ai = a.0;
        self.push(
            "relu",
            out,
            Box::new(move |vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    if vals[ai].data()[k] > T::zero() {
                        grads[ai].data_mut()[k] = grads[ai].data_mut()[k] + gk;
                    }
                }
            }),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.vals[a.0].map(|x| x.tanh());
        let ai = a.0;
        let oi = self.next_id();
        self.push(
            "tanh",
            out,
            Box::new(move |vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    let y = vals[oi].data()[k];
                    grads[ai].data_mut()[k] = grads[ai].data_mut()[k] + gk * (T::one() - y * y);
                }
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.vals[a.0].map(sigmoid_stable);
        let ai = a.0;
        let oi = self.next_id();
        self.push(
            "sigmoid",
            out,
            Box::new(move |vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    let y = vals[oi].data()[k];
                    grads[ai].data_mut()[k] = grads[ai].data_mut()[k] + gk * y * (T::one() - y);
                }
            }),
        )
    }

    /// Row-wise log-softmax of a 2-D tensor, max-subtracted for stability.
    /// Each output row satisfies `logsumexp(row) == 0` within tolerance.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = &self.vals[a.0];
        if va.rank() != 2 {
            return Err(shape_err("log_softmax_rows", &[0, 0], va.shape()));
        }
        let (r, c) = (va.shape()[0], va.shape()[1]);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &va.data()[i * c..(i + 1) * c];
            let mut m = row[0];
            for &x in row.iter().skip(1) {
                if x > m {
                    m = x;
                }
            }
            let mut lse = T::zero();
            for &x in row {
                lse = lse + (x - m).exp();
            }
            let lse = m + lse.ln();
            for &x in row {
                data.push(x - lse);
            }
        }
        let out = Tensor::new(vec![r, c], data).expect("log_softmax shape");
        let ai = a.0;
        let oi = self.next_id();
        self.push(
            "log_softmax_rows",
            out,
            Box::new(move |vals, g, grads| {
                for i in 0..r {
                    let mut gsum = T::zero();
                    for j in 0..c {
                        gsum = gsum + g.data()[i * c + j];
                    }
                    for j in 0..c {
                        let k = i * c + j;
                        grads[ai].data_mut()[k] =
                            grads[ai].data_mut()[k] + g.data()[k] - vals[oi].data()[k].exp() * gsum;
                    }
                }
            }),
        )
    }

    // ---- linear algebra / layers ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (&self.vals[a.0], &self.vals[b.0]);
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let (m, kk, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for k in 0..kk {
                let aik = va.data()[i * kk + k];
                let brow = &vb.data()[k * n..(k + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + aik * brow[j];
                }
            }
        }
        let out = Tensor::new(vec![m, n], out).expect("matmul shape");
        let (ai, bi) = (a.0, b.0);
        self.push(
            "matmul",
            out,
            Box::new(move |vals, g, grads| {
                // dA[i,k] += sum_j g[i,j] * B[k,j]
                for i in 0..m {
                    let grow = &g.data()[i * n..(i + 1) * n];
                    for k in 0..kk {
                        let brow = &vals[bi].data()[k * n..(k + 1) * n];
                        let mut acc = T::zero();
                        for j in 0..n {
                            acc = acc + grow[j] * brow[j];
                        }
                        grads[ai].data_mut()[i * kk + k] = grads[ai].data_mut()[i * kk + k] + acc;
                    }
                }
                // dB[k,j] += sum_i A[i,k] * g[i,j]
                for i in 0..m {
                    for k in 0..kk {
                        let aik = vals[ai].data()[i * kk + k];
                        for j in 0..n {
                            let idx = k * n + j;
                            grads[bi].data_mut()[idx] =
                                grads[bi].data_mut()[idx] + aik * g.data()[i * n + j];
                        }
                    }
                }
            }),
        )
    }

    /// Per-time-step affine map: `x [T,F] * w [F,G] + b [G]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        self.add_last_axis(y, b)
    }

    /// Same-padded 2-D convolution, input `[H,W,Cin]`, kernel `[k,k,Cin,Cout]`.
    /// Zero padding preserves the spatial extents.
    pub fn conv2d_same(&mut self, x: Var, kernel: Var) -> Result<Var, TensorError> {
        let (vx, vk) = (&self.vals[x.0], &self.vals[kernel.0]);
        if vx.rank() != 3 || vk.rank() != 4 {
            return Err(shape_err("conv2d", vx.shape(), vk.shape()));
        }
        let (h, w, cin) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let (k0, k1, kcin, cout) =
            (vk.shape()[0], vk.shape()[1], vk.shape()[2], vk.shape()[3]);
        if k0 != k1 || kcin != cin {
            return Err(shape_err("conv2d", vx.shape(), vk.shape()));
        }
        if !(k0 == 1 || k0 == 3 || k0 == 5) {
            return Err(TensorError::Unsupported {
                op: "conv2d",
                detail: "kernel size must be 1, 3 or 5",
            });
        }
        let k = k0;
        let pad = k / 2;
        let mut out = vec![T::zero(); h * w * cout];
        conv_forward(vx.data(), vk.data(), &mut out, h, w, cin, cout, k, pad);
        let out = Tensor::new(vec![h, w, cout], out).expect("conv2d shape");
        let (xi, ki) = (x.0, kernel.0);
        self.push(
            "conv2d",
            out,
            Box::new(move |vals, g, grads| {
                conv_backward(
                    vals[xi].data(),
                    vals[ki].data(),
                    g.data(),
                    grads,
                    xi,
                    ki,
                    h,
                    w,
                    cin,
                    cout,
                    k,
                    pad,
                );
            }),
        )
    }

    /// Max pooling with window == stride `(p0, p1)`; gradient goes to the
    /// first maximum in row-major window scan.
    pub fn maxpool2d(&mut self, x: Var, p0: usize, p1: usize) -> Result<Var, TensorError> {
        let vx = &self.vals[x.0];
        if vx.rank() != 3 {
            return Err(shape_err("maxpool2d", &[0, 0, 0], vx.shape()));
        }
        let (h, w, c) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        if p0 == 0 || p1 == 0 || h % p0 != 0 || w % p1 != 0 {
            return Err(TensorError::Unsupported {
                op: "maxpool2d",
                detail: "extents must be divisible by the window",
            });
        }
        let (oh, ow) = (h / p0, w / p1);
        let mut out = vec![T::zero(); oh * ow * c];
        let mut argmax = vec![0usize; oh * ow * c];
        for o0 in 0..oh {
            for o1 in 0..ow {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0;
                    for d0 in 0..p0 {
                        for d1 in 0..p1 {
                            let idx = ((o0 * p0 + d0) * w + (o1 * p1 + d1)) * c + ch;
                            let v = vx.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let oidx = (o0 * ow + o1) * c + ch;
                    out[oidx] = best;
                    argmax[oidx] = best_idx;
                }
            }
        }
        let out = Tensor::new(vec![oh, ow, c], out).expect("maxpool shape");
        let xi = x.0;
        self.push(
            "maxpool2d",
            out,
            Box::new(move |_vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    let src = argmax[k];
                    grads[xi].data_mut()[src] = grads[xi].data_mut()[src] + gk;
                }
            }),
        )
    }

    /// Batch norm over all axes but the last (channel), batch statistics.
    /// Returns the output plus the per-channel (mean, population variance)
    /// used, so the caller can fold them into running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, Tensor<T>, Tensor<T>), TensorError> {
        let vx = &self.vals[x.0];
        let c = *vx.shape().last().ok_or(TensorError::Unsupported {
            op: "batchnorm",
            detail: "input must have at least one axis",
        })?;
        let (vg, vb) = (&self.vals[gamma.0], &self.vals[beta.0]);
        if vg.len() != c || vb.len() != c {
            return Err(shape_err("batchnorm", vx.shape(), vg.shape()));
        }
        let m = vx.len() / c;
        let eps = lit::<T>(BN_EPS);
        let mf = lit::<T>(m as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for (k, &v) in vx.data().iter().enumerate() {
            mean[k % c] = mean[k % c] + v;
        }
        for mu in mean.iter_mut() {
            *mu = *mu / mf;
        }
        for (k, &v) in vx.data().iter().enumerate() {
            let d = v - mean[k % c];
            var[k % c] = var[k % c] + d * d;
        }
        for s in var.iter_mut() {
            *s = *s / mf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut data = Vec::with_capacity(vx.len());
        for (k, &v) in vx.data().iter().enumerate() {
            let ch = k % c;
            data.push((v - mean[ch]) * inv_std[ch] * vg.data()[ch] + vb.data()[ch]);
        }
        let out = Tensor::new(vx.shape().to_vec(), data).expect("batchnorm shape");
        let mean_t = Tensor::new(vec![c], mean.clone()).expect("mean shape");
        let var_t = Tensor::new(vec![c], var.clone()).expect("var shape");
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        let out_var = self.push(
            "batchnorm_train",
            out,
            Box::new(move |vals, g, grads| {
                let mut dbeta = vec![T::zero(); c];
                let mut dgamma = vec![T::zero(); c];
                for (k, &gk) in g.data().iter().enumerate() {
                    let ch = k % c;
                    let xhat = (vals[xi].data()[k] - mean[ch]) * inv_std[ch];
                    dbeta[ch] = dbeta[ch] + gk;
                    dgamma[ch] = dgamma[ch] + gk * xhat;
                }
                for (k, &gk) in g.data().iter().enumerate() {
                    let ch = k % c;
                    let xhat = (vals[xi].data()[k] - mean[ch]) * inv_std[ch];
                    let dx = vals[gi].data()[ch] * inv_std[ch]
                        * (gk - dbeta[ch] / mf - xhat * dgamma[ch] / mf);
                    grads[xi].data_mut()[k] = grads[xi].data_mut()[k] + dx;
                }
                for ch in 0..c {
                    grads[gi].data_mut()[ch] = grads[gi].data_mut()[ch] + dgamma[ch];
                    grads[bi].data_mut()[ch] = grads[bi].data_mut()[ch] + dbeta[ch];
                }
            }),
        )?;
        Ok((out_var, mean_t, var_t))
    }

    /// Batch norm using frozen running statistics (eval mode).
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
    ) -> Result<Var, TensorError> {
        let vx = &self.vals[x.0];
        let c = *vx.shape().last().unwrap_or(&0);
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err("batchnorm_eval", vx.shape(), running_mean.shape()));
        }
        let (vg, vb) = (&self.vals[gamma.0], &self.vals[beta.0]);
        if vg.len() != c || vb.len() != c {
            return Err(shape_err("batchnorm_eval", vx.shape(), vg.shape()));
        }
        let eps = lit::<T>(BN_EPS);
        let inv_std: Vec<T> =
            running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mean = running_mean.data().to_vec();
        let mut data = Vec::with_capacity(vx.len());
        for (k, &v) in vx.data().iter().enumerate() {
            let ch = k % c;
            data.push((v - mean[ch]) * inv_std[ch] * vg.data()[ch] + vb.data()[ch]);
        }
        let out = Tensor::new(vx.shape().to_vec(), data).expect("batchnorm_eval shape");
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        self.push(
            "batchnorm_eval",
            out,
            Box::new(move |vals, g, grads| {
                for (k, &gk) in g.data().iter().enumerate() {
                    let ch = k % c;
                    let xhat = (vals[xi].data()[k] - mean[ch]) * inv_std[ch];
                    grads[xi].data_mut()[k] =
                        grads[xi].data_mut()[k] + gk * vals[gi].data()[ch] * inv_std[ch];
                    grads[gi].data_mut()[ch] = grads[gi].data_mut()[ch] + gk * xhat;
                    grads[bi].data_mut()[ch] = grads[bi].data_mut()[ch] + gk;
                }
            }),
        )
    }
}

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences at `point`; returns the max over coordinates of
/// `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`. Run this in the 64-bit build.
pub fn grad_check<T: Scalar>(
    f: &dyn Fn(&mut Tape<T>, Var) -> Result<Var, TensorError>,
    point: &Tensor<T>,
    step: f64,
) -> Result<T, TensorError> {
    let eval = |p: &Tensor<T>| -> Result<T, TensorError> {
        let mut tape = Tape::new();
        let x = tape.leaf(p.clone());
        let out = f(&mut tape, x)?;
        if !tape.value(out).is_scalar() {
            return Err(TensorError::Unsupported {
                op: "grad_check",
                detail: "function must be scalar-valued",
            });
        }
        Ok(tape.value(out).item())
    };
    // analytic gradient
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x)?;
    if !tape.value(out).is_scalar() {
        return Err(TensorError::Unsupported {
            op: "grad_check",
            detail: "function must be scalar-valued",
        });
    }
    let grads = tape.backward(out)?;
    let g_ad = grads.get(x).clone();
    let h = lit::<T>(step);
    let two = lit::<T>(2.0);
    let mut max_err = T::zero();
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] = plus.data()[i] + h;
        let mut minus = point.clone();
        minus.data_mut()[i] = minus.data()[i] - h;
        let g_fd = (eval(&plus)? - eval(&minus)?) / (two * h);
        let ga = g_ad.data()[i];
        let denom = T::one().max(ga.abs()).max(g_fd.abs());
        let err = (ga - g_fd).abs() / denom;
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

fn sigmoid_stable<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    out: &mut [T],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
) {
    for oh in 0..h {
        for ow in 0..w {
            let orow = &mut out[(oh * w + ow) * cout..(oh * w + ow + 1) * cout];
            for d0 in 0..k {
                let ih = oh + d0;
                if ih < pad || ih - pad >= h {
                    continue;
                }
                let ih = ih - pad;
                for d1 in 0..k {
                    let iw = ow + d1;
                    if iw < pad || iw - pad >= w {
                        continue;
                    }
                    let iw = iw - pad;
                    let irow = &x[(ih * w + iw) * cin..(ih * w + iw + 1) * cin];
                    let kbase = (d0 * k + d1) * cin * cout;
                    for (ci, &xv) in irow.iter().enumerate() {
                        let krow = &kernel[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (o, &kv) in orow.iter_mut().zip(krow.iter()) {
                            *o = *o + xv * kv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    g: &[T],
    grads: &mut [Tensor<T>],
    xi: usize,
    ki: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
) {
    let mut dx = vec![T::zero(); h * w * cin];
    let mut dk = vec![T::zero(); k * k * cin * cout];
    for oh in 0..h {
        for ow in 0..w {
            let grow = &g[(oh * w + ow) * cout..(oh * w + ow + 1) * cout];
            for d0 in 0..k {
                let ih = oh + d0;
                if ih < pad || ih - pad >= h {
                    continue;
                }
                let ih = ih - pad;
                for d1 in 0..k {
                    let iw = ow + d1;
                    if iw < pad || iw - pad >= w {
                        continue;
                    }
                    let iw = iw - pad;
                    let ibase = (ih * w + iw) * cin;
                    let kbase = (d0 * k + d1) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[ibase + ci];
                        let krow = &kernel[kbase + ci * cout..kbase + (ci + 1) * cout];
                        let dkrow = &mut dk[kbase + ci * cout..kbase + (ci + 1) * cout];
                        let mut acc = T::zero();
                        for co in 0..cout {
                            let gv = grow[co];
                            acc = acc + krow[co] * gv;
                            dkrow[co] = dkrow[co] + xv * gv;
                        }
                        dx[ibase + ci] = dx[ibase + ci] + acc;
                    }
                }
            }
        }
    }
    for (slot, v) in grads[xi].data_mut().iter_mut().zip(dx) {
        *slot = *slot + v;
    }
    for (slot, v) in grads[ki].data_mut().iter_mut().zip(dk) {
        *slot = *slot + v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 1], vec![5.0f64]).unwrap());
        let k = tape.leaf(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let y = tape.conv2d_same(x, k).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0]);
    }

    #[test]
    fn conv_all_ones_center_and_corners() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[3, 3, 1], 1.0f64));
        let k = tape.leaf(Tensor::full(&[3, 3, 1, 1], 1.0f64));
        let y = tape.conv2d_same(x, k).unwrap();
        let v = tape.value(y);
        assert_eq!(v.at3(1, 1, 0), 9.0);
        assert_eq!(v.at3(0, 0, 0), 4.0);
        assert_eq!(v.at3(0, 2, 0), 4.0);
        assert_eq!(v.at3(2, 0, 0), 4.0);
        assert_eq!(v.at3(2, 2, 0), 4.0);
    }

    #[test]
    fn conv_zero_kernel_annihilates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[4, 4, 2], 3.25f64));
        let k = tape.leaf(Tensor::zeros(&[3, 3, 2, 4]));
        let y = tape.conv2d_same(x, k).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[4, 4, 2]));
        let k = tape.leaf(Tensor::zeros(&[3, 3, 3, 4]));
        assert!(matches!(
            tape.conv2d_same(x, k),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn maxpool_basic_and_tie_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2, 2, 1], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);

        // all-equal window: gradient goes to the first element row-major
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[2, 2, 1], 1.0f64));
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        let s = tape.sum(y).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_constant_image() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[4, 6, 3], 0.7f64));
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn maxpool_rejects_indivisible() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3, 4, 1]));
        assert!(tape.maxpool2d(x, 2, 2).is_err());
    }

    #[test]
    fn batchnorm_two_point_batch() {
        // batch {1, 3}, single channel: mean 2, population variance 1
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t2(2, 1, &[1.0, 3.0]));
        let gamma = tape.leaf(Tensor::full(&[1], 1.0f64));
        let beta = tape.leaf(Tensor::zeros(&[1]));
        let (y, mean, var) = tape.batchnorm_train(x, gamma, beta).unwrap();
        let v = tape.value(y);
        assert!((v.data()[0] + 1.0).abs() < 1e-4);
        assert!((v.data()[1] - 1.0).abs() < 1e-4);
        assert!((mean.item() - 2.0).abs() < 1e-12);
        assert!((var.item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_gamma_zero_gives_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t2(3, 2, &[1.0, -2.0, 0.5, 4.0, 9.0, 0.0]));
        let gamma = tape.leaf(Tensor::zeros(&[2]));
        let beta = tape.leaf(Tensor::new(vec![2], vec![0.25, -1.5]).unwrap());
        let (y, _, _) = tape.batchnorm_train(x, gamma, beta).unwrap();
        for i in 0..3 {
            assert_eq!(tape.value(y).at2(i, 0), 0.25);
            assert_eq!(tape.value(y).at2(i, 1), -1.5);
        }
    }

    #[test]
    fn batchnorm_identity_on_normalized_input() {
        let mut tape = Tape::<f64>::new();
        // zero-mean unit-population-variance column
        let x = tape.leaf(t2(2, 1, &[-1.0, 1.0]));
        let gamma = tape.leaf(Tensor::full(&[1], 1.0f64));
        let beta = tape.leaf(Tensor::zeros(&[1]));
        let (y, _, _) = tape.batchnorm_train(x, gamma, beta).unwrap();
        assert!((tape.value(y).data()[0] + 1.0).abs() < 1e-5);
        assert!((tape.value(y).data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn dense_examples() {
        // identity weight, zero bias
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        // [[1,2]] * [[1],[1]] + [3] = [[6]]
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t2(1, 2, &[1.0, 2.0]));
        let w = tape.leaf(t2(2, 1, &[1.0, 1.0]));
        let b = tape.leaf(Tensor::full(&[1], 3.0f64));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);

        // zero input -> bias per row
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3, 2]));
        let w = tape.leaf(t2(2, 2, &[5.0, -1.0, 2.0, 7.0]));
        let b = tape.leaf(Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
        let y = tape.dense(x, w, b).unwrap();
        for i in 0..3 {
            assert_eq!(tape.value(y).at2(i, 0), 0.5);
            assert_eq!(tape.value(y).at2(i, 1), -0.5);
        }
    }

    #[test]
    fn dense_rejects_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]));
        let w = tape.leaf(Tensor::zeros(&[2, 2]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.dense(x, w, b).is_err());
    }

    #[test]
    fn activation_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(0.0).reshaped(vec![1, 1]).unwrap());
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 0.0);

        let x = tape.leaf(t2(1, 2, &[0.0, 0.0]));
        let y = tape.log_softmax_rows(x).unwrap();
        let expect = -(2.0f64).ln();
        assert!((tape.value(y).data()[0] - expect).abs() < 1e-12);
        assert!((tape.value(y).data()[1] - expect).abs() < 1e-12);

        // saturation without overflow
        let x = tape.leaf(t2(1, 1, &[1000.0]));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 1.0);
        let x = tape.leaf(t2(1, 1, &[-1000.0]));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 0.0);
    }

    #[test]
    fn log_softmax_rows_normalize_at_large_magnitude() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t2(2, 3, &[1e4, -1e4, 3.0, 0.0, 5.0, -2.0]));
        let y = tape.log_softmax_rows(x).unwrap();
        for i in 0..2 {
            let mut lse = 0.0f64;
            for j in 0..3 {
                lse += tape.value(y).at2(i, j).exp();
            }
            assert!(lse.ln().abs() < 1e-6);
        }
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let point = Tensor::new(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let f = |tape: &mut Tape<f64>, x: Var| {
            let sq = tape.mul(x, x)?;
            tape.sum(sq)
        };
        let err = grad_check(&f, &point, 1e-6).unwrap();
        assert!(err < 1e-7, "relative error {err}");
        // check analytic gradient values directly
        let mut tape = Tape::new();
        let x = tape.leaf(point);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn grad_of_constant_function_is_zero() {
        let point = Tensor::new(vec![4], vec![1.0f64, -1.0, 0.5, 2.0]).unwrap();
        let f = |tape: &mut Tape<f64>, _x: Var| -> Result<Var, TensorError> {
            let c = tape.leaf(Tensor::scalar(7.0));
            Ok(c)
        };
        let mut tape = Tape::new();
        let x = tape.leaf(point);
        let out = f(&mut tape, x).unwrap();
        let grads = tape.backward(out).unwrap();
        assert!(grads.get(x).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grad_check_rejects_non_scalar() {
        let point = Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap();
        let f = |_tape: &mut Tape<f64>, x: Var| Ok(x);
        assert!(grad_check(&f, &point, 1e-6).is_err());
    }

    #[test]
    fn nan_input_is_reported() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t2(1, 2, &[f64::NAN, 1.0]));
        assert!(matches!(tape.scale(x, 2.0), Err(TensorError::NonFinite { .. })));
        let x = tape.leaf(t2(1, 2, &[f64::INFINITY, 1.0]));
        assert!(matches!(tape.tanh(x), Ok(_)));
        let x = tape.leaf(t2(1, 1, &[1e308]));
        assert!(matches!(tape.mul(x, x), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn conv_linearity() {
        // f(a*x) == a*f(x) and f(x+y) == f(x)+f(y) within 1e-6
        let data_x: Vec<f64> = (0..48).map(|i| ((i * 37 % 17) as f64) / 7.0 - 1.0).collect();
        let data_y: Vec<f64> = (0..48).map(|i| ((i * 53 % 23) as f64) / 9.0 - 1.0).collect();
        let kern: Vec<f64> = (0..9 * 2 * 2)
            .map(|i| ((i * 29 % 13) as f64) / 6.0 - 1.0)
            .collect();
        let conv = |x: Tensor<f64>| {
            let mut tape = Tape::<f64>::new();
            let xv = tape.leaf(x);
            let kv = tape.leaf(Tensor::new(vec![3, 3, 2, 2], kern.clone()).unwrap());
            let y = tape.conv2d_same(xv, kv).unwrap();
            tape.value(y).clone()
        };
        let x = Tensor::new(vec![4, 6, 2], data_x).unwrap();
        let y = Tensor::new(vec![4, 6, 2], data_y).unwrap();
        let a = 2.5;
        let fx = conv(x.clone());
        let fax = conv(x.map(|v| v * a));
        for (u, v) in fax.data().iter().zip(fx.data()) {
            assert!((u - a * v).abs() < 1e-6);
        }
        let mut xy = x.clone();
        xy.add_assign(&y);
        let fxy = conv(xy);
        let fy = conv(y);
        for ((s, u), v) in fxy.data().iter().zip(fx.data()).zip(fy.data()) {
            assert!((s - (u + v)).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_bit_identical_across_runs() {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(Tensor::new(
                vec![4, 4, 2],
                (0..32).map(|i| (i as f32).sin()).collect(),
            )
            .unwrap());
            let k = tape.leaf(Tensor::new(
                vec![3, 3, 2, 3],
                (0..54).map(|i| (i as f32).cos()).collect(),
            )
            .unwrap());
            let y = tape.conv2d_same(x, k).unwrap();
            let p = tape.maxpool2d(y, 2, 2).unwrap();
            tape.value(p).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
