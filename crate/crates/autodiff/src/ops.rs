//! Forward kernels (as `Var` methods) and their backward rules.

use crate::tape::{accumulate, Node, NormState, Op};
use crate::{AutodiffError, Real, Tensor, Var};

/// Epsilon added to the variance in every normalization op.
pub const NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x);
    (y, dy)
}

impl<'t, T: Real> Var<'t, T> {
    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let needs = self.needs_grad();
        self.tape.push_op(value, op, needs)
    }

    fn binary(&self, other: &Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let needs = self.needs_grad() || other.needs_grad();
        self.tape.push_op(value, op, needs)
    }

    /// `[.., k] · [k, n] -> [.., n]`; leading dims of `self` are treated as rows.
    pub fn matmul(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>, AutodiffError> {
        let value = {
            let a = self.value();
            let b = rhs.value();
            let (sa, sb) = (a.shape(), b.shape());
            if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
                return Err(mismatch("matmul", format!("{sa:?} x {sb:?}")));
            }
            let (k, n) = (sb[0], sb[1]);
            let rows = a.numel() / k.max(1);
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            let mut out = Tensor::zeros(&shape);
            T::gemm(
                rows,
                k,
                n,
                T::one(),
                a.data(),
                (k as isize, 1),
                b.data(),
                (n as isize, 1),
                T::zero(),
                out.data_mut(),
                (n as isize, 1),
            );
            out
        };
        Ok(self.binary(&rhs, value, Op::MatMul { a: self.id, b: rhs.id }))
    }

    /// Batched product over the leading axis: `[g, m, k] · [g, k, n]`, or
    /// `[g, m, k] · [g, n, k]ᵀ` when `trans_b` is set.
    pub fn bmm(&self, rhs: Var<'t, T>, trans_b: bool) -> Result<Var<'t, T>, AutodiffError> {
        let value = {
            let a = self.value();
            let b = rhs.value();
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
                return Err(mismatch("bmm", format!("{sa:?} x {sb:?}")));
            }
            let (g, m, k) = (sa[0], sa[1], sa[2]);
            let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
            if kb != k {
                return Err(mismatch("bmm", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
            }
            let b_strides = if trans_b { (1, k as isize) } else { (n as isize, 1) };
            let mut out = Tensor::zeros(&[g, m, n]);
            let od = out.data_mut();
            for gi in 0..g {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    &a.data()[gi * m * k..(gi + 1) * m * k],
                    (k as isize, 1),
                    &b.data()[gi * k * n..(gi + 1) * k * n],
                    b_strides,
                    T::zero(),
                    &mut od[gi * m * n..(gi + 1) * m * n],
                    (n as isize, 1),
                );
            }
            out
        };
        Ok(self.binary(&rhs, value, Op::BatchMatMul { a: self.id, b: rhs.id, trans_b }))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Var<'t, T>, AutodiffError> {
        let value = {
            let a = self.value();
            if a.ndim() != 2 {
                return Err(mismatch("transpose", format!("{:?}", a.shape())));
            }
            transpose2(a.data(), a.shape()[0], a.shape()[1])?
        };
        Ok(self.unary(value, Op::Transpose { a: self.id }))
    }

    /// Elementwise sum; `rhs` may have any suffix of `self`'s shape and is
    /// broadcast over the remaining leading axes (bias rows, positional tables).
    pub fn add(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>, AutodiffError> {
        let value = {
            let a = self.value();
            let b = rhs.value();
            let (sa, sb) = (a.shape(), b.shape());
            if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
                return Err(mismatch("add", format!("{sa:?} + {sb:?}")));
            }
            let w = b.numel().max(1);
            let mut out = a.clone();
            for chunk in out.data_mut().chunks_mut(w) {
                for (o, &x) in chunk.iter_mut().zip(b.data()) {
                    *o += x;
                }
            }
            out
        };
        Ok(self.binary(&rhs, value, Op::AddBroadcast { a: self.id, b: rhs.id }))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>, AutodiffError> {
        let value = {
            let a = self.value();
            let b = rhs.value();
            if a.shape() != b.shape() {
                return Err(mismatch("mul", format!("{:?} * {:?}", a.shape(), b.shape())));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
            Tensor::new(a.shape(), data)?
        };
        Ok(self.binary(&rhs, value, Op::Mul { a: self.id, b: rhs.id }))
    }

    pub fn scale(&self, factor: T) -> Var<'t, T> {
        let value = self.value().map(|x| x * factor);
        self.unary(value, Op::Scale { a: self.id, factor })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>, AutodiffError> {
        let value = self.to_tensor().reshape(shape)?;
        Ok(self.unary(value, Op::Reshape { a: self.id }))
    }

    /// Softmax along the last axis, with per-row max subtraction.
    pub fn softmax(&self) -> Result<Var<'t, T>, AutodiffError> {
        let value = {
            let a = self.value();
            let n = *a.shape().last().ok_or_else(|| mismatch("softmax", "scalar input".into()))?;
            let mut out = a.clone();
            for row in out.data_mut().chunks_mut(n.max(1)) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
            out
        };
        Ok(self.unary(value, Op::Softmax { a: self.id }))
    }

    /// Affine normalization over the last axis with per-feature gain and bias.
    pub fn layer_norm(&self, gain: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>, AutodiffError> {
        let shape = self.shape();
        let d = *shape.last().ok_or_else(|| mismatch("layer_norm", "scalar input".into()))?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(mismatch(
                "layer_norm",
                format!("input {shape:?}, gain {:?}, bias {:?}", gain.shape(), bias.shape()),
            ));
        }
        let outer = shape.iter().product::<usize>() / d.max(1);
        let needs = self.needs_grad() || gain.needs_grad() || bias.needs_grad();
        Ok(self.normalize(outer, d, 1, Some((gain, bias)), needs))
    }

    /// Non-affine standardization of each channel over time for `[B, T, C]` input.
    pub fn instance_norm(&self) -> Result<Var<'t, T>, AutodiffError> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(mismatch("instance_norm", format!("expected [B, T, C], got {shape:?}")));
        }
        let needs = self.needs_grad();
        Ok(self.normalize(shape[0], shape[1], shape[2], None, needs))
    }

    fn normalize(
        &self,
        outer: usize,
        len: usize,
        inner: usize,
        affine: Option<(Var<'t, T>, Var<'t, T>)>,
        needs: bool,
    ) -> Var<'t, T> {
        let (value, xhat, rstd) = {
            let x = self.value();
            let xd = x.data();
            let mut xhat = vec![T::zero(); xd.len()];
            let mut rstd = vec![T::zero(); outer * inner];
            let inv_len = 1.0 / len as f64;
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    // f64 accumulation keeps the mean of a constant group exact.
                    let mean = (0..len).map(|l| xd[idx(l)].as_f64()).sum::<f64>() * inv_len;
                    let var = (0..len)
                        .map(|l| {
                            let c = xd[idx(l)].as_f64() - mean;
                            c * c
                        })
                        .sum::<f64>()
                        * inv_len;
                    let r = 1.0 / (var + NORM_EPS).sqrt();
                    rstd[o * inner + i] = T::of(r);
                    for l in 0..len {
                        xhat[idx(l)] = T::of((xd[idx(l)].as_f64() - mean) * r);
                    }
                }
            }
            let mut out = Tensor::new(x.shape(), xhat.clone()).expect("same shape");
            if let Some((g, b)) = &affine {
                let (g, b) = (g.value(), b.value());
                for (pos, y) in out.data_mut().iter_mut().enumerate() {
                    let l = (pos / inner) % len;
                    *y = *y * g.data()[l] + b.data()[l];
                }
            }
            (out, xhat, rstd)
        };
        let state = NormState {
            x: self.id,
            gain: affine.map(|(g, _)| g.id),
            bias: affine.map(|(_, b)| b.id),
            outer,
            len,
            inner,
            xhat,
            rstd,
        };
        self.tape.push_op(value, Op::Normalize(state), needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t, T> {
        let value = self.value().map(|x| gelu_parts(x).0);
        self.unary(value, Op::Gelu { a: self.id })
    }

    /// Mean over one axis; the axis is removed from the output shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t, T>, AutodiffError> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(mismatch("mean_axis", format!("axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let value = {
            let x = self.value();
            let xd = x.data();
            let mut out = vec![T::zero(); outer * inner];
            let inv = T::one() / T::of(len as f64);
            for o in 0..outer {
                for l in 0..len {
                    let src = &xd[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
            for v in &mut out {
                *v *= inv;
            }
            let mut out_shape = shape.clone();
            out_shape.remove(axis);
            Tensor::new(&out_shape, out)?
        };
        Ok(self.unary(value, Op::Mean { a: self.id, outer, len, inner }))
    }

    /// Sum of all elements to a scalar.
    pub fn sum(&self) -> Var<'t, T> {
        let value = Tensor::scalar(self.value().sum());
        self.unary(value, Op::Sum { a: self.id })
    }

    /// `(1/B) Σ_m w_m · (−log softmax(logits_m)[y_m])` for `[B, K]` logits.
    ///
    /// `sample_weights[m]` is the weight of sample `m`; the mean is over the
    /// batch size, not the weight sum.
    pub fn weighted_cross_entropy(&self, targets: &[usize], sample_weights: &[T]) -> Result<Var<'t, T>, AutodiffError> {
        let (value, probs) = {
            let z = self.value();
            let s = z.shape();
            if s.len() != 2 || s[0] != targets.len() || s[0] != sample_weights.len() || s[0] == 0 {
                return Err(mismatch(
                    "weighted_cross_entropy",
                    format!("logits {s:?}, {} targets, {} weights", targets.len(), sample_weights.len()),
                ));
            }
            let (b, k) = (s[0], s[1]);
            if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
                return Err(AutodiffError::BadLabel { label: bad, classes: k });
            }
            let mut probs = vec![T::zero(); b * k];
            let mut total = T::zero();
            for (m, row) in z.data().chunks(k).enumerate() {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
                let lse = max + sum_exp.ln();
                for (p, &v) in probs[m * k..(m + 1) * k].iter_mut().zip(row) {
                    *p = (v - lse).exp();
                }
                total += sample_weights[m] * (lse - row[targets[m]]);
            }
            (Tensor::scalar(total / T::of(b as f64)), probs)
        };
        let op =
            Op::CrossEntropy { logits: self.id, targets: targets.to_vec(), weights: sample_weights.to_vec(), probs };
        Ok(self.unary(value, op))
    }
}

fn transpose2<T: Real>(data: &[T], rows: usize, cols: usize) -> Result<Tensor<T>, AutodiffError> {
    let mut out = vec![T::zero(); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    Tensor::new(&[cols, rows], out)
}

/// Applies the backward rule of node `id` given its output gradient.
pub(crate) fn backprop<T: Real>(nodes: &[Node<T>], id: usize, grad: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let needs = |i: usize| nodes[i].needs_grad;
    let val = |i: usize| &nodes[i].value;
    let gd = grad.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let (k, n) = (bv.shape()[0], bv.shape()[1]);
            let rows = av.numel() / k.max(1);
            if needs(*a) {
                let mut da = Tensor::zeros(av.shape());
                T::gemm(
                    rows,
                    n,
                    k,
                    T::one(),
                    gd,
                    (n as isize, 1),
                    bv.data(),
                    (1, n as isize),
                    T::zero(),
                    da.data_mut(),
                    (k as isize, 1),
                );
                accumulate(grads, *a, da);
            }
            if needs(*b) {
                let mut db = Tensor::zeros(bv.shape());
                T::gemm(
                    k,
                    rows,
                    n,
                    T::one(),
                    av.data(),
                    (1, k as isize),
                    gd,
                    (n as isize, 1),
                    T::zero(),
                    db.data_mut(),
                    (n as isize, 1),
                );
                accumulate(grads, *b, db);
            }
        }
        Op::BatchMatMul { a, b, trans_b } => {
            let (av, bv) = (val(*a), val(*b));
            let (g, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let n = grad.shape()[2];
            let (ad, bd) = (av.data(), bv.data());
            if needs(*a) {
                let mut da = Tensor::zeros(av.shape());
                // dA = dC · B_effᵀ
                let bt_strides = if *trans_b { (k as isize, 1) } else { (1, n as isize) };
                let dd = da.data_mut();
                for gi in 0..g {
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        &gd[gi * m * n..(gi + 1) * m * n],
                        (n as isize, 1),
                        &bd[gi * k * n..(gi + 1) * k * n],
                        bt_strides,
                        T::zero(),
                        &mut dd[gi * m * k..(gi + 1) * m * k],
                        (k as isize, 1),
                    );
                }
                accumulate(grads, *a, da);
            }
            if needs(*b) {
                let mut db = Tensor::zeros(bv.shape());
                let dd = db.data_mut();
                for gi in 0..g {
                    let a_g = &ad[gi * m * k..(gi + 1) * m * k];
                    let c_g = &gd[gi * m * n..(gi + 1) * m * n];
                    let out = &mut dd[gi * k * n..(gi + 1) * k * n];
                    if *trans_b {
                        // stored [n, k]: dB = dCᵀ · A
                        T::gemm(
                            n,
                            m,
                            k,
                            T::one(),
                            c_g,
                            (1, n as isize),
                            a_g,
                            (k as isize, 1),
                            T::zero(),
                            out,
                            (k as isize, 1),
                        );
                    } else {
                        // stored [k, n]: dB = Aᵀ · dC
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            a_g,
                            (1, k as isize),
                            c_g,
                            (n as isize, 1),
                            T::zero(),
                            out,
                            (n as isize, 1),
                        );
                    }
                }
                accumulate(grads, *b, db);
            }
        }
        Op::Transpose { a } => {
            if needs(*a) {
                let s = grad.shape();
                accumulate(grads, *a, transpose2(gd, s[0], s[1]).expect("2-D"));
            }
        }
        Op::AddBroadcast { a, b } => {
            if needs(*a) {
                accumulate(grads, *a, grad.clone().reshape(val(*a).shape()).expect("same size"));
            }
            if needs(*b) {
                let bv = val(*b);
                let w = bv.numel().max(1);
                let mut db = Tensor::zeros(bv.shape());
                for chunk in gd.chunks(w) {
                    for (acc, &x) in db.data_mut().iter_mut().zip(chunk) {
                        *acc += x;
                    }
                }
                accumulate(grads, *b, db);
            }
        }
        Op::Mul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                let d = gd.iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
                accumulate(grads, *a, Tensor::new(av.shape(), d).expect("same shape"));
            }
            if needs(*b) {
                let d = gd.iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
                accumulate(grads, *b, Tensor::new(bv.shape(), d).expect("same shape"));
            }
        }
        Op::Scale { a, factor } => {
            if needs(*a) {
                accumulate(grads, *a, grad.map(|g| g * *factor));
            }
        }
        Op::Reshape { a } => {
            if needs(*a) {
                accumulate(grads, *a, grad.clone().reshape(val(*a).shape()).expect("same size"));
            }
        }
        Op::Concat { parts } => {
            let total = *grad.shape().last().expect("concat output has an axis");
            let rows = grad.numel() / total.max(1);
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let w = *pv.shape().last().expect("concat input has an axis");
                if needs(p) {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, Tensor::new(pv.shape(), d).expect("same shape"));
                }
                offset += w;
            }
        }
        Op::Softmax { a } => {
            if needs(*a) {
                let y = &nodes[id].value;
                let n = *y.shape().last().expect("softmax has an axis");
                let mut d = vec![T::zero(); y.numel()];
                for ((dr, yr), gr) in d.chunks_mut(n).zip(y.data().chunks(n)).zip(gd.chunks(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, *a, Tensor::new(y.shape(), d).expect("same shape"));
            }
        }
        Op::Normalize(st) => backprop_normalize(nodes, st, grad, grads),
        Op::Gelu { a } => {
            if needs(*a) {
                let x = val(*a);
                let d = x.data().iter().zip(gd).map(|(&xv, &g)| g * gelu_parts(xv).1).collect();
                accumulate(grads, *a, Tensor::new(x.shape(), d).expect("same shape"));
            }
        }
        Op::Mean { a, outer, len, inner } => {
            if needs(*a) {
                let inv = T::one() / T::of(*len as f64);
                let mut d = Vec::with_capacity(outer * len * inner);
                for o in 0..*outer {
                    for _ in 0..*len {
                        d.extend(gd[o * inner..(o + 1) * inner].iter().map(|&g| g * inv));
                    }
                }
                accumulate(grads, *a, Tensor::new(val(*a).shape(), d).expect("same size"));
            }
        }
        Op::Sum { a } => {
            if needs(*a) {
                accumulate(grads, *a, Tensor::full(val(*a).shape(), gd[0]));
            }
        }
        Op::CrossEntropy { logits, targets, weights, probs } => {
            if needs(*logits) {
                let z = val(*logits);
                let (b, k) = (z.shape()[0], z.shape()[1]);
                let scale = gd[0] / T::of(b as f64);
                let mut d = probs.clone();
                for m in 0..b {
                    let row = &mut d[m * k..(m + 1) * k];
                    row[targets[m]] -= T::one();
                    let w = weights[m] * scale;
                    for v in row.iter_mut() {
                        *v *= w;
                    }
                }
                accumulate(grads, *logits, Tensor::new(z.shape(), d).expect("same shape"));
            }
        }
    }
}

fn backprop_normalize<T: Real>(
    nodes: &[Node<T>],
    st: &NormState<T>,
    grad: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let gd = grad.data();
    let (outer, len, inner) = (st.outer, st.len, st.inner);
    let gain = st.gain.map(|g| nodes[g].value.data());
    if let (Some(g), Some(b)) = (st.gain, st.bias) {
        let mut dg = vec![T::zero(); len];
        let mut db = vec![T::zero(); len];
        for (pos, (&dy, &xh)) in gd.iter().zip(&st.xhat).enumerate() {
            let l = (pos / inner) % len;
            dg[l] += dy * xh;
            db[l] += dy;
        }
        if nodes[g].needs_grad {
            accumulate(grads, g, Tensor::new(&[len], dg).expect("len"));
        }
        if nodes[b].needs_grad {
            accumulate(grads, b, Tensor::new(&[len], db).expect("len"));
        }
    }
    if !nodes[st.x].needs_grad {
        return;
    }
    let inv_len = T::one() / T::of(len as f64);
    let mut dx = vec![T::zero(); gd.len()];
    let mut dxhat = vec![T::zero(); len];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for l in 0..len {
                let v = match gain {
                    Some(g) => gd[idx(l)] * g[l],
                    None => gd[idx(l)],
                };
                dxhat[l] = v;
                m1 += v;
                m2 += v * st.xhat[idx(l)];
            }
            m1 *= inv_len;
            m2 *= inv_len;
            let r = st.rstd[o * inner + i];
            for l in 0..len {
                dx[idx(l)] = r * (dxhat[l] - m1 - st.xhat[idx(l)] * m2);
            }
        }
    }
    accumulate(grads, st.x, Tensor::new(nodes[st.x].value.shape(), dx).expect("same shape"));
}
