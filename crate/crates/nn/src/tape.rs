//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its output value and enough
//! context to push gradients back to its inputs. Calling
//! [`Tape::backward`] walks the nodes in reverse creation order.

use crate::error::{NnError, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

/// Padding along the leading spatial axis (time) of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Padding {
    /// No padding; stride must tile the extent exactly.
    Valid,
    /// Output keeps the time length: `(k−1)/2` rows on top, the rest below.
    TimeSame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output extents from `h_l = (h_{l−1} − n_l)/s_l + 1`.
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: (usize, usize), padding: Padding) -> Result<Self> {
        let [n, h, w, cin] = x_shape[..] else {
            return Err(NnError::shape(format!("conv input must be (N,H,W,C), got {x_shape:?}")));
        };
        let [kh, kw, kcin, cout] = w_shape[..] else {
            return Err(NnError::shape(format!("conv filters must be (kh,kw,Cin,Cout), got {w_shape:?}")));
        };
        let (sh, sw) = stride;
        if kcin != cin {
            return Err(NnError::shape(format!("conv expects {kcin} input channels, got {cin}")));
        }
        if sh == 0 || sw == 0 || kh == 0 || kw == 0 {
            return Err(NnError::shape("zero stride or kernel extent".to_string()));
        }
        let extent = |size: usize, k: usize, s: usize, axis: &str| -> Result<usize> {
            if size < k || !(size - k).is_multiple_of(s) {
                return Err(NnError::shape(format!(
                    "{axis}: kernel {k} with stride {s} does not tile extent {size}"
                )));
            }
            Ok((size - k) / s + 1)
        };
        let (oh, pad_top) = match padding {
            Padding::Valid => (extent(h, kh, sh, "time")?, 0),
            Padding::TimeSame => {
                if sh != 1 {
                    return Err(NnError::shape("same padding needs unit time stride".to_string()));
                }
                (h, (kh - 1) / 2)
            }
        };
        let ow = extent(w, kw, sw, "space")?;
        Ok(ConvGeom { n, h, w, cin, kh, kw, cout, sh, sw, pad_top, oh, ow })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.oh, self.ow, self.cout]
    }
}

pub fn conv2d_forward<F: Scalar>(x: &[F], w: &[F], b: &[F], g: &ConvGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.n * g.oh * g.ow * g.cout];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * g.cout;
                let acc = &mut out[o..o + g.cout];
                acc.copy_from_slice(b);
                for kh in 0..g.kh {
                    let ih = (oh * g.sh + kh) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for kw in 0..g.kw {
                        let iw = ow * g.sw + kw;
                        let xi = ((n * g.h + ih as usize) * g.w + iw) * g.cin;
                        let wi = (kh * g.kw + kw) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let xv = x[xi + ci];
                            let wrow = &w[wi + ci * g.cout..wi + (ci + 1) * g.cout];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a = *a + xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    dout: &[F],
    g: &ConvGeom,
    dx: &mut [F],
    dw: &mut [F],
    db: &mut [F],
) {
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * g.cout;
                let d = &dout[o..o + g.cout];
                for (acc, &dv) in db.iter_mut().zip(d) {
                    *acc = *acc + dv;
                }
                for kh in 0..g.kh {
                    let ih = (oh * g.sh + kh) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for kw in 0..g.kw {
                        let iw = ow * g.sw + kw;
                        let xi = ((n * g.h + ih as usize) * g.w + iw) * g.cin;
                        let wi = (kh * g.kw + kw) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let xv = x[xi + ci];
                            let wrow = &w[wi + ci * g.cout..wi + (ci + 1) * g.cout];
                            let dwrow = &mut dw[wi + ci * g.cout..wi + (ci + 1) * g.cout];
                            let mut sx = F::zero();
                            for ((dwv, &wv), &dv) in dwrow.iter_mut().zip(wrow).zip(d) {
                                *dwv = *dwv + xv * dv;
                                sx = sx + wv * dv;
                            }
                            dx[xi + ci] = dx[xi + ci] + sx;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    LeakyRelu { x: usize, slope: F },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<F>, inv_std: Vec<F>, training: bool },
    MulConst { x: usize, c: Vec<F> },
    MaxPoolTime { x: usize, argmax: Vec<usize> },
    Concat { xs: Vec<usize>, widths: Vec<usize> },
    Reshape { x: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    AddBias { x: usize, b: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    SliceLast { x: usize, start: usize },
    TimeStep { x: usize, t: usize },
    Softmax { x: usize },
    Cce { p: usize, labels: Vec<usize>, weights: Vec<F> },
    Scale { x: usize, c: F },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Batch statistics produced by a training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

/// Probability floor inside the logarithm of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: (usize, usize), padding: Padding) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        if self.value(b).len() != geom.cout {
            return Err(NnError::shape(format!("conv bias has {} entries for {} filters", self.value(b).len(), geom.cout)));
        }
        let out = conv2d_forward(&self.value(x).data, &self.value(w).data, &self.value(b).data, &geom);
        Ok(self.push(Tensor::new(geom.out_shape(), out), Op::Conv2d { x: x.0, w: w.0, b: b.0, geom }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: F) -> Var {
        let v = self.value(x);
        let data = v.data.iter().map(|&a| if a > F::zero() { a } else { a * slope }).collect();
        let out = Tensor::new(v.shape.clone(), data);
        self.push(out, Op::LeakyRelu { x: x.0, slope })
    }

    /// Batch normalization over every axis but the last (channels).
    ///
    /// With `running = None` batch statistics are used and returned; otherwise
    /// the supplied moving mean and variance are applied.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: F,
        running: Option<(&[F], &[F])>,
    ) -> Result<(Var, Option<BatchStats<F>>)> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(NnError::shape(format!("batch norm over {c} channels got mismatched scale/offset")));
        }
        let rows = xv.len() / c;
        let (mean, var, stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), None),
            None => {
                let mut mean = vec![F::zero(); c];
                for row in xv.data.chunks_exact(c) {
                    for (m, &a) in mean.iter_mut().zip(row) {
                        *m = *m + a;
                    }
                }
                let nf = F::from_usize(rows).unwrap();
                mean.iter_mut().for_each(|m| *m = *m / nf);
                let mut var = vec![F::zero(); c];
                for row in xv.data.chunks_exact(c) {
                    for ((s, &a), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s = *s + (a - m) * (a - m);
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / nf);
                let stats = BatchStats { mean: mean.clone(), var: var.clone() };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let g = &self.value(gamma).data;
        let bt = &self.value(beta).data;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data.chunks_exact(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + bt[ch]);
            }
        }
        let shape = xv.shape.clone();
        let training = stats.is_some();
        let v = self.push(
            Tensor::new(shape, out),
            Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std, training },
        );
        Ok((v, stats))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Vec<F>) -> Var {
        let v = self.value(x);
        assert_eq!(v.len(), c.len());
        let data = v.data.iter().zip(&c).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(v.shape.clone(), data);
        self.push(out, Op::MulConst { x: x.0, c })
    }

    /// Rolling maximum of width `k` along the time axis of `(N,T,W,C)`,
    /// unit stride, same padding.
    pub fn max_pool_time(&mut self, x: Var, k: usize) -> Result<Var> {
        let v = self.value(x);
        let [n, t, w, c] = v.shape[..] else {
            return Err(NnError::shape(format!("max pool input must be (N,T,W,C), got {:?}", v.shape)));
        };
        let pad = (k - 1) / 2;
        let mut out = Vec::with_capacity(v.len());
        let mut argmax = Vec::with_capacity(v.len());
        for ni in 0..n {
            for ti in 0..t {
                for wi in 0..w {
                    for ci in 0..c {
                        let mut best = F::neg_infinity();
                        let mut arg = 0;
                        for kk in 0..k {
                            let s = ti as isize + kk as isize - pad as isize;
                            if s < 0 || s >= t as isize {
                                continue;
                            }
                            let idx = ((ni * t + s as usize) * w + wi) * c + ci;
                            if v.data[idx] > best {
                                best = v.data[idx];
                                arg = idx;
                            }
                        }
                        out.push(best);
                        argmax.push(arg);
                    }
                }
            }
        }
        let shape = v.shape.clone();
        Ok(self.push(Tensor::new(shape, out), Op::MaxPoolTime { x: x.0, argmax }))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let lead = &self.shape(xs[0])[..self.shape(xs[0]).len() - 1];
        let lead = lead.to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s[..s.len() - 1] != lead[..] {
                return Err(NnError::shape(format!("concat of {:?} with leading {lead:?}", s)));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &wd) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data[r * wd..(r + 1) * wd]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(Tensor::new(shape, out), Op::Concat { xs: xs.iter().map(|v| v.0).collect(), widths }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return Err(NnError::shape(format!("cannot reshape {:?} to {shape:?}", v.shape)));
        }
        let out = Tensor::new(shape.to_vec(), v.data.clone());
        Ok(self.push(out, Op::Reshape { x: x.0 }))
    }

    /// `(m,k) × (k,n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (&[m, k], &[k2, n]) = (sa, sb) else {
            return Err(NnError::shape(format!("matmul needs matrices, got {sa:?} and {sb:?}")));
        };
        if k != k2 {
            return Err(NnError::shape(format!("matmul inner dims {sa:?} × {sb:?}")));
        }
        let (av, bv) = (&self.value(a).data, &self.value(b).data);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == F::zero() {
                    continue;
                }
                for (o, &y) in orow.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o = *o + x * y;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out), Op::MatMul { a: a.0, b: b.0, m, k, n }))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.value(b).len() != c {
            return Err(NnError::shape(format!("bias of {} for last dim {c}", self.value(b).len())));
        }
        let bv = &self.value(b).data;
        let v = self.value(x);
        let mut out = v.data.clone();
        for row in out.chunks_exact_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv) {
                *o = *o + bb;
            }
        }
        let shape = v.shape.clone();
        Ok(self.push(Tensor::new(shape, out), Op::AddBias { x: x.0, b: b.0 }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data), Op::Add { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data), Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data.iter().map(|&a| sigmoid(a)).collect();
        let out = Tensor::new(v.shape.clone(), data);
        self.push(out, Op::Sigmoid { x: x.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data.iter().map(|&a| a.tanh()).collect();
        let out = Tensor::new(v.shape.clone(), data);
        self.push(out, Op::Tanh { x: x.0 })
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let c = v.last_dim();
        if start + len > c {
            return Err(NnError::shape(format!("slice {start}..{} of last dim {c}", start + len)));
        }
        let data = v.data.chunks_exact(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let mut shape = v.shape.clone();
        *shape.last_mut().unwrap() = len;
        Ok(self.push(Tensor::new(shape, data), Op::SliceLast { x: x.0, start }))
    }

    /// Row `t` of the time axis of `(N,T,C)`, giving `(N,C)`.
    pub fn time_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let v = self.value(x);
        let [n, tl, c] = v.shape[..] else {
            return Err(NnError::shape(format!("time step needs (N,T,C), got {:?}", v.shape)));
        };
        if t >= tl {
            return Err(NnError::shape(format!("time step {t} of {tl}")));
        }
        let mut data = Vec::with_capacity(n * c);
        for ni in 0..n {
            let o = (ni * tl + t) * c;
            data.extend_from_slice(&v.data[o..o + c]);
        }
        Ok(self.push(Tensor::new(vec![n, c], data), Op::TimeStep { x: x.0, t }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let c = v.last_dim();
        let mut out = Vec::with_capacity(v.len());
        for row in v.data.chunks_exact(c) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let e: Vec<F> = row.iter().map(|&a| (a - m).exp()).collect();
            let s: F = e.iter().copied().sum();
            out.extend(e.into_iter().map(|a| a / s));
        }
        let shape = v.shape.clone();
        self.push(Tensor::new(shape, out), Op::Softmax { x: x.0 })
    }

    /// Weighted categorical cross-entropy `−(1/N) Σ_i w_{y_i} log p_{y_i}` of
    /// probabilities `(N,C)`.
    pub fn cce(&mut self, p: Var, labels: &[usize], weights: &[F]) -> Result<Var> {
        let v = self.value(p);
        let c = v.last_dim();
        let n = v.len() / c;
        if labels.len() != n || weights.len() != c {
            return Err(NnError::shape(format!("cce over {n}×{c} with {} labels, {} weights", labels.len(), weights.len())));
        }
        let floor = F::c(PROB_FLOOR);
        let mut total = F::zero();
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(NnError::shape(format!("label {y} out of {c} classes")));
            }
            total = total + weights[y] * v.data[i * c + y].max(floor).ln();
        }
        let loss = -total / F::from_usize(n).unwrap();
        Ok(self.push(Tensor::scalar(loss), Op::Cce { p: p.0, labels: labels.to_vec(), weights: weights.to_vec() }))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let v = self.value(x);
        let data = v.data.iter().map(|&a| a * c).collect();
        let out = Tensor::new(v.shape.clone(), data);
        self.push(out, Op::Scale { x: x.0, c })
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one(); self.nodes[loss.0].value.len()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { x, w, b, geom } => {
                    let mut dx = vec![F::zero(); self.nodes[*x].value.len()];
                    let mut dw = vec![F::zero(); self.nodes[*w].value.len()];
                    let mut db = vec![F::zero(); self.nodes[*b].value.len()];
                    conv2d_backward(&self.nodes[*x].value.data, &self.nodes[*w].value.data, &g, geom, &mut dx, &mut dw, &mut db);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = &self.nodes[*x].value.data;
                    let d = g.iter().zip(xv).map(|(&gg, &a)| if a > F::zero() { gg } else { gg * *slope }).collect();
                    accumulate(&mut grads, *x, d);
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, training } => {
                    let c = inv_std.len();
                    let rows = g.len() / c;
                    let gv = &self.nodes[*gamma].value.data;
                    let mut dgamma = vec![F::zero(); c];
                    let mut dbeta = vec![F::zero(); c];
                    for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            dgamma[ch] = dgamma[ch] + grow[ch] * hrow[ch];
                            dbeta[ch] = dbeta[ch] + grow[ch];
                        }
                    }
                    let mut dx = Vec::with_capacity(g.len());
                    if *training {
                        let m = F::from_usize(rows).unwrap();
                        for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                            for ch in 0..c {
                                let v = gv[ch] * inv_std[ch] / m * (m * grow[ch] - dbeta[ch] - hrow[ch] * dgamma[ch]);
                                dx.push(v);
                            }
                        }
                    } else {
                        for grow in g.chunks_exact(c) {
                            for ch in 0..c {
                                dx.push(grow[ch] * gv[ch] * inv_std[ch]);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::MulConst { x, c } => {
                    let d = g.iter().zip(c).map(|(&a, &m)| a * m).collect();
                    accumulate(&mut grads, *x, d);
                }
                Op::MaxPoolTime { x, argmax } => {
                    let mut d = vec![F::zero(); self.nodes[*x].value.len()];
                    for (&gg, &a) in g.iter().zip(argmax) {
                        d[a] = d[a] + gg;
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Concat { xs, widths } => {
                    let total: usize = widths.iter().sum();
                    let rows = g.len() / total;
                    let mut parts: Vec<Vec<F>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                    for row in g.chunks_exact(total) {
                        let mut off = 0;
                        for (p, &w) in parts.iter_mut().zip(widths) {
                            p.extend_from_slice(&row[off..off + w]);
                            off += w;
                        }
                    }
                    for (&x, p) in xs.iter().zip(parts) {
                        accumulate(&mut grads, x, p);
                    }
                }
                Op::Reshape { x } => accumulate(&mut grads, *x, g),
                Op::MatMul { a, b, m, k, n } => {
                    let (av, bv) = (&self.nodes[*a].value.data, &self.nodes[*b].value.data);
                    let mut da = vec![F::zero(); m * k];
                    let mut dbm = vec![F::zero(); k * n];
                    for i in 0..*m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..*k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let mut s = F::zero();
                            for (&gg, &bb) in grow.iter().zip(brow) {
                                s = s + gg * bb;
                            }
                            da[i * k + p] = s;
                            let x = av[i * k + p];
                            if x != F::zero() {
                                for (d, &gg) in dbm[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d = *d + x * gg;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, dbm);
                }
                Op::AddBias { x, b } => {
                    let c = self.nodes[*b].value.len();
                    let mut db = vec![F::zero(); c];
                    for row in g.chunks_exact(c) {
                        for (d, &gg) in db.iter_mut().zip(row) {
                            *d = *d + gg;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (&self.nodes[*a].value.data, &self.nodes[*b].value.data);
                    let da = g.iter().zip(bv).map(|(&gg, &y)| gg * y).collect();
                    let db = g.iter().zip(av).map(|(&gg, &x)| gg * x).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Sigmoid { x } => {
                    let y = &node.value.data;
                    let d = g.iter().zip(y).map(|(&gg, &s)| gg * s * (F::one() - s)).collect();
                    accumulate(&mut grads, *x, d);
                }
                Op::Tanh { x } => {
                    let y = &node.value.data;
                    let d = g.iter().zip(y).map(|(&gg, &t)| gg * (F::one() - t * t)).collect();
                    accumulate(&mut grads, *x, d);
                }
                Op::SliceLast { x, start } => {
                    let c = self.nodes[*x].value.last_dim();
                    let len = node.value.last_dim();
                    let mut d = vec![F::zero(); self.nodes[*x].value.len()];
                    for (r, grow) in g.chunks_exact(len).enumerate() {
                        d[r * c + start..r * c + start + len].copy_from_slice(grow);
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::TimeStep { x, t } => {
                    let s = &self.nodes[*x].value.shape;
                    let (n, tl, c) = (s[0], s[1], s[2]);
                    let mut d = vec![F::zero(); n * tl * c];
                    for ni in 0..n {
                        let o = (ni * tl + t) * c;
                        d[o..o + c].copy_from_slice(&g[ni * c..(ni + 1) * c]);
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Softmax { x } => {
                    let y = &node.value.data;
                    let c = node.value.last_dim();
                    let mut d = Vec::with_capacity(y.len());
                    for (yr, gr) in y.chunks_exact(c).zip(g.chunks_exact(c)) {
                        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        d.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Cce { p, labels, weights } => {
                    let pv = &self.nodes[*p].value;
                    let c = pv.last_dim();
                    let n = F::from_usize(labels.len()).unwrap();
                    let floor = F::c(PROB_FLOOR);
                    let mut d = vec![F::zero(); pv.len()];
                    for (i, &y) in labels.iter().enumerate() {
                        let prob = pv.data[i * c + y];
                        if prob > floor {
                            d[i * c + y] = -g[0] * weights[y] / (n * prob);
                        }
                    }
                    accumulate(&mut grads, *p, d);
                }
                Op::Scale { x, c } => {
                    let d = g.iter().map(|&a| a * *c).collect();
                    accumulate(&mut grads, *x, d);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Vec<F>>], i: usize, d: Vec<F>) {
    match &mut grads[i] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(d) {
                *e = *e + v;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

pub fn sigmoid<F: Scalar>(a: F) -> F {
    F::one() / (F::one() + (-a).exp())
}

/// Gradients of leaves after a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of a leaf; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var, len: usize) -> Vec<F> {
        self.grads.get(v.0).cloned().flatten().unwrap_or_else(|| vec![F::zero(); len])
    }
}
