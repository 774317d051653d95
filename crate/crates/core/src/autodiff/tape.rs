use crate::error::{usage, Result};

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// bias over axis 1 of `[B, C, ...]`
    AddBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Reshape(Var),
    Sum(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeom },
    /// Σ softplus(l) − t·l, the Bernoulli negative log-likelihood.
    BceWithLogits { logits: Var, target: Tensor<T> },
    /// Σ_j KL(Bern(sigmoid(l_j)) ‖ Bern(m)).
    BernoulliKl { logits: Var, prior: T },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    tracing: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` for constants and values outside the loss's ancestry.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return usage(format!("{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    /// A tape that records operations for [`Tape::backward`].
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), tracing: true }
    }

    /// A tape that only evaluates; `backward` is refused.
    pub fn untraced() -> Self {
        Tape { nodes: Vec::new(), tracing: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad: needs_grad && self.tracing });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return usage(format!("matmul: incompatible shapes {sa:?} and {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul(av.data(), bv.data(), m, k, n, out.data_mut());
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(self.value(a), self.value(b), name)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds `bias[c]` along axis 1 of `x` (shape `[B, C, ...]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.value(x).shape(), self.value(bias).shape());
        if xs.len() < 2 || bs.len() != 1 || xs[1] != bs[0] {
            return usage(format!("add_bias: bias {bs:?} does not match axis 1 of {xs:?}"));
        }
        let inner: usize = xs[2..].iter().product();
        let mut out = self.value(x).clone();
        kernels::add_bias(out.data_mut(), self.value(bias).data(), inner);
        let g = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(x, bias), g))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).map(f);
        let g = self.needs(x);
        self.push(out, op, g)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x, c))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, kernels::softplus, Op::Softplus(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let g = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), g))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let g = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), g)
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize, pad: usize, transposed: bool) -> Result<(ConvGeom, usize, usize)> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || xs[1] != ws[if transposed { 0 } else { 1 }] {
            return usage(format!("conv: incompatible input {xs:?} and kernel {ws:?}"));
        }
        let k = ws[2];
        if transposed {
            let (h, wd) = (xs[2], xs[3]);
            let (oh, ow) = ((h - 1) * stride + k, (wd - 1) * stride + k);
            if oh < 2 * pad + 1 || ow < 2 * pad + 1 {
                return usage("conv_transpose2d: padding larger than output".to_string());
            }
            let g = ConvGeom::new(ws[1], oh - 2 * pad, ow - 2 * pad, k, stride, pad)
                .filter(|g| g.out_h == h && g.out_w == wd)
                .ok_or_else(|| crate::Error::Usage(format!("conv_transpose2d: bad geometry for {xs:?}")))?;
            Ok((g, xs[0], ws[0]))
        } else {
            let g = ConvGeom::new(xs[1], xs[2], xs[3], k, stride, pad)
                .ok_or_else(|| crate::Error::Usage(format!("conv2d: kernel {k} does not fit {xs:?}")))?;
            Ok((g, xs[0], ws[0]))
        }
    }

    /// `x: [B, C, H, W]`, `w: [O, C, k, k]` → `[B, O, H', W']`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (geom, batch, out_c) = self.conv_geom(x, w, stride, pad, false)?;
        let mut out = Tensor::zeros(&[batch, out_c, geom.out_h, geom.out_w]);
        kernels::conv2d_forward(self.value(x).data(), batch, &geom, self.value(w).data(), out_c, out.data_mut());
        let g = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Conv2d { x, w, geom }, g))
    }

    /// `x: [B, Cin, H, W]`, `w: [Cin, Cout, k, k]` →
    /// `[B, Cout, (H−1)s − 2p + k, (W−1)s − 2p + k]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (geom, batch, in_c) = self.conv_geom(x, w, stride, pad, true)?;
        let mut out = Tensor::zeros(&[batch, geom.channels, geom.height, geom.width]);
        kernels::conv_transpose2d_forward(self.value(x).data(), batch, &geom, self.value(w).data(), in_c, out.data_mut());
        let g = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, geom }, g))
    }

    /// Bernoulli negative log-likelihood of `target` under pixel logits,
    /// summed over all elements.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        same_shape(self.value(logits), target, "bce_with_logits")?;
        let s = self
            .value(logits)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&l, &t)| kernels::softplus(l) - t * l)
            .sum();
        let g = self.needs(logits);
        Ok(self.push(Tensor::scalar(s), Op::BceWithLogits { logits, target: target.clone() }, g))
    }

    /// Closed-form Bernoulli KL to a Bern(`prior`) prior, summed over all
    /// elements, computed from logits.
    pub fn bernoulli_kl(&mut self, logits: Var, prior: T) -> Result<Var> {
        if !(prior > T::zero() && prior < T::one()) {
            return usage(format!("bernoulli_kl: prior {prior:?} outside (0, 1)"));
        }
        let s = self.value(logits).data().iter().map(|&l| bernoulli_kl_logit(l, prior)).sum();
        let g = self.needs(logits);
        Ok(self.push(Tensor::scalar(s), Op::BernoulliKl { logits, prior }, g))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.tracing {
            return usage("backward on an untraced tape");
        }
        if loss.0 >= self.nodes.len() {
            return usage("backward: variable does not belong to this tape");
        }
        if self.value(loss).len() != 1 {
            return usage(format!("backward: loss must be a scalar, got shape {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        // only leaves keep gradients
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) || !n.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()));
        f(slot.data_mut());
    }

    fn elementwise(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: &Tensor<T>, f: impl Fn(usize, T) -> T) {
        self.accumulate(grads, v, |d| {
            for (i, (dst, &gi)) in d.iter_mut().zip(g.data()).enumerate() {
                *dst += f(i, gi);
            }
        });
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                self.accumulate(grads, *a, |da| {
                    // da[m×k] += g[m×n] · bᵀ
                    T::gemm(m, n, k, T::one(), g.data(), (n as isize, 1), bv.data(), (1, n as isize), T::one(), da, (k as isize, 1));
                });
                self.accumulate(grads, *b, |db| {
                    // db[k×n] += aᵀ · g
                    T::gemm(k, m, n, T::one(), av.data(), (1, k as isize), g.data(), (n as isize, 1), T::one(), db, (n as isize, 1));
                });
            }
            Op::Add(a, b) => {
                self.elementwise(grads, *a, g, |_, gi| gi);
                self.elementwise(grads, *b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.elementwise(grads, *a, g, |_, gi| gi);
                self.elementwise(grads, *b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.elementwise(grads, *a, g, |i, gi| gi * bv[i]);
                self.elementwise(grads, *b, g, |i, gi| gi * av[i]);
            }
            Op::AddBias(x, bias) => {
                self.elementwise(grads, *x, g, |_, gi| gi);
                let xs = self.value(*x).shape();
                let inner: usize = xs[2..].iter().product();
                let c = xs[1];
                self.accumulate(grads, *bias, |db| {
                    for (i, chunk) in g.data().chunks(inner).enumerate() {
                        db[i % c] += chunk.iter().copied().sum();
                    }
                });
            }
            Op::Scale(x, c) => self.elementwise(grads, *x, g, |_, gi| gi * *c),
            Op::AddScalar(x, _) => self.elementwise(grads, *x, g, |_, gi| gi),
            Op::Sigmoid(x) => {
                let y = out.data();
                self.elementwise(grads, *x, g, |i, gi| gi * y[i] * (T::one() - y[i]));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.elementwise(grads, *x, g, |i, gi| if xv[i] > T::zero() { gi } else { T::zero() });
            }
            Op::Exp(x) => {
                let y = out.data();
                self.elementwise(grads, *x, g, |i, gi| gi * y[i]);
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.elementwise(grads, *x, g, |i, gi| gi / xv[i]);
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                self.elementwise(grads, *x, g, |i, gi| gi * kernels::sigmoid(xv[i]));
            }
            Op::Reshape(x) => self.elementwise(grads, *x, g, |_, gi| gi),
            Op::Sum(x) => {
                let gi = g.item();
                self.accumulate(grads, *x, |d| d.iter_mut().for_each(|v| *v += gi));
            }
            Op::Conv2d { x, w, geom } => {
                let batch = self.value(*x).shape()[0];
                let out_c = self.value(*w).shape()[0];
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.needs(*x).then(|| Tensor::zeros(self.value(*x).shape()));
                let mut dw = self.needs(*w).then(|| Tensor::zeros(self.value(*w).shape()));
                kernels::conv2d_backward(
                    xv,
                    batch,
                    geom,
                    wv,
                    out_c,
                    g.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                );
                self.merge(grads, *x, dx);
                self.merge(grads, *w, dw);
            }
            Op::ConvTranspose2d { x, w, geom } => {
                let batch = self.value(*x).shape()[0];
                let in_c = self.value(*w).shape()[0];
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.needs(*x).then(|| Tensor::zeros(self.value(*x).shape()));
                let mut dw = self.needs(*w).then(|| Tensor::zeros(self.value(*w).shape()));
                kernels::conv_transpose2d_backward(
                    xv,
                    batch,
                    geom,
                    wv,
                    in_c,
                    g.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                );
                self.merge(grads, *x, dx);
                self.merge(grads, *w, dw);
            }
            Op::BceWithLogits { logits, target } => {
                let gi = g.item();
                let lv = self.value(*logits).data();
                let t = target.data();
                self.elementwise_scalar(grads, *logits, |i| gi * (kernels::sigmoid(lv[i]) - t[i]));
            }
            Op::BernoulliKl { logits, prior } => {
                let gi = g.item();
                let lv = self.value(*logits).data();
                let prior_logit = (*prior / (T::one() - *prior)).ln();
                self.elementwise_scalar(grads, *logits, |i| {
                    let mu = kernels::sigmoid(lv[i]);
                    gi * mu * (T::one() - mu) * (lv[i] - prior_logit)
                });
            }
        }
    }

    fn elementwise_scalar(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl Fn(usize) -> T) {
        self.accumulate(grads, v, |d| {
            for (i, dst) in d.iter_mut().enumerate() {
                *dst += f(i);
            }
        });
    }

    fn merge(&self, grads: &mut [Option<Tensor<T>>], v: Var, t: Option<Tensor<T>>) {
        if let Some(t) = t {
            self.accumulate(grads, v, |d| d.iter_mut().zip(t.data()).for_each(|(a, &b)| *a += b));
        }
    }
}

/// KL(Bern(sigmoid(l)) ‖ Bern(m)) using log μ = −softplus(−l) and
/// log(1 − μ) = −softplus(l).
pub(crate) fn bernoulli_kl_logit<T: Scalar>(l: T, m: T) -> T {
    let mu = kernels::sigmoid(l);
    let log_mu = -kernels::softplus(-l);
    let log_1mu = -kernels::softplus(l);
    mu * (log_mu - m.ln()) + (T::one() - mu) * (log_1mu - (T::one() - m).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let v = tape.constant(t(&[2, 1], &[3.0, -4.0]));
        let y = tape.matmul(i, v).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -4.0]);
        let bad = tape.constant(t(&[3, 1], &[0.0; 3]));
        assert!(tape.matmul(i, bad).is_err());
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 5.0);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn backward_requires_tracing_and_scalar() {
        let mut tape = Tape::untraced();
        let x = tape.param(Tensor::scalar(1.0f64));
        let y = tape.exp(x);
        assert!(tape.backward(y).is_err());
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
        assert!(tape.backward(Var(17)).is_err());
    }

    #[test]
    fn conv_shape_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 5, 5]));
        let w = tape.constant(Tensor::zeros(&[3, 1, 3, 3]));
        assert!(tape.conv2d(x, w, 1, 0).is_err());
        let w = tape.constant(Tensor::zeros(&[3, 2, 7, 7]));
        assert!(tape.conv2d(x, w, 1, 0).is_err());
    }

    #[test]
    fn kl_zero_at_prior() {
        assert!(bernoulli_kl_logit(0.0f64, 0.5).abs() < 1e-15);
        let l = (0.3f64 / 0.7).ln();
        assert!(bernoulli_kl_logit(l, 0.3).abs() < 1e-15);
    }
}
