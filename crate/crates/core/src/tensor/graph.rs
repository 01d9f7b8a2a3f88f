use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, geom: ConvGeom },
    ChannelBias { input: Var, bias: Var },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Upsample2 { input: Var },
    Relu { input: Var },
    Sigmoid { input: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Gate { x: Var, gate: Var },
    Concat { inputs: Vec<Var> },
    InstanceNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    MaskedMse { pred: Var, target: Vec<T>, weights: Vec<T> },
    Sum { input: Var },
    Square { input: Var },
    Scale { input: Var, factor: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Topologically ordered record of tensor ops supporting one reverse pass.
///
/// Nodes are appended in creation order, so every input precedes its
/// consumers and the node list is already a topological order.
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims4(t: &[usize], what: &str) -> Result<[usize; 4]> {
    match *t {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::Shape(format!("{what} expects an NCHW tensor, got shape {t:?}"))),
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "op {:?} produced non-finite values",
            std::mem::discriminant(&op)
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Adds a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    /// Adds a constant leaf.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    /// Gradient of the last backward seed with respect to `v`. Only leaves
    /// created with `requires_grad` keep their gradient.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.node(v).value.grad()
    }

    /// Moves a leaf's gradient out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    /// Flat input indices selected by a max-pool node.
    pub fn argmax(&self, v: Var) -> Option<&[u32]> {
        match &self.node(v).op {
            Op::MaxPool2 { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, cin, h, w] = dims4(self.value(input).shape(), "conv2d input")?;
        let [cout, kcin, kh, kw] = dims4(self.value(kernel).shape(), "conv2d kernel")?;
        if kcin != cin {
            return Err(Error::Shape(format!(
                "conv2d: input has {cin} channels but kernel expects {kcin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape(format!("conv2d: kernel must be square and odd, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d: stride must be at least 1".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Shape(format!(
                "conv2d: {kh}x{kw} kernel does not fit a {h}x{w} input with padding {padding}"
            )));
        }
        let geom = ConvGeom {
            in_channels: cin,
            out_channels: cout,
            height: h,
            width: w,
            kernel: kh,
            stride,
            padding,
        };
        let out = kernels::conv2d_forward(self.value(input).data(), n, self.value(kernel).data(), &geom);
        let t = Tensor::new(vec![n, cout, geom.out_height(), geom.out_width()], out)?;
        let ng = self.ng(input) || self.ng(kernel);
        Ok(self.push(t, Op::Conv2d { input, kernel, geom }, ng))
    }

    /// Adds `bias[c]` to every element of channel `c`.
    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let [_, c, h, w] = dims4(self.value(input).shape(), "channel bias input")?;
        if self.value(bias).len() != c {
            return Err(Error::Shape(format!(
                "bias has {} entries for {c} channels",
                self.value(bias).len()
            )));
        }
        let plane = h * w;
        let b = self.value(bias).data();
        let mut out = self.value(input).data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bc = b[i % c];
            chunk.iter_mut().for_each(|v| *v = *v + bc);
        }
        let t = Tensor::new(self.value(input).shape().to_vec(), out)?;
        let ng = self.ng(input) || self.ng(bias);
        Ok(self.push(t, Op::ChannelBias { input, bias }, ng))
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = dims4(self.value(input).shape(), "maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("maxpool2 needs even spatial dims, got {h}x{w}")));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(input).data(), n * c, h, w);
        let t = Tensor::new(vec![n, c, h / 2, w / 2], out)?;
        let ng = self.ng(input);
        Ok(self.push(t, Op::MaxPool2 { input, argmax }, ng))
    }

    pub fn upsample_nearest2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = dims4(self.value(input).shape(), "upsample_nearest2")?;
        let out = kernels::upsample2_forward(self.value(input).data(), n * c, h, w);
        let t = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        let ng = self.ng(input);
        Ok(self.push(t, Op::Upsample2 { input }, ng))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        let ng = self.ng(input);
        match kind {
            Activation::Relu => {
                let out = x.data().iter().map(|&v| v.max(T::zero())).collect();
                let t = Tensor::new(shape, out).expect("same shape");
                self.push(t, Op::Relu { input }, ng)
            }
            Activation::Sigmoid => {
                let out = x.data().iter().map(|&v| sigmoid(v)).collect();
                let t = Tensor::new(shape, out).expect("same shape");
                self.push(t, Op::Sigmoid { input }, ng)
            }
        }
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul { a, b }, ng))
    }

    /// Multiplies every channel of `x` (`[N, C, H, W]`) by the single-channel
    /// map `gate` (`[N, 1, H, W]`).
    pub fn gate(&mut self, x: Var, gate: Var) -> Result<Var> {
        let [n, c, h, w] = dims4(self.value(x).shape(), "gate input")?;
        let gs = dims4(self.value(gate).shape(), "gate map")?;
        if gs != [n, 1, h, w] {
            return Err(Error::Shape(format!(
                "gate map must be [{n}, 1, {h}, {w}], got {gs:?}"
            )));
        }
        let plane = h * w;
        let xd = self.value(x).data();
        let gd = self.value(gate).data();
        let mut out = Vec::with_capacity(xd.len());
        for (i, chunk) in xd.chunks(plane).enumerate() {
            let g = &gd[(i / c) * plane..(i / c + 1) * plane];
            out.extend(chunk.iter().zip(g).map(|(&a, &b)| a * b));
        }
        let t = Tensor::new(vec![n, c, h, w], out)?;
        let ng = self.ng(x) || self.ng(gate);
        Ok(self.push(t, Op::Gate { x, gate }, ng))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let [n, _, h, w] = dims4(self.value(first).shape(), "concat")?;
        let mut total_c = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = dims4(self.value(v).shape(), "concat")?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat: spatial/batch mismatch {:?} vs {:?}",
                    self.value(v).shape(),
                    self.value(first).shape()
                )));
            }
            total_c += vc;
        }
        let mut out = Vec::with_capacity(n * total_c * h * w);
        for b in 0..n {
            for &v in inputs {
                out.extend_from_slice(self.value(v).slice0(b));
            }
        }
        let t = Tensor::new(vec![n, total_c, h, w], out)?;
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            ng,
        ))
    }

    /// Per-sample, per-channel normalization with learnable scale and shift.
    pub fn instance_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [n, c, h, w] = dims4(self.value(input).shape(), "instance_norm")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::Shape(format!(
                "instance_norm: affine parameters must have {c} entries"
            )));
        }
        let (y, xhat, inv_std) = kernels::instance_norm_forward(
            self.value(input).data(),
            n,
            c,
            h * w,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let t = Tensor::new(vec![n, c, h, w], y)?;
        let ng = self.ng(input) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            t,
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// `sum_p weights[p] * sum_{j in plane p} (pred_j - target_j)^2`, where a
    /// plane is the trailing `H x W` block. Planes with weight zero contribute
    /// nothing to the value and receive an exactly-zero gradient.
    pub fn weighted_plane_sse(&mut self, pred: Var, target: &[T], weights: Vec<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.rank() < 2 {
            return Err(Error::Shape("plane loss needs a tensor of rank >= 2".into()));
        }
        if target.len() != p.len() {
            return Err(Error::Shape(format!(
                "prediction has {} elements but target has {}",
                p.len(),
                target.len()
            )));
        }
        let plane: usize = p.shape()[p.rank() - 2..].iter().product();
        if weights.len() * plane != p.len() {
            return Err(Error::Shape(format!(
                "{} plane weights for {} planes",
                weights.len(),
                p.len() / plane
            )));
        }
        let mut total = T::zero();
        for (i, &wt) in weights.iter().enumerate() {
            if wt == T::zero() {
                continue;
            }
            let s: T = p.data()[i * plane..(i + 1) * plane]
                .iter()
                .zip(&target[i * plane..(i + 1) * plane])
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            total = total + wt * s;
        }
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(total),
            Op::MaskedMse {
                pred,
                target: target.to_vec(),
                weights,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        let ng = self.ng(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, ng)
    }

    pub fn square(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v * v).collect())
            .expect("same shape");
        let ng = self.ng(input);
        self.push(t, Op::Square { input }, ng)
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v * factor).collect())
            .expect("same shape");
        let ng = self.ng(input);
        self.push(t, Op::Scale { input, factor }, ng)
    }

    /// Clears leaf gradients so that [`Graph::backward`] may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.set_grad(None);
        }
        self.backward_done = false;
    }

    /// Reverse pass from the scalar `seed`. Populates the gradient of every
    /// `requires_grad` leaf reachable from it.
    pub fn backward(&mut self, seed: Var) -> Result<()> {
        if seed.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        if self.backward_done {
            return Err(Error::BackwardAlreadyRun);
        }
        let seed_shape = self.value(seed).shape();
        if self.value(seed).len() != 1 {
            return Err(Error::NonScalarSeed(seed_shape.to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[seed.0] = Some(vec![T::one()]);
        for i in (0..=seed.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].value.requires_grad() {
                    self.nodes[i].value.set_grad(Some(g));
                }
                continue;
            }
            self.propagate(i, &g);
        }
        self.grads.clear();
        self.backward_done = true;
        Ok(())
    }

    /// Adds `f`'s contribution into the gradient buffer of `v`.
    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let buf = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(buf);
    }

    fn accumulate_owned(&mut self, v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => add_into(buf, &contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Temporarily take the op to release the borrow on self.nodes.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => unreachable!(),
            Op::Conv2d { input, kernel, geom } => {
                let xv = &self.nodes[input.0].value;
                let kv = &self.nodes[kernel.0].value;
                let batch = xv.shape()[0];
                let mut dx = self.nodes[input.0].needs_grad.then(|| vec![T::zero(); xv.len()]);
                let mut dk = self.nodes[kernel.0].needs_grad.then(|| vec![T::zero(); kv.len()]);
                kernels::conv2d_backward(
                    xv.data(),
                    batch,
                    kv.data(),
                    geom,
                    g,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.accumulate_owned(*input, dx);
                }
                if let Some(dk) = dk {
                    self.accumulate_owned(*kernel, dk);
                }
            }
            Op::ChannelBias { input, bias } => {
                self.accumulate(*input, |b| add_into(b, g));
                let [_, c, h, w] = dims4(self.value(*input).shape(), "").unwrap();
                let plane = h * w;
                self.accumulate(*bias, |b| {
                    for (p, chunk) in g.chunks(plane).enumerate() {
                        b[p % c] = b[p % c] + chunk.iter().copied().sum::<T>();
                    }
                });
            }
            Op::MaxPool2 { input, argmax } => {
                self.accumulate(*input, |b| {
                    for (&ix, &gv) in argmax.iter().zip(g) {
                        b[ix as usize] = b[ix as usize] + gv;
                    }
                });
            }
            Op::Upsample2 { input } => {
                let [n, c, h, w] = dims4(self.value(*input).shape(), "").unwrap();
                self.accumulate(*input, |b| kernels::upsample2_backward(g, n * c, h, w, b));
            }
            Op::Relu { input } => {
                let x = self.value(*input).data().to_vec();
                self.accumulate(*input, |b| {
                    for ((d, &xv), &gv) in b.iter_mut().zip(&x).zip(g) {
                        if xv > T::zero() {
                            *d = *d + gv;
                        }
                    }
                });
            }
            Op::Sigmoid { input } => {
                let y = self.nodes[i].value.data().to_vec();
                self.accumulate(*input, |b| {
                    for ((d, &yv), &gv) in b.iter_mut().zip(&y).zip(g) {
                        *d = *d + gv * yv * (T::one() - yv);
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(*a, |buf| add_into(buf, g));
                self.accumulate(*b, |buf| add_into(buf, g));
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                self.accumulate(*a, |buf| {
                    for ((d, &y), &gv) in buf.iter_mut().zip(&bv).zip(g) {
                        *d = *d + gv * y;
                    }
                });
                self.accumulate(*b, |buf| {
                    for ((d, &x), &gv) in buf.iter_mut().zip(&av).zip(g) {
                        *d = *d + gv * x;
                    }
                });
            }
            Op::Gate { x, gate } => {
                let [_, c, h, w] = dims4(self.value(*x).shape(), "").unwrap();
                let plane = h * w;
                let xv = self.value(*x).data().to_vec();
                let gv = self.value(*gate).data().to_vec();
                self.accumulate(*x, |buf| {
                    for (p, (chunk, gc)) in buf.chunks_mut(plane).zip(g.chunks(plane)).enumerate() {
                        let gate_plane = &gv[(p / c) * plane..(p / c + 1) * plane];
                        for ((d, &gg), &up) in chunk.iter_mut().zip(gate_plane).zip(gc) {
                            *d = *d + up * gg;
                        }
                    }
                });
                self.accumulate(*gate, |buf| {
                    for (p, (xc, gc)) in xv.chunks(plane).zip(g.chunks(plane)).enumerate() {
                        let dst = &mut buf[(p / c) * plane..(p / c + 1) * plane];
                        for ((d, &xx), &up) in dst.iter_mut().zip(xc).zip(gc) {
                            *d = *d + up * xx;
                        }
                    }
                });
            }
            Op::Concat { inputs } => {
                let n = self.value(inputs[0]).shape()[0];
                let per_sample: Vec<usize> = inputs.iter().map(|&v| self.value(v).len() / n).collect();
                let total: usize = per_sample.iter().sum();
                let mut offset = 0;
                for (&v, &len) in inputs.iter().zip(&per_sample) {
                    self.accumulate(v, |buf| {
                        for b in 0..n {
                            let src = &g[b * total + offset..b * total + offset + len];
                            add_into(&mut buf[b * len..(b + 1) * len], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [n, c, h, w] = dims4(self.value(*input).shape(), "").unwrap();
                let gam = self.value(*gamma).data().to_vec();
                let mut dx = self.ng(*input).then(|| vec![T::zero(); n * c * h * w]);
                let mut dg = self.ng(*gamma).then(|| vec![T::zero(); c]);
                let mut db = self.ng(*beta).then(|| vec![T::zero(); c]);
                kernels::instance_norm_backward(
                    g,
                    xhat,
                    inv_std,
                    n,
                    c,
                    h * w,
                    &gam,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    self.accumulate_owned(*input, d);
                }
                if let Some(d) = dg {
                    self.accumulate_owned(*gamma, d);
                }
                if let Some(d) = db {
                    self.accumulate_owned(*beta, d);
                }
            }
            Op::MaskedMse {
                pred,
                target,
                weights,
            } => {
                let p = self.value(*pred).data().to_vec();
                let plane = p.len() / weights.len();
                let two = T::lit(2.0) * g[0];
                self.accumulate(*pred, |buf| {
                    for (k, &wt) in weights.iter().enumerate() {
                        if wt == T::zero() {
                            continue;
                        }
                        for j in k * plane..(k + 1) * plane {
                            buf[j] = buf[j] + two * wt * (p[j] - target[j]);
                        }
                    }
                });
            }
            Op::Sum { input } => {
                self.accumulate(*input, |b| b.iter_mut().for_each(|d| *d = *d + g[0]));
            }
            Op::Square { input } => {
                let x = self.value(*input).data().to_vec();
                self.accumulate(*input, |b| {
                    for ((d, &xv), &gv) in b.iter_mut().zip(&x).zip(g) {
                        *d = *d + T::lit(2.0) * xv * gv;
                    }
                });
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                self.accumulate(*input, |b| {
                    for (d, &gv) in b.iter_mut().zip(g) {
                        *d = *d + gv * f;
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
