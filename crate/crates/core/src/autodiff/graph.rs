use super::kernels::{self, ConvGeometry};
use super::{Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps the spatial size.
    Same,
    /// No padding.
    Valid,
}

/// Backward rule for an op defined outside this module. Receives the
/// gradient of the op's output and returns one gradient per input (`None`
/// for inputs it does not differentiate).
pub trait BackwardRule: Send {
    fn backward(&self, upstream: &[f64], inputs: &[&Tensor]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Sum(Var),
    Inner(Var, Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geometry: ConvGeometry,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Concat(Vec<Var>),
    PadTo(Var),
    CropTo(Var),
    StraightThrough {
        scores: Var,
        soft: Vec<f64>,
        tau: f64,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn BackwardRule>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Tape of tensor operations, recorded in execution order so the tape is
/// already topologically sorted.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tracked leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zeros if the output did not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
        None => *slot = Some(contribution),
    }
}

fn spatial(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
    t.chw().ok_or_else(|| TensorError::Rank {
        op,
        shape: t.shape().to_vec(),
    })
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, op, tracked))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let value = Tensor::from_fn(ta.shape(), |i| f(ta.data()[i]));
        let tracked = self.tracked(a);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Absolute value; the gradient at exactly zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("inner", ta, tb));
        }
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::scalar(s), Op::Inner(a, b), tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshaped(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    /// 2-D cross-correlation (no kernel flip) of `[C_in, H, W]` with
    /// `[C_out, C_in, kH, kW]`. Kernel extents must be odd. Pass the kernel
    /// as a constant to make it non-trainable.
    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: Padding) -> Result<Var, TensorError> {
        let (tx, tk) = (self.value(input), self.value(kernel));
        let [c_in, h, w] = tx.shape()[..] else {
            return Err(TensorError::Rank {
                op: "conv2d",
                shape: tx.shape().to_vec(),
            });
        };
        let [c_out, kc, kh, kw] = tk.shape()[..] else {
            return Err(mismatch("conv2d", tx, tk));
        };
        if kc != c_in || kh % 2 == 0 || kw % 2 == 0 {
            return Err(mismatch("conv2d", tx, tk));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => (kh / 2, kw / 2),
            Padding::Valid => (0, 0),
        };
        if h + 2 * pad_h < kh || w + 2 * pad_w < kw {
            return Err(mismatch("conv2d", tx, tk));
        }
        let geometry = ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            pad_h,
            pad_w,
            oh: h + 2 * pad_h - kh + 1,
            ow: w + 2 * pad_w - kw + 1,
        };
        let out = kernels::conv2d_forward(tx.data(), tk.data(), &geometry);
        let value = Tensor::new(vec![c_out, geometry.oh, geometry.ow], out)?;
        let tracked = self.tracked(input) || self.tracked(kernel);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geometry,
            },
            tracked,
        ))
    }

    /// Adds `bias[c]` to every cell of channel `c`.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(input), self.value(bias));
        let (c, h, w) = spatial(tx, "channel_bias")?;
        if tb.shape() != [c] || tx.rank() != 3 {
            return Err(mismatch("channel_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for (ch, plane) in data.chunks_mut(h * w).enumerate() {
            let b = tb.data()[ch];
            plane.iter_mut().for_each(|v| *v += b);
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let tracked = self.tracked(input) || self.tracked(bias);
        Ok(self.push(value, Op::ChannelBias { input, bias }, tracked))
    }

    /// 2×2 max pooling over the last two axes.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var, TensorError> {
        let tx = self.value(input);
        let (c, h, w) = spatial(tx, "maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::OddDimension {
                shape: tx.shape().to_vec(),
            });
        }
        let (out, argmax) = kernels::maxpool2(tx.data(), c, h, w);
        let mut shape = tx.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = h / 2;
        shape[r - 1] = w / 2;
        let value = Tensor::new(shape, out)?;
        let tracked = self.tracked(input);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, tracked))
    }

    /// Nearest-neighbour 2× upsampling over the last two axes.
    pub fn upsample2(&mut self, input: Var) -> Result<Var, TensorError> {
        let tx = self.value(input);
        let (c, h, w) = spatial(tx, "upsample2")?;
        let out = kernels::upsample2(tx.data(), c, h, w);
        let mut shape = tx.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = 2 * h;
        shape[r - 1] = 2 * w;
        let value = Tensor::new(shape, out)?;
        let tracked = self.tracked(input);
        Ok(self.push(value, Op::Upsample2(input), tracked))
    }

    /// Concatenates `[C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.value(parts[0]);
        let (_, h, w) = spatial(first, "concat")?;
        let mut data = Vec::new();
        let mut channels = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 3 || t.shape()[1..] != [h, w] {
                return Err(mismatch("concat", first, t));
            }
            channels += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![channels, h, w], data)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), tracked))
    }

    /// Zero-pads `[C, H, W]` at the bottom and right to `[C, h, w]`.
    pub fn pad_to(&mut self, input: Var, h: usize, w: usize) -> Result<Var, TensorError> {
        let tx = self.value(input);
        let [c, ih, iw] = tx.shape()[..] else {
            return Err(TensorError::Rank {
                op: "pad_to",
                shape: tx.shape().to_vec(),
            });
        };
        if h < ih || w < iw {
            return Err(TensorError::Rank {
                op: "pad_to",
                shape: tx.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            for r in 0..ih {
                let src = &tx.data()[(ch * ih + r) * iw..(ch * ih + r + 1) * iw];
                data[(ch * h + r) * w..(ch * h + r) * w + iw].copy_from_slice(src);
            }
        }
        let value = Tensor::new(vec![c, h, w], data)?;
        let tracked = self.tracked(input);
        Ok(self.push(value, Op::PadTo(input), tracked))
    }

    /// Keeps the top-left `[C, h, w]` window.
    pub fn crop_to(&mut self, input: Var, h: usize, w: usize) -> Result<Var, TensorError> {
        let tx = self.value(input);
        let [c, ih, iw] = tx.shape()[..] else {
            return Err(TensorError::Rank {
                op: "crop_to",
                shape: tx.shape().to_vec(),
            });
        };
        if h > ih || w > iw {
            return Err(TensorError::Rank {
                op: "crop_to",
                shape: tx.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for r in 0..h {
                data.extend_from_slice(&tx.data()[(ch * ih + r) * iw..(ch * ih + r) * iw + w]);
            }
        }
        let value = Tensor::new(vec![c, h, w], data)?;
        let tracked = self.tracked(input);
        Ok(self.push(value, Op::CropTo(input), tracked))
    }

    /// Hard one-hot selection over the masked cells, differentiated as the
    /// temperature softmax `exp(-s/τ)⊙m / ⟨exp(-s/τ), m⟩` (straight-through).
    ///
    /// Lower scores are better. With `index = None` the forward output is the
    /// argmax of that distribution, ties to the smallest flat index; callers
    /// with their own tie-break rule pass the chosen index, which must lie
    /// inside the mask. The mask is treated as a constant.
    pub fn straight_through_select(
        &mut self,
        scores: Var,
        mask: &Tensor,
        tau: f64,
        index: Option<usize>,
    ) -> Result<Var, TensorError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(TensorError::InvalidTemperature(tau));
        }
        let ts = self.value(scores);
        if ts.shape() != mask.shape() {
            return Err(mismatch("select", ts, mask));
        }
        let soft = masked_softmax(ts.data(), mask.data(), tau).ok_or(TensorError::EmptyMask)?;
        let chosen = match index {
            Some(i) if i < soft.len() && mask.data()[i] != 0.0 => i,
            Some(_) => return Err(TensorError::SelectionOutsideMask),
            None => {
                let mut best = 0;
                for (i, &p) in soft.iter().enumerate() {
                    if p > soft[best] {
                        best = i;
                    }
                }
                best
            }
        };
        let mut value = Tensor::zeros(ts.shape());
        value.data_mut()[chosen] = 1.0;
        let tracked = self.tracked(scores);
        Ok(self.push(value, Op::StraightThrough { scores, soft, tau }, tracked))
    }

    /// `straight_through_select` with its own argmax: the masked soft-argmin
    /// of `scores`.
    pub fn masked_softargmax(&mut self, scores: Var, mask: &Tensor, tau: f64) -> Result<Var, TensorError> {
        self.straight_through_select(scores, mask, tau, None)
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, rule: Box<dyn BackwardRule>) -> Var {
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            tracked,
        )
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients, TensorError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(TensorError::NonScalarOutput(out.shape().to_vec()));
        }
        self.backward_with_seed(output, &Tensor::ones(out.shape()))
    }

    /// Reverse pass seeded with an explicit gradient for `output`.
    pub fn backward_with_seed(&self, output: Var, seed: &Tensor) -> Result<Gradients, TensorError> {
        let out = self.value(output);
        if out.shape() != seed.shape() {
            return Err(mismatch("backward", out, seed));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed.data().to_vec());
        let mut leaves: Vec<Option<Tensor>> = Vec::new();
        leaves.resize_with(self.nodes.len(), || None);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g, &mut grads, &mut leaves, i)?;
        }
        Ok(Gradients { grads: leaves })
    }

    fn propagate(
        &self,
        node: &Node,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        leaves: &mut [Option<Tensor>],
        at: usize,
    ) -> Result<(), TensorError> {
        let mut send = |v: Var, contribution: Vec<f64>| {
            if self.nodes[v.0].tracked {
                accumulate(&mut grads[v.0], contribution);
            }
        };
        let val = |v: Var| self.value(v).data();
        match &node.op {
            Op::Leaf => {
                leaves[at] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
            Op::Constant => {}
            Op::Add(a, b) => {
                send(*b, g.clone());
                send(*a, g);
            }
            Op::Sub(a, b) => {
                send(*b, g.iter().map(|x| -x).collect());
                send(*a, g);
            }
            Op::Mul(a, b) => {
                let ga = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                send(*a, ga);
                send(*b, gb);
            }
            Op::Neg(a) => send(*a, g.iter().map(|x| -x).collect()),
            Op::Scale(a, s) => send(*a, g.iter().map(|x| s * x).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => send(*a, g),
            Op::Exp(a) => {
                let out = node.value.data();
                send(*a, g.iter().zip(out).map(|(g, y)| g * y).collect());
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                send(*a, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Relu(a) => {
                let x = val(*a);
                send(*a, g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Abs(a) => {
                let x = val(*a);
                let sign = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
                send(*a, g.iter().zip(x).map(|(g, &x)| g * sign(x)).collect());
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0]; n]);
            }
            Op::Inner(a, b) => {
                let ga = val(*b).iter().map(|y| g[0] * y).collect();
                let gb = val(*a).iter().map(|x| g[0] * x).collect();
                send(*a, ga);
                send(*b, gb);
            }
            Op::Conv2d {
                input,
                kernel,
                geometry,
            } => {
                if self.nodes[kernel.0].tracked {
                    send(*kernel, kernels::conv2d_grad_kernel(&g, val(*input), geometry));
                }
                if self.nodes[input.0].tracked {
                    send(*input, kernels::conv2d_grad_input(&g, val(*kernel), geometry));
                }
            }
            Op::ChannelBias { input, bias } => {
                let c = self.value(*bias).len();
                let plane = g.len() / c;
                let gb = g.chunks(plane).map(|p| p.iter().sum()).collect();
                send(*bias, gb);
                send(*input, g);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut gx = vec![0.0; self.value(*input).len()];
                for (gv, &src) in g.iter().zip(argmax) {
                    gx[src] += gv;
                }
                send(*input, gx);
            }
            Op::Upsample2(a) => {
                let (c, h, w) = self.value(*a).chw().expect("checked in forward");
                send(*a, kernels::upsample2_grad(&g, c, h, w));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    send(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::PadTo(a) => {
                let [c, ih, iw] = self.value(*a).shape()[..] else { unreachable!() };
                let [_, h, w] = node.value.shape()[..] else { unreachable!() };
                let mut gx = Vec::with_capacity(c * ih * iw);
                for ch in 0..c {
                    for r in 0..ih {
                        gx.extend_from_slice(&g[(ch * h + r) * w..(ch * h + r) * w + iw]);
                    }
                }
                send(*a, gx);
            }
            Op::CropTo(a) => {
                let [c, ih, iw] = self.value(*a).shape()[..] else { unreachable!() };
                let [_, h, w] = node.value.shape()[..] else { unreachable!() };
                let mut gx = vec![0.0; c * ih * iw];
                for ch in 0..c {
                    for r in 0..h {
                        gx[(ch * ih + r) * iw..(ch * ih + r) * iw + w]
                            .copy_from_slice(&g[(ch * h + r) * w..(ch * h + r + 1) * w]);
                    }
                }
                send(*a, gx);
            }
            Op::StraightThrough { scores, soft, tau } => {
                send(*scores, softmax_score_grad(soft, &g, *tau));
            }
            Op::Custom { inputs, rule } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let out = rule.backward(&g, &values);
                for (&v, gv) in inputs.iter().zip(out) {
                    if let Some(gv) = gv {
                        send(v, gv);
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `exp(-s/τ)⊙m / ⟨exp(-s/τ), m⟩`, shifted by the masked minimum for
/// stability. `None` if the mask is empty.
pub fn masked_softmax(scores: &[f64], mask: &[f64], tau: f64) -> Option<Vec<f64>> {
    let lowest = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m != 0.0)
        .map(|(&s, _)| s)
        .fold(f64::INFINITY, f64::min);
    if !lowest.is_finite() {
        return None;
    }
    let mut soft: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m != 0.0 { m * (-(s - lowest) / tau).exp() } else { 0.0 })
        .collect();
    let z: f64 = soft.iter().sum();
    soft.iter_mut().for_each(|p| *p /= z);
    Some(soft)
}

/// Vector-Jacobian product of [`masked_softmax`] with respect to the scores.
pub fn softmax_score_grad(soft: &[f64], upstream: &[f64], tau: f64) -> Vec<f64> {
    let mean: f64 = soft.iter().zip(upstream).map(|(p, g)| p * g).sum();
    soft.iter()
        .zip(upstream)
        .map(|(p, g)| -p * (g - mean) / tau)
        .collect()
}
