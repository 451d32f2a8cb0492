//! Reverse-mode differentiation over the small layer vocabulary used by the
//! generator, the discriminator and the losses.
//!
//! A [`Tape`] records every forward operation together with its value. Scalar
//! loss nodes carry their local input gradients, computed eagerly at forward
//! time by the loss functions.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d, conv2d_backward, transposed_conv2d, transposed_conv2d_backward};
use crate::nn::{Activation, ParamSet, Real, Tensor4};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param { set: u64, index: usize },
    Conv2d { input: usize, weight: usize, stride: usize, pad: usize },
    TransposedConv2d { input: usize, weight: usize, stride: usize, pad: usize },
    AddBias { input: usize, bias: usize },
    Act { input: usize, kind: Activation },
    Concat { a: usize, b: usize },
    Sum { input: usize },
    Scalar { parents: Vec<(usize, Tensor4<T>)> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
}

#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Unrecorded(
                "value was not recorded on this tape".into(),
            ));
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// Parameter leaf, by name.
    pub fn param(&mut self, set: &ParamSet<T>, name: &str) -> Result<Var> {
        let index = set
            .position(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let value = set.param(index).as_tensor()?;
        Ok(self.push(
            value,
            Op::Param {
                set: set.id(),
                index,
            },
        ))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let (i, w) = (self.check(input)?, self.check(weight)?);
        let value = conv2d(&self.nodes[i].value, &self.nodes[w].value, stride, pad)?;
        Ok(self.push(value, Op::Conv2d { input: i, weight: w, stride, pad }))
    }

    pub fn transposed_conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let (i, w) = (self.check(input)?, self.check(weight)?);
        let value = transposed_conv2d(&self.nodes[i].value, &self.nodes[w].value, stride, pad)?;
        Ok(self.push(value, Op::TransposedConv2d { input: i, weight: w, stride, pad }))
    }

    /// Add a per-channel bias held as `[1, C, 1, 1]`.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (i, b) = (self.check(input)?, self.check(bias)?);
        let x = &self.nodes[i].value;
        let bv = &self.nodes[b].value;
        let [n, c, h, w] = x.shape();
        bv.expect_shape([1, c, 1, 1], "bias")?;
        let mut out = x.clone();
        let plane = h * w;
        for s in 0..n {
            let sample = out.sample_mut(s);
            for (ch, &bias) in bv.data().iter().enumerate() {
                for v in &mut sample[ch * plane..(ch + 1) * plane] {
                    *v += bias;
                }
            }
        }
        Ok(self.push(out, Op::AddBias { input: i, bias: b }))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let i = self.check(input)?;
        let value = kind.apply(&self.nodes[i].value);
        Ok(self.push(value, Op::Act { input: i, kind }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = Tensor4::concat_channels(&self.nodes[ia].value, &self.nodes[ib].value)?;
        Ok(self.push(value, Op::Concat { a: ia, b: ib }))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let i = self.check(input)?;
        let value = Tensor4::scalar(self.nodes[i].value.sum());
        Ok(self.push(value, Op::Sum { input: i }))
    }

    /// Scalar node with caller-supplied local gradients `∂value/∂parent`.
    pub fn scalar_fn(&mut self, value: T, parents: Vec<(Var, Tensor4<T>)>) -> Result<Var> {
        let mut resolved = Vec::with_capacity(parents.len());
        for (v, g) in parents {
            let i = self.check(v)?;
            g.expect_shape(self.nodes[i].value.shape(), "local gradient")?;
            resolved.push((i, g));
        }
        Ok(self.push(Tensor4::scalar(value), Op::Scalar { parents: resolved }))
    }

    /// Differentiate the scalar `loss` and write `∂loss/∂p` into the gradient
    /// buffers of every parameter of `params` (others are zeroed).
    ///
    /// Fails when `loss` is not a scalar of this tape, or when it does not
    /// depend on any parameter of `params`.
    pub fn backward(&self, loss: Var, params: &mut ParamSet<T>) -> Result<()> {
        let root = self.check(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let grads = self.gradients(root)?;
        params.zero_grads();
        let mut reached = false;
        for (idx, node) in self.nodes.iter().enumerate().take(root + 1) {
            if let Op::Param { set, index } = node.op {
                if set != params.id() {
                    continue;
                }
                if let Some(g) = &grads[idx] {
                    reached = true;
                    for (dst, &src) in params.param_mut(index).grad.iter_mut().zip(g.data()) {
                        *dst += src;
                    }
                }
            }
        }
        if !reached {
            return Err(Error::Unrecorded(
                "loss was not computed from this parameter set".into(),
            ));
        }
        Ok(())
    }

    /// Smallest `|input|` over every recorded ReLU-family activation, or
    /// `None` when there is none. Finite-difference steps must stay below it
    /// for the recorded graph to be differentiable along the stencil.
    pub fn min_kink_distance(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Act {
                    input,
                    kind: Activation::Relu | Activation::LeakyRelu { .. },
                } => self.nodes[input].value.data().iter().map(|v| v.abs()).reduce(T::min),
                _ => None,
            })
            .reduce(T::min)
    }

    /// Gradient of the scalar `loss` with respect to an arbitrary recorded value.
    pub fn gradient_wrt(&self, loss: Var, wrt: Var) -> Result<Tensor4<T>> {
        let root = self.check(loss)?;
        let target = self.check(wrt)?;
        let grads = self.gradients(root)?;
        Ok(grads[target]
            .clone()
            .unwrap_or_else(|| Tensor4::zeros(self.nodes[target].value.shape())))
    }

    fn gradients(&self, root: usize) -> Result<Vec<Option<Tensor4<T>>>> {
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; root + 1];
        grads[root] = Some(Tensor4::scalar(T::one()));

        fn accumulate<T: Real>(slot: &mut Option<Tensor4<T>>, g: Tensor4<T>) {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=root).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param { .. } => {
                    grads[idx] = Some(upstream);
                    continue;
                }
                Op::Conv2d { input, weight, stride, pad } => {
                    let (gi, gw) = conv2d_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*weight].value,
                        &upstream,
                        *stride,
                        *pad,
                    )?;
                    accumulate(&mut grads[*input], gi);
                    accumulate(&mut grads[*weight], gw);
                }
                Op::TransposedConv2d { input, weight, stride, pad } => {
                    let (gi, gw) = transposed_conv2d_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*weight].value,
                        &upstream,
                        *stride,
                        *pad,
                    )?;
                    accumulate(&mut grads[*input], gi);
                    accumulate(&mut grads[*weight], gw);
                }
                Op::AddBias { input, bias } => {
                    let [n, c, h, w] = upstream.shape();
                    let plane = h * w;
                    let mut gb = Tensor4::zeros([1, c, 1, 1]);
                    for s in 0..n {
                        let sample = upstream.sample(s);
                        for (ch, acc) in gb.data_mut().iter_mut().enumerate() {
                            *acc += sample[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
                        }
                    }
                    accumulate(&mut grads[*bias], gb);
                    accumulate(&mut grads[*input], upstream);
                }
                Op::Act { input, kind } => {
                    let x = &self.nodes[*input].value;
                    let y = &node.value;
                    let mut g = upstream;
                    for ((gv, &xv), &yv) in g.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                        *gv *= kind.derivative(xv, yv);
                    }
                    accumulate(&mut grads[*input], g);
                }
                Op::Concat { a, b } => {
                    let (ga, gb) = upstream.split_channels(self.nodes[*a].value.channels())?;
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Sum { input } => {
                    let g = upstream.data()[0];
                    accumulate(
                        &mut grads[*input],
                        Tensor4::filled(self.nodes[*input].value.shape(), g),
                    );
                }
                Op::Scalar { parents } => {
                    let g = upstream.data()[0];
                    for (p, local) in parents {
                        let mut contrib = local.clone();
                        contrib.scale(g);
                        accumulate(&mut grads[*p], contrib);
                    }
                }
            }
        }
        Ok(grads)
    }
}
