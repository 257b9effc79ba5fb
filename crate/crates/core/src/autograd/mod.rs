//! Tape-based reverse-mode differentiation over `f64` tensors.
//!
//! Every vector-Jacobian product is itself recorded on the tape, so the
//! gradients returned by [`Graph::grad`] can be differentiated again. The
//! gradient penalty relies on this: its parameter gradient flows through the
//! critic's input gradient.

mod backend;
pub mod kernels;
mod tensor;

use std::rc::Rc;

pub use backend::{Backend, Eager};
pub use kernels::ConvSpec;
pub use tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Rc<Vec<f64>>),
    Conv(Var, Var, ConvSpec),
    ConvData(Var, Var, ConvSpec),
    ConvWeight(Var, Var, ConvSpec),
    ChannelSum(Var),
    ChannelExpand(Var),
    SampleSum(Var),
    SampleExpand(Var),
    SpatialSum(Var),
    SpatialExpand(Var),
    GroupSum(Var, usize),
    GroupRepeat(Var, usize),
    ConcatChannels(Var, Var),
    SliceChannels(Var, usize),
    EmbedChannels(Var, usize),
    SliceBatch(Var, usize),
    EmbedBatch(Var, usize),
    Sum(Var),
    ExpandScalar(Var),
    Reshape(Var),
    Sqrt(Var),
    Ln(Var),
    Sigmoid(Var),
}

impl Op {
    fn parents(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | ConcatChannels(a, b) => {
                [Some(a), Some(b)]
            }
            Conv(a, b, _) | ConvData(a, b, _) | ConvWeight(a, b, _) => [Some(a), Some(b)],
            Scale(a, _) | AddScalar(a) | MulConst(a, _) | GroupSum(a, _) | GroupRepeat(a, _) => {
                [Some(a), None]
            }
            SliceChannels(a, _) | EmbedChannels(a, _) | SliceBatch(a, _) | EmbedBatch(a, _) => {
                [Some(a), None]
            }
            ChannelSum(a) | ChannelExpand(a) | SampleSum(a) | SampleExpand(a) | SpatialSum(a)
            | SpatialExpand(a) => [Some(a), None],
            Sum(a) | ExpandScalar(a) | Reshape(a) | Sqrt(a) | Ln(a) | Sigmoid(a) => [Some(a), None],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// An append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inputs, parameters and constants all enter the tape as leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A new leaf holding a copy of `v`'s value, cut off from its history.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.leaf(t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(t, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Elementwise product with a constant mask that carries no gradient.
    pub fn mul_const(&mut self, a: Var, mask: Rc<Vec<f64>>) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), mask.len(), "mask length");
        let t = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(mask.iter())
                .map(|(v, m)| v * m)
                .collect(),
        );
        self.push(t, Op::MulConst(a, mask))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mask = self
            .value(a)
            .data()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { slope })
            .collect();
        self.mul_const(a, Rc::new(mask))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let mask = self
            .value(a)
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        self.mul_const(a, Rc::new(mask))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Var {
        let t = kernels::conv2d(self.value(x), self.value(w), &spec);
        self.push(t, Op::Conv(x, w, spec))
    }

    /// Transposed convolution; `w` uses the `Cin_of_y × Cout × k × k` layout of the forward conv.
    pub fn conv2d_data(&mut self, y: Var, w: Var, spec: ConvSpec) -> Var {
        let t = kernels::conv2d_data(self.value(y), self.value(w), &spec);
        self.push(t, Op::ConvData(y, w, spec))
    }

    pub fn conv2d_weight(&mut self, x: Var, y: Var, spec: ConvSpec) -> Var {
        let t = kernels::conv2d_weight(self.value(x), self.value(y), &spec);
        self.push(t, Op::ConvWeight(x, y, spec))
    }

    pub fn channel_sum(&mut self, x: Var) -> Var {
        let t = kernels::channel_sum(self.value(x));
        self.push(t, Op::ChannelSum(x))
    }

    pub fn channel_expand(&mut self, v: Var, shape: &[usize]) -> Var {
        let t = kernels::channel_expand(self.value(v), shape);
        self.push(t, Op::ChannelExpand(v))
    }

    pub fn sample_sum(&mut self, x: Var) -> Var {
        let t = kernels::sample_sum(self.value(x));
        self.push(t, Op::SampleSum(x))
    }

    pub fn sample_expand(&mut self, v: Var, shape: &[usize]) -> Var {
        let t = kernels::sample_expand(self.value(v), shape);
        self.push(t, Op::SampleExpand(v))
    }

    pub fn spatial_sum(&mut self, x: Var) -> Var {
        let t = kernels::spatial_sum(self.value(x));
        self.push(t, Op::SpatialSum(x))
    }

    pub fn spatial_expand(&mut self, v: Var, h: usize, w: usize) -> Var {
        let t = kernels::spatial_expand(self.value(v), h, w);
        self.push(t, Op::SpatialExpand(v))
    }

    pub fn group_sum(&mut self, x: Var, k: usize) -> Var {
        let t = kernels::group_sum(self.value(x), k);
        self.push(t, Op::GroupSum(x, k))
    }

    pub fn group_repeat(&mut self, x: Var, k: usize) -> Var {
        let t = kernels::group_repeat(self.value(x), k);
        self.push(t, Op::GroupRepeat(x, k))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let t = kernels::concat_channels(self.value(a), self.value(b));
        self.push(t, Op::ConcatChannels(a, b))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = kernels::slice_channels(self.value(x), start, len);
        self.push(t, Op::SliceChannels(x, start))
    }

    pub fn embed_channels(&mut self, x: Var, start: usize, total: usize) -> Var {
        let t = kernels::embed_channels(self.value(x), start, total);
        self.push(t, Op::EmbedChannels(x, start))
    }

    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = kernels::slice_batch(self.value(x), start, len);
        self.push(t, Op::SliceBatch(x, start))
    }

    pub fn embed_batch(&mut self, x: Var, start: usize, total: usize) -> Var {
        let t = kernels::embed_batch(self.value(x), start, total);
        self.push(t, Op::EmbedBatch(x, start))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(t, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn expand_scalar(&mut self, s: Var, shape: &[usize]) -> Var {
        let t = Tensor::full(shape, self.value(s).item());
        self.push(t, Op::ExpandScalar(s))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape.to_vec());
        self.push(t, Op::Reshape(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::sqrt);
        self.push(t, Op::Sqrt(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::ln);
        self.push(t, Op::Ln(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    /// Contribution of output gradient `g` at `node` to the gradient of its `which`-th parent.
    fn vjp(&mut self, node: Var, which: usize, g: Var) -> Var {
        use Op::*;
        let op = self.nodes[node.0].op.clone();
        let parent_shape = |s: &Self, p: Var| s.shape(p).to_vec();
        match op {
            Leaf => unreachable!("leaves have no parents"),
            Add(..) | AddScalar(..) => g,
            Sub(..) => {
                if which == 0 {
                    g
                } else {
                    self.scale(g, -1.0)
                }
            }
            Mul(a, b) => self.mul(g, if which == 0 { b } else { a }),
            Div(_, b) => {
                if which == 0 {
                    self.div(g, b)
                } else {
                    let t = self.mul(g, node);
                    let t = self.div(t, b);
                    self.scale(t, -1.0)
                }
            }
            Scale(_, c) => self.scale(g, c),
            MulConst(_, m) => self.mul_const(g, m),
            Conv(x, w, spec) => {
                if which == 0 {
                    self.conv2d_data(g, w, spec)
                } else {
                    self.conv2d_weight(x, g, spec)
                }
            }
            ConvData(y, w, spec) => {
                if which == 0 {
                    self.conv2d(g, w, spec)
                } else {
                    self.conv2d_weight(g, y, spec)
                }
            }
            ConvWeight(x, y, spec) => {
                if which == 0 {
                    self.conv2d_data(y, g, spec)
                } else {
                    self.conv2d(x, g, spec)
                }
            }
            ChannelSum(x) => {
                let s = parent_shape(self, x);
                self.channel_expand(g, &s)
            }
            ChannelExpand(_) => self.channel_sum(g),
            SampleSum(x) => {
                let s = parent_shape(self, x);
                self.sample_expand(g, &s)
            }
            SampleExpand(_) => self.sample_sum(g),
            SpatialSum(x) => {
                let s = parent_shape(self, x);
                self.spatial_expand(g, s[2], s[3])
            }
            SpatialExpand(_) => self.spatial_sum(g),
            GroupSum(_, k) => self.group_repeat(g, k),
            GroupRepeat(_, k) => self.group_sum(g, k),
            ConcatChannels(a, b) => {
                let ca = self.shape(a)[1];
                if which == 0 {
                    self.slice_channels(g, 0, ca)
                } else {
                    let cb = self.shape(b)[1];
                    self.slice_channels(g, ca, cb)
                }
            }
            SliceChannels(x, start) => {
                let total = self.shape(x)[1];
                self.embed_channels(g, start, total)
            }
            EmbedChannels(x, start) => {
                let len = self.shape(x)[1];
                self.slice_channels(g, start, len)
            }
            SliceBatch(x, start) => {
                let total = self.shape(x)[0];
                self.embed_batch(g, start, total)
            }
            EmbedBatch(x, start) => {
                let len = self.shape(x)[0];
                self.slice_batch(g, start, len)
            }
            Sum(x) => {
                let s = parent_shape(self, x);
                self.expand_scalar(g, &s)
            }
            ExpandScalar(_) => self.sum(g),
            Reshape(x) => {
                let s = parent_shape(self, x);
                self.reshape(g, &s)
            }
            Sqrt(_) => {
                let twice = self.scale(node, 2.0);
                self.div(g, twice)
            }
            Ln(x) => self.div(g, x),
            Sigmoid(_) => {
                let one_minus = self.scale(node, -1.0);
                let one_minus = self.add_scalar(one_minus, 1.0);
                let d = self.mul(node, one_minus);
                self.mul(g, d)
            }
        }
    }

    /// Gradients of the scalar `out` with respect to each of `wrt`.
    ///
    /// The returned handles are ordinary tape nodes, so they can be combined
    /// into further losses and differentiated again. Entries of `wrt` that
    /// `out` does not depend on get a zero tensor.
    pub fn grad(&mut self, out: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.value(out).len(), 1, "grad() needs a scalar output");
        let end = out.0 + 1;
        let mut depends = vec![false; end];
        for w in wrt {
            if w.0 < end {
                depends[w.0] = true;
            }
        }
        for i in 0..end {
            if !depends[i] {
                depends[i] = self.nodes[i]
                    .op
                    .parents()
                    .iter()
                    .flatten()
                    .any(|p| depends[p.0]);
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; end];
        if depends[out.0] {
            let shape = self.shape(out).to_vec();
            grads[out.0] = Some(self.leaf(Tensor::full(&shape, 1.0)));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            let parents = self.nodes[i].op.parents();
            for (which, p) in parents.iter().enumerate() {
                let Some(p) = *p else { continue };
                if !depends[p.0] {
                    continue;
                }
                let contrib = self.vjp(Var(i), which, g);
                grads[p.0] = Some(match grads[p.0] {
                    Some(acc) => self.add(acc, contrib),
                    None => contrib,
                });
            }
        }
        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(*w).to_vec();
                    self.leaf(Tensor::zeros(&shape))
                }
            })
            .collect()
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
        )
    }

    /// Central-difference check of `f` against its tape gradient at every coordinate of every input.
    fn check<F>(inputs: Vec<Tensor>, f: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let eval = |vals: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
            let out = f(&mut g, &vars);
            g.value(out).item()
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        let grads = g.grad(out, &vars);
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = g.value(grads[k]).clone();
            for i in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
                assert!(
                    err < 1e-5,
                    "input {k} coord {i}: analytic {a} numeric {num}"
                );
            }
        }
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = rand_tensor(&mut rng, &[2, 3], 0.5, 2.0);
        let b = rand_tensor(&mut rng, &[2, 3], 0.5, 2.0);
        check(vec![a, b], |g, v| {
            let m = g.mul(v[0], v[1]);
            let d = g.div(m, v[1]);
            let d = g.div(d, v[0]);
            let s = g.sqrt(v[0]);
            let l = g.ln(v[1]);
            let sg = g.sigmoid(v[0]);
            let t = g.add(d, s);
            let t = g.sub(t, l);
            let t = g.mul(t, sg);
            let t = g.add_scalar(t, 0.3);
            let t = g.square(t);
            g.sum(t)
        });
    }

    #[test]
    fn structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[6, 2, 3, 3], -1.0, 1.0);
        let v = rand_tensor(&mut rng, &[2], -1.0, 1.0);
        check(vec![x, v], |g, v| {
            let shape = g.shape(v[0]).to_vec();
            let e = g.channel_expand(v[1], &shape);
            let t = g.mul(v[0], e);
            let gs = g.group_sum(t, 3);
            let a = g.slice_batch(gs, 0, 1);
            let b = g.slice_batch(gs, 1, 1);
            let cat = g.concat_channels(a, b);
            let sp = g.spatial_sum(cat);
            let sp = g.spatial_expand(sp, 3, 3);
            let t = g.mul(sp, cat);
            let sl = g.slice_channels(t, 1, 2);
            let em = g.embed_channels(sl, 0, 5);
            let ss = g.sample_sum(em);
            let ss = g.square(ss);
            let cs = g.channel_sum(t);
            let cs = g.square(cs);
            let a = g.sum(ss);
            let b = g.sum(cs);
            let r = g.reshape(b, &[1, 1]);
            let r = g.reshape(r, &[1]);
            g.add(a, r)
        });
    }

    #[test]
    fn conv_family_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ConvSpec::conv(6, 6, 4, 2, 1);
        let x = rand_tensor(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 4, 4], -1.0, 1.0);
        let y = rand_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
        check(vec![x, w, y], move |g, v| {
            let c = g.conv2d(v[0], v[1], spec);
            let d = g.conv2d_data(v[2], v[1], spec);
            let wg = g.conv2d_weight(v[0], v[2], spec);
            let c = g.square(c);
            let d = g.mul(d, v[0]);
            let wg = g.mul(wg, v[1]);
            let a = g.sum(c);
            let b = g.sum(d);
            let e = g.sum(wg);
            let t = g.add(a, b);
            g.add(t, e)
        });
    }

    #[test]
    fn double_backward_through_conv_and_leaky_relu() {
        // f(w) = || d/dx sum(leaky(conv(x, w))^2) ||^2 , differentiated w.r.t. w
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::conv(4, 4, 3, 1, 1);
        let x = rand_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[2, 2, 3, 3], -1.0, 1.0);
        check(vec![x, w], move |g, v| {
            let c = g.conv2d(v[0], v[1], spec);
            let c = g.leaky_relu(c, 0.2);
            let c = g.square(c);
            let s = g.sum(c);
            let gx = g.grad(s, &[v[0]])[0];
            let sq = g.square(gx);
            g.sum(sq)
        });
    }

    #[test]
    fn unrelated_input_gets_zero_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(2.0));
        let b = g.leaf(Tensor::scalar(3.0));
        let s = g.square(a);
        let gr = g.grad(s, &[a, b]);
        assert_eq!(g.value(gr[0]).item(), 4.0);
        assert_eq!(g.value(gr[1]).item(), 0.0);
    }
}
