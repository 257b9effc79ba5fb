//! One op vocabulary, two executors: the recording [`Graph`] and the tape-free [`Eager`].
//!
//! Network code is written once against [`Backend`]. Both executors call the
//! same kernels in the same order, so eager inference is bit-identical to a
//! recorded forward pass while dropping intermediates as soon as they die.

use std::rc::Rc;

use super::{kernels, sigmoid, ConvSpec, Graph, Tensor, Var};

pub trait Backend {
    type V: Clone;

    fn input(&mut self, t: Tensor) -> Self::V;
    fn get<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn add_scalar(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn leaky_relu(&mut self, a: &Self::V, slope: f64) -> Self::V;
    fn sigmoid(&mut self, a: &Self::V) -> Self::V;
    fn sqrt(&mut self, a: &Self::V) -> Self::V;
    fn conv2d(&mut self, x: &Self::V, w: &Self::V, spec: ConvSpec) -> Self::V;
    fn conv2d_data(&mut self, y: &Self::V, w: &Self::V, spec: ConvSpec) -> Self::V;
    fn channel_sum(&mut self, x: &Self::V) -> Self::V;
    fn channel_expand(&mut self, v: &Self::V, shape: &[usize]) -> Self::V;
    fn spatial_sum(&mut self, x: &Self::V) -> Self::V;
    fn spatial_expand(&mut self, v: &Self::V, h: usize, w: usize) -> Self::V;
    fn group_sum(&mut self, x: &Self::V, k: usize) -> Self::V;
    fn concat_channels(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn slice_batch(&mut self, x: &Self::V, start: usize, len: usize) -> Self::V;
    fn slice_channels(&mut self, x: &Self::V, start: usize, len: usize) -> Self::V;
    fn sample_sum(&mut self, x: &Self::V) -> Self::V;
    fn reshape(&mut self, x: &Self::V, shape: &[usize]) -> Self::V;

    fn relu(&mut self, a: &Self::V) -> Self::V {
        self.leaky_relu(a, 0.0)
    }

    fn square(&mut self, a: &Self::V) -> Self::V {
        self.mul(a, a)
    }

    /// Per-channel `(x − shift) · gain + offset` with `C`-vectors of coefficients.
    fn channel_normalize(
        &mut self,
        x: &Self::V,
        shift: &Self::V,
        gain: &Self::V,
        offset: &Self::V,
    ) -> Self::V {
        let shape = self.shape(x);
        let shift = self.channel_expand(shift, &shape);
        let gain = self.channel_expand(gain, &shape);
        let offset = self.channel_expand(offset, &shape);
        let centered = self.sub(x, &shift);
        let y = self.mul(&centered, &gain);
        self.add(&y, &offset)
    }

    fn shape(&self, v: &Self::V) -> Vec<usize> {
        self.get(v).shape().to_vec()
    }
}

impl Backend for Graph {
    type V = Var;

    fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }
    fn get<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.value(*v)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        Graph::add(self, *a, *b)
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        Graph::sub(self, *a, *b)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        Graph::mul(self, *a, *b)
    }
    fn div(&mut self, a: &Var, b: &Var) -> Var {
        Graph::div(self, *a, *b)
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        Graph::scale(self, *a, c)
    }
    fn add_scalar(&mut self, a: &Var, c: f64) -> Var {
        Graph::add_scalar(self, *a, c)
    }
    fn leaky_relu(&mut self, a: &Var, slope: f64) -> Var {
        Graph::leaky_relu(self, *a, slope)
    }
    fn sigmoid(&mut self, a: &Var) -> Var {
        Graph::sigmoid(self, *a)
    }
    fn sqrt(&mut self, a: &Var) -> Var {
        Graph::sqrt(self, *a)
    }
    fn conv2d(&mut self, x: &Var, w: &Var, spec: ConvSpec) -> Var {
        Graph::conv2d(self, *x, *w, spec)
    }
    fn conv2d_data(&mut self, y: &Var, w: &Var, spec: ConvSpec) -> Var {
        Graph::conv2d_data(self, *y, *w, spec)
    }
    fn channel_sum(&mut self, x: &Var) -> Var {
        Graph::channel_sum(self, *x)
    }
    fn channel_expand(&mut self, v: &Var, shape: &[usize]) -> Var {
        Graph::channel_expand(self, *v, shape)
    }
    fn spatial_sum(&mut self, x: &Var) -> Var {
        Graph::spatial_sum(self, *x)
    }
    fn spatial_expand(&mut self, v: &Var, h: usize, w: usize) -> Var {
        Graph::spatial_expand(self, *v, h, w)
    }
    fn group_sum(&mut self, x: &Var, k: usize) -> Var {
        Graph::group_sum(self, *x, k)
    }
    fn concat_channels(&mut self, a: &Var, b: &Var) -> Var {
        Graph::concat_channels(self, *a, *b)
    }
    fn slice_batch(&mut self, x: &Var, start: usize, len: usize) -> Var {
        Graph::slice_batch(self, *x, start, len)
    }
    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Var {
        Graph::slice_channels(self, *x, start, len)
    }
    fn sample_sum(&mut self, x: &Var) -> Var {
        Graph::sample_sum(self, *x)
    }
    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Var {
        Graph::reshape(self, *x, shape)
    }
}

/// Executes ops immediately; values are reference counted and freed when dropped.
#[derive(Debug, Default)]
pub struct Eager;

type Val = Rc<Tensor>;

impl Backend for Eager {
    type V = Val;

    fn input(&mut self, t: Tensor) -> Val {
        Rc::new(t)
    }
    fn get<'a>(&'a self, v: &'a Val) -> &'a Tensor {
        v
    }
    fn add(&mut self, a: &Val, b: &Val) -> Val {
        Rc::new(a.zip_map(b, |x, y| x + y))
    }
    fn sub(&mut self, a: &Val, b: &Val) -> Val {
        Rc::new(a.zip_map(b, |x, y| x - y))
    }
    fn mul(&mut self, a: &Val, b: &Val) -> Val {
        Rc::new(a.zip_map(b, |x, y| x * y))
    }
    fn div(&mut self, a: &Val, b: &Val) -> Val {
        Rc::new(a.zip_map(b, |x, y| x / y))
    }
    fn scale(&mut self, a: &Val, c: f64) -> Val {
        Rc::new(a.map(|x| x * c))
    }
    fn add_scalar(&mut self, a: &Val, c: f64) -> Val {
        Rc::new(a.map(|x| x + c))
    }
    fn leaky_relu(&mut self, a: &Val, slope: f64) -> Val {
        Rc::new(a.map(|v| v * if v > 0.0 { 1.0 } else { slope }))
    }
    fn sigmoid(&mut self, a: &Val) -> Val {
        Rc::new(a.map(sigmoid))
    }
    fn sqrt(&mut self, a: &Val) -> Val {
        Rc::new(a.map(f64::sqrt))
    }
    fn conv2d(&mut self, x: &Val, w: &Val, spec: ConvSpec) -> Val {
        Rc::new(kernels::conv2d(x, w, &spec))
    }
    fn conv2d_data(&mut self, y: &Val, w: &Val, spec: ConvSpec) -> Val {
        Rc::new(kernels::conv2d_data(y, w, &spec))
    }
    fn channel_sum(&mut self, x: &Val) -> Val {
        Rc::new(kernels::channel_sum(x))
    }
    fn channel_normalize(&mut self, x: &Val, shift: &Val, gain: &Val, offset: &Val) -> Val {
        Rc::new(kernels::channel_normalize(x, shift, gain, offset))
    }
    fn channel_expand(&mut self, v: &Val, shape: &[usize]) -> Val {
        Rc::new(kernels::channel_expand(v, shape))
    }
    fn spatial_sum(&mut self, x: &Val) -> Val {
        Rc::new(kernels::spatial_sum(x))
    }
    fn spatial_expand(&mut self, v: &Val, h: usize, w: usize) -> Val {
        Rc::new(kernels::spatial_expand(v, h, w))
    }
    fn group_sum(&mut self, x: &Val, k: usize) -> Val {
        Rc::new(kernels::group_sum(x, k))
    }
    fn concat_channels(&mut self, a: &Val, b: &Val) -> Val {
        Rc::new(kernels::concat_channels(a, b))
    }
    fn slice_batch(&mut self, x: &Val, start: usize, len: usize) -> Val {
        Rc::new(kernels::slice_batch(x, start, len))
    }
    fn slice_channels(&mut self, x: &Val, start: usize, len: usize) -> Val {
        Rc::new(kernels::slice_channels(x, start, len))
    }
    fn sample_sum(&mut self, x: &Val) -> Val {
        Rc::new(kernels::sample_sum(x))
    }
    fn reshape(&mut self, x: &Val, shape: &[usize]) -> Val {
        Rc::new((**x).clone().reshaped(shape.to_vec()))
    }
}
