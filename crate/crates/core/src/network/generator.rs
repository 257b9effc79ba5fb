use rand::Rng;

use super::params::{Bound, ParamStore};
use super::se::se_forward;
use super::{BranchMode, NetworkConfig};
use crate::autograd::{Backend, ConvSpec, Eager, Tensor};
use crate::error::{Error, Result};
use crate::raster::{Image, SoftMap};

/// Batch statistics of one normalization layer, measured during a training forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStat {
    pub name: String,
    pub mean: Vec<f64>,
    /// Biased (population) variance over the normalized elements.
    pub var: Vec<f64>,
    pub count: usize,
}

pub struct GenOutput<V> {
    /// `N×1×H×W` soft focus map in (0, 1).
    pub map: V,
    /// Empty in inference mode.
    pub bn_stats: Vec<BnStat>,
}

/// Shared-branch encoder, residual SE trunk and upsampling decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: NetworkConfig,
    params: ParamStore,
    /// Running means and variances of every normalization layer.
    buffers: ParamStore,
}

struct Ctx<'a, 'b, B: Backend> {
    b: &'b mut B,
    p: Bound<'a, B>,
    buffers: &'a ParamStore,
    train: bool,
    eps: f64,
    stats: Vec<BnStat>,
}

impl<B: Backend> Ctx<'_, '_, B> {
    fn conv(&mut self, x: &B::V, name: &str, kernel: usize, stride: usize, pad: usize) -> B::V {
        let s = self.b.shape(x);
        let spec = ConvSpec::conv(s[2], s[3], kernel, stride, pad);
        let w = self.p.var(&format!("{name}.w"));
        self.b.conv2d(x, &w, spec)
    }

    fn deconv(&mut self, x: &B::V, name: &str) -> B::V {
        let s = self.b.shape(x);
        let spec = ConvSpec::transposed(s[2], s[3], 4, 2, 1);
        let w = self.p.var(&format!("{name}.w"));
        self.b.conv2d_data(x, &w, spec)
    }

    fn bias(&mut self, x: &B::V, name: &str) -> B::V {
        let shape = self.b.shape(x);
        let bias = self.p.var(&format!("{name}.b"));
        let bias = self.b.channel_expand(&bias, &shape);
        self.b.add(x, &bias)
    }

    fn bn(&mut self, x: &B::V, name: &str) -> B::V {
        let shape = self.b.shape(x);
        let gamma = self.p.var(&format!("{name}.gamma"));
        let beta = self.p.var(&format!("{name}.beta"));
        if self.train {
            let beta_full = self.b.channel_expand(&beta, &shape);
            let count = shape[0] * shape[2] * shape[3];
            let sum = self.b.channel_sum(x);
            let mean = self.b.scale(&sum, 1.0 / count as f64);
            let mean_full = self.b.channel_expand(&mean, &shape);
            let centered = self.b.sub(x, &mean_full);
            let sq = self.b.square(&centered);
            let ss = self.b.channel_sum(&sq);
            let var = self.b.scale(&ss, 1.0 / count as f64);
            self.stats.push(BnStat {
                name: name.to_string(),
                mean: self.b.get(&mean).data().to_vec(),
                var: self.b.get(&var).data().to_vec(),
                count,
            });
            let var_eps = self.b.add_scalar(&var, self.eps);
            let std = self.b.sqrt(&var_eps);
            let gain = self.b.div(&gamma, &std);
            let gain_full = self.b.channel_expand(&gain, &shape);
            let y = self.b.mul(&centered, &gain_full);
            self.b.add(&y, &beta_full)
        } else {
            let rm = self
                .buffers
                .get(&format!("{name}.running_mean"))
                .expect("running mean")
                .clone();
            let rv = self
                .buffers
                .get(&format!("{name}.running_var"))
                .expect("running var")
                .clone();
            let rm = self.b.input(rm);
            let rv = self.b.input(rv);
            let var_eps = self.b.add_scalar(&rv, self.eps);
            let std = self.b.sqrt(&var_eps);
            let gain = self.b.div(&gamma, &std);
            self.b.channel_normalize(x, &rm, &gain, &beta)
        }
    }

    fn conv_bn_relu(
        &mut self,
        x: &B::V,
        name: &str,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> B::V {
        let y = self.conv(x, name, kernel, stride, pad);
        let y = self.bn(&y, &format!("{name}.bn"));
        self.b.relu(&y)
    }

    fn residual(&mut self, x: &B::V, name: &str, use_se: bool) -> B::V {
        let y = self.conv(x, &format!("{name}.conv1"), 3, 1, 1);
        let y = self.bn(&y, &format!("{name}.conv1.bn"));
        let y = self.b.relu(&y);
        let y = self.conv(&y, &format!("{name}.conv2"), 3, 1, 1);
        let y = self.bn(&y, &format!("{name}.conv2.bn"));
        let y = if use_se {
            let w1 = self.p.var(&format!("{name}.se.fc1.w"));
            let b1 = self.p.var(&format!("{name}.se.fc1.b"));
            let w2 = self.p.var(&format!("{name}.se.fc2.w"));
            let b2 = self.p.var(&format!("{name}.se.fc2.b"));
            se_forward(self.b, &y, &w1, &b1, &w2, &b2)
        } else {
            y
        };
        self.b.add(x, &y)
    }
}

impl Generator {
    pub fn new<R: Rng>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let std = config.init_std;
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut bn = |params: &mut ParamStore, name: &str, ch: usize| {
            params.push(format!("{name}.gamma"), Tensor::full(&[ch], 1.0));
            params.push(format!("{name}.beta"), Tensor::zeros(&[ch]));
            buffers.push(format!("{name}.running_mean"), Tensor::zeros(&[ch]));
            buffers.push(format!("{name}.running_var"), Tensor::full(&[ch], 1.0));
        };
        let cin = config.branches.input_channels();
        params.normal("enc1.w", &[c, cin, 7, 7], std, rng);
        bn(&mut params, "enc1.bn", c);
        params.normal("enc2.w", &[2 * c, c, 3, 3], std, rng);
        bn(&mut params, "enc2.bn", 2 * c);
        params.normal("enc3.w", &[4 * c, 2 * c, 3, 3], std, rng);
        bn(&mut params, "enc3.bn", 4 * c);
        let trunk = 4 * c;
        for i in 0..config.res_blocks {
            for conv in ["conv1", "conv2"] {
                params.normal(format!("res{i}.{conv}.w"), &[trunk, trunk, 3, 3], std, rng);
                bn(&mut params, &format!("res{i}.{conv}.bn"), trunk);
            }
            if config.use_se {
                let hidden = trunk / config.se_reduction;
                params.normal(format!("res{i}.se.fc1.w"), &[hidden, trunk, 1, 1], std, rng);
                params.push(format!("res{i}.se.fc1.b"), Tensor::zeros(&[hidden]));
                params.normal(format!("res{i}.se.fc2.w"), &[trunk, hidden, 1, 1], std, rng);
                params.push(format!("res{i}.se.fc2.b"), Tensor::zeros(&[trunk]));
            }
        }
        // Transposed-convolution weights are stored in the layout of the
        // forward convolution they transpose: (wide input, narrow output).
        params.normal("dec1.w", &[8 * c, 2 * c, 4, 4], std, rng);
        bn(&mut params, "dec1.bn", 2 * c);
        params.normal("dec2.w", &[2 * c, c, 4, 4], std, rng);
        bn(&mut params, "dec2.bn", c);
        params.normal("out.w", &[1, c, 7, 7], std, rng);
        params.push("out.b", Tensor::zeros(&[1]));
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    /// Reassembles a generator from stored tensors, checking them against a fresh layout.
    pub fn from_parts(
        config: NetworkConfig,
        params: ParamStore,
        buffers: ParamStore,
    ) -> Result<Self> {
        let template = Self::new(
            config.clone(),
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        check_layout(&template.params, &params, "generator parameters")?;
        check_layout(&template.buffers, &buffers, "generator buffers")?;
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    /// Stacks two `N×3×H×W` source batches into the branch layout the encoder consumes.
    ///
    /// Six-branch mode yields `6N×1×H×W` (every color plane of A, then of B);
    /// two-branch mode yields `2N×3×H×W`.
    pub fn pack_inputs(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() || a.shape().len() != 4 || a.shape()[1] != 3 {
            return Err(Error::shape(format!(
                "sources must be matching N×3×H×W batches, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (n, _, h, w) = a.dims4();
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::shape(format!(
                "spatial size {h}×{w} must be a multiple of 4 and at least 8"
            )));
        }
        let mut data = Vec::with_capacity(2 * a.len());
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
        let shape = match self.config.branches {
            BranchMode::Six => vec![6 * n, 1, h, w],
            BranchMode::Two => vec![2 * n, 3, h, w],
        };
        Ok(Tensor::new(shape, data))
    }

    /// Runs the network on a packed input. `params` must come from [`ParamStore::attach`].
    pub fn forward<B: Backend>(
        &self,
        b: &mut B,
        params: &[B::V],
        input: &B::V,
        train: bool,
    ) -> GenOutput<B::V> {
        let k = self.config.branches.per_source();
        let mut ctx = Ctx {
            b,
            p: Bound {
                store: &self.params,
                vars: params,
            },
            buffers: &self.buffers,
            train,
            eps: self.config.bn_eps,
            stats: Vec::new(),
        };
        let x = ctx.conv_bn_relu(input, "enc1", 7, 1, 3);
        let x = ctx.conv_bn_relu(&x, "enc2", 3, 2, 1);
        let mut x = ctx.conv_bn_relu(&x, "enc3", 3, 2, 1);
        for i in 0..self.config.res_blocks {
            x = ctx.residual(&x, &format!("res{i}"), self.config.use_se);
        }
        let merged = ctx.b.group_sum(&x, k);
        let merged = ctx.b.scale(&merged, 1.0 / k as f64);
        let n = ctx.b.shape(&merged)[0] / 2;
        let fa = ctx.b.slice_batch(&merged, 0, n);
        let fb = ctx.b.slice_batch(&merged, n, n);
        let x = ctx.b.concat_channels(&fa, &fb);
        let x = ctx.deconv(&x, "dec1");
        let x = ctx.bn(&x, "dec1.bn");
        let x = ctx.b.relu(&x);
        let x = ctx.deconv(&x, "dec2");
        let x = ctx.bn(&x, "dec2.bn");
        let x = ctx.b.relu(&x);
        let x = ctx.conv(&x, "out", 7, 1, 3);
        let x = ctx.bias(&x, "out");
        let map = ctx.b.sigmoid(&x);
        GenOutput {
            map,
            bn_stats: ctx.stats,
        }
    }

    /// Folds measured batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BnStat]) {
        let m = self.config.bn_momentum;
        for s in stats {
            let unbias = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            let i = self
                .buffers
                .index(&format!("{}.running_mean", s.name))
                .expect("running mean");
            for (r, &v) in self
                .buffers
                .tensor_mut(i)
                .data_mut()
                .iter_mut()
                .zip(&s.mean)
            {
                *r = (1.0 - m) * *r + m * v;
            }
            let i = self
                .buffers
                .index(&format!("{}.running_var", s.name))
                .expect("running var");
            for (r, &v) in self.buffers.tensor_mut(i).data_mut().iter_mut().zip(&s.var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
        }
    }

    /// Inference on `N×3×H×W` batches with running statistics, without recording a tape.
    pub fn infer_batch(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let input = self.pack_inputs(a, b)?;
        let mut e = Eager;
        let params = self.params.attach(&mut e);
        let input = e.input(input);
        let out = self.forward(&mut e, &params, &input, false);
        drop(input);
        Ok((*out.map).clone())
    }

    /// Soft focus map of one registered pair. Grayscale sources are replicated to three channels.
    pub fn infer(&self, a: &Image, b: &Image) -> Result<SoftMap> {
        if a.height() != b.height() || a.width() != b.width() {
            return Err(Error::shape(format!(
                "source sizes differ: {}×{} vs {}×{}",
                a.height(),
                a.width(),
                b.height(),
                b.width()
            )));
        }
        let (h, w) = (a.height(), a.width());
        let ta = Tensor::new(vec![1, 3, h, w], a.to_rgb().into_data());
        let tb = Tensor::new(vec![1, 3, h, w], b.to_rgb().into_data());
        let map = self.infer_batch(&ta, &tb)?;
        SoftMap::new(h, w, map.into_data())
    }
}

pub(crate) fn check_layout(template: &ParamStore, got: &ParamStore, what: &str) -> Result<()> {
    if template.len() != got.len() {
        return Err(Error::Checkpoint(format!(
            "{what}: expected {} tensors, found {}",
            template.len(),
            got.len()
        )));
    }
    for ((tn, tt), (gn, gt)) in template.iter().zip(got.iter()) {
        if tn != gn || tt.shape() != gt.shape() {
            return Err(Error::Checkpoint(format!(
                "{what}: expected {tn} {:?}, found {gn} {:?}",
                tt.shape(),
                gt.shape()
            )));
        }
    }
    Ok(())
}
