use rand::Rng;

use super::params::{Bound, ParamStore};
use super::NetworkConfig;
use crate::autograd::{Backend, ConvSpec, Tensor};
use crate::error::{Error, Result};

/// Channels of a critic input: source A (3), source B (3) and a focus map (1).
pub const CRITIC_INPUT_CHANNELS: usize = 7;

/// Anything that scores `N×7×H×W` stacks with one value per sample.
pub trait Critic {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Returns a length-`N` vector of scores. `params` come from [`ParamStore::attach`].
    fn score<B: Backend>(&self, b: &mut B, params: &[B::V], input: &B::V) -> B::V;
}

/// Strided 4×4 convolutions halving the resolution down to a single score.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: NetworkConfig,
    params: ParamStore,
}

impl Discriminator {
    pub fn new<R: Rng>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut cin = CRITIC_INPUT_CHANNELS;
        for (i, &cout) in config.critic_widths().iter().enumerate() {
            params.normal(format!("d{i}.w"), &[cout, cin, 4, 4], config.init_std, rng);
            params.push(format!("d{i}.b"), Tensor::zeros(&[cout]));
            cin = cout;
        }
        Ok(Self { config, params })
    }

    pub fn from_parts(config: NetworkConfig, params: ParamStore) -> Result<Self> {
        let template = Self::new(
            config.clone(),
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        super::generator::check_layout(&template.params, &params, "critic parameters")?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Checks that an input batch has the geometry the critic was built for.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let r = self.config.resolution;
        if shape.len() != 4 || shape[1] != CRITIC_INPUT_CHANNELS || shape[2] != r || shape[3] != r {
            return Err(Error::shape(format!(
                "critic expects N×{CRITIC_INPUT_CHANNELS}×{r}×{r}, got {shape:?}"
            )));
        }
        Ok(())
    }
}

impl Critic for Discriminator {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn score<B: Backend>(&self, b: &mut B, params: &[B::V], input: &B::V) -> B::V {
        let p = Bound::<B> {
            store: &self.params,
            vars: params,
        };
        let layers = self.config.critic_layers();
        let mut x = input.clone();
        for i in 0..layers {
            let s = b.shape(&x);
            let spec = ConvSpec::conv(s[2], s[3], 4, 2, 1);
            let w = p.var(&format!("d{i}.w"));
            x = b.conv2d(&x, &w, spec);
            let shape = b.shape(&x);
            let bias = p.var(&format!("d{i}.b"));
            let bias = b.channel_expand(&bias, &shape);
            x = b.add(&x, &bias);
            if i + 1 < layers {
                x = b.leaky_relu(&x, self.config.leaky_slope);
            }
        }
        let n = b.shape(&x)[0];
        let x = b.reshape(&x, &[n]);
        if self.config.critic_sigmoid {
            b.sigmoid(&x)
        } else {
            x
        }
    }
}
