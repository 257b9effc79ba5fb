//! Squeeze-and-excitation channel gating.

use crate::autograd::{Backend, ConvSpec, Eager, Tensor};
use crate::error::{Error, Result};

/// Two fully connected maps `C → C/r → C`, stored as 1×1 convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct SeBlockParams {
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

impl SeBlockParams {
    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::invalid(format!(
                "reduction {reduction} must divide {channels}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            fc1_w: Tensor::zeros(&[hidden, channels, 1, 1]),
            fc1_b: Tensor::zeros(&[hidden]),
            fc2_w: Tensor::zeros(&[channels, hidden, 1, 1]),
            fc2_b: Tensor::zeros(&[channels]),
        })
    }

    pub fn channels(&self) -> usize {
        self.fc1_w.shape()[1]
    }

    fn validate(&self) -> Result<()> {
        let (hidden, c, _, _) = self.fc1_w.dims4();
        let (c2, h2, _, _) = self.fc2_w.dims4();
        if c2 != c
            || h2 != hidden
            || self.fc1_b.len() != hidden
            || self.fc2_b.len() != c
            || c % hidden != 0
        {
            return Err(Error::shape("inconsistent SE parameter shapes"));
        }
        Ok(())
    }
}

/// Squeeze (spatial mean), excite (FC → ReLU → FC → logistic) and rescale channels.
pub fn se_forward<B: Backend>(
    b: &mut B,
    x: &B::V,
    fc1_w: &B::V,
    fc1_b: &B::V,
    fc2_w: &B::V,
    fc2_b: &B::V,
) -> B::V {
    let shape = b.shape(x);
    let (h, w) = (shape[2], shape[3]);
    let squeezed = b.spatial_sum(x);
    let squeezed = b.scale(&squeezed, 1.0 / (h * w) as f64);
    let point = ConvSpec::conv(1, 1, 1, 1, 0);
    let z = b.conv2d(&squeezed, fc1_w, point);
    let zshape = b.shape(&z);
    let bias = b.channel_expand(fc1_b, &zshape);
    let z = b.add(&z, &bias);
    let z = b.relu(&z);
    let e = b.conv2d(&z, fc2_w, point);
    let eshape = b.shape(&e);
    let bias = b.channel_expand(fc2_b, &eshape);
    let e = b.add(&e, &bias);
    let gate = b.sigmoid(&e);
    let gate = b.spatial_expand(&gate, h, w);
    b.mul(x, &gate)
}

/// SE block on a concrete `N×C×H×W` activation.
pub fn se_block(features: &Tensor, params: &SeBlockParams) -> Result<Tensor> {
    params.validate()?;
    if features.shape().len() != 4 || features.shape()[1] != params.channels() {
        return Err(Error::shape(format!(
            "SE block expects {} channels, got shape {:?}",
            params.channels(),
            features.shape()
        )));
    }
    let mut b = Eager;
    let x = b.input(features.clone());
    let p =
        [&params.fc1_w, &params.fc1_b, &params.fc2_w, &params.fc2_b].map(|t| b.input(t.clone()));
    let out = se_forward(&mut b, &x, &p[0], &p[1], &p[2], &p[3]);
    Ok((*out).clone())
}

/// Per-channel spatial mean of an `N×C×H×W` tensor.
pub fn squeeze(features: &Tensor) -> Vec<f64> {
    let (_, _, h, w) = features.dims4();
    let mut b = Eager;
    let x = b.input(features.clone());
    let s = b.spatial_sum(&x);
    b.scale(&s, 1.0 / (h * w) as f64).data().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, c: usize, r: usize) -> SeBlockParams {
        let mut p = SeBlockParams::zeros(c, r).unwrap();
        for t in [&mut p.fc1_w, &mut p.fc1_b, &mut p.fc2_w, &mut p.fc2_b] {
            for v in t.data_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
        }
        p
    }

    #[test]
    fn output_never_exceeds_input_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_params(&mut rng, 8, 4);
        let x = Tensor::new(
            vec![2, 8, 3, 3],
            (0..144).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        );
        let y = se_block(&x, &p).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!(b.abs() <= a.abs());
        }
    }

    #[test]
    fn zero_input_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 4, 2);
        let y = se_block(&Tensor::zeros(&[1, 4, 5, 5]), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn squeeze_matches_direct_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let consts: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut data = Vec::new();
        for &c in &consts {
            data.extend(std::iter::repeat_n(c, 4 * 7));
        }
        let x = Tensor::new(vec![1, 6, 4, 7], data);
        let s = squeeze(&x);
        for (got, want) in s.iter().zip(&consts) {
            // oracle: arithmetic mean of 28 equal values
            let mean = (0..28).map(|_| *want).sum::<f64>() / 28.0;
            assert!((got - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let p = SeBlockParams::zeros(8, 4).unwrap();
        assert!(se_block(&Tensor::zeros(&[1, 4, 2, 2]), &p).is_err());
        assert!(SeBlockParams::zeros(8, 3).is_err());
    }
}
