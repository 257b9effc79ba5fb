use super::{AdversarialLoss, ReconstructionLoss, TrainConfig};
use crate::autograd::{Graph, Tensor, Var};
use crate::network::Critic;

/// Added under the square root of the gradient norm so the penalty stays
/// differentiable when a critic gradient vanishes exactly.
pub const GP_NORM_EPS: f64 = 1e-12;

/// Keeps logarithms finite when a map value saturates at 0 or 1.
const BCE_EPS: f64 = 1e-12;

pub struct CriticTerms {
    pub total: Var,
    pub adv: Var,
    pub gp: Var,
}

pub struct GeneratorTerms {
    pub total: Var,
    pub adv: Var,
    pub rec: Var,
}

fn score<C: Critic>(g: &mut Graph, critic: &C, cvars: &[Var], sources: Var, map: Var) -> Var {
    let x = g.concat_channels(sources, map);
    critic.score(g, cvars, &x)
}

/// Critic objective on `N×6×H×W` sources, real maps and generated maps.
///
/// `fake` is used as data only. `eps` holds one interpolation weight per sample.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss<C: Critic>(
    g: &mut Graph,
    critic: &C,
    cvars: &[Var],
    sources: Var,
    real: Var,
    fake: Var,
    eps: &[f64],
    cfg: &TrainConfig,
) -> CriticTerms {
    let fake = g.detach(fake);
    let d_real = score(g, critic, cvars, sources, real);
    let d_fake = score(g, critic, cvars, sources, fake);
    let adv = match cfg.adversarial {
        AdversarialLoss::Wasserstein => {
            let mf = g.mean(d_fake);
            let mr = g.mean(d_real);
            g.sub(mf, mr)
        }
        AdversarialLoss::LeastSquares => {
            let r = g.add_scalar(d_real, -1.0);
            let r = g.square(r);
            let r = g.mean(r);
            let f = g.square(d_fake);
            let f = g.mean(f);
            let s = g.add(r, f);
            g.scale(s, 0.5)
        }
    };

    let interp = interpolate(g.value(real), g.value(fake), eps);
    let interp = g.leaf(interp);
    let d_interp = score(g, critic, cvars, sources, interp);
    let s = g.sum(d_interp);
    let grad = g.grad(s, &[interp])[0];
    let sq = g.square(grad);
    let per_sample = g.sample_sum(sq);
    let per_sample = g.add_scalar(per_sample, GP_NORM_EPS);
    let norm = g.sqrt(per_sample);
    let dev = g.add_scalar(norm, -1.0);
    let dev = g.square(dev);
    let gp = g.mean(dev);

    let total = if cfg.lambda_gp == 0.0 {
        adv
    } else {
        let weighted = g.scale(gp, cfg.lambda_gp);
        g.add(adv, weighted)
    };
    CriticTerms { total, adv, gp }
}

/// `ε·real + (1−ε)·fake` with one `ε` per sample.
pub fn interpolate(real: &Tensor, fake: &Tensor, eps: &[f64]) -> Tensor {
    let n = real.shape()[0];
    assert_eq!(eps.len(), n, "one interpolation weight per sample");
    let per = real.len() / n;
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (&r, &f))| {
            let e = eps[i / per];
            e * r + (1.0 - e) * f
        })
        .collect();
    Tensor::new(real.shape().to_vec(), data)
}

/// Generator objective; `fake` must carry its history back to the generator parameters.
pub fn generator_loss<C: Critic>(
    g: &mut Graph,
    critic: &C,
    cvars: &[Var],
    sources: Var,
    real: Var,
    fake: Var,
    cfg: &TrainConfig,
) -> GeneratorTerms {
    let d_fake = score(g, critic, cvars, sources, fake);
    let adv = match cfg.adversarial {
        AdversarialLoss::Wasserstein => {
            let m = g.mean(d_fake);
            g.scale(m, -1.0)
        }
        AdversarialLoss::LeastSquares => {
            let f = g.add_scalar(d_fake, -1.0);
            let f = g.square(f);
            let f = g.mean(f);
            g.scale(f, 0.5)
        }
    };
    let rec = match cfg.reconstruction {
        ReconstructionLoss::L1 => {
            let d = g.sub(real, fake);
            let d = g.abs(d);
            g.mean(d)
        }
        ReconstructionLoss::Bce => {
            let p = g.add_scalar(fake, BCE_EPS);
            let lp = g.ln(p);
            let pos = g.mul(real, lp);
            let q = g.scale(fake, -1.0);
            let q = g.add_scalar(q, 1.0 + BCE_EPS);
            let lq = g.ln(q);
            let nr = g.scale(real, -1.0);
            let nr = g.add_scalar(nr, 1.0);
            let neg = g.mul(nr, lq);
            let s = g.add(pos, neg);
            let m = g.mean(s);
            g.scale(m, -1.0)
        }
    };
    let weighted = g.scale(rec, cfg.lambda_rec);
    let total = g.add(adv, weighted);
    GeneratorTerms { total, adv, rec }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Backend, Graph};
    use crate::network::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `D(x) = w · Σ map`, ignoring the source channels.
    struct LinearCritic {
        params: ParamStore,
    }

    impl LinearCritic {
        fn new(w: f64) -> Self {
            let mut params = ParamStore::new();
            params.push("w", Tensor::scalar(w).reshaped(vec![1]));
            Self { params }
        }
    }

    impl Critic for LinearCritic {
        fn params(&self) -> &ParamStore {
            &self.params
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.params
        }
        fn score<B: Backend>(&self, b: &mut B, params: &[B::V], input: &B::V) -> B::V {
            let c = b.shape(input)[1];
            let map = b.slice_channels(input, c - 1, 1);
            let s = b.sample_sum(&map);
            let n = b.shape(&s)[0];
            // w·s as a 1×1 convolution of the per-sample sums.
            let s = b.reshape(&s, &[n, 1, 1, 1]);
            let w = b.reshape(&params[0], &[1, 1, 1, 1]);
            let ws = b.conv2d(&s, &w, crate::autograd::ConvSpec::conv(1, 1, 1, 1, 0));
            b.reshape(&ws, &[n])
        }
    }

    fn setup(g: &mut Graph, rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> (Var, Var, Var) {
        let mut t = |c: usize| {
            Tensor::new(
                vec![n, c, h, w],
                (0..n * c * h * w).map(|_| rng.gen()).collect(),
            )
        };
        let (s, r, f) = (t(6), t(1), t(1));
        (g.leaf(s), g.leaf(r), g.leaf(f))
    }

    #[test]
    fn linear_critic_penalty_closed_form() {
        // D = 2·Σ over d = 4 map elements: ‖∇‖ = 2·√4 = 4, gp = (4 − 1)² = 9.
        let critic = LinearCritic::new(2.0);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, r, f) = setup(&mut g, &mut rng, 3, 2, 2);
        let cv = critic.params().attach(&mut g);
        let t = critic_loss(
            &mut g,
            &critic,
            &cv,
            s,
            r,
            f,
            &[0.1, 0.5, 0.9],
            &TrainConfig::default(),
        );
        let gp = g.value(t.gp).item();
        assert!((gp - 9.0).abs() < 1e-9, "gp = {gp}");
        // Total = adv + 10·gp.
        let adv = g.value(t.adv).item();
        assert!((g.value(t.total).item() - (adv + 90.0)).abs() < 1e-9);
    }

    #[test]
    fn unit_gradient_critic_has_zero_penalty() {
        // D = 0.5·Σ over 4 elements: ‖∇‖ = 0.5·2 = 1.
        let critic = LinearCritic::new(0.5);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, r, f) = setup(&mut g, &mut rng, 2, 2, 2);
        let cv = critic.params().attach(&mut g);
        let t = critic_loss(
            &mut g,
            &critic,
            &cv,
            s,
            r,
            f,
            &[0.3, 0.7],
            &TrainConfig::default(),
        );
        assert!(g.value(t.gp).item().abs() < 1e-12);
    }

    #[test]
    fn adversarial_terms_match_definitions() {
        let critic = LinearCritic::new(1.5);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (s, r, f) = setup(&mut g, &mut rng, 2, 3, 3);
        let cv = critic.params().attach(&mut g);
        let dsum = |t: &Tensor, i: usize| 1.5 * t.data()[i * 9..(i + 1) * 9].iter().sum::<f64>();
        let (rv, fv) = (g.value(r).clone(), g.value(f).clone());
        let mean_real = (dsum(&rv, 0) + dsum(&rv, 1)) / 2.0;
        let mean_fake = (dsum(&fv, 0) + dsum(&fv, 1)) / 2.0;
        let ct = critic_loss(
            &mut g,
            &critic,
            &cv,
            s,
            r,
            f,
            &[0.5, 0.5],
            &TrainConfig::default(),
        );
        assert!((g.value(ct.adv).item() - (mean_fake - mean_real)).abs() < 1e-12);
        let gt = generator_loss(&mut g, &critic, &cv, s, r, f, &TrainConfig::default());
        assert!((g.value(gt.adv).item() + mean_fake).abs() < 1e-12);

        let ls = TrainConfig {
            adversarial: AdversarialLoss::LeastSquares,
            ..Default::default()
        };
        let ct = critic_loss(&mut g, &critic, &cv, s, r, f, &[0.5, 0.5], &ls);
        let want = 0.5 * ((dsum(&rv, 0) - 1.0).powi(2) + (dsum(&rv, 1) - 1.0).powi(2)) / 2.0
            + 0.5 * (dsum(&fv, 0).powi(2) + dsum(&fv, 1).powi(2)) / 2.0;
        assert!((g.value(ct.adv).item() - want).abs() < 1e-12);
        let gt = generator_loss(&mut g, &critic, &cv, s, r, f, &ls);
        let want = 0.5 * ((dsum(&fv, 0) - 1.0).powi(2) + (dsum(&fv, 1) - 1.0).powi(2)) / 2.0;
        assert!((g.value(gt.adv).item() - want).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_oracles() {
        let critic = LinearCritic::new(0.0);
        let mut g = Graph::new();
        let cv = critic.params().attach(&mut g);
        let s = g.leaf(Tensor::zeros(&[1, 6, 2, 2]));
        let ones = g.leaf(Tensor::full(&[1, 1, 2, 2], 1.0));
        let zeros = g.leaf(Tensor::zeros(&[1, 1, 2, 2]));
        let cfg = TrainConfig::default();
        let t = generator_loss(&mut g, &critic, &cv, s, ones, ones, &cfg);
        assert_eq!(g.value(t.rec).item(), 0.0);
        let t = generator_loss(&mut g, &critic, &cv, s, ones, zeros, &cfg);
        assert_eq!(g.value(t.rec).item(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let oracle = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 50.0;
        let s = g.leaf(Tensor::zeros(&[2, 6, 5, 5]));
        let ra = g.leaf(Tensor::new(vec![2, 1, 5, 5], a.clone()));
        let fb = g.leaf(Tensor::new(vec![2, 1, 5, 5], b.clone()));
        let t = generator_loss(&mut g, &critic, &cv, s, ra, fb, &cfg);
        assert!((g.value(t.rec).item() - oracle).abs() < 1e-12);
        assert!((g.value(t.total).item() - 10.0 * oracle).abs() < 1e-12);

        let bce = TrainConfig {
            reconstruction: ReconstructionLoss::Bce,
            ..Default::default()
        };
        let t = generator_loss(&mut g, &critic, &cv, s, ra, fb, &bce);
        let oracle = -a
            .iter()
            .zip(&b)
            .map(|(y, p)| y * (p + 1e-12).ln() + (1.0 - y) * (1.0 - p + 1e-12).ln())
            .sum::<f64>()
            / 50.0;
        assert!((g.value(t.rec).item() - oracle).abs() < 1e-12);
    }

    #[test]
    fn penalty_is_nonnegative_for_random_linear_critics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let critic = LinearCritic::new(rng.gen_range(-3.0..3.0));
            let mut g = Graph::new();
            let (s, r, f) = setup(&mut g, &mut rng, 2, 3, 2);
            let cv = critic.params().attach(&mut g);
            let t = critic_loss(
                &mut g,
                &critic,
                &cv,
                s,
                r,
                f,
                &[rng.gen(), rng.gen()],
                &TrainConfig::default(),
            );
            assert!(g.value(t.gp).item() >= 0.0);
        }
    }
}
