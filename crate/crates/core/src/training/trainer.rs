use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{critic_loss, generator_loss};
use super::{Adam, LossBreakdown, TrainConfig};
use crate::autograd::{kernels, Backend, Eager, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::fusion::{binarize, remove_small_regions, srr_threshold, FusionOptions};
use crate::network::{Checkpoint, Critic, Discriminator, Generator, NetworkConfig};
use crate::synth::TrainingSample;

/// Stacked tensors of a mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `N×3×H×W` source A (grayscale replicated).
    pub a: Tensor,
    pub b: Tensor,
    /// `N×6×H×W`: source A channels followed by source B channels.
    pub sources: Tensor,
    /// `N×1×H×W` ground-truth focus maps.
    pub real: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&TrainingSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("empty batch"))?;
        let (h, w) = (first.focus_map.height(), first.focus_map.width());
        let n = samples.len();
        let (mut a, mut b, mut real) = (Vec::new(), Vec::new(), Vec::new());
        for s in samples {
            if s.focus_map.height() != h || s.focus_map.width() != w {
                return Err(Error::shape("all samples in a batch must share one size"));
            }
            a.extend_from_slice(s.source_a.to_rgb().data());
            b.extend_from_slice(s.source_b.to_rgb().data());
            real.extend(s.focus_map.as_reals());
        }
        let a = Tensor::new(vec![n, 3, h, w], a);
        let b = Tensor::new(vec![n, 3, h, w], b);
        let sources = kernels::concat_channels(&a, &b);
        Ok(Self {
            a,
            b,
            sources,
            real: Tensor::new(vec![n, 1, h, w], real),
        })
    }
}

/// One loss-log line, written after every generator update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub adv_d: f64,
    pub gp: f64,
    pub adv_g: f64,
    pub rec: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

pub const LOG_HEADER: &str = "step,adv_d,gp,adv_g,rec,lr_g,lr_d";

impl LogRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.adv_d, self.gp, self.adv_g, self.rec, self.lr_g, self.lr_d
        )
    }
}

/// Where a run persists its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainRun {
    /// Directory receiving `checkpoint.bin` and `loss_log.csv`; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Extra provenance stored in checkpoint headers.
    pub meta: serde_json::Value,
}

impl TrainRun {
    pub fn checkpoint_path(dir: &Path) -> PathBuf {
        dir.join("checkpoint.bin")
    }

    pub fn log_path(dir: &Path) -> PathBuf {
        dir.join("loss_log.csv")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub generator: Generator,
    pub critic: Discriminator,
    pub log: Vec<LogRow>,
    pub last_losses: LossBreakdown,
    /// Generator updates actually performed.
    pub steps: usize,
    /// Mean final-map IoU at the last check, if any check ran.
    pub last_iou: Option<f64>,
}

/// Epoch-wise shuffled sampling; indices inside a batch are sorted.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out.sort_unstable();
        out
    }
}

struct LogFile(Option<BufWriter<File>>);

impl LogFile {
    fn create(dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Self(None));
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = TrainRun::log_path(dir);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(Self(Some(w)))
    }

    fn push(&mut self, row: &LogRow) -> Result<()> {
        if let Some(w) = &mut self.0 {
            writeln!(w, "{}", row.csv())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io("loss_log.csv", e))?;
        }
        Ok(())
    }
}

fn save(
    run: &TrainRun,
    cfg: &TrainConfig,
    g: &Generator,
    d: &Discriminator,
    step: usize,
) -> Result<()> {
    let Some(dir) = &run.out_dir else {
        return Ok(());
    };
    let meta = serde_json::json!({
        "step": step,
        "seed": cfg.seed,
        "train": cfg,
        "run": run.meta,
    });
    Checkpoint::from_models(g, Some(d), meta).save(&TrainRun::checkpoint_path(dir))
}

fn to_tensors(g: &Graph, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| g.value(v).clone()).collect()
}

/// Mean IoU between refined generator maps (threshold, small-region removal)
/// and the ground truth over `samples`.
pub fn mean_final_iou(
    generator: &Generator,
    samples: &[TrainingSample],
    opts: &FusionOptions,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    let mut total = 0.0;
    for s in samples {
        let raw = generator.infer(&s.source_a, &s.source_b)?;
        let mut map = binarize(&raw, opts.threshold);
        if opts.srr {
            map = remove_small_regions(
                &map,
                srr_threshold(map.width(), map.height()),
                opts.fill_holes,
            );
        }
        total += map.iou(&s.focus_map);
    }
    Ok(total / samples.len() as f64)
}

fn non_finite(step: usize, what: &str, values: &[f64]) -> Option<Error> {
    values
        .iter()
        .any(|v| !v.is_finite())
        .then(|| Error::NonFiniteLoss {
            step,
            detail: format!("{what}: {values:?}"),
        })
}

/// Alternating critic/generator optimization on an in-memory dataset.
///
/// Each generator step is preceded by `critic_steps_per_gen` critic updates.
/// A non-finite loss stops the run after writing the last good checkpoint.
pub fn train(
    samples: &[TrainingSample],
    network: &NetworkConfig,
    cfg: &TrainConfig,
    run: &TrainRun,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    network.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let r = network.resolution;
    if let Some(s) = samples
        .iter()
        .find(|s| s.focus_map.height() != r || s.focus_map.width() != r)
    {
        return Err(Error::shape(format!(
            "training samples must be {r}×{r}, found {}×{}",
            s.focus_map.height(),
            s.focus_map.width()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = Generator::new(network.clone(), &mut rng)?;
    let mut critic = Discriminator::new(network.clone(), &mut rng)?;
    let mut opt_g = Adam::new(
        generator.params(),
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut opt_d = Adam::new(
        critic.params(),
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut sampler = Sampler::new(samples.len());
    let mut logf = LogFile::create(run.out_dir.as_deref())?;
    let mut log = Vec::with_capacity(cfg.total_steps);
    let mut last = LossBreakdown::default();
    let mut last_iou = None;
    let batch_size = cfg.batch_size.min(samples.len());
    info!(
        "training {} generator steps on {} samples (generator {} parameters, critic {})",
        cfg.total_steps,
        samples.len(),
        generator.params().numel(),
        critic.params().numel()
    );

    let mut steps = 0;
    for step in 0..cfg.total_steps {
        let factor = cfg.lr_factor(step);
        let (lr_g, lr_d) = (cfg.lr_g * factor, cfg.lr_d * factor);

        // Generated maps only change when the generator does, so they are
        // reused across critic steps that draw the same batch.
        let mut cached: Option<(Vec<usize>, Tensor)> = None;
        for _ in 0..cfg.critic_steps_per_gen {
            let idx = sampler.next(batch_size, &mut rng);
            let refs: Vec<&TrainingSample> = idx.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::from_samples(&refs)?;
            let fake = match &cached {
                Some((ci, f)) if *ci == idx => f.clone(),
                _ => {
                    let mut e = Eager;
                    let gv = generator.params().attach(&mut e);
                    let input = e.input(generator.pack_inputs(&batch.a, &batch.b)?);
                    let f = (*generator.forward(&mut e, &gv, &input, true).map).clone();
                    cached = Some((idx.clone(), f.clone()));
                    f
                }
            };
            let eps: Vec<f64> = (0..idx.len()).map(|_| rng.gen::<f64>()).collect();
            let mut g = Graph::new();
            let cv = critic.params().attach(&mut g);
            let s = g.leaf(batch.sources);
            let real = g.leaf(batch.real);
            let fake = g.leaf(fake);
            let terms = critic_loss(&mut g, &critic, &cv, s, real, fake, &eps, cfg);
            last.adv_d = g.value(terms.adv).item();
            last.gp = g.value(terms.gp).item();
            last.total_d = g.value(terms.total).item();
            if let Some(err) = non_finite(step, "critic loss", &[last.adv_d, last.gp, last.total_d])
            {
                save(run, cfg, &generator, &critic, step)?;
                return Err(err);
            }
            let grads = g.grad(terms.total, &cv);
            let grads = to_tensors(&g, &grads);
            opt_d.update(critic.params_mut(), &grads, lr_d);
        }

        let idx = sampler.next(batch_size, &mut rng);
        let refs: Vec<&TrainingSample> = idx.iter().map(|&i| &samples[i]).collect();
        let batch = Batch::from_samples(&refs)?;
        let mut g = Graph::new();
        let gv = generator.params().attach(&mut g);
        let input = g.leaf(generator.pack_inputs(&batch.a, &batch.b)?);
        let out = generator.forward(&mut g, &gv, &input, true);
        let cv = critic.params().attach(&mut g);
        let s = g.leaf(batch.sources);
        let real = g.leaf(batch.real);
        let terms = generator_loss(&mut g, &critic, &cv, s, real, out.map, cfg);
        last.adv_g = g.value(terms.adv).item();
        last.rec = g.value(terms.rec).item();
        last.total_g = g.value(terms.total).item();
        if let Some(err) = non_finite(
            step,
            "generator loss",
            &[last.adv_g, last.rec, last.total_g],
        ) {
            save(run, cfg, &generator, &critic, step)?;
            return Err(err);
        }
        let grads = g.grad(terms.total, &gv);
        let grads = to_tensors(&g, &grads);
        drop(g);
        opt_g.update(generator.params_mut(), &grads, lr_g);
        generator.update_running_stats(&out.bn_stats);
        if !generator.params().all_finite() || !critic.params().all_finite() {
            warn!("non-finite parameters after step {step}");
            return Err(Error::NonFiniteLoss {
                step,
                detail: "parameters became non-finite".into(),
            });
        }
        steps = step + 1;

        let row = LogRow {
            step,
            adv_d: last.adv_d,
            gp: last.gp,
            adv_g: last.adv_g,
            rec: last.rec,
            lr_g,
            lr_d,
        };
        logf.push(&row)?;
        log.push(row);
        debug!("step {step}: {row:?}");

        if cfg.checkpoint_interval > 0
            && steps % cfg.checkpoint_interval == 0
            && steps < cfg.total_steps
        {
            save(run, cfg, &generator, &critic, steps)?;
        }
        if let Some(target) = cfg.target_iou {
            if steps % cfg.iou_check_interval == 0 {
                let v = mean_final_iou(&generator, samples, &FusionOptions::default())?;
                info!("step {steps}: mean IoU {v:.4}");
                last_iou = Some(v);
                if v >= target {
                    info!("IoU target {target} reached after {steps} generator steps");
                    break;
                }
            }
        }
    }
    save(run, cfg, &generator, &critic, steps)?;
    Ok(TrainOutcome {
        generator,
        critic,
        log,
        last_losses: last,
        steps,
        last_iou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_sample, procedural::random_scene, SynthesisMode};

    pub(crate) fn toy_samples(n: usize, size: usize, seed: u64) -> Vec<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (img, map) = random_scene(&mut rng, size, size);
                let sigma = rng.gen_range(2.0..5.0);
                make_sample(SynthesisMode::AlphaMatte, img, map, sigma).unwrap()
            })
            .collect()
    }

    fn tiny_net() -> NetworkConfig {
        NetworkConfig {
            base_channels: 2,
            res_blocks: 1,
            se_reduction: 4,
            critic_base_channels: 2,
            resolution: 16,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let samples = toy_samples(2, 16, 0);
        let cfg = TrainConfig {
            total_steps: 0,
            seed: 5,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let run = TrainRun {
            out_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let out = train(&samples, &tiny_net(), &cfg, &run).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g0 = Generator::new(tiny_net(), &mut rng).unwrap();
        assert_eq!(out.generator, g0);
        assert!(out.log.is_empty());
        let ck = Checkpoint::load(&TrainRun::checkpoint_path(dir.path())).unwrap();
        assert_eq!(ck.meta["step"], 0);
        let log = std::fs::read_to_string(TrainRun::log_path(dir.path())).unwrap();
        assert_eq!(log.trim(), LOG_HEADER);
    }

    #[test]
    fn runs_are_deterministic() {
        let samples = toy_samples(3, 16, 1);
        let cfg = TrainConfig {
            total_steps: 3,
            batch_size: 2,
            critic_steps_per_gen: 2,
            seed: 9,
            ..Default::default()
        };
        let a = train(&samples, &tiny_net(), &cfg, &TrainRun::default()).unwrap();
        let b = train(&samples, &tiny_net(), &cfg, &TrainRun::default()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.log.len(), 3);
        assert!(a
            .log
            .iter()
            .all(|r| r.gp >= 0.0 && (0.0..=1.0).contains(&r.rec)));
    }

    #[test]
    fn log_file_has_one_row_per_step() {
        let samples = toy_samples(2, 16, 2);
        let cfg = TrainConfig {
            total_steps: 2,
            critic_steps_per_gen: 1,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let run = TrainRun {
            out_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        train(&samples, &tiny_net(), &cfg, &run).unwrap();
        let text = std::fs::read_to_string(TrainRun::log_path(dir.path())).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], LOG_HEADER);
        assert!(lines[2].starts_with("1,"));
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let samples = toy_samples(1, 32, 3);
        let cfg = TrainConfig {
            total_steps: 1,
            ..Default::default()
        };
        assert!(train(&samples, &tiny_net(), &cfg, &TrainRun::default()).is_err());
        assert!(train(&[], &tiny_net(), &cfg, &TrainRun::default()).is_err());
    }

    #[test]
    fn sampler_covers_every_index_each_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = Sampler::new(5);
        let mut seen = Vec::new();
        for _ in 0..5 {
            seen.extend(s.next(1, &mut rng));
        }
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }
}
