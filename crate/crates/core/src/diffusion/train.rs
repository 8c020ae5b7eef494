//! Denoising training of the toy network with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::SyntheticSample;
use super::toynet::{ToyConfig, ToyDenoiser, ToyGrads};
use super::{Conditioning, DiffusionError, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Probability of replacing the caption with the null token.
    pub caption_dropout: f64,
    /// Probability of dropping the whole conditioning.
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 8,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            caption_dropout: 0.5,
            cond_dropout: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean x0 reconstruction loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub samples: usize,
    pub batches: usize,
    /// Samples whose caption slot carried the null token.
    pub null_caption_samples: usize,
    /// Batches in which every sample's caption slot carried the null token.
    pub all_null_batches: usize,
    /// Samples trained with no conditioning at all.
    pub unconditional_samples: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(net: &mut ToyDenoiser) -> Self {
        let sizes: Vec<usize> = net.tensors_mut().iter().map(|t| t.len()).collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, net: &mut ToyDenoiser, grads: &ToyGrads, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (((p, g), m), v) in net.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
            }
        }
    }
}

/// Train a fresh network on `data` to predict clean images from noisy ones.
pub fn train_toy_denoiser(
    data: &[SyntheticSample],
    schedule: &NoiseSchedule,
    model: ToyConfig,
    cfg: &TrainConfig,
) -> Result<(ToyDenoiser, TrainReport), DiffusionError> {
    if data.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    let mut net = ToyDenoiser::new(model);
    let mut adam = Adam::new(&mut net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let t_max = schedule.t_max();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let bs = cfg.batch_size.max(1);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(bs) {
            let mut grads = ToyGrads::zeros_like(&net);
            let mut all_null = true;
            for &i in batch {
                let sample = &data[i];
                let x0 = sample.image.to_tensor();
                let t = rng.random_range(1..=t_max);
                let ab = schedule.alpha_bar(t);
                let x: Vec<f64> = x0
                    .as_slice()
                    .iter()
                    .map(|&v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        ab.sqrt() * v + (1.0 - ab).sqrt() * z
                    })
                    .collect();
                let drop_all = rng.random::<f64>() < cfg.cond_dropout;
                let drop_caption = rng.random::<f64>() < cfg.caption_dropout;
                let cond = if drop_all {
                    Conditioning::Null
                } else {
                    Conditioning::Scene { scene: &sample.scene, drop_caption }
                };
                let enc = net.encode(&cond)?;
                report.unconditional_samples += usize::from(drop_all);
                report.null_caption_samples += usize::from(enc.null_caption);
                all_null &= enc.null_caption;

                let fc = net.forward(&x, t, t_max, &enc);
                let n = fc.d.len() as f64;
                let mut loss = 0.0;
                let g_d: Vec<f64> = fc
                    .d
                    .iter()
                    .zip(x0.as_slice())
                    .map(|(d, y)| {
                        loss += (d - y) * (d - y);
                        2.0 * (d - y) / n
                    })
                    .collect();
                epoch_loss += loss / n;
                net.backward(&x, &enc, &fc, Some(&g_d), None, Some(&mut grads), false);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.update(&mut net, &grads, cfg);
            report.batches += 1;
            report.samples += batch.len();
            report.all_null_batches += usize::from(all_null);
        }
        report.epoch_losses.push(epoch_loss / data.len() as f64);
        log::debug!("epoch {} loss {:.5}", report.epoch_losses.len(), epoch_loss / data.len() as f64);
    }
    Ok((net, report))
}
