use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdamW, Architecture, DenoiserModel, FilmMlp};
use crate::datastore::{Dataset, Normalizer};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Rows per gradient work item. Fixed so the reduction order, and thus the
/// trained weights, do not depend on the thread count.
const GRAD_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            layers: 2,
            embed_dim: 64,
            lr: 5e-4,
            weight_decay: 0.01,
            batch_size: 1024,
            epochs: 60,
            seed: 0,
        }
    }
}

/// `hidden_dim x layers` model sizes of the capacity ablation.
pub const SIZE_PRESETS: [(usize, usize); 5] = [(128, 2), (256, 4), (512, 6), (1024, 8), (2048, 12)];

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::Config("denoiser hidden_dim and layers must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, state_dim: usize, diffusion_steps: usize, horizon: usize) -> Architecture {
        Architecture {
            state_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            embed_dim: self.embed_dim,
            diffusion_steps,
            horizon,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss of every optimizer step in order.
    pub batch_loss: Vec<f64>,
    /// Mean batch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub seconds: f64,
}

/// Fits the noise predictor on trajectories `ids` of `ds` (states normalized
/// with `normalizer`). Each epoch visits every (trajectory, step) pair once in
/// a seeded random order.
pub fn train(
    ds: &Dataset,
    ids: &[usize],
    normalizer: &Normalizer,
    schedule: &NoiseSchedule,
    config: &DenoiserConfig,
) -> Result<(DenoiserModel, TrainReport)> {
    config.validate()?;
    if ids.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let (n, steps) = (ds.dim(), ds.steps());
    let arch = config.architecture(n, schedule.steps(), steps);
    let mut net = FilmMlp::<f32>::init(arch, &mut stream(config.seed, &[tag::INIT]))?;
    let mut opt = AdamW::new(config.lr, config.weight_decay, net.decay_mask());

    let rows = ids.len() * steps;
    let mut table = Array2::<f32>::zeros((rows, n));
    for (j, &i) in ids.iter().enumerate() {
        for k in 0..steps {
            let z = normalizer.apply(&ds.state(i, k).iter().map(|&v| v as f64).collect::<Vec<_>>());
            table
                .row_mut(j * steps + k)
                .iter_mut()
                .zip(z)
                .for_each(|(d, s)| *d = s as f32);
        }
    }

    let started = Instant::now();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..rows).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream(config.seed, &[tag::TRAIN, epoch as u64]));
        let mut epoch_sum = 0.0;
        let batches = order.chunks(config.batch_size);
        let n_batches = batches.len();
        for (b, batch) in batches.enumerate() {
            let parts: Vec<(f64, Vec<f32>)> = batch
                .par_chunks(GRAD_CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let x0 = table.select(ndarray::Axis(0), chunk);
                    let ks: Vec<usize> = chunk.iter().map(|r| r % steps).collect();
                    let mut rng = stream(config.seed, &[tag::TRAIN, epoch as u64, b as u64, c as u64]);
                    net.loss_and_grad(x0.view(), &ks, schedule, &mut rng, batch.len())
                })
                .collect::<Result<_>>()?;
            let mut loss = 0.0;
            let mut grad = vec![0.0f32; net.params().len()];
            for (l, g) in &parts {
                loss += l;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            opt.step(net.params_mut(), &grad);
            report.batch_loss.push(loss);
            epoch_sum += loss;
        }
        let mean = epoch_sum / n_batches as f64;
        log::info!("epoch {epoch}: loss {mean:.5}");
        report.epoch_loss.push(mean);
    }
    report.seconds = started.elapsed().as_secs_f64();

    let model = DenoiserModel {
        config: config.clone(),
        normalizer: normalizer.clone(),
        schedule_fingerprint: schedule.fingerprint(),
        dataset_checksum: None,
        net,
    };
    Ok((model, report))
}
