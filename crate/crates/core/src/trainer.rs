//! Denoising score matching.
//!
//! For each sample and each of `K` times `t ~ U[t0, T]` a noisy input is
//! drawn from the forward process and the network is regressed onto the
//! transition-kernel score. The loss is the mean of `‖S(X_t, t) − target‖_F²`
//! over all (sample, time) pairs.
//!
//! Epoch `e` draws its permutation and noise from the `("epoch", e)`
//! substream of the seed, so a run resumed from an epoch-boundary
//! checkpoint continues bit-identically.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_sample, transition_score, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::factor_model::Dataset;
use crate::io::{write_metrics_csv, MetricRecord, MetricValue};
use crate::nn::{adam_step, AdamConfig};
use crate::rng::Rng;
use crate::tensor::DenseTensor;
use crate::tucker_unet::{NetTape, TuckerScoreNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Time draws per sample per epoch.
    pub times_per_sample: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the last.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 300,
            batch_size: 64,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            times_per_sample: 1,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.times_per_sample == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and times_per_sample must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Frozen `(t, X_t)` draws for a batch; pair `i·K + k` belongs to sample `i`.
#[derive(Clone, Debug)]
pub struct NoiseDraws {
    pub per_sample: usize,
    pub times: Vec<f64>,
    pub noisy: Vec<DenseTensor>,
}

pub fn draw_noise(batch: &[DenseTensor], per_sample: usize, sched: &DiffusionSchedule, rng: &mut Rng) -> Result<NoiseDraws> {
    let mut times = Vec::with_capacity(batch.len() * per_sample);
    let mut noisy = Vec::with_capacity(batch.len() * per_sample);
    for x0 in batch {
        for _ in 0..per_sample {
            let t = rng.uniform(sched.t0, sched.t_end);
            noisy.push(forward_sample(x0, t, sched, rng)?);
            times.push(t);
        }
    }
    Ok(NoiseDraws {
        per_sample,
        times,
        noisy,
    })
}

/// Loss value plus what backward needs.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    /// `‖S − target‖_F²` per pair, for Monte-Carlo error bars.
    pub per_pair: Vec<f64>,
    residuals: Vec<DenseTensor>,
}

/// Score-matching loss of an arbitrary score function on frozen draws.
pub fn dsm_loss_with(
    score: impl FnOnce(&[DenseTensor], &[f64]) -> Result<Vec<DenseTensor>>,
    batch: &[DenseTensor],
    draws: &NoiseDraws,
) -> Result<LossEval> {
    let s = score(&draws.noisy, &draws.times)?;
    loss_from_scores(&s, batch, draws)
}

fn loss_from_scores(scores: &[DenseTensor], batch: &[DenseTensor], draws: &NoiseDraws) -> Result<LossEval> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut per_pair = Vec::with_capacity(scores.len());
    let mut residuals = Vec::with_capacity(scores.len());
    for (j, s) in scores.iter().enumerate() {
        let x0 = &batch[j / draws.per_sample];
        let target = transition_score(&draws.noisy[j], x0, draws.times[j])?;
        let res = s.sub(&target)?;
        let v = res.norm_sq();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss at t = {}", draws.times[j])));
        }
        per_pair.push(v);
        residuals.push(res);
    }
    let loss = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(LossEval {
        loss,
        per_pair,
        residuals,
    })
}

pub struct DsmTape {
    net: NetTape,
    eval: LossEval,
}

impl DsmTape {
    pub fn loss(&self) -> f64 {
        self.eval.loss
    }
}

/// Network loss on frozen draws.
pub fn dsm_loss_frozen(net: &TuckerScoreNet, batch: &[DenseTensor], draws: &NoiseDraws) -> Result<DsmTape> {
    let (s, tape) = net.forward_batch(&draws.noisy, &draws.times)?;
    let eval = loss_from_scores(&s, batch, draws)?;
    Ok(DsmTape { net: tape, eval })
}

/// Network loss with fresh draws from `rng`.
pub fn dsm_loss(net: &TuckerScoreNet, batch: &[DenseTensor], rng: &mut Rng, cfg: &TrainConfig) -> Result<DsmTape> {
    let draws = draw_noise(batch, cfg.times_per_sample, &net.config.sched, rng)?;
    dsm_loss_frozen(net, batch, &draws)
}

/// Accumulates the loss gradient into the network's parameter store.
pub fn dsm_backward(net: &mut TuckerScoreNet, tape: &DsmTape) -> Result<()> {
    let n = tape.eval.residuals.len() as f64;
    let grads: Vec<DenseTensor> = tape.eval.residuals.iter().map(|r| r.scale(2.0 / n)).collect();
    net.score_backward(&tape.net, &grads)
}

/// One optimizer step on frozen draws; returns the pre-step loss.
pub fn train_step(net: &mut TuckerScoreNet, batch: &[DenseTensor], draws: &NoiseDraws, adam: &AdamConfig) -> Result<f64> {
    let tape = dsm_loss_frozen(net, batch, draws)?;
    dsm_backward(net, &tape)?;
    adam_step(&mut net.store, adam)?;
    net.project_parameters()?;
    Ok(tape.loss())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub loss_history: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

/// Checkpoint directory; the cadence comes from [`TrainConfig::checkpoint_every`].
#[derive(Clone, Debug)]
pub struct CheckpointPlan {
    pub dir: PathBuf,
}

const STATE_FILE: &str = "train_state.json";

pub fn save_training(net: &TuckerScoreNet, state: &TrainState, dir: &Path) -> Result<()> {
    net.save(dir)?;
    let path = dir.join(STATE_FILE);
    fs::write(&path, serde_json::to_string_pretty(state)?).map_err(|e| Error::io(&path, e))
}

pub fn load_training(dir: &Path) -> Result<(TuckerScoreNet, TrainState)> {
    let net = TuckerScoreNet::load(dir)?;
    let path = dir.join(STATE_FILE);
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok((net, serde_json::from_str(&text)?))
}

/// Trains from `state.epochs_done` up to `cfg.epochs`.
///
/// On a non-finite loss or gradient the error is returned and the most
/// recent checkpoint on disk is left untouched.
pub fn train_from(
    net: &mut TuckerScoreNet,
    data: &Dataset,
    cfg: &TrainConfig,
    state: &mut TrainState,
    checkpoint: Option<&CheckpointPlan>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.shape().dims() != net.config.dims.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "data shape {:?} for net {:?}",
            data.shape().dims(),
            net.config.dims
        )));
    }
    let root = Rng::new(cfg.seed);
    let adam = cfg.adam();
    let samples = data.samples();
    let mut report = TrainReport::default();
    for epoch in state.epochs_done..cfg.epochs {
        let start = Instant::now();
        let mut rng = root.substream("epoch", epoch as u64);
        let order = rng.permutation(samples.len());
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<DenseTensor> = idx.iter().map(|&i| samples[i].clone()).collect();
            let draws = draw_noise(&batch, cfg.times_per_sample, &net.config.sched, &mut rng)?;
            let loss = train_step(net, &batch, &draws, &adam).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            total += loss * draws.times.len() as f64;
            pairs += draws.times.len();
        }
        let epoch_loss = total / pairs as f64;
        state.loss_history.push(epoch_loss);
        state.epochs_done = epoch + 1;
        let secs = start.elapsed().as_secs_f64();
        report.loss_history.push(epoch_loss);
        report.epoch_seconds.push(secs);
        debug!("epoch {epoch}: loss {epoch_loss:.6e} ({secs:.2}s)");
        if let Some(plan) = checkpoint {
            let last = epoch + 1 == cfg.epochs;
            let due = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
            if last || due {
                save_training(net, state, &plan.dir)?;
            }
        }
    }
    info!(
        "trained {} epochs, final loss {:.6e}",
        report.loss_history.len(),
        state.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(report)
}

pub fn train(net: &mut TuckerScoreNet, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    train_from(net, data, cfg, &mut TrainState::default(), None)
}

/// Loss history as CSV with columns `epoch, loss`.
pub fn write_loss_csv(history: &[f64], path: &Path) -> Result<()> {
    let columns = vec!["epoch".to_string(), "loss".to_string()];
    let rows: Vec<MetricRecord> = history
        .iter()
        .enumerate()
        .map(|(e, l)| {
            vec![
                ("epoch".to_string(), MetricValue::Text((e + 1).to_string())),
                ("loss".to_string(), MetricValue::Num(*l)),
            ]
        })
        .collect();
    write_metrics_csv(&columns, &rows, path)
}
