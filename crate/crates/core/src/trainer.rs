//! Loss, epoch loop, early stopping and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{PreparedSample, SplitRatios};
use crate::error::{Error, Result};
use crate::metrics::{top_k, MetricAccumulator, MetricReport};
use crate::model::{backward, forward_sample, init_params, Dims, Gradients, ModelParams, Variant, SLOTS};
use crate::optim::{adam_step, cosine_lr, AdamState};
use crate::seed;

fn default_k_list() -> Vec<usize> {
    vec![10, 20, 30, 40]
}

/// Training hyperparameters. Defaults follow the reference training setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dim: usize,
    pub base_lr: f64,
    /// Decoupled decay applied by the optimizer.
    pub weight_decay: f64,
    /// Coefficient of the explicit `λ‖W‖²` loss term.
    pub l2_lambda: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub k_list: Vec<usize>,
    /// Early stopping watches validation nDCG at this cutoff.
    pub early_stop_k: usize,
    pub variant: Variant,
    pub split: SplitRatios,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            dim: 32,
            base_lr: 0.001,
            weight_decay: 0.01,
            l2_lambda: 0.0,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            k_list: default_k_list(),
            early_stop_k: 10,
            variant: Variant::Full,
            split: SplitRatios::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.batch_size == 0 || self.dim == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, dim, max_epochs and patience must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience cannot exceed max_epochs");
        }
        if self.base_lr.is_nan() || self.base_lr <= 0.0 || self.weight_decay < 0.0 || self.l2_lambda < 0.0 {
            return bad("learning rate must be positive and decay terms non-negative");
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return bad("k_list must be non-empty and positive");
        }
        if !self.k_list.contains(&self.early_stop_k) {
            return bad("early_stop_k must appear in k_list");
        }
        Ok(())
    }
}

/// Numerically stable `ln(1 + eˣ)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy on logits averaged over the domain, plus `λ‖W‖²`.
/// Returns the loss and its gradient with respect to the logits.
pub fn bce_loss(logits: &[f64], targets: &[f64], l2_lambda: f64, params: &ModelParams) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() {
        return Err(Error::Config(format!(
            "bce_loss: {} logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let e = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&y, &t)| {
            loss += softplus(y) - t * y;
            (crate::tensor::logistic(y) - t) / e
        })
        .collect();
    let mut loss = loss / e;
    if l2_lambda > 0.0 {
        loss += l2_lambda * params.decayed_sq_norm();
    }
    Ok((loss, grad))
}

/// Loss (without the L2 term) and gradients for one sample.
pub fn sample_gradients(sample: &PreparedSample, params: &ModelParams, variant: Variant) -> Result<(f64, Gradients)> {
    let trace = forward_sample(sample, params, variant)?;
    let (loss, d_logits) = bce_loss(&trace.logits, &sample.target_multi_hot(), 0.0, params)?;
    let grads = backward(&trace, sample, params, &d_logits)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Zero-based epoch index.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub steps: usize,
}

/// One pass over `samples` in a (seed, epoch)-determined order.
pub fn train_epoch(
    samples: &[PreparedSample],
    params: &mut ModelParams,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let lr = cosine_lr(epoch, cfg.max_epochs, cfg.base_lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive_indexed(
        cfg.seed,
        "shuffle",
        epoch as u64,
    )));

    let mut total_loss = 0.0;
    let mut steps = 0;
    for batch in order.chunks(cfg.batch_size) {
        let per_sample: Vec<(f64, Gradients)> = batch
            .par_iter()
            .map(|&i| sample_gradients(&samples[i], params, cfg.variant))
            .collect::<Result<_>>()?;
        // reduce in batch order so the sum does not depend on thread scheduling
        let mut grads = params.zeros_like();
        let mut batch_loss = 0.0;
        for (loss, g) in &per_sample {
            batch_loss += loss;
            grads.accumulate(g);
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        batch_loss *= scale;
        if cfg.l2_lambda > 0.0 {
            batch_loss += cfg.l2_lambda * params.decayed_sq_norm();
            for ((g, p), info) in grads.slices_mut().into_iter().zip(params.slices()).zip(SLOTS) {
                if info.decayed {
                    for (gi, &pi) in g.iter_mut().zip(p) {
                        *gi += 2.0 * cfg.l2_lambda * pi;
                    }
                }
            }
        }
        adam_step(params, &grads, opt, lr, cfg.weight_decay)?;
        total_loss += batch_loss * batch.len() as f64;
        steps += 1;
    }
    Ok(EpochStats {
        epoch,
        lr,
        train_loss: total_loss / samples.len() as f64,
        steps,
    })
}

/// Rank every sample with `scorer` and average the metrics.
pub fn evaluate_with<F>(samples: &[PreparedSample], k_list: &[usize], scorer: F) -> Result<MetricReport>
where
    F: Fn(&PreparedSample) -> Result<Vec<f64>> + Sync,
{
    let max_k = k_list.iter().copied().max().unwrap_or(0);
    let ranked: Vec<Vec<usize>> = samples
        .par_iter()
        .map(|s| scorer(s).map(|scores| top_k(&scores, max_k)))
        .collect::<Result<_>>()?;
    let mut acc = MetricAccumulator::new(k_list);
    for (r, s) in ranked.iter().zip(samples) {
        acc.add(r, &s.target);
    }
    Ok(acc.finish())
}

/// Read-only evaluation of a model.
pub fn evaluate(
    samples: &[PreparedSample],
    params: &ModelParams,
    variant: Variant,
    k_list: &[usize],
) -> Result<MetricReport> {
    evaluate_with(samples, k_list, |s| {
        forward_sample(s, params, variant).map(|t| t.logits)
    })
}

/// Scores each element by how many history sets contain it.
pub fn personal_frequency_scores(sample: &PreparedSample) -> Vec<f64> {
    let mut scores = vec![0.0; sample.vocab_size];
    for (row, &id) in sample.index_map.iter().enumerate() {
        scores[id] = sample.membership.row(row).iter().sum();
    }
    scores
}

/// Patience-based stopping on a metric where larger is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    /// One-based epoch of the best value so far.
    pub best_epoch: Option<usize>,
    pub best_metric: f64,
    pub stale_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_epoch: None,
            best_metric: f64::NEG_INFINITY,
            stale_epochs: 0,
        }
    }

    /// Returns true when `metric` is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric > self.best_metric {
            self.best_metric = metric;
            self.best_epoch = Some(epoch);
            self.stale_epochs = 0;
            true
        } else {
            self.stale_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale_epochs >= self.patience
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: MetricReport,
    pub improved: bool,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub opt: AdamState,
    pub epochs_done: usize,
    pub stopper: EarlyStopping,
    pub best_params: ModelParams,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(config: TrainConfig, dims: Dims) -> Result<Self> {
        config.validate()?;
        let params = init_params(dims.vocab_size, config.dim, dims.max_len, config.seed)?;
        Ok(Self {
            opt: AdamState::new(&params),
            best_params: params.clone(),
            stopper: EarlyStopping::new(config.patience),
            params,
            config,
            epochs_done: 0,
            history: Vec::new(),
        })
    }

    pub fn finished(&self) -> bool {
        self.epochs_done >= self.config.max_epochs || self.stopper.should_stop()
    }

    /// Train one epoch, validate, and update the early-stopping record.
    pub fn step_epoch(&mut self, train: &[PreparedSample], val: &[PreparedSample]) -> Result<&EpochRecord> {
        let stats = train_epoch(train, &mut self.params, &mut self.opt, &self.config, self.epochs_done)?;
        self.epochs_done += 1;
        let report = evaluate(val, &self.params, self.config.variant, &self.config.k_list)?;
        let metric = report.ndcg_at(self.config.early_stop_k).unwrap_or(0.0);
        let improved = self.stopper.observe(self.epochs_done, metric);
        if improved {
            self.best_params = self.params.clone();
        }
        self.history.push(EpochRecord {
            epoch: self.epochs_done,
            lr: stats.lr,
            train_loss: stats.train_loss,
            val: report,
            improved,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Run until early stopping fires or `max_epochs` is reached.
    pub fn run(&mut self, train: &[PreparedSample], val: &[PreparedSample]) -> Result<()> {
        self.run_with(train, val, |_| {})
    }

    pub fn run_with(
        &mut self,
        train: &[PreparedSample],
        val: &[PreparedSample],
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Config("fit needs non-empty train and validation sets".into()));
        }
        while !self.finished() {
            let rec = self.step_epoch(train, val)?;
            on_epoch(rec);
        }
        Ok(())
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub state: TrainState,
}

/// Train with early stopping and return the best validation checkpoint.
pub fn fit(train: &[PreparedSample], val: &[PreparedSample], config: &TrainConfig, dims: Dims) -> Result<FitOutcome> {
    let mut state = TrainState::new(config.clone(), dims)?;
    state.run(train, val)?;
    Ok(FitOutcome {
        best_params: state.best_params.clone(),
        best_epoch: state.stopper.best_epoch.unwrap_or(0),
        history: state.history.clone(),
        state,
    })
}

pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in history {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}
