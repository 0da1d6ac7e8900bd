use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::rc::Rc;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{build, predict_samples, Mode, Prediction};
use super::{GraphBatch, GraphSample, ModelConfig, ModelParams, Normalizer, TrainedModel};
use crate::autodiff::Tape;
use crate::graph::HeteroGraph;
use crate::pipeline::metrics::macro_f1;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of training flows held out for early stopping.
    pub validation_fraction: f64,
    pub checkpoint_dir: Option<PathBuf>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 7,
            patience: 10,
            validation_fraction: 0.1,
            checkpoint_dir: None,
            eval_batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_macro_f1: Option<f64>,
    pub mean_grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_macro_f1: Option<f64>,
    pub stopped_early: bool,
    pub train_graphs: usize,
    pub validation_graphs: usize,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

struct Adam {
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<_, _> = params
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), Array2::zeros(t.raw_dim())))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Array2<f64>>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (name, g) in grads {
            let p = params.tensors.get_mut(name).expect("gradient for known tensor");
            match cfg.optimizer {
                OptimizerKind::Sgd => p.scaled_add(-cfg.learning_rate, g),
                OptimizerKind::Adam => {
                    let m = self.m.get_mut(name).expect("adam state");
                    let v = self.v.get_mut(name).expect("adam state");
                    ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, g| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *p -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
                    });
                }
            }
        }
    }
}

struct StepGradients {
    loss: f64,
    grads: BTreeMap<String, Array2<f64>>,
    logp: Array2<f64>,
    bn_stats: Vec<(String, Array1<f64>, Array1<f64>, usize)>,
}

fn batch_gradients(params: &ModelParams, batch: &GraphBatch, ys: &[usize], mode: Mode) -> Result<StepGradients> {
    let mut t = Tape::new();
    let built = build(&mut t, params, batch, mode)?;
    let w = -1.0 / ys.len() as f64;
    let picks = ys.iter().enumerate().map(|(i, y)| (i, *y, w)).collect();
    let loss_var = t.pick_sum(built.logp, Rc::new(picks));
    let loss = t.value(loss_var)[[0, 0]];
    let grads = t.backward(loss_var);
    let named = built
        .params
        .iter()
        .map(|(name, var)| (name.clone(), grads.get(&t, *var)))
        .collect();
    Ok(StepGradients {
        loss,
        grads: named,
        logp: t.value(built.logp).clone(),
        bn_stats: built.bn_stats,
    })
}

/// Mean negative log-likelihood of labeled samples and its gradient with
/// respect to every parameter tensor.
pub fn parameter_gradients(
    params: &ModelParams,
    samples: &[GraphSample],
    mode: Mode,
) -> Result<(f64, BTreeMap<String, Array2<f64>>)> {
    let batch = GraphBatch::collate(samples)?;
    let ys = labels_of(samples)?;
    let step = batch_gradients(params, &batch, &ys, mode)?;
    Ok((step.loss, step.grads))
}

/// Mean negative log-likelihood of labeled samples in one batch.
pub fn mean_loss(params: &ModelParams, samples: &[GraphSample], mode: Mode) -> Result<f64> {
    let batch = GraphBatch::collate(samples)?;
    let logp = super::forward(params, &batch, mode)?;
    let labels = labels_of(samples)?;
    Ok(-labels.iter().enumerate().map(|(i, y)| logp[[i, *y]]).sum::<f64>() / labels.len() as f64)
}

fn labels_of(samples: &[GraphSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::InvalidArgument(format!("training graph {} has no label", s.id)))
        })
        .collect()
}

type EpochHook<'a> = dyn FnMut(&ModelParams, &EpochLog) -> Result<()> + 'a;

/// Train on normalized samples. With a non-empty validation set the
/// parameters of the best validation epoch are returned.
pub fn fit(
    train: &[GraphSample],
    val: &[GraphSample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    on_epoch: Option<&mut EpochHook<'_>>,
) -> Result<(ModelParams, TrainLog)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let labels = labels_of(train)?;
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::TooFewClasses(present.len()));
    }
    if let Some(bad) = labels.iter().find(|y| **y >= model_cfg.classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside the model's classes")));
    }
    for s in train.iter().chain(val) {
        s.check(model_cfg)?;
    }
    let val_labels = labels_of(val)?;
    let mut params = ModelParams::init(model_cfg, cfg.seed)?;
    let mut adam = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog {
        train_graphs: train.len(),
        validation_graphs: val.len(),
        ..Default::default()
    };
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;
    let mut hook = on_epoch;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut norm_sum, mut batches) = (0.0, 0usize, 0.0, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&GraphSample> = chunk.iter().map(|i| &train[*i]).collect();
            let batch = GraphBatch::collate(samples.iter().copied())?;
            let ys: Vec<usize> = chunk.iter().map(|i| labels[*i]).collect();
            let step = batch_gradients(&params, &batch, &ys, Mode::Train)?;
            let (loss, named) = (step.loss, step.grads);
            let sq: f64 = named.values().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
            let grad_norm = sq.sqrt();
            if !loss.is_finite() || !grad_norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    lr: cfg.learning_rate,
                    grad_norm,
                });
            }
            correct += step
                .logp
                .axis_iter(Axis(0))
                .zip(&ys)
                .filter(|(row, y)| Prediction::from_log_probs(*row).class == **y)
                .count();
            adam.update(&mut params, &named, cfg);
            let m = params.config.bn_momentum;
            for (key, mean, var, rows) in step.bn_stats {
                let unbiased = if rows > 1 {
                    var * (rows as f64 / (rows - 1) as f64)
                } else {
                    var
                };
                let rs = params.running.get_mut(&key).expect("running stats");
                rs.mean = &rs.mean * (1.0 - m) + mean * m;
                rs.var = &rs.var * (1.0 - m) + unbiased * m;
            }
            loss_sum += loss * ys.len() as f64;
            norm_sum += grad_norm;
            batches += 1;
        }
        let val_f1 = if val.is_empty() {
            None
        } else {
            let preds: Vec<usize> = predict_samples(&params, val, cfg.eval_batch_size)?
                .into_iter()
                .map(|p| p.class)
                .collect();
            Some(macro_f1(&preds, &val_labels, model_cfg.classes))
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_macro_f1: val_f1,
            mean_grad_norm: norm_sum / batches as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} acc {:.4} val macro-F1 {}",
            entry.train_loss,
            entry.train_accuracy,
            val_f1.map_or("-".into(), |f| format!("{f:.4}"))
        );
        if let Some(h) = hook.as_deref_mut() {
            h(&params, &entry)?;
        }
        log.epochs.push(entry);
        if let Some(f1) = val_f1 {
            if best.as_ref().map_or(true, |(b, _)| f1 > *b) {
                best = Some((f1, params.clone()));
                log.best_epoch = epoch;
                log.best_val_macro_f1 = Some(f1);
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        } else {
            log.best_epoch = epoch;
        }
    }
    let params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok((params, log))
}

/// Grouped hold-out: all graphs sharing an id land on the same side.
fn split_validation(graphs: &[HeteroGraph], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<&str> = graphs.iter().map(|g| g.id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x0a1));
    ids.shuffle(&mut rng);
    let n_val = (ids.len() as f64 * fraction).round() as usize;
    let held: BTreeSet<&str> = ids.into_iter().take(n_val).collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, g) in graphs.iter().enumerate() {
        if held.contains(g.id.as_str()) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

/// End-to-end training from a graph corpus: validation split, normalizer
/// fit on the training side, optional per-epoch checkpoints.
pub fn train(
    graphs: &[HeteroGraph],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainLog)> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("graph corpus is empty".into()));
    }
    let classes: BTreeSet<_> = graphs.iter().filter_map(|g| g.label).collect();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    let (train_idx, val_idx) = split_validation(graphs, cfg.validation_fraction, cfg.seed);
    let unique: Vec<&HeteroGraph> = train_idx
        .iter()
        .map(|i| &graphs[*i])
        .filter(|g| !g.duplicate)
        .collect();
    let normalizer = Normalizer::fit(unique.iter().copied());
    let to_samples = |idx: &[usize]| -> Result<Vec<GraphSample>> {
        idx.iter().map(|i| normalizer.apply(&graphs[*i])).collect()
    };
    let train_s = to_samples(&train_idx)?;
    let val_s: Vec<GraphSample> = to_samples(&val_idx)?
        .into_iter()
        .zip(&val_idx)
        .filter(|(_, i)| !graphs[**i].duplicate)
        .map(|(s, _)| s)
        .collect();
    let mut save = |params: &ModelParams, entry: &EpochLog| -> Result<()> {
        if let Some(dir) = &cfg.checkpoint_dir {
            let m = TrainedModel::new(params.clone(), normalizer.clone(), cfg.clone());
            m.save(&dir.join(format!("epoch-{:03}.json", entry.epoch)))?;
        }
        Ok(())
    };
    let (params, log) = fit(&train_s, &val_s, model_cfg, cfg, Some(&mut save))?;
    let mut model = TrainedModel::new(params, normalizer, cfg.clone());
    model.train_log = Some(log.clone());
    if let Some(dir) = &cfg.checkpoint_dir {
        model.save(&dir.join("best.json"))?;
    }
    Ok((model, log))
}
