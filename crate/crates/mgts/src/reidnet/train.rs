//! Descriptor training on ground-truth boxes.
//!
//! Labeled annotations drive the instance-matching loss and momentum-update
//! their class centers; unlabeled annotations only feed the circular queue.
//! Updates to the centers and the queue happen after the batch step so the
//! loss within a batch sees a consistent state.

use super::{prepare_input, MaskMode, MgtsModel, ModelCfg};
use crate::diffcore::{sgd_step, Tensor};
use crate::error::{Error, Result};
use crate::geometry::ExpandRatio;
use crate::oimloss::{lut_update, oim_loss_and_grad, queue_push, OimState};
use crate::rng::Rng;
use crate::synthdata::{DatasetSplit, PersonId};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainCfg {
    pub epochs: usize,
    pub batch_size: usize,
    /// SGD step size; 0 freezes the parameters (the batch loop still runs,
    /// which is useful for loss probes).
    pub lr: f64,
    /// RoI expansion ratio applied before cropping.
    pub gamma: f64,
    pub mask_mode: MaskMode,
    /// Circular-queue capacity for unlabeled descriptors.
    pub queue_capacity: usize,
    /// Softmax temperature.
    pub tau: f64,
    /// Center momentum.
    pub eta: f64,
    pub seed: u64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        TrainCfg {
            epochs: 30,
            batch_size: 8,
            lr: 0.01,
            gamma: 1.3,
            mask_mode: MaskMode::Instance,
            queue_capacity: 64,
            tau: 1.0 / 30.0,
            eta: 0.5,
            seed: 0,
        }
    }
}

impl TrainCfg {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be > 0".into()));
        }
        if self.lr < 0.0 {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Per-run training record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Mean loss over labeled samples, one entry per epoch.
    pub epoch_mean_loss: Vec<f64>,
    /// Sorted person ids backing OIM classes 1..L.
    pub class_ids: Vec<u32>,
    /// Samples dropped because their patch produced a degenerate descriptor.
    pub skipped: usize,
}

/// Sorted, deduplicated labeled person ids present in the training scenes.
pub fn train_class_ids(data: &DatasetSplit) -> Vec<u32> {
    let mut ids: Vec<u32> = data
        .train
        .iter()
        .flat_map(|&si| data.scenes[si].annotations.iter())
        .filter_map(|a| match a.id {
            PersonId::Labeled(id) => Some(id),
            PersonId::Unlabeled => None,
        })
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Train a fresh model on the ground-truth boxes of the training scenes.
pub fn train(
    model_cfg: ModelCfg,
    data: &DatasetSplit,
    cfg: &TrainCfg,
) -> Result<(MgtsModel, OimState, TrainLog)> {
    cfg.validate()?;
    let mut model = MgtsModel::new(model_cfg, cfg.seed)?;
    let class_ids = train_class_ids(data);
    if class_ids.len() < 2 {
        return Err(Error::Contract(
            "training scenes hold fewer than 2 labeled identities".into(),
        ));
    }
    let mut state = OimState::new(
        class_ids.len(),
        model.cfg.embed_dim,
        cfg.queue_capacity,
        cfg.tau,
        cfg.eta,
    )?;
    let gamma = ExpandRatio::new(cfg.gamma)?;

    let samples: Vec<(usize, usize)> = data
        .train
        .iter()
        .flat_map(|&si| (0..data.scenes[si].annotations.len()).map(move |ai| (si, ai)))
        .collect();
    if samples.is_empty() {
        return Err(Error::Contract("no training annotations".into()));
    }

    let mut log = TrainLog {
        epoch_mean_loss: Vec::with_capacity(cfg.epochs),
        class_ids: class_ids.clone(),
        skipped: 0,
    };

    for epoch in 0..cfg.epochs {
        let mut order = samples.clone();
        Rng::new(Rng::subseed(cfg.seed, 0xE70C0 + epoch as u64)).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_loss = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            // (descriptor, class) pairs to apply after the step; None = queue
            let mut updates: Vec<(Vec<f64>, Option<usize>)> = Vec::new();
            let mut n_labeled = 0usize;
            for &(si, ai) in batch {
                let scene = &data.scenes[si];
                let ann = &scene.annotations[ai];
                let input = prepare_input(
                    &scene.image,
                    &scene.mask,
                    &ann.bbox,
                    gamma,
                    &model.cfg,
                    cfg.mask_mode,
                )?;
                let pass = match model.forward(&input) {
                    Ok(p) => p,
                    Err(Error::Degenerate(_)) => {
                        log.skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let x = pass.descriptor_values();
                match ann.id {
                    PersonId::Labeled(id) => {
                        let class = class_ids.binary_search(&id).unwrap() + 1;
                        let (loss, gx) = oim_loss_and_grad(&x, class, &state)?;
                        model.backward(pass, &gx)?;
                        epoch_loss += loss;
                        n_loss += 1;
                        n_labeled += 1;
                        updates.push((x, Some(class)));
                    }
                    PersonId::Unlabeled => updates.push((x, None)),
                }
            }

            if cfg.lr > 0.0 && n_labeled > 0 {
                let scale = 1.0 / n_labeled as f64;
                for p in model.params_mut() {
                    if p.grad.is_some() {
                        p.scale_grad(scale);
                    } else {
                        // unused parameters (e.g. the second encoder of a
                        // single-stream variant) still take a zero step
                        p.grad = Some(Tensor::zeros(p.value.shape().to_vec()));
                    }
                }
                sgd_step(model.params_mut(), cfg.lr)?;
            } else {
                for p in model.params_mut() {
                    p.grad = None;
                }
            }

            for (x, class) in updates {
                match class {
                    Some(t) => lut_update(&mut state, &x, t)?,
                    None => queue_push(&mut state, &x)?,
                }
            }
        }

        log.epoch_mean_loss.push(if n_loss > 0 {
            epoch_loss / n_loss as f64
        } else {
            0.0
        });
    }

    Ok((model, state, log))
}
