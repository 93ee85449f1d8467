use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig};
use crate::autodiff::{Graph, Mode};
use crate::data::{make_batches, resize_bilinear, synth_dataset, Dataset, FoldPlan, LoadMode, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{confusion_matrix, ConfusionMatrix};
use crate::model::{build_model, SfusNet};
use crate::optim::{adam_step, AdamState};
use crate::tensor::Scalar;

/// Independent seed for the sub-task `tag` of `base`.
pub fn sub_seed(base: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(tag);
    rng.random()
}

/// Loads or generates the configured dataset at the model's input size, normalized.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let size = cfg.model.input_size;
    let mut data = match &cfg.dataset {
        DatasetSource::Synthetic { per_class, size: synth_size } => {
            let mut d = synth_dataset(&SynthSpec { per_class: *per_class, size: *synth_size, seed: cfg.seeds.data })?;
            if *synth_size != size {
                for img in &mut d.images {
                    img.pixels = resize_bilinear(&img.pixels, size, size)?;
                }
            }
            d
        }
        DatasetSource::Directory { path } => Dataset::open(path, size, LoadMode::Bulk)?,
    };
    if data.num_classes() != cfg.model.num_classes {
        return Err(Error::Data(format!("dataset has {} classes, model expects {}", data.num_classes(), cfg.model.num_classes)));
    }
    data.normalize(&cfg.normalization)?;
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub seconds: f64,
}

pub struct FoldOutcome<T: Scalar> {
    pub fold: usize,
    pub epochs: Vec<EpochLog>,
    pub model: SfusNet<T>,
    pub optimizer: AdamState<T>,
    /// Held-out confusion of the final model.
    pub confusion: ConfusionMatrix,
    pub best_epoch: usize,
    pub best_model: SfusNet<T>,
}

/// Eval-mode confusion matrix over `indices`.
pub fn evaluate<T: Scalar>(model: &SfusNet<T>, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<ConfusionMatrix> {
    let k = model.config().num_classes;
    let mut cm = ConfusionMatrix::zeros(k);
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch::<T>(chunk)?;
        let preds = model.classify(&x)?;
        cm.merge(&confusion_matrix(&preds, &labels, k)?)?;
    }
    Ok(cm)
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    row.iter().enumerate().fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) }).0
}

/// Trains a fresh model on every fold but `fold` and evaluates on `fold` after each epoch.
pub fn train_fold<T: Scalar>(cfg: &ExperimentConfig, data: &Dataset, plan: &FoldPlan, fold: usize) -> Result<FoldOutcome<T>> {
    let train_idx = plan.training(fold);
    let val_idx = plan.validation(fold).to_vec();
    let mut model: SfusNet<T> = build_model(&cfg.model, sub_seed(cfg.seeds.init, fold as u64))?;
    let mut adam = AdamState::new(model.params().values());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, SfusNet<T>)> = None;
    let mut confusion = ConfusionMatrix::zeros(cfg.model.num_classes);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let tag = ((fold as u64) << 32) | epoch as u64;
        let batches = make_batches(&train_idx, cfg.batch_size, sub_seed(cfg.seeds.batch, tag))?;
        let mut dropblock_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seeds.dropblock, tag));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in &batches {
            let (x, labels) = data.batch::<T>(batch)?;
            let mut g = Graph::new();
            let params = model.bind(&mut g, true);
            let input = g.constant(x);
            let out = model.forward(&mut g, &params, input, Mode::Train, dropblock_rng.random())?;
            let loss = g.softmax_cross_entropy(out.logits, &labels)?;
            let loss_value = g.value(loss).item().as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss_value} in fold {fold}, epoch {epoch}")));
            }
            let k = cfg.model.num_classes;
            correct += g.value(out.logits).data().chunks_exact(k).zip(&labels).filter(|(row, &l)| argmax(row) == l).count();
            let mut grads = g.backward(loss)?;
            let grads = params
                .iter()
                .map(|&p| grads.take(p).ok_or_else(|| Error::NonFinite("missing parameter gradient".into())))
                .collect::<Result<Vec<_>>>()?;
            adam_step(model.params_mut().values_mut(), &grads, &mut adam, &cfg.optimizer)?;
            model.apply_bn_updates(out.bn_updates);
            loss_sum += loss_value * batch.len() as f64;
            seen += batch.len();
        }
        confusion = evaluate(&model, data, &val_idx, cfg.batch_size)?;
        let validation_accuracy = confusion.trace() as f64 / confusion.total().max(1) as f64;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            validation_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "fold {fold} epoch {epoch}/{}: loss {:.4} train acc {:.4} val acc {:.4} ({:.1}s)",
            cfg.epochs,
            entry.train_loss,
            entry.train_accuracy,
            entry.validation_accuracy,
            entry.seconds
        );
        epochs.push(entry);
        if best.as_ref().is_none_or(|(_, acc, _)| validation_accuracy > *acc) {
            best = Some((epoch, validation_accuracy, model.clone()));
        }
    }
    let (best_epoch, _, best_model) = best.expect("at least one epoch");
    Ok(FoldOutcome { fold, epochs, model, optimizer: adam, confusion, best_epoch, best_model })
}
