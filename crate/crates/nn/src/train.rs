//! The training loop.

use std::fmt::Write as _;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use dilseg_core::preprocess::PreprocessedCase;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{Batch, SampleLayout, SliceDataset, collate, sample_rng};
use crate::error::{Error, Result};
use crate::folds::FoldAssignment;
use crate::layers::Mode;
use crate::losses::{self, DetectionTargets};
use crate::networks::{Architecture, ForwardOutput, Network, NetworkSpec, build_network};

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean optimised loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean soft Dice loss of the main output alone.
    pub train_main_dice_loss: f64,
    /// Mean hard Dice over validation slices; absent without validation data.
    pub val_dice: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    TargetLossReached,
}

pub struct TrainOutcome {
    /// Network holding the best-validation weights (the final weights when
    /// there is no validation data).
    pub network: Network,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    /// Loss of the very first optimisation step.
    pub first_batch_loss: f64,
    pub stop: StopReason,
}

/// Loss terms for one batch: (optimised loss, main-output Dice loss).
pub fn batch_loss(arch: Architecture, out: &ForwardOutput, batch: &Batch, config: &TrainConfig) -> Result<(Tensor, Tensor)> {
    let eps = config.dice_eps;
    let main_dice = losses::soft_dice_loss(&out.main, &batch.labels, eps)?;
    let loss = match arch {
        Architecture::Unet | Architecture::Resunet | Architecture::Mrrn => main_dice.clone(),
        Architecture::MrrnDs => {
            let aux = out.aux.first().ok_or_else(|| Error::InvalidSpec("MRRN_DS produced no auxiliary output".into()))?;
            losses::combined_loss(&out.main, aux, &batch.labels, config.mu, eps)?
        }
        Architecture::Unetpp => losses::mean_dice_loss(&out.aux, &batch.labels, eps)?,
        Architecture::Fpsnet | Architecture::FpsnetSl => {
            let raw = out.fps.as_ref().ok_or_else(|| Error::InvalidSpec("FPSnet produced no raw outputs".into()))?;
            let (full, boxes) = match (&batch.labels_full, &batch.boxes) {
                (Some(f), Some(b)) => (f, b),
                _ => return Err(Error::ShapeMismatch("FPSnet batches need full-resolution labels".into())),
            };
            let seg = losses::soft_dice_loss(&raw.seg_full, full, eps)?;
            let targets = DetectionTargets::build(&raw.anchors, boxes)?;
            let det = (losses::focal_loss(&raw.cls_logits, &targets)? + losses::box_loss(&raw.box_deltas, &targets)?)?;
            (seg + (det * config.detection_weight)?)?
        }
    };
    Ok((loss, main_dice))
}

/// Mean per-slice hard Dice of thresholded predictions (empty-empty counts as 1).
pub fn validation_dice(net: &Network, data: &SliceDataset, batch_size: usize) -> Result<f64> {
    let slices = data.all_slices();
    if slices.is_empty() {
        return Err(Error::EmptyData("no validation slices".into()));
    }
    let mut total = 0.0;
    for chunk in slices.chunks(batch_size.max(1)) {
        let samples = chunk.iter().map(|&s| data.sample(s, None)).collect::<Result<Vec<_>>>()?;
        let batch = collate(&samples)?;
        let pred = net.forward(&batch.images, Mode::Eval)?.main.flatten_from(1)?.to_vec2::<f32>()?;
        let truth = batch.labels.flatten_from(1)?.to_vec2::<f32>()?;
        for (p, t) in pred.iter().zip(&truth) {
            let pb: Vec<bool> = p.iter().map(|&v| v > 0.5).collect();
            let tb: Vec<bool> = t.iter().map(|&v| v > 0.5).collect();
            total += losses::hard_dice(&pb, &tb);
        }
    }
    Ok(total / slices.len() as f64)
}

/// Trains a freshly initialised network (weights seeded by `config.seed`).
pub fn train_model(
    spec: &NetworkSpec,
    config: &TrainConfig,
    train: &[&PreprocessedCase],
    val: &[&PreprocessedCase],
) -> Result<TrainOutcome> {
    let net = build_network(spec, config.seed)?;
    train_network(net, config, train, val)
}

/// Trains `net` in place and returns it with the best weights restored.
pub fn train_network(
    net: Network,
    config: &TrainConfig,
    train: &[&PreprocessedCase],
    val: &[&PreprocessedCase],
) -> Result<TrainOutcome> {
    config.validate()?;
    let arch = net.spec().architecture;
    let layout = SampleLayout::for_spec(net.spec());
    let train_ds = SliceDataset::new(train.to_vec(), layout)?;
    if train_ds.foreground_slices().is_empty() {
        return Err(Error::EmptyData("training cases contain no foreground slices".into()));
    }
    let val_ds = if val.is_empty() { None } else { Some(SliceDataset::new(val.to_vec(), layout)?) };
    let adam = ParamsAdamW { lr: config.lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
    let mut opt = AdamW::new(net.params().trainable_vars(), adam)?;

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let mut first_batch_loss = None;
    let mut stop = StopReason::Completed;
    for epoch in 0..config.total_epochs() {
        let lr = config.lr_at(epoch);
        opt.set_learning_rate(lr);
        let slices = train_ds.epoch_slices(config.seed, epoch, config.background_ratio);
        let (mut loss_sum, mut main_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, chunk) in slices.chunks(config.batch_size).enumerate() {
            let samples = chunk
                .iter()
                .enumerate()
                .map(|(j, &s)| {
                    let mut rng = sample_rng(config.seed, epoch, b * config.batch_size + j);
                    train_ds.sample(s, Some((&config.augment, &mut rng)))
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = collate(&samples)?;
            let out = net.forward(&batch.images, Mode::Train)?;
            let (loss, main_dice) = batch_loss(arch, &out, &batch, config)?;
            let value = losses::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            first_batch_loss.get_or_insert(value);
            opt.backward_step(&loss)?;
            loss_sum += value;
            main_sum += losses::scalar(&main_dice)?;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_dice = val_ds.as_ref().map(|v| validation_dice(&net, v, config.batch_size)).transpose()?;
        log::info!(
            "epoch {epoch}: lr {lr:.3e} loss {train_loss:.4} val dice {}",
            val_dice.map_or("-".to_string(), |d| format!("{d:.4}"))
        );
        log.push(EpochRecord { epoch, lr, train_loss, train_main_dice_loss: main_sum / batches as f64, val_dice });

        if let Some(d) = val_dice {
            if best.as_ref().map_or(true, |(bd, _, _)| d > *bd) {
                best = Some((d, epoch, net.params().snapshot()?));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        if config.target_train_loss.is_some_and(|t| train_loss < t) {
            stop = StopReason::TargetLossReached;
            break;
        }
        if val_ds.is_some() && since_best >= config.early_stop_patience {
            stop = StopReason::EarlyStopped;
            break;
        }
    }
    let last_epoch = log.last().map_or(0, |r| r.epoch);
    let (best_val_dice, best_epoch) = match best {
        Some((d, e, snapshot)) => {
            net.params().restore(&snapshot)?;
            (Some(d), e)
        }
        None => (None, last_epoch),
    };
    Ok(TrainOutcome {
        network: net,
        log,
        best_epoch,
        best_val_dice,
        first_batch_loss: first_batch_loss.unwrap_or(f64::NAN),
        stop,
    })
}

/// Runs `train_model` once per fold, training on every other fold and
/// validating on the held-out one. Each outcome is handed to `sink` as soon as
/// its fold finishes, so callers can persist and drop networks one at a time.
pub fn cross_validate<T>(
    spec: &NetworkSpec,
    config: &TrainConfig,
    cases: &[PreprocessedCase],
    folds: &FoldAssignment,
    mut sink: impl FnMut(usize, TrainOutcome) -> Result<T>,
) -> Result<Vec<T>> {
    let mut results = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for c in cases {
            match folds.fold_of(&c.sidecar.case_id) {
                Some(f) if f == fold => val.push(c),
                Some(_) => train.push(c),
                None => return Err(Error::InvalidConfig(format!("case {} has no fold", c.sidecar.case_id))),
            }
        }
        log::info!("fold {fold}: {} training and {} validation cases", train.len(), val.len());
        let outcome = train_model(spec, config, &train, &val)?;
        results.push(sink(fold, outcome)?);
    }
    Ok(results)
}

/// Training log as CSV with a fixed float format so reruns are byte-identical.
pub fn log_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_loss,train_main_dice_loss,val_dice\n");
    for r in records {
        let val = r.val_dice.map_or(String::new(), |d| format!("{d:.6}"));
        let _ = writeln!(s, "{},{:.6e},{:.6},{:.6},{}", r.epoch, r.lr, r.train_loss, r.train_main_dice_loss, val);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = vec![
            EpochRecord { epoch: 0, lr: 1e-4, train_loss: 0.5, train_main_dice_loss: 0.25, val_dice: Some(0.75) },
            EpochRecord { epoch: 1, lr: 5e-5, train_loss: 0.4, train_main_dice_loss: 0.2, val_dice: None },
        ];
        let csv = log_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,lr,train_loss,train_main_dice_loss,val_dice");
        assert_eq!(lines[1], "0,1.000000e-4,0.500000,0.250000,0.750000");
        assert_eq!(lines[2], "1,5.000000e-5,0.400000,0.200000,");
    }
}
