//! Mini-batch training with Adam and early stopping on validation accuracy.

use std::collections::BTreeSet;

use numkit::{AdamConfig, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, param_count, Batch, ContentTable, ModelConfig, ModelError, Net, Result};
use crate::data::{DataError, Dataset, EvalView, Interaction, WARMUP_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without a new best validation accuracy before stopping.
    pub patience: usize,
    /// Sequences per batch.
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Outputs predicting positions below this carry no loss.
    pub min_target_position: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            max_epochs: 50,
            patience: 5,
            batch_size: 64,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            min_target_position: WARMUP_LEN,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(ModelError::Config(
                "batch_size and patience must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(ModelError::Config("invalid optimiser settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

pub struct TrainedModel {
    pub config: ModelConfig,
    pub net: Net,
    pub history: Vec<EpochRecord>,
    pub param_count: usize,
    /// Epoch whose parameters were kept, if any epoch ran.
    pub best_epoch: Option<usize>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains a neural model. The kept parameters are those of the epoch with
/// the best validation accuracy (earliest on ties).
pub fn train(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    train: &Dataset,
    val: &EvalView,
    content: Option<ContentTable>,
) -> Result<TrainedModel> {
    tc.validate()?;
    let train_ids: BTreeSet<u64> = train.sequences.iter().map(|s| s.student_id).collect();
    if let Some(s) = val
        .sequences
        .iter()
        .find(|s| train_ids.contains(&s.student_id))
    {
        return Err(DataError::OverlappingStudents(s.student_id).into());
    }
    let mut net = Net::init(cfg, content)?;
    let count = param_count(net.as_dyn().params());
    let mut history = Vec::new();
    if tc.max_epochs > 0 && val.sequences.is_empty() {
        return Err(ModelError::Config(
            "validation view has no evaluable sequences".into(),
        ));
    }

    let seqs: Vec<&[Interaction]> = train
        .sequences
        .iter()
        .map(|s| s.interactions.as_slice())
        .filter(|s| s.len() >= 2)
        .collect();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut order_rng = stream(cfg.seed, 1);
    let mut drop_rng = stream(cfg.seed, 2);
    let adam = tc.adam();
    let mut best: Option<(f64, usize, numkit::ParamStore)> = None;
    let mut stale = 0;

    for epoch in 0..tc.max_epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for chunk in order.chunks(tc.batch_size) {
            let rows: Vec<&[Interaction]> = chunk.iter().map(|&i| seqs[i]).collect();
            let batch = Batch::new(&rows, cfg.vocab)?;
            let (y, w) = batch.targets(tc.min_target_position);
            let weight: f64 = w.iter().sum();
            if weight == 0.0 {
                continue;
            }
            let grads = {
                let model = net.as_dyn();
                let mut tape = Tape::with_params(model.params());
                let z = model.logits(&mut tape, &batch, Some(&mut drop_rng))?;
                let loss = tape.bce_with_logits(z, &y, &w)?;
                loss_sum += tape.value(loss).item() * weight;
                weight_sum += weight;
                tape.backward(loss)?
            };
            let model = net.as_dyn_mut();
            model.params_mut().accumulate(&grads);
            model.params_mut().adam_step(&adam)?;
            model.params_changed();
        }
        let report = evaluate(&net, val)?;
        let rec = EpochRecord {
            epoch,
            train_loss: if weight_sum > 0.0 {
                loss_sum / weight_sum
            } else {
                0.0
            },
            val_accuracy: report.accuracy,
            val_macro_f1: report.macro_f1,
        };
        log::info!(
            "{} epoch {epoch}: loss {:.5} val acc {:.4} f1 {:.4}",
            cfg.kind,
            rec.train_loss,
            rec.val_accuracy,
            rec.val_macro_f1
        );
        history.push(rec);
        if best.as_ref().is_none_or(|b| rec.val_accuracy > b.0) {
            best = Some((rec.val_accuracy, epoch, net.as_dyn().params().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }

    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        let model = net.as_dyn_mut();
        model.params_mut().copy_values_from(&params)?;
        model.params_changed();
    }
    Ok(TrainedModel {
        config: cfg.clone(),
        net,
        history,
        param_count: count,
        best_epoch,
    })
}
