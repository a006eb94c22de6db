//! Joint fine-tuning of the selected layers and the shared classifier
//! against the combined loss, with gradients routed away from frozen layers.

use std::time::Instant;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datakit::{Example, Target};
use crate::error::{Error, Result};
use crate::model::{reduce_on_tape, LayeredModel, Strategy};
use crate::numerics::Tape;
use crate::probe::{ProbeClassifier, Schedule};
use crate::seeds::derive_seed;
use crate::selection::SelectionResult;

/// Fine-tuning hyperparameters. The classifier trains faster than the model
/// layers; weight decay applies to model parameters only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr_model: f64,
    pub lr_classifier: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 50,
            lr_model: 2e-5,
            lr_classifier: 2e-4,
            weight_decay: 1e-4,
            batch_size: 32,
            clip_norm: 1.0,
            seed: 0,
            schedule: Schedule::Constant,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.lr_model <= 0.0 || self.lr_classifier <= 0.0 {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.clip_norm <= 0.0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "weight decay must be non-negative; clip norm and batch size positive".into(),
            ));
        }
        Ok(())
    }
}

/// Combined loss over the selected layers: the arithmetic mean.
pub fn combined_loss(per_layer_losses: &[f64]) -> Result<f64> {
    if per_layer_losses.is_empty() {
        return Err(Error::ContractViolation(
            "combined loss over an empty layer set".into(),
        ));
    }
    Ok(per_layer_losses.iter().sum::<f64>() / per_layer_losses.len() as f64)
}

/// Per-epoch record of one fine-tuning run. Wall-clock stays in memory only
/// so that persisted traces are byte-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochTrace {
    pub combined_loss: f64,
    /// `(layer, mean loss)` for each selected layer.
    pub per_layer_loss: Vec<(usize, f64)>,
    #[serde(skip)]
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochTrace>,
}

impl TrainingTrace {
    pub fn first_loss(&self) -> f64 {
        self.epochs.first().map(|e| e.combined_loss).unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map(|e| e.combined_loss).unwrap_or(f64::NAN)
    }
}

/// Flat layout of every trainable tensor's gradient: the selected layers'
/// tensors in ascending layer order, then the classifier's.
struct GradLayout {
    /// (selected-layer position, tensor index within layer, offset, len)
    layer_slots: Vec<(usize, usize, usize, usize)>,
    /// (classifier tensor index, offset, len)
    clf_slots: Vec<(usize, usize, usize)>,
    total: usize,
}

impl GradLayout {
    fn build(model: &LayeredModel, clf: &ProbeClassifier, selected: &[usize]) -> Self {
        let mut offset = 0;
        let mut layer_slots = Vec::new();
        for (pos, &layer) in selected.iter().enumerate() {
            for (ti, (_, t)) in model.layer_params(layer).tensors().iter().enumerate() {
                layer_slots.push((pos, ti, offset, t.len()));
                offset += t.len();
            }
        }
        let mut clf_slots = Vec::new();
        for (ti, (_, t)) in clf.tensors().iter().enumerate() {
            clf_slots.push((ti, offset, t.len()));
            offset += t.len();
        }
        GradLayout {
            layer_slots,
            clf_slots,
            total: offset,
        }
    }
}

struct ExampleResult {
    grads: Vec<f64>,
    per_layer: Vec<f64>,
    loss: f64,
}

fn example_pass(
    model: &LayeredModel,
    clf: &ProbeClassifier,
    layout: &GradLayout,
    selected: &[usize],
    max_layer: usize,
    strategy: Strategy,
    example: &Example,
) -> Result<ExampleResult> {
    let mut tape = Tape::new();
    let layer_vars = model.register_layers(&mut tape, max_layer);
    let clf_vars = clf.register(&mut tape, true);
    let hidden = model.forward_on_tape(&mut tape, &example.tokens, &layer_vars, max_layer)?;

    let mut losses = Vec::with_capacity(selected.len());
    for &layer in selected {
        let rep = reduce_on_tape(&mut tape, hidden[layer - 1], strategy);
        let logits = clf.forward_on_tape(&mut tape, rep, &clf_vars);
        let loss = match example.target {
            Target::Class(label) => tape.softmax_xent_mean(logits, &[label]),
            Target::Scalar(value) => tape.mse_mean(logits, &[value]),
        };
        losses.push(loss);
    }
    let total = tape.mean_of(&losses);
    let loss = tape.value(total).scalar_value();
    tape.backward(total)?;

    let mut grads = vec![0.0; layout.total];
    for &(pos, ti, offset, len) in &layout.layer_slots {
        let var = model_layer_var(&layer_vars, selected[pos], ti);
        if let Some(g) = tape.grad(var) {
            grads[offset..offset + len].copy_from_slice(g);
        }
    }
    for &(ti, offset, len) in &layout.clf_slots {
        if let Some(g) = tape.grad(clf_vars_at(&clf_vars, ti)) {
            grads[offset..offset + len].copy_from_slice(g);
        }
    }
    Ok(ExampleResult {
        grads,
        per_layer: losses
            .iter()
            .map(|&l| tape.value(l).scalar_value())
            .collect(),
        loss,
    })
}

fn model_layer_var(
    vars: &crate::model::LayerVars,
    layer: usize,
    tensor_index: usize,
) -> crate::numerics::Var {
    vars.layer(layer)[tensor_index]
}

fn clf_vars_at(vars: &crate::probe::ClassifierVars, index: usize) -> crate::numerics::Var {
    vars.all()[index]
}

/// Fine-tune the selected layers and the shared classifier on the combined
/// loss. Freezes every other layer first; afterwards those layers are
/// byte-identical to their pre-call state.
pub fn finetune(
    model: &mut LayeredModel,
    classifier: &mut ProbeClassifier,
    selection: &SelectionResult,
    examples: &[Example],
    strategy: Strategy,
    config: &FinetuneConfig,
) -> Result<TrainingTrace> {
    config.validate()?;
    if selection.selected.is_empty() {
        return Err(Error::ContractViolation("selected layer set is empty".into()));
    }
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let mut selected = selection.selected.clone();
    selected.sort_unstable();
    selected.dedup();
    model.set_trainable(&selected)?;
    let max_layer = *selected.last().unwrap();
    let layout = GradLayout::build(model, classifier, &selected);

    let mut order_rng = StdRng::seed_from_u64(derive_seed(config.seed, "finetune-order"));
    let n = examples.len();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut order_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_per_layer = vec![0.0; selected.len()];

        for (batch_idx, chunk) in perm.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<ExampleResult>> = chunk
                .par_iter()
                .map(|&i| {
                    example_pass(
                        model,
                        classifier,
                        &layout,
                        &selected,
                        max_layer,
                        strategy,
                        &examples[i],
                    )
                })
                .collect();

            let m = chunk.len() as f64;
            let mut grads = vec![0.0; layout.total];
            let mut batch_loss = 0.0;
            let mut batch_per_layer = vec![0.0; selected.len()];
            for result in results {
                let r = result?;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    *acc += g;
                }
                batch_loss += r.loss;
                for (acc, l) in batch_per_layer.iter_mut().zip(&r.per_layer) {
                    *acc += l;
                }
            }
            for g in &mut grads {
                *g /= m;
            }
            batch_loss /= m;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: Some(batch_idx),
                    value: batch_loss,
                });
            }

            // Clip the pure loss gradient at a global norm before the decay
            // term joins the update.
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > config.clip_norm {
                let s = config.clip_norm / norm;
                for g in &mut grads {
                    *g *= s;
                }
            }

            let lr_model = config.schedule.rate(config.lr_model, step);
            let lr_clf = config.schedule.rate(config.lr_classifier, step);
            for &(pos, ti, offset, len) in &layout.layer_slots {
                let layer = selected[pos];
                let (_, tensor) = &mut model.layer_params_mut(layer).tensors_mut()[ti];
                let g = &grads[offset..offset + len];
                for (p, gi) in tensor.data_mut().iter_mut().zip(g) {
                    *p -= lr_model * (gi + config.weight_decay * *p);
                }
            }
            for &(ti, offset, len) in &layout.clf_slots {
                let (_, tensor) = &mut classifier.tensors_mut()[ti];
                let g = &grads[offset..offset + len];
                for (p, gi) in tensor.data_mut().iter_mut().zip(g) {
                    *p -= lr_clf * gi;
                }
            }

            epoch_loss += batch_loss * m;
            for (acc, l) in epoch_per_layer.iter_mut().zip(&batch_per_layer) {
                *acc += l;
            }
            step += 1;
        }

        trace.push(EpochTrace {
            combined_loss: epoch_loss / n as f64,
            per_layer_loss: selected
                .iter()
                .zip(&epoch_per_layer)
                .map(|(&layer, &sum)| (layer, sum / n as f64))
                .collect(),
            wall_ms: started.elapsed().as_millis(),
        });
    }

    Ok(TrainingTrace { epochs: trace })
}
