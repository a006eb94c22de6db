//! Layer probing: train the shared classifier on per-layer representations
//! and measure every layer's task performance.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datakit::{Example, Target};
use crate::error::{Error, Result};
use crate::evalmetrics::{self, round6};
use crate::model::{reduce_matrix, LayeredModel, Strategy};
use crate::numerics::{Tape, Tensor, Var};
use crate::seeds::derive_seed;

pub const HIDDEN1: usize = 128;
pub const HIDDEN2: usize = 64;

/// Output head of the shared classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// k-way classification logits.
    Classes(usize),
    /// Single unbounded scalar for regression.
    Scalar,
}

/// Learning-rate schedule for gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// `eta_t = eta / (1 + t / t0)` with `t` the global update step.
    Diminishing { t0: f64 },
}

impl Schedule {
    pub fn rate(&self, base: f64, step: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Diminishing { t0 } => base / (1.0 + step as f64 / t0),
        }
    }
}

/// Second layer metric for classification probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric2 {
    F1,
    Mcc,
}

impl Metric2 {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(Metric2::F1),
            "mcc" => Ok(Metric2::Mcc),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric '{other}' (expected f1|mcc)"
            ))),
        }
    }
}

/// Whether layer scores come from the shared classifier or from one fresh
/// probe per layer (diagnostic mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    Shared,
    Independent,
}

// ---------------------------------------------------------------------------
// Shared classifier
// ---------------------------------------------------------------------------

/// The shared three-layer head: d -> 128 -> 64 -> k (or a scalar), ReLU
/// after the first two affine maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeClassifier {
    input_dim: usize,
    output_dim: usize,
    regression: bool,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    w3: Tensor,
    b3: Tensor,
}

/// Tape leaves of a registered classifier.
pub struct ClassifierVars {
    vars: [Var; 6],
}

impl ClassifierVars {
    /// Leaves in the order of [`ProbeClassifier::tensors`].
    pub fn all(&self) -> [Var; 6] {
        self.vars
    }
}

impl ProbeClassifier {
    pub fn new(input_dim: usize, head: HeadKind, seed: u64) -> Self {
        let (output_dim, regression) = match head {
            HeadKind::Classes(k) => (k, false),
            HeadKind::Scalar => (1, true),
        };
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, "probe-init"));
        let b_in = 1.0 / (input_dim as f64).sqrt();
        let b_h1 = 1.0 / (HIDDEN1 as f64).sqrt();
        let b_h2 = 1.0 / (HIDDEN2 as f64).sqrt();
        ProbeClassifier {
            input_dim,
            output_dim,
            regression,
            w1: Tensor::rand_uniform(vec![input_dim, HIDDEN1], -b_in, b_in, &mut rng),
            b1: Tensor::rand_uniform(vec![1, HIDDEN1], -b_in, b_in, &mut rng),
            w2: Tensor::rand_uniform(vec![HIDDEN1, HIDDEN2], -b_h1, b_h1, &mut rng),
            b2: Tensor::rand_uniform(vec![1, HIDDEN2], -b_h1, b_h1, &mut rng),
            w3: Tensor::rand_uniform(vec![HIDDEN2, output_dim], -b_h2, b_h2, &mut rng),
            b3: Tensor::rand_uniform(vec![1, output_dim], -b_h2, b_h2, &mut rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn is_regression(&self) -> bool {
        self.regression
    }

    /// Plain forward pass on `[m, d]` inputs.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        use crate::numerics as k;
        let h1 = k::relu(&k::add_row_broadcast(&k::matmul(x, &self.w1), &self.b1));
        let h2 = k::relu(&k::add_row_broadcast(&k::matmul(&h1, &self.w2), &self.b2));
        k::add_row_broadcast(&k::matmul(&h2, &self.w3), &self.b3)
    }

    /// Register parameters as tape leaves.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> ClassifierVars {
        let vars = self
            .tensors()
            .map(|(_, t)| tape.leaf(t.clone().with_requires_grad(requires_grad)));
        ClassifierVars { vars }
    }

    /// Recorded forward pass.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: Var, vars: &ClassifierVars) -> Var {
        let [w1, b1, w2, b2, w3, b3] = vars.vars;
        let a1 = tape.matmul(x, w1);
        let a1 = tape.add_row_broadcast(a1, b1);
        let h1 = tape.relu(a1);
        let a2 = tape.matmul(h1, w2);
        let a2 = tape.add_row_broadcast(a2, b2);
        let h2 = tape.relu(a2);
        let a3 = tape.matmul(h2, w3);
        tape.add_row_broadcast(a3, b3)
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("w3", &self.w3),
            ("b3", &self.b3),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 6] {
        [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("w3", &mut self.w3),
            ("b3", &mut self.b3),
        ]
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.tensors()
            .into_iter()
            .map(|(n, t)| (format!("classifier.{n}"), t))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub(crate) fn restore(
        input_dim: usize,
        output_dim: usize,
        regression: bool,
        mut tensors: std::collections::BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut take = |name: &str| {
            tensors
                .remove(&format!("classifier.{name}"))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor classifier.{name}")))
        };
        Ok(ProbeClassifier {
            input_dim,
            output_dim,
            regression,
            w1: take("w1")?,
            b1: take("b1")?,
            w2: take("w2")?,
            b2: take("b2")?,
            w3: take("w3")?,
            b3: take("b3")?,
        })
    }

    /// Lowest-index argmax per row.
    pub fn predict_classes(&self, x: &Tensor) -> Vec<usize> {
        let logits = self.forward(x);
        (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
    }

    pub fn predict_scalars(&self, x: &Tensor) -> Vec<f64> {
        self.forward(x).data().to_vec()
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Probe datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Scalars(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Scalars(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    ProbeTrain,
    ProbeValidation,
}

/// Per-layer representation collections with one shared target sequence.
#[derive(Debug, Clone)]
pub struct ProbeDataset {
    reps: Vec<Tensor>,
    targets: Targets,
    pub tag: SplitTag,
}

impl ProbeDataset {
    pub fn new(reps: Vec<Tensor>, targets: Targets, tag: SplitTag) -> Result<Self> {
        if reps.is_empty() || targets.is_empty() {
            return Err(Error::InvalidArgument("empty probe dataset".into()));
        }
        let n = targets.len();
        for (i, r) in reps.iter().enumerate() {
            if r.rows() != n {
                return Err(Error::InvalidArgument(format!(
                    "layer {} has {} rows, expected {}",
                    i + 1,
                    r.rows(),
                    n
                )));
            }
        }
        Ok(ProbeDataset { reps, targets, tag })
    }

    pub fn num_layers(&self) -> usize {
        self.reps.len()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn layer_reps(&self, layer: usize) -> &Tensor {
        &self.reps[layer - 1]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    #[cfg(test)]
    pub(crate) fn replace_layer(&mut self, layer: usize, reps: Tensor) {
        assert_eq!(reps.rows(), self.len());
        self.reps[layer - 1] = reps;
    }

    fn gather(&self, layer: usize, idxs: &[usize]) -> (Tensor, Targets) {
        let src = &self.reps[layer - 1];
        let d = src.cols();
        let mut data = Vec::with_capacity(idxs.len() * d);
        for &i in idxs {
            data.extend_from_slice(src.row(i));
        }
        let x = Tensor::unchecked(vec![idxs.len(), d], data);
        let t = match &self.targets {
            Targets::Classes(v) => Targets::Classes(idxs.iter().map(|&i| v[i]).collect()),
            Targets::Scalars(v) => Targets::Scalars(idxs.iter().map(|&i| v[i]).collect()),
        };
        (x, t)
    }

    fn subset(&self, idxs: &[usize], tag: SplitTag) -> ProbeDataset {
        let mut reps = Vec::with_capacity(self.reps.len());
        for l in 1..=self.reps.len() {
            let (x, _) = self.gather(l, idxs);
            reps.push(x);
        }
        let targets = match &self.targets {
            Targets::Classes(v) => Targets::Classes(idxs.iter().map(|&i| v[i]).collect()),
            Targets::Scalars(v) => Targets::Scalars(idxs.iter().map(|&i| v[i]).collect()),
        };
        ProbeDataset { reps, targets, tag }
    }

    /// Hold out a fraction for probe validation, stratified by label for
    /// classification.
    pub fn split_holdout(&self, holdout: f64, seed: u64) -> Result<(ProbeDataset, ProbeDataset)> {
        if !(0.0..1.0).contains(&holdout) || holdout == 0.0 {
            return Err(Error::InvalidArgument(
                "holdout fraction must be in (0, 1)".into(),
            ));
        }
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, "probe-holdout"));
        let mut val_idx = Vec::new();
        let mut train_idx = Vec::new();
        match &self.targets {
            Targets::Classes(labels) => {
                let k = labels.iter().copied().max().unwrap_or(0) + 1;
                for class in 0..k {
                    let mut idxs: Vec<usize> = (0..labels.len())
                        .filter(|&i| labels[i] == class)
                        .collect();
                    idxs.shuffle(&mut rng);
                    let n_val = ((idxs.len() as f64) * holdout).round() as usize;
                    val_idx.extend_from_slice(&idxs[..n_val]);
                    train_idx.extend_from_slice(&idxs[n_val..]);
                }
                train_idx.sort_unstable();
                val_idx.sort_unstable();
            }
            Targets::Scalars(v) => {
                let mut idxs: Vec<usize> = (0..v.len()).collect();
                idxs.shuffle(&mut rng);
                let n_val = ((idxs.len() as f64) * holdout).round() as usize;
                val_idx.extend_from_slice(&idxs[..n_val]);
                train_idx.extend_from_slice(&idxs[n_val..]);
                train_idx.sort_unstable();
                val_idx.sort_unstable();
            }
        }
        if train_idx.is_empty() || val_idx.is_empty() {
            return Err(Error::InvalidArgument(
                "holdout split produced an empty part".into(),
            ));
        }
        Ok((
            self.subset(&train_idx, SplitTag::ProbeTrain),
            self.subset(&val_idx, SplitTag::ProbeValidation),
        ))
    }
}

/// Extract per-layer representations for every example, keeping the model in
/// inference mode (no parameter is touched).
pub fn extract_probe_dataset(
    model: &LayeredModel,
    examples: &[Example],
    strategy: Strategy,
) -> Result<ProbeDataset> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to probe".into()));
    }
    let l = model.num_layers();
    let d = model.config().dim;
    let per_example: Vec<Result<Vec<Vec<f64>>>> = examples
        .par_iter()
        .map(|ex| {
            let reps = model.forward_all_layers(&ex.tokens)?;
            Ok(reps
                .layers
                .iter()
                .map(|h| reduce_matrix(h, strategy))
                .collect())
        })
        .collect();

    let mut layer_data: Vec<Vec<f64>> = vec![Vec::with_capacity(examples.len() * d); l];
    for row in per_example {
        let row = row?;
        for (layer, vec) in row.into_iter().enumerate() {
            layer_data[layer].extend(vec);
        }
    }
    let reps = layer_data
        .into_iter()
        .map(|data| Tensor::unchecked(vec![examples.len(), d], data))
        .collect();
    let targets = collect_targets(examples)?;
    ProbeDataset::new(reps, targets, SplitTag::Full)
}

pub(crate) fn collect_targets(examples: &[Example]) -> Result<Targets> {
    match examples.first() {
        Some(Example {
            target: Target::Class(_),
            ..
        }) => {
            let mut v = Vec::with_capacity(examples.len());
            for ex in examples {
                match ex.target {
                    Target::Class(c) => v.push(c),
                    Target::Scalar(_) => {
                        return Err(Error::ContractViolation(
                            "mixed class and scalar targets".into(),
                        ))
                    }
                }
            }
            Ok(Targets::Classes(v))
        }
        Some(Example {
            target: Target::Scalar(_),
            ..
        }) => {
            let mut v = Vec::with_capacity(examples.len());
            for ex in examples {
                match ex.target {
                    Target::Scalar(s) => v.push(s),
                    Target::Class(_) => {
                        return Err(Error::ContractViolation(
                            "mixed class and scalar targets".into(),
                        ))
                    }
                }
            }
            Ok(Targets::Scalars(v))
        }
        None => Err(Error::InvalidArgument("no examples".into())),
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Probe training parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        ProbeTrainConfig {
            epochs: 100,
            lr: 2e-4,
            batch_size: 64,
            seed: 0,
            schedule: Schedule::Constant,
        }
    }
}

/// Loss and gradient-norm history of one probe training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeHistory {
    /// `losses[epoch][layer]`: mean batch loss of that layer in that epoch.
    pub losses: Vec<Vec<f64>>,
    /// Mean classifier gradient norm per epoch.
    pub grad_norms: Vec<f64>,
}

impl ProbeHistory {
    /// Mean over layers of the first epoch's losses.
    pub fn initial_mean_loss(&self) -> f64 {
        let first = &self.losses[0];
        first.iter().sum::<f64>() / first.len() as f64
    }
}

fn batch_targets(targets: &Targets) -> BatchTargets<'_> {
    match targets {
        Targets::Classes(v) => BatchTargets::Classes(v),
        Targets::Scalars(v) => BatchTargets::Scalars(v),
    }
}

enum BatchTargets<'a> {
    Classes(&'a [usize]),
    Scalars(&'a [f64]),
}

/// One gradient update on one batch of one layer. Returns (loss, grad norm).
fn probe_step(
    clf: &mut ProbeClassifier,
    x: Tensor,
    targets: &Targets,
    lr: f64,
) -> (f64, f64) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let vars = clf.register(&mut tape, true);
    let logits = clf.forward_on_tape(&mut tape, xv, &vars);
    let loss = match batch_targets(targets) {
        BatchTargets::Classes(labels) => tape.softmax_xent_mean(logits, labels),
        BatchTargets::Scalars(values) => tape.mse_mean(logits, values),
    };
    let loss_value = tape.value(loss).scalar_value();
    tape.backward(loss)
        .expect("probe loss is scalar by construction");
    let mut sq_norm = 0.0;
    for ((_, t), var) in clf.tensors_mut().into_iter().zip(vars.vars) {
        if let Some(g) = tape.grad(var) {
            for (p, gi) in t.data_mut().iter_mut().zip(g) {
                sq_norm += gi * gi;
                *p -= lr * gi;
            }
        }
    }
    (loss_value, sq_norm.sqrt())
}

/// Train a single shared classifier by cycling over layers inside each
/// epoch: for every layer, the per-layer loss is computed and the shared
/// weights are updated in place. The model itself is never touched.
pub fn train_probe(
    dataset: &ProbeDataset,
    head: HeadKind,
    config: &ProbeTrainConfig,
) -> Result<(ProbeClassifier, ProbeHistory)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty probe dataset".into()));
    }
    if config.lr <= 0.0 {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    let d = dataset.layer_reps(1).cols();
    let mut clf = ProbeClassifier::new(d, head, config.seed);
    let layers: Vec<usize> = (1..=dataset.num_layers()).collect();
    let history = train_probe_on_layers(&mut clf, dataset, &layers, config)?;
    Ok((clf, history))
}

/// Train `clf` on the given 1-based layers, layer-major within each epoch.
fn train_probe_on_layers(
    clf: &mut ProbeClassifier,
    dataset: &ProbeDataset,
    layers: &[usize],
    config: &ProbeTrainConfig,
) -> Result<ProbeHistory> {
    let n = dataset.len();
    let batch = config.batch_size.max(1).min(n);
    let mut order_rng = StdRng::seed_from_u64(derive_seed(config.seed, "probe-order"));
    let mut losses = Vec::with_capacity(config.epochs);
    let mut grad_norms = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut order_rng);
        let mut epoch_losses = vec![0.0; layers.len()];
        let mut epoch_norm = 0.0;
        let mut updates = 0usize;
        for (li, &layer) in layers.iter().enumerate() {
            let mut layer_loss = 0.0;
            let mut batches = 0usize;
            for chunk in perm.chunks(batch) {
                let (x, t) = dataset.gather(layer, chunk);
                let lr = config.schedule.rate(config.lr, step);
                let (loss, norm) = probe_step(clf, x, &t, lr);
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: Some(batches),
                        value: loss,
                    });
                }
                layer_loss += loss;
                epoch_norm += norm;
                batches += 1;
                updates += 1;
                step += 1;
            }
            epoch_losses[li] = layer_loss / batches as f64;
        }
        losses.push(epoch_losses);
        grad_norms.push(epoch_norm / updates as f64);
    }
    Ok(ProbeHistory { losses, grad_norms })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Per-layer (m1, m2) table; input to best-layer selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetricsTable {
    pub rows: Vec<LayerMetricsRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMetricsRow {
    pub layer: usize,
    pub m1: f64,
    pub m2: f64,
}

impl LayerMetricsTable {
    pub fn num_layers(&self) -> usize {
        self.rows.len()
    }

    pub fn m1_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.m1).collect()
    }

    pub fn m2_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.m2).collect()
    }
}

/// Measure one layer on a validation dataset: classification yields
/// (accuracy, macro-F1 or MCC), regression yields (-RMSE, -RMSE). Values are
/// rounded to six decimals, the report precision.
pub fn evaluate_layer(
    clf: &ProbeClassifier,
    dataset: &ProbeDataset,
    layer: usize,
    metric2: Metric2,
) -> Result<(f64, f64)> {
    if layer == 0 || layer > dataset.num_layers() {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range 1..={}",
            dataset.num_layers()
        )));
    }
    let x = dataset.layer_reps(layer);
    match dataset.targets() {
        Targets::Classes(labels) => {
            let preds = clf.predict_classes(x);
            let m1 = evalmetrics::accuracy(&preds, labels)?;
            let m2 = match metric2 {
                Metric2::F1 => evalmetrics::f1_scores(&preds, labels)?.macro_,
                Metric2::Mcc => evalmetrics::mcc(&preds, labels)?,
            };
            Ok((round6(m1), round6(m2)))
        }
        Targets::Scalars(values) => {
            let preds = clf.predict_scalars(x);
            let neg_rmse = -evalmetrics::rmse(&preds, values)?;
            Ok((round6(neg_rmse), round6(neg_rmse)))
        }
    }
}

/// Everything the probing phase produces.
#[derive(Debug, Clone)]
pub struct ProbeRun {
    pub table: LayerMetricsTable,
    pub classifier: ProbeClassifier,
    pub history: ProbeHistory,
    pub train_set: ProbeDataset,
    pub validation_set: ProbeDataset,
}

/// Probing options beyond the training loop parameters.
#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    pub strategy: Strategy,
    pub head: HeadKind,
    pub metric2: Metric2,
    pub mode: ProbeMode,
    pub holdout: f64,
    pub train: ProbeTrainConfig,
}

/// Full probing phase: extract representations, hold out a validation part,
/// train the shared classifier, and measure every layer.
///
/// In independent mode the per-layer scores come from one fresh classifier
/// per layer (all seeded identically); the shared classifier is still
/// trained because fine-tuning continues from it.
pub fn probe_all_layers(
    model: &LayeredModel,
    examples: &[Example],
    options: &ProbeOptions,
) -> Result<ProbeRun> {
    let full = extract_probe_dataset(model, examples, options.strategy)?;
    let (train_set, validation_set) = full.split_holdout(options.holdout, options.train.seed)?;
    let (classifier, history) = train_probe(&train_set, options.head, &options.train)?;

    let mut rows = Vec::with_capacity(full.num_layers());
    match options.mode {
        ProbeMode::Shared => {
            for layer in 1..=full.num_layers() {
                let (m1, m2) = evaluate_layer(&classifier, &validation_set, layer, options.metric2)?;
                rows.push(LayerMetricsRow { layer, m1, m2 });
            }
        }
        ProbeMode::Independent => {
            let d = train_set.layer_reps(1).cols();
            for layer in 1..=full.num_layers() {
                let mut solo = ProbeClassifier::new(d, options.head, options.train.seed);
                train_probe_on_layers(&mut solo, &train_set, &[layer], &options.train)?;
                let (m1, m2) = evaluate_layer(&solo, &validation_set, layer, options.metric2)?;
                rows.push(LayerMetricsRow { layer, m1, m2 });
            }
        }
    }
    Ok(ProbeRun {
        table: LayerMetricsTable { rows },
        classifier,
        history,
        train_set,
        validation_set,
    })
}
