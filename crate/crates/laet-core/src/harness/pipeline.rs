//! End-to-end orchestration: probe, select, fine-tune, predict, report.
//!
//! Every stage derives its randomness from the experiment seed and a stage
//! tag, so a stage invoked standalone produces exactly the bytes it produces
//! inside the full pipeline, and re-running a pipeline overwrites its
//! artifacts with identical bytes.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datakit::{
    self, format_prompt, DatasetRecord, Example, LabelCodec, TaskMode,
};
use crate::ensemble::{ensemble_error_bound, predict_ensemble, predict_ensemble_scalar};
use crate::error::{Error, Result};
use crate::evalmetrics::{self, round6};
use crate::finetune::{finetune, FinetuneConfig, TrainingTrace};
use crate::harness::checkpoint::{checkpoint_bytes, save_checkpoint};
use crate::harness::config::{DataSource, ExperimentConfig};
use crate::harness::report::{
    BoundEstimate, LayerAccuracy, ParamSummary, PredictionRow, RunReport, TestMetrics,
    TrainingSummary, VoteRow,
};
use crate::model::{extract_representation, LayeredModel, Strategy};
use crate::numerics::{softmax, Tensor};
use crate::probe::{
    argmax, probe_all_layers, HeadKind, LayerMetricsTable, ProbeClassifier, ProbeOptions,
    ProbeRun, ProbeTrainConfig, Schedule,
};
use crate::selection::{select, SelectionConfig, SelectionResult};

pub const FILE_DATASET: &str = "dataset.jsonl";
pub const FILE_METRICS: &str = "layer_metrics.json";
pub const FILE_PROBE_CKPT: &str = "probe.ckpt";
pub const FILE_SELECTION: &str = "selection.json";
pub const FILE_CKPT: &str = "laet.ckpt";
pub const FILE_TRACE: &str = "trace.json";
pub const FILE_PREDICTIONS: &str = "predictions.jsonl";
pub const FILE_REPORT: &str = "report.json";
pub const FILE_SWEEP: &str = "sweep.csv";
pub const FILE_STRATEGIES: &str = "strategies.csv";

/// The dataset split three ways plus its label codec.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: Vec<DatasetRecord>,
    pub val: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
    pub codec: LabelCodec,
    /// The full record list when it was synthesized (persisted for
    /// reproducibility).
    pub synthesized: Option<Vec<DatasetRecord>>,
}

/// Load or synthesize the dataset and split it.
pub fn load_data(cfg: &ExperimentConfig) -> Result<DataBundle> {
    let (records, synthesized) = match cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no dataset configured".into()))?
    {
        DataSource::Path { path } => (datakit::load_jsonl(path)?.0, None),
        DataSource::Synth { spec } => {
            let records = datakit::synth_generate(spec, cfg.seed)?;
            (records.clone(), Some(records))
        }
    };
    let codec = LabelCodec::infer(&records)?;
    let (train, val, test) = datakit::split(
        &records,
        (cfg.split.train, cfg.split.val, cfg.split.test),
        cfg.seed,
    )?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(
            "train and test splits must be non-empty".into(),
        ));
    }
    Ok(DataBundle {
        train,
        val,
        test,
        codec,
        synthesized,
    })
}

/// Seeded model construction.
pub fn build_model(cfg: &ExperimentConfig) -> Result<LayeredModel> {
    LayeredModel::new(cfg.model, cfg.seed)
}

/// Tokenize prompts and encode answers.
pub fn make_examples(
    model: &LayeredModel,
    codec: &LabelCodec,
    records: &[DatasetRecord],
) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            Ok(Example {
                tokens: model.tokenize(&format_prompt(r)),
                target: codec.encode(&r.answer)?,
            })
        })
        .collect()
}

fn head_kind(codec: &LabelCodec) -> HeadKind {
    match codec.mode {
        TaskMode::Classification => HeadKind::Classes(codec.num_classes()),
        TaskMode::Regression => HeadKind::Scalar,
    }
}

fn probe_options(cfg: &ExperimentConfig, codec: &LabelCodec) -> ProbeOptions {
    ProbeOptions {
        strategy: cfg.probe.strategy,
        head: head_kind(codec),
        metric2: cfg.probe.metric2,
        mode: cfg.probe.mode,
        holdout: cfg.probe.holdout,
        train: ProbeTrainConfig {
            epochs: cfg.probe.epochs,
            lr: cfg.probe.lr,
            batch_size: cfg.probe.batch,
            seed: cfg.seed,
            schedule: Schedule::Constant,
        },
    }
}

/// The probing phase over the training split.
pub fn probe_stage(
    cfg: &ExperimentConfig,
    model: &LayeredModel,
    bundle: &DataBundle,
) -> Result<ProbeRun> {
    let examples = make_examples(model, &bundle.codec, &bundle.train)?;
    probe_all_layers(model, &examples, &probe_options(cfg, &bundle.codec))
}

fn finetune_config(cfg: &ExperimentConfig) -> FinetuneConfig {
    FinetuneConfig {
        epochs: cfg.finetune.epochs,
        lr_model: cfg.finetune.lr_model,
        lr_classifier: cfg.finetune.lr_classifier,
        weight_decay: cfg.finetune.weight_decay,
        batch_size: cfg.finetune.batch,
        clip_norm: cfg.finetune.clip,
        seed: cfg.seed,
        schedule: cfg.finetune.schedule,
    }
}

/// Fine-tune the selected layers plus the classifier on the training split.
pub fn finetune_stage(
    cfg: &ExperimentConfig,
    model: &mut LayeredModel,
    classifier: &mut ProbeClassifier,
    selection: &SelectionResult,
    bundle: &DataBundle,
) -> Result<TrainingTrace> {
    let examples = make_examples(model, &bundle.codec, &bundle.train)?;
    finetune(
        model,
        classifier,
        selection,
        &examples,
        cfg.probe.strategy,
        &finetune_config(cfg),
    )
}

/// Ensemble predictions over the test split, in split order.
pub fn predict_stage(
    cfg: &ExperimentConfig,
    model: &LayeredModel,
    classifier: &ProbeClassifier,
    layers: &[usize],
    bundle: &DataBundle,
) -> Result<Vec<PredictionRow>> {
    let codec = &bundle.codec;
    let strategy = cfg.probe.strategy;
    let rows: Vec<Result<PredictionRow>> = bundle
        .test
        .par_iter()
        .enumerate()
        .map(|(index, record)| {
            let tokens = model.tokenize(&format_prompt(record));
            match codec.mode {
                TaskMode::Classification => {
                    let vote = predict_ensemble(model, classifier, &tokens, layers, strategy)?;
                    Ok(PredictionRow {
                        index,
                        answer: record.answer.clone(),
                        prediction: Some(codec.class_name(vote.class).to_string()),
                        value: None,
                        tie: Some(vote.tie),
                        votes: cfg.report_votes.then(|| {
                            vote.votes
                                .iter()
                                .map(|v| VoteRow {
                                    layer: v.layer,
                                    class: codec.class_name(v.class).to_string(),
                                    probs: v.probs.clone(),
                                })
                                .collect()
                        }),
                    })
                }
                TaskMode::Regression => {
                    let (mean, _) =
                        predict_ensemble_scalar(model, classifier, &tokens, layers, strategy)?;
                    Ok(PredictionRow {
                        index,
                        answer: record.answer.clone(),
                        prediction: None,
                        value: Some(mean),
                        tie: None,
                        votes: None,
                    })
                }
            }
        })
        .collect();
    rows.into_iter().collect()
}

/// Recompute test metrics from prediction rows via the metrics module.
pub fn evaluate_rows(codec: &LabelCodec, rows: &[PredictionRow]) -> Result<TestMetrics> {
    match codec.mode {
        TaskMode::Classification => {
            let mut preds = Vec::with_capacity(rows.len());
            let mut labels = Vec::with_capacity(rows.len());
            for row in rows {
                let p = row.prediction.as_deref().ok_or_else(|| {
                    Error::InvalidArgument(format!("row {} lacks a class prediction", row.index))
                })?;
                preds.push(match codec.encode(p)? {
                    datakit::Target::Class(c) => c,
                    _ => unreachable!(),
                });
                labels.push(match codec.encode(&row.answer)? {
                    datakit::Target::Class(c) => c,
                    _ => unreachable!(),
                });
            }
            let f1 = evalmetrics::f1_scores(&preds, &labels)?;
            Ok(TestMetrics {
                accuracy: Some(round6(evalmetrics::accuracy(&preds, &labels)?)),
                f1_micro: Some(round6(f1.micro)),
                f1_macro: Some(round6(f1.macro_)),
                mcc: Some(round6(evalmetrics::mcc(&preds, &labels)?)),
                rmse: None,
            })
        }
        TaskMode::Regression => {
            let mut preds = Vec::with_capacity(rows.len());
            let mut targets = Vec::with_capacity(rows.len());
            for row in rows {
                let v = row.value.ok_or_else(|| {
                    Error::InvalidArgument(format!("row {} lacks a scalar prediction", row.index))
                })?;
                preds.push(v);
                targets.push(row.answer.parse::<f64>().map_err(|e| {
                    Error::InvalidArgument(format!("bad scalar answer '{}': {e}", row.answer))
                })?);
            }
            Ok(TestMetrics {
                rmse: Some(round6(evalmetrics::rmse(&preds, &targets)?)),
                ..TestMetrics::default()
            })
        }
    }
}

/// Per-layer accuracy of the classifier head on a record set, one forward
/// pass per example.
pub fn per_layer_accuracy(
    model: &LayeredModel,
    classifier: &ProbeClassifier,
    codec: &LabelCodec,
    records: &[DatasetRecord],
    layers: &[usize],
    strategy: Strategy,
) -> Result<Vec<LayerAccuracy>> {
    if records.is_empty() || codec.mode != TaskMode::Classification {
        return Ok(Vec::new());
    }
    let per_example: Vec<Result<(Vec<usize>, usize)>> = records
        .par_iter()
        .map(|record| {
            let tokens = model.tokenize(&format_prompt(record));
            let reps = model.forward_all_layers(&tokens)?;
            let mut preds = Vec::with_capacity(layers.len());
            for &layer in layers {
                let rep = extract_representation(&reps, layer, strategy)?;
                let logits = classifier.forward(&Tensor::unchecked(vec![1, rep.len()], rep));
                let probs = softmax(logits.row(0))?;
                preds.push(argmax(&probs));
            }
            let label = match codec.encode(&record.answer)? {
                datakit::Target::Class(c) => c,
                _ => unreachable!(),
            };
            Ok((preds, label))
        })
        .collect();

    let mut labels = Vec::with_capacity(records.len());
    let mut by_layer: Vec<Vec<usize>> = vec![Vec::with_capacity(records.len()); layers.len()];
    for item in per_example {
        let (preds, label) = item?;
        labels.push(label);
        for (column, p) in by_layer.iter_mut().zip(preds) {
            column.push(p);
        }
    }
    layers
        .iter()
        .zip(by_layer)
        .map(|(&layer, preds)| {
            Ok(LayerAccuracy {
                layer,
                accuracy: round6(evalmetrics::accuracy(&preds, &labels)?),
            })
        })
        .collect()
}

/// Estimated majority-vote bound from validation error rates; absent when
/// there is no validation split, the task is regression, or the average
/// error reaches one half.
pub fn bound_estimate(
    model: &LayeredModel,
    classifier: &ProbeClassifier,
    codec: &LabelCodec,
    val_records: &[DatasetRecord],
    layers: &[usize],
    strategy: Strategy,
) -> Result<Option<BoundEstimate>> {
    if val_records.is_empty() || codec.mode != TaskMode::Classification {
        return Ok(None);
    }
    let accs = per_layer_accuracy(model, classifier, codec, val_records, layers, strategy)?;
    let avg_error =
        accs.iter().map(|a| 1.0 - a.accuracy).sum::<f64>() / accs.len() as f64;
    if !(0.0..0.5).contains(&avg_error) {
        return Ok(None);
    }
    let bound = ensemble_error_bound(avg_error, layers.len())?;
    Ok(Some(BoundEstimate {
        avg_validation_error: round6(avg_error),
        ensemble_size: layers.len(),
        bound: round6(bound),
        estimated: true,
    }))
}

/// Assemble the full run report from the pipeline pieces.
#[allow(clippy::too_many_arguments)]
pub fn assemble_report(
    cfg: &ExperimentConfig,
    bundle: &DataBundle,
    model: &LayeredModel,
    classifier: &ProbeClassifier,
    layer_metrics: LayerMetricsTable,
    selection: SelectionResult,
    trace: &TrainingTrace,
    rows: &[PredictionRow],
) -> Result<RunReport> {
    let test = evaluate_rows(&bundle.codec, rows)?;
    let classification = bundle.codec.mode == TaskMode::Classification;
    let per_layer = if classification {
        Some(per_layer_accuracy(
            model,
            classifier,
            &bundle.codec,
            &bundle.test,
            &selection.selected,
            cfg.probe.strategy,
        )?)
    } else {
        None
    };
    let bound = bound_estimate(
        model,
        classifier,
        &bundle.codec,
        &bundle.val,
        &selection.selected,
        cfg.probe.strategy,
    )?;
    let trainable =
        selection.selected.len() * model.layer_param_count() + classifier.param_count();
    let total = model.total_param_count() + classifier.param_count();
    Ok(RunReport {
        config: cfg.clone(),
        task_mode: bundle.codec.mode,
        classes: bundle.codec.classes.clone(),
        layer_metrics,
        selection,
        training: TrainingSummary::from_trace(trace),
        test,
        per_layer_test_accuracy: per_layer,
        ensemble_test_accuracy: test.accuracy,
        ensemble_bound: bound,
        params: ParamSummary {
            trainable,
            total,
            fraction: round6(trainable as f64 / total as f64),
        },
    })
}

/// Tracks artifact writes so a failed run leaves no partial outputs behind.
struct ArtifactWriter {
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    fn new() -> Self {
        ArtifactWriter {
            written: Vec::new(),
        }
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    fn cleanup(&self) {
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
    }
}

/// Run the full pipeline and persist every artifact under `cfg.out`.
/// Re-running with the same config and seed overwrites identical bytes.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate(true)?;
    let bundle = load_data(cfg).map_err(|e| e.in_stage("data"))?;
    let mut model = build_model(cfg).map_err(|e| e.in_stage("model"))?;
    let probe_run = probe_stage(cfg, &model, &bundle).map_err(|e| e.in_stage("probe"))?;

    let sel_cfg = SelectionConfig {
        alpha: cfg.select.alpha,
        beta: cfg.select.beta,
        strategy: cfg.select.strategy,
    };
    let selection = select(&probe_run.table, &sel_cfg).map_err(|e| e.in_stage("select"))?;

    // Snapshot the post-probe state before fine-tuning mutates it.
    let probe_ckpt = checkpoint_bytes(&model, &probe_run.classifier);

    let mut classifier = probe_run.classifier.clone();
    let trace = finetune_stage(cfg, &mut model, &mut classifier, &selection, &bundle)
        .map_err(|e| e.in_stage("finetune"))?;
    let rows = predict_stage(cfg, &model, &classifier, &selection.selected, &bundle)
        .map_err(|e| e.in_stage("predict"))?;
    let report = assemble_report(
        cfg,
        &bundle,
        &model,
        &classifier,
        probe_run.table.clone(),
        selection.clone(),
        &trace,
        &rows,
    )
    .map_err(|e| e.in_stage("report"))?;

    write_run_artifacts(cfg, &bundle, &probe_ckpt, &model, &classifier, &report, &trace, &rows)
        .map_err(|e| e.in_stage("write"))?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn write_run_artifacts(
    cfg: &ExperimentConfig,
    bundle: &DataBundle,
    probe_ckpt: &[u8],
    model: &LayeredModel,
    classifier: &ProbeClassifier,
    report: &RunReport,
    trace: &TrainingTrace,
    rows: &[PredictionRow],
) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    let mut writer = ArtifactWriter::new();
    let result = (|| -> Result<()> {
        if let Some(records) = &bundle.synthesized {
            let mut bytes = Vec::new();
            for r in records {
                serde_json::to_writer(&mut bytes, r).map_err(|e| Error::Io(e.into()))?;
                bytes.push(b'\n');
            }
            writer.write(cfg.out.join(FILE_DATASET), &bytes)?;
        }
        writer.write(
            cfg.out.join(FILE_METRICS),
            &crate::harness::report::to_json_bytes(&report.layer_metrics),
        )?;
        writer.write(cfg.out.join(FILE_PROBE_CKPT), probe_ckpt)?;
        writer.write(
            cfg.out.join(FILE_SELECTION),
            &crate::harness::report::to_json_bytes(&report.selection),
        )?;
        writer.write(
            cfg.out.join(FILE_CKPT),
            &checkpoint_bytes(model, classifier),
        )?;
        writer.write(
            cfg.out.join(FILE_TRACE),
            &crate::harness::report::to_json_bytes(trace),
        )?;
        let mut pred_bytes = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut pred_bytes, row).map_err(|e| Error::Io(e.into()))?;
            pred_bytes.push(b'\n');
        }
        writer.write(cfg.out.join(FILE_PREDICTIONS), &pred_bytes)?;
        writer.write(
            cfg.out.join(FILE_REPORT),
            &crate::harness::report::to_json_bytes(report),
        )?;
        Ok(())
    })();
    if result.is_err() {
        writer.cleanup();
    }
    result
}

// ---------------------------------------------------------------------------
// Alpha/beta sweep
// ---------------------------------------------------------------------------

/// One sweep cell. Failed cells carry the failing stage in `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub layers: usize,
    pub selected: Vec<usize>,
    pub trainable_params: usize,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub status: String,
}

/// Sweep the margin coefficients over a grid; probing runs once and is
/// shared across cells because selection consumes only the metrics table.
pub fn sweep_alpha_beta(
    cfg: &ExperimentConfig,
    alphas: &[f64],
    betas: &[f64],
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    cfg.validate(true)?;
    let bundle = load_data(cfg).map_err(|e| e.in_stage("data"))?;
    let model = build_model(cfg).map_err(|e| e.in_stage("model"))?;
    let probe_run = probe_stage(cfg, &model, &bundle).map_err(|e| e.in_stage("probe"))?;

    let mut rows = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in alphas {
        for &beta in betas {
            rows.push(sweep_cell(cfg, &bundle, &model, &probe_run, alpha, beta));
        }
    }

    fs::create_dir_all(&cfg.out)?;
    let mut csv = String::from("alpha,beta,layers,trainable_params,accuracy,f1,status\n");
    for row in &rows {
        csv.push_str(&format!(
            "{:.6},{:.6},{},{},{},{},{}\n",
            row.alpha,
            row.beta,
            row.layers,
            row.trainable_params,
            row.accuracy.map_or(String::new(), |v| format!("{v:.6}")),
            row.f1.map_or(String::new(), |v| format!("{v:.6}")),
            row.status
        ));
    }
    fs::write(cfg.out.join(FILE_SWEEP), csv)?;
    Ok(rows)
}

fn sweep_cell(
    cfg: &ExperimentConfig,
    bundle: &DataBundle,
    model: &LayeredModel,
    probe_run: &ProbeRun,
    alpha: f64,
    beta: f64,
) -> SweepRow {
    let run = || -> Result<SweepRow> {
        let sel_cfg = SelectionConfig {
            alpha,
            beta,
            strategy: cfg.select.strategy,
        };
        let selection = select(&probe_run.table, &sel_cfg).map_err(|e| e.in_stage("select"))?;
        let mut cell_model = model.clone();
        let mut cell_clf = probe_run.classifier.clone();
        finetune_stage(cfg, &mut cell_model, &mut cell_clf, &selection, bundle)
            .map_err(|e| e.in_stage("finetune"))?;
        let rows = predict_stage(cfg, &cell_model, &cell_clf, &selection.selected, bundle)
            .map_err(|e| e.in_stage("predict"))?;
        let test = evaluate_rows(&bundle.codec, &rows).map_err(|e| e.in_stage("report"))?;
        let trainable = selection.selected.len() * cell_model.layer_param_count()
            + cell_clf.param_count();
        Ok(SweepRow {
            alpha,
            beta,
            layers: selection.selected.len(),
            selected: selection.selected,
            trainable_params: trainable,
            accuracy: test.accuracy.or(test.rmse),
            f1: test.f1_macro,
            status: "ok".into(),
        })
    };
    run().unwrap_or_else(|e| {
        let status = match &e {
            Error::Stage { stage, .. } => format!("error:{stage}"),
            _ => "error".into(),
        };
        log::warn!("sweep cell (alpha={alpha}, beta={beta}) failed: {e}");
        SweepRow {
            alpha,
            beta,
            layers: 0,
            selected: Vec::new(),
            trainable_params: 0,
            accuracy: None,
            f1: None,
            status,
        }
    })
}

// ---------------------------------------------------------------------------
// Probing-strategy comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub layer: usize,
    pub m1: f64,
    pub m2: f64,
}

/// Probe with all three reduction strategies on identical forward passes and
/// seeds, emitting per-layer metric curves. The model is built fresh from
/// the experiment seed.
pub fn compare_probe_strategies(cfg: &ExperimentConfig) -> Result<Vec<StrategyRow>> {
    cfg.validate(true)?;
    let model = build_model(cfg).map_err(|e| e.in_stage("model"))?;
    compare_probe_strategies_on(cfg, &model)
}

/// Strategy comparison against a caller-supplied backbone (for example one
/// that has already been fine-tuned on the task).
pub fn compare_probe_strategies_on(
    cfg: &ExperimentConfig,
    model: &LayeredModel,
) -> Result<Vec<StrategyRow>> {
    cfg.validate(true)?;
    let bundle = load_data(cfg).map_err(|e| e.in_stage("data"))?;
    let examples = make_examples(model, &bundle.codec, &bundle.train)
        .map_err(|e| e.in_stage("data"))?;

    let strategies = [Strategy::Lt, Strategy::Sat, Strategy::Avt];
    let l = model.num_layers();
    let d = model.config().dim;

    // One forward pass per example serves all three reductions.
    let per_example: Vec<Result<Vec<[Vec<f64>; 3]>>> = examples
        .par_iter()
        .map(|ex| {
            let reps = model.forward_all_layers(&ex.tokens)?;
            Ok(reps
                .layers
                .iter()
                .map(|h| {
                    [
                        crate::model::reduce_matrix(h, Strategy::Lt),
                        crate::model::reduce_matrix(h, Strategy::Sat),
                        crate::model::reduce_matrix(h, Strategy::Avt),
                    ]
                })
                .collect())
        })
        .collect();

    let mut data: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::with_capacity(examples.len() * d); l]; 3];
    for item in per_example {
        let layers = item.map_err(|e| e.in_stage("probe"))?;
        for (layer_idx, reductions) in layers.into_iter().enumerate() {
            for (s, vec) in reductions.into_iter().enumerate() {
                data[s][layer_idx].extend(vec);
            }
        }
    }

    let targets = crate::probe::collect_targets(&examples)?;
    let options = probe_options(cfg, &bundle.codec);
    let mut rows = Vec::with_capacity(3 * l);
    for (s, strategy) in strategies.iter().enumerate() {
        let reps: Vec<Tensor> = data[s]
            .iter()
            .map(|col| Tensor::unchecked(vec![examples.len(), d], col.clone()))
            .collect();
        let dataset = crate::probe::ProbeDataset::new(
            reps,
            targets.clone(),
            crate::probe::SplitTag::Full,
        )?;
        let (train_set, val_set) = dataset
            .split_holdout(options.holdout, options.train.seed)
            .map_err(|e| e.in_stage("probe"))?;
        let (clf, _) = crate::probe::train_probe(&train_set, options.head, &options.train)
            .map_err(|e| e.in_stage("probe"))?;
        for layer in 1..=l {
            let (m1, m2) =
                crate::probe::evaluate_layer(&clf, &val_set, layer, options.metric2)
                    .map_err(|e| e.in_stage("probe"))?;
            rows.push(StrategyRow {
                strategy: strategy.name().to_string(),
                layer,
                m1,
                m2,
            });
        }
    }

    fs::create_dir_all(&cfg.out)?;
    let mut csv = String::from("strategy,layer,m1,m2\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            row.strategy, row.layer, row.m1, row.m2
        ));
    }
    fs::write(cfg.out.join(FILE_STRATEGIES), csv)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Standalone stage entry points used by the CLI
// ---------------------------------------------------------------------------

/// Probe standalone: writes the metrics table and the post-probe checkpoint.
pub fn cli_probe(cfg: &ExperimentConfig) -> Result<LayerMetricsTable> {
    cfg.validate(true)?;
    let bundle = load_data(cfg).map_err(|e| e.in_stage("data"))?;
    let model = build_model(cfg).map_err(|e| e.in_stage("model"))?;
    let probe_run = probe_stage(cfg, &model, &bundle).map_err(|e| e.in_stage("probe"))?;
    fs::create_dir_all(&cfg.out)?;
    crate::harness::report::write_json(&probe_run.table, &cfg.out.join(FILE_METRICS))?;
    fs::write(
        cfg.out.join(FILE_PROBE_CKPT),
        checkpoint_bytes(&model, &probe_run.classifier),
    )?;
    Ok(probe_run.table)
}

/// Select standalone: reads the metrics table written by `probe`.
pub fn cli_select(cfg: &ExperimentConfig) -> Result<SelectionResult> {
    let metrics_path = cfg.out.join(FILE_METRICS);
    if !metrics_path.exists() {
        return Err(Error::InvalidArgument(format!(
            "no metrics table at {}; run the probe stage first",
            metrics_path.display()
        )));
    }
    let table: LayerMetricsTable = crate::harness::report::read_json(&metrics_path)?;
    let selection = select(
        &table,
        &SelectionConfig {
            alpha: cfg.select.alpha,
            beta: cfg.select.beta,
            strategy: cfg.select.strategy,
        },
    )
    .map_err(|e| e.in_stage("select"))?;
    crate::harness::report::write_json(&selection, &cfg.out.join(FILE_SELECTION))?;
    Ok(selection)
}

/// Fine-tune standalone: consumes `probe.ckpt` and `selection.json`.
pub fn cli_finetune(cfg: &ExperimentConfig) -> Result<TrainingTrace> {
    cfg.validate(true)?;
    let ckpt = cfg.out.join(FILE_PROBE_CKPT);
    let sel = cfg.out.join(FILE_SELECTION);
    for (path, hint) in [(&ckpt, "probe"), (&sel, "select")] {
        if !path.exists() {
            return Err(Error::InvalidArgument(format!(
                "missing {}; run the {hint} stage first",
                path.display()
            )));
        }
    }
    let (mut model, mut classifier) =
        crate::harness::checkpoint::load_checkpoint(&ckpt).map_err(|e| e.in_stage("finetune"))?;
    let selection: SelectionResult = crate::harness::report::read_json(&sel)?;
    let bundle = load_data(cfg).map_err(|e| e.in_stage("data"))?;
    let trace = finetune_stage(cfg, &mut model, &mut classifier, &selection, &bundle)
        .map_err(|e| e.in_stage("finetune"))?;
    save_checkpoint(&model, &classifier, &cfg.out.join(FILE_CKPT))?;
    crate::harness::report::write_json(&trace, &cfg.out.join(FILE_TRACE))?;
    Ok(trace)
}

/// Predict standalone: consumes the fine-tuned checkpoint.
pub fn cli_predict(cfg: &ExperimentConfig) -> Result<Vec<PredictionRow>> {
    cfg.validate(true)?;
    let ckpt = cfg.out.join(FILE_CKPT);
    if !ckpt.exists() {
        return Err(Error::InvalidArgument(format!(
            "missing {}; run the finetune stage first",
            ckpt.display()
        )));
    }
    let (model, classifier) =
        crate::harness::checkpoint::load_checkpoint(&ckpt).map_err(|e| e.in_stage("predict"))?;
    let bundle = load_data(cfg).map_err(|e| e.in_stage("data"))?;
    let layers = model.trainable_layers();
    let rows = predict_stage(cfg, &model, &classifier, &layers, &bundle)
        .map_err(|e| e.in_stage("predict"))?;
    crate::harness::report::write_predictions(&rows, &cfg.out.join(FILE_PREDICTIONS))?;
    Ok(rows)
}

/// Report standalone: recomputes metrics from the persisted artifacts.
pub fn cli_report(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate(true)?;
    let required = [
        cfg.out.join(FILE_METRICS),
        cfg.out.join(FILE_SELECTION),
        cfg.out.join(FILE_CKPT),
        cfg.out.join(FILE_TRACE),
        cfg.out.join(FILE_PREDICTIONS),
    ];
    for path in &required {
        if !path.exists() {
            return Err(Error::InvalidArgument(format!(
                "missing {}; run the earlier stages first",
                path.display()
            )));
        }
    }
    let table: LayerMetricsTable = crate::harness::report::read_json(&required[0])?;
    let selection: SelectionResult = crate::harness::report::read_json(&required[1])?;
    let (model, classifier) =
        crate::harness::checkpoint::load_checkpoint(&required[2]).map_err(|e| e.in_stage("report"))?;
    let trace: TrainingTrace = crate::harness::report::read_json(&required[3])?;
    let rows = crate::harness::report::read_predictions(&required[4])?;
    let bundle = load_data(cfg).map_err(|e| e.in_stage("data"))?;
    let report = assemble_report(
        cfg,
        &bundle,
        &model,
        &classifier,
        table,
        selection,
        &trace,
        &rows,
    )
    .map_err(|e| e.in_stage("report"))?;
    crate::harness::report::write_json(&report, &cfg.out.join(FILE_REPORT))?;
    Ok(report)
}

/// Synthesize a dataset file.
pub fn cli_synth(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let Some(DataSource::Synth { spec }) = &cfg.data else {
        return Err(Error::InvalidArgument(
            "synth requires a synthetic data source (--synth)".into(),
        ));
    };
    let records = datakit::synth_generate(spec, cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(FILE_DATASET);
    datakit::write_jsonl(&records, &path)?;
    Ok(path)
}
