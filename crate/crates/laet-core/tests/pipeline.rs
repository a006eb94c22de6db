//! Harness integration tests at tiny scale: determinism, artifact
//! consistency, stage coupling, sweep equivalence.

use std::path::Path;

use laet_core::datakit::{SynthSpec, SynthTask};
use laet_core::harness::checkpoint::{checkpoint_bytes, load_checkpoint};
use laet_core::harness::config::{DataSource, ExperimentConfig, SplitFractions};
use laet_core::harness::pipeline::{
    self, compare_probe_strategies, run_pipeline, sweep_alpha_beta, FILE_CKPT, FILE_METRICS,
    FILE_PREDICTIONS, FILE_REPORT,
};
use laet_core::model::ModelConfig;
use laet_core::selection::SelectionStrategy;

fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data = Some(DataSource::Synth {
        spec: SynthSpec {
            task: SynthTask::Keyword,
            size: 120,
            classes: 2,
            noise: 0.0,
        },
    });
    cfg.split = SplitFractions {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };
    cfg.model = ModelConfig {
        layers: 3,
        dim: 16,
        heads: 2,
        context: 48,
    };
    cfg.probe.epochs = 6;
    cfg.probe.batch = 16;
    cfg.finetune.epochs = 2;
    cfg.finetune.batch = 16;
    cfg.seed = 11;
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn identical_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("run"));
    run_pipeline(&cfg).unwrap();
    let first: Vec<(String, Vec<u8>)> = artifact_bytes(&cfg.out);
    run_pipeline(&cfg).unwrap();
    let second = artifact_bytes(&cfg.out);
    assert_eq!(first.len(), second.len());
    for ((name_a, a), (name_b, b)) in first.iter().zip(&second) {
        assert_eq!(name_a, name_b);
        assert_eq!(a, b, "artifact {name_a} changed between identical runs");
    }
}

fn artifact_bytes(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<String> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|name| {
            let bytes = std::fs::read(out.join(&name)).unwrap();
            (name, bytes)
        })
        .collect()
}

#[test]
fn different_seeds_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&dir.path().join("a"));
    let report_a = run_pipeline(&cfg).unwrap();
    cfg.seed = 12;
    cfg.out = dir.path().join("b");
    let report_b = run_pipeline(&cfg).unwrap();
    assert_ne!(
        report_a.layer_metrics, report_b.layer_metrics,
        "distinct seeds should perturb probing metrics"
    );
}

#[test]
fn trainable_fraction_cross_checks_against_checkpoint_walk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("run"));
    let report = run_pipeline(&cfg).unwrap();

    // Independent parameter walk over the persisted checkpoint manifest.
    let bytes = std::fs::read(cfg.out.join(FILE_CKPT)).unwrap();
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest: serde_json::Value = serde_json::from_slice(&bytes[16..16 + manifest_len]).unwrap();
    let mask: Vec<bool> = manifest["trainable_mask"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_bool().unwrap())
        .collect();
    let mut trainable = 0u64;
    let mut total = 0u64;
    for entry in manifest["tensors"].as_array().unwrap() {
        let name = entry["name"].as_str().unwrap();
        let count = entry["count"].as_u64().unwrap();
        total += count;
        if let Some(rest) = name.strip_prefix("layer.") {
            let layer: usize = rest.split('.').next().unwrap().parse().unwrap();
            if mask[layer - 1] {
                trainable += count;
            }
        } else if name.starts_with("classifier.") {
            trainable += count;
        }
    }
    assert_eq!(report.params.trainable as u64, trainable);
    assert_eq!(report.params.total as u64, total);
    let fraction = (trainable as f64 / total as f64 * 1e6).round() / 1e6;
    assert_eq!(report.params.fraction, fraction);
}

#[test]
fn loaded_checkpoint_reproduces_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("run"));
    run_pipeline(&cfg).unwrap();

    let (model, classifier) = load_checkpoint(&cfg.out.join(FILE_CKPT)).unwrap();
    let bundle = pipeline::load_data(&cfg).unwrap();
    let layers = model.trainable_layers();
    let rows = pipeline::predict_stage(&cfg, &model, &classifier, &layers, &bundle).unwrap();
    let persisted =
        laet_core::harness::report::read_predictions(&cfg.out.join(FILE_PREDICTIONS)).unwrap();
    assert_eq!(rows, persisted);
}

#[test]
fn sweep_rows_equal_independent_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&dir.path().join("sweep"));
    cfg.select.strategy = SelectionStrategy::Threshold;
    let rows = sweep_alpha_beta(&cfg, &[0.2, 0.8], &[0.5]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(std::fs::read_to_string(cfg.out.join("sweep.csv"))
        .unwrap()
        .lines()
        .count()
        == 3);

    for row in &rows {
        let mut single = cfg.clone();
        single.select.alpha = row.alpha;
        single.select.beta = row.beta;
        single.out = dir.path().join(format!("single-{}", row.alpha));
        let report = run_pipeline(&single).unwrap();
        assert_eq!(report.selection.selected, row.selected, "selection differs");
        assert_eq!(report.test.accuracy, row.accuracy, "accuracy differs");
        assert_eq!(report.test.f1_macro, row.f1, "macro F1 differs");
        assert_eq!(
            report.params.trainable, row.trainable_params,
            "parameter count differs"
        );
    }
}

#[test]
fn threshold_sweep_grows_selection_with_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&dir.path().join("mono"));
    cfg.select.strategy = SelectionStrategy::Threshold;
    let rows = sweep_alpha_beta(&cfg, &[0.1, 0.5, 1.0, 2.0], &[1.0]).unwrap();
    for pair in rows.windows(2) {
        assert!(
            pair[0].layers <= pair[1].layers,
            "|B| must be non-decreasing in alpha under the threshold rule"
        );
    }
}

#[test]
fn strategy_comparison_matches_single_strategy_probes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("strategies"));
    let rows = compare_probe_strategies(&cfg).unwrap();
    assert_eq!(rows.len(), 3 * cfg.model.layers);

    // The LT slice of the comparison equals a standalone LT probe run.
    let bundle = pipeline::load_data(&cfg).unwrap();
    let model = pipeline::build_model(&cfg).unwrap();
    let probe_run = pipeline::probe_stage(&cfg, &model, &bundle).unwrap();
    for (row, expected) in rows
        .iter()
        .filter(|r| r.strategy == "lt")
        .zip(&probe_run.table.rows)
    {
        assert_eq!(row.layer, expected.layer);
        assert_eq!(row.m1, expected.m1);
        assert_eq!(row.m2, expected.m2);
    }
}

#[test]
fn failed_pipeline_leaves_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&dir.path().join("fail"));
    // A diverging learning rate turns the first fine-tune batch non-finite.
    cfg.finetune.lr_model = 1e280;
    cfg.finetune.lr_classifier = 1e280;
    let result = run_pipeline(&cfg);
    assert!(result.is_err());
    match result {
        Err(laet_core::Error::Stage { stage, .. }) => assert_eq!(stage, "finetune"),
        other => panic!("expected stage error, got {other:?}"),
    }
    // The output directory holds no partial artifacts.
    if cfg.out.exists() {
        assert_eq!(
            std::fs::read_dir(&cfg.out).unwrap().count(),
            0,
            "partial artifacts left behind"
        );
    }
}

#[test]
fn regression_pipeline_reports_rmse() {
    let dir = tempfile::tempdir().unwrap();
    // Synthesize a numeric-answer dataset on disk: the answer tracks the
    // count of '1' digits in the text, scaled.
    let data_path = dir.path().join("reg.jsonl");
    let mut lines = String::new();
    for i in 0..80 {
        let ones = i % 4;
        let text: String = "1".repeat(ones) + &"7".repeat(6 - ones);
        lines.push_str(&format!(
            "{{\"instruction\":\"\",\"text\":\"{text}\",\"answer\":\"{}\"}}\n",
            ones as f64 * 0.5
        ));
    }
    std::fs::write(&data_path, lines).unwrap();

    let mut cfg = tiny_config(&dir.path().join("reg-run"));
    cfg.data = Some(DataSource::Path { path: data_path });
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.task_mode, laet_core::datakit::TaskMode::Regression);
    assert!(report.test.rmse.is_some());
    assert!(report.test.accuracy.is_none());
    assert!(report.ensemble_bound.is_none());
    // Regression metric columns are negated RMSE, hence non-positive.
    assert!(report.layer_metrics.rows.iter().all(|r| r.m1 <= 0.0));
}

#[test]
fn independent_probe_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&dir.path().join("indep"));
    cfg.probe.mode = laet_core::probe::ProbeMode::Independent;
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.layer_metrics.rows.len(), 3);
}

#[test]
fn metrics_artifact_matches_probe_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("metrics"));
    run_pipeline(&cfg).unwrap();
    let table: laet_core::LayerMetricsTable =
        laet_core::harness::report::read_json(&cfg.out.join(FILE_METRICS)).unwrap();
    let report: laet_core::harness::RunReport =
        laet_core::harness::report::read_json(&cfg.out.join(FILE_REPORT)).unwrap();
    assert_eq!(table, report.layer_metrics);
}

#[test]
fn probe_checkpoint_preserves_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(&dir.path().join("probeck"));
    run_pipeline(&cfg).unwrap();
    let (probe_model, _) =
        load_checkpoint(&cfg.out.join(pipeline::FILE_PROBE_CKPT)).unwrap();
    // The probing phase never touches model parameters, so the persisted
    // post-probe model equals a freshly built one.
    let fresh = pipeline::build_model(&cfg).unwrap();
    let fresh_clf = laet_core::probe::ProbeClassifier::new(
        cfg.model.dim,
        laet_core::probe::HeadKind::Classes(2),
        cfg.seed,
    );
    // Compare only the model tensors (the classifier was trained).
    let a = checkpoint_bytes(&probe_model, &fresh_clf);
    let b = checkpoint_bytes(&fresh, &fresh_clf);
    assert_eq!(a, b);
}
