use std::fs;
use std::path::Path;

use rdsa_core::metrics::MetricsReport;
use rdsa_core::pipeline::{
    aggregate_records, generate_report, run_attack_pipeline, run_augmentation_pipeline, AttackSweepSpec,
    AugmentationSpec, Experiment, PipelineError, RunOptions, RunRecord,
};
use serde_json::json;

fn experiment(features: usize, rows: usize) -> Experiment {
    serde_json::from_value(json!({
        "data": {"synthetic": {
            "rows": rows,
            "features": features,
            "correlation": {"uniform": 0.6},
            "class_shift": [0.8]
        }},
        "model": {"custom": {
            "input_dim": features,
            "layers": [
                {"width": 8, "activation": "relu"},
                {"width": 1, "activation": "sigmoid"}
            ],
            "optimizer": "adam",
            "learning_rate": 0.01,
            "batch_size": 32,
            "epochs": 5,
            "loss": "binary_cross_entropy",
            "init_seed": 3
        }},
        "seed": 11
    }))
    .unwrap()
}

fn augmentation(extra: serde_json::Value) -> AugmentationSpec {
    let mut v = json!({
        "reduction": {"fraction": 0.05},
        "strategies": ["none", {"rdsa": {"n_vars": 2}}, {"gradient": {"epsilon": 0.1, "steps": 10}}],
        "repetitions": 3
    });
    v.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    serde_json::from_value(v).unwrap()
}

fn opts(out: &Path) -> RunOptions {
    RunOptions {
        out: out.to_path_buf(),
        reuse_model: None,
    }
}

fn hashes(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("hashes.json")).unwrap()).unwrap()
}

#[test]
fn oversized_grid_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let spec = AttackSweepSpec::new(vec![2, 9], 1);
    let err = run_attack_pipeline(&experiment(8, 600), &spec, &opts(&out)).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)), "{err}");
    assert!(!out.exists());
}

#[test]
fn attack_sweep_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = experiment(5, 800);
    let spec = AttackSweepSpec::new(vec![1, 3, 5], 2);
    let a = run_attack_pipeline(&exp, &spec, &opts(&tmp.path().join("a"))).unwrap();
    let b = run_attack_pipeline(&exp, &spec, &opts(&tmp.path().join("b"))).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.cells.len(), 3);
    for name in [
        "aggregate.csv",
        "tidy.csv",
        "model.ckpt",
        "histograms.json",
        "plot_fooling_ratio.csv",
    ] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(name)).unwrap(),
            fs::read(tmp.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(tmp.path().join("a/adversarial/cell002_run001.csv").exists());
    assert_eq!(hashes(&tmp.path().join("a")), hashes(&tmp.path().join("b")));
    let test_rows = a.records[0].report.attacked.unwrap();
    for r in &a.records {
        assert!(r.report.succeeded.unwrap() <= r.report.attacked.unwrap());
        assert_eq!(r.report.attacked.unwrap(), test_rows);
    }
}

#[test]
fn report_rebuilds_the_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_attack_pipeline(&experiment(4, 600), &AttackSweepSpec::new(vec![1, 2], 2), &opts(&out)).unwrap();
    let first = generate_report(&out).unwrap();
    let md = fs::read(&first.markdown).unwrap();
    assert_eq!(
        fs::read(&first.aggregate).unwrap(),
        fs::read(out.join("aggregate.csv")).unwrap()
    );
    generate_report(&out).unwrap();
    assert_eq!(fs::read(&first.markdown).unwrap(), md);
}

#[test]
fn report_needs_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let err = generate_report(tmp.path()).unwrap_err();
    assert!(matches!(err, PipelineError::MissingRunArtifacts(_)));
}

#[test]
fn augmentation_doubles_and_keeps_test_split() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("aug");
    let exp = experiment(6, 4000);
    let test_before = exp.prepare().unwrap().splits.test.content_hash();
    let res = run_augmentation_pipeline(&exp, &augmentation(json!({})), &opts(&out)).unwrap();
    assert_eq!(res.records.len(), 9);
    assert_eq!(res.cells.len(), 3);
    for r in &res.records {
        let reduced = r.reduced_size.unwrap();
        assert_eq!(reduced, 120);
        let expected = (r.config != "none").then_some(2 * reduced);
        assert_eq!(r.augmented_size, expected, "{}", r.config);
        assert!(r.report.auroc > 0.5);
    }
    let h = hashes(&out);
    assert_eq!(h["split:test"], json!(test_before));
    assert_eq!(h["split:test_after"], json!(test_before));
    assert_eq!(exp.prepare().unwrap().splits.test.content_hash(), test_before);
}

#[test]
fn repetition_rows_do_not_depend_on_the_repetition_count() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = experiment(6, 3000);
    let three = run_augmentation_pipeline(&exp, &augmentation(json!({})), &opts(&tmp.path().join("three"))).unwrap();
    let one = run_augmentation_pipeline(
        &exp,
        &augmentation(json!({"repetitions": 1})),
        &opts(&tmp.path().join("one")),
    )
    .unwrap();
    for r in &one.records {
        let same = three
            .records
            .iter()
            .find(|t| t.cell == r.cell && t.run == r.run)
            .unwrap();
        assert_eq!(same, r);
    }
}

#[test]
fn strict_fill_reports_shortfall() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("strict");
    let spec = augmentation(json!({
        "strategies": [{"rdsa": {"n_vars": 1, "max_attempts": 1}}],
        "repetitions": 1,
        "fill": {"retry_rounds": 0, "include_unflipped": false}
    }));
    let err = run_augmentation_pipeline(&experiment(6, 3000), &spec, &opts(&out)).unwrap_err();
    match err {
        PipelineError::InsufficientAdversaries { needed, produced, .. } => assert!(produced < needed),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn aggregate_uses_population_rms() {
    let record = |run, fr| RunRecord {
        cell: 0,
        config: "n_vars=1".into(),
        n_vars: Some(1),
        run,
        seed: run as u64,
        report: MetricsReport {
            fooling_ratio: Some(fr),
            accuracy: 0.5,
            auroc: 0.5,
            ..MetricsReport::default()
        },
        reduced_size: None,
        augmented_size: None,
        flipped: None,
    };
    let cells = aggregate_records(&[record(1, 0.9), record(0, 0.7)]);
    let fr = cells[0].get("fooling_ratio").unwrap();
    assert!((fr.mean - 0.8).abs() < 1e-12);
    assert!((fr.rms - 0.1).abs() < 1e-12);
    let acc = cells[0].get("accuracy").unwrap();
    assert_eq!((acc.mean, acc.rms), (0.5, 0.0));
    assert!(cells[0].get("mean_jsd").is_none());
}
