use std::path::Path;

use hetnid::pipeline::run::Layout;
use hetnid::pipeline::{
    run_pipeline, write_synthetic_captures, PipelineConfig, RunOptions, SplitPlan, Stage, StageStatus, SynthConfig,
};
use hetnid::{Error, TrafficClass};

fn small_config(root: &Path) -> PipelineConfig {
    write_synthetic_captures(
        &root.join("captures"),
        &SynthConfig {
            flows_per_class: 40,
            noise_flows: 3,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.captures = vec![root.join("captures")];
    cfg.work_dir = root.join("work");
    cfg.split = SplitPlan {
        test_cap: 10,
        train_target: 40,
        ..SplitPlan::default()
    };
    cfg.model.hidden = 8;
    cfg.model.layer1_heads = 2;
    cfg.model.head_dims = vec![8];
    cfg.train.epochs = 3;
    cfg.explain.limit = 2;
    cfg.explain.explain.steps = 8;
    cfg
}

fn statuses(s: &hetnid::pipeline::RunSummary) -> Vec<StageStatus> {
    s.stages.iter().map(|(_, st)| *st).collect()
}

#[test]
fn rerun_skips_every_stage_and_force_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let first = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(statuses(&first), vec![StageStatus::Ran; 8]);
    let l = Layout::new(&cfg.work_dir);
    for p in [l.flows(), l.features(), l.train_graphs(), l.model(), l.predictions(), l.eval_md(), l.manifest()] {
        assert!(p.exists(), "{}", p.display());
    }
    let second = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(statuses(&second), vec![StageStatus::Skipped; 8]);
    let forced = run_pipeline(
        &cfg,
        &RunOptions {
            force: true,
            until: Some(Stage::Featurize),
        },
    )
    .unwrap();
    assert_eq!(statuses(&forced), vec![StageStatus::Ran; 2]);
}

#[test]
fn corrupted_output_reruns_its_stage_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let l = Layout::new(&cfg.work_dir);
    let mut text = std::fs::read_to_string(l.predictions()).unwrap();
    text.push('\n');
    std::fs::write(l.predictions(), text).unwrap();
    let s = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(s.status(Stage::Train), Some(StageStatus::Skipped));
    assert_eq!(s.status(Stage::Infer), Some(StageStatus::Ran));
    // Inference is deterministic, so the regenerated file matches again.
    assert_eq!(s.status(Stage::Evaluate), Some(StageStatus::Skipped));
}

#[test]
fn config_change_invalidates_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    run_pipeline(&cfg, &RunOptions { force: false, until: Some(Stage::BuildGraphs) }).unwrap();
    cfg.split.seed += 1;
    let s = run_pipeline(&cfg, &RunOptions { force: false, until: Some(Stage::BuildGraphs) }).unwrap();
    assert_eq!(
        statuses(&s),
        vec![StageStatus::Skipped, StageStatus::Skipped, StageStatus::Ran, StageStatus::Ran]
    );
}

#[test]
fn failing_stage_quarantines_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    let until = RunOptions {
        force: false,
        until: Some(Stage::PrepareDataset),
    };
    run_pipeline(&cfg, &until).unwrap();
    let l = Layout::new(&cfg.work_dir);
    assert!(l.train_flows().exists());
    cfg.split.required_classes = vec![TrafficClass::Mirai];
    let err = run_pipeline(&cfg, &until).unwrap_err();
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "prepare-dataset");
            assert!(matches!(**source, Error::EmptyClass(_)));
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert!(err.is_data_error());
    assert!(!l.train_flows().exists());
    let q = l.quarantine().join("prepare-dataset-0");
    for name in ["train.jsonl", "test.jsonl", "summary.json"] {
        assert!(q.join(name).exists(), "{name} not quarantined");
    }
    // The failed stage is not recorded, so the next good run executes it.
    cfg.split.required_classes.clear();
    let s = run_pipeline(&cfg, &until).unwrap();
    assert_eq!(s.status(Stage::PrepareDataset), Some(StageStatus::Ran));
    assert_eq!(s.status(Stage::Extract), Some(StageStatus::Skipped));
}

#[test]
fn toml_config_round_trip_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.captures = vec![dir.path().join("caps")];
    cfg.work_dir = dir.path().join("out");
    cfg.split.test_cap = 50;
    cfg.endpoint.base_url = Some("http://localhost:8000/v1".into());
    let path = dir.path().join("pipeline.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap(), cfg);

    std::fs::write(&path, "captures = [\"caps\"]\nwork_dir = \"out\"\n[split]\ntest_cap = 50\n").unwrap();
    let loaded = PipelineConfig::load(&path).unwrap();
    assert_eq!(loaded.captures, vec![dir.path().join("caps")]);
    assert_eq!(loaded.work_dir, dir.path().join("out"));
    assert_eq!(loaded.split.test_cap, 50);
    assert_eq!(loaded.split.train_target, SplitPlan::default().train_target);

    std::fs::write(&path, "[split]\ntest_cap = \"many\"\n").unwrap();
    assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
}
