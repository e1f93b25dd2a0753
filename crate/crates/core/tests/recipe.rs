use std::fs;

use forge_core::init_map::{load_model, CheckpointArchive};
use forge_core::model::ModelConfig;
use forge_core::recipe::{run_recipe, RecipeConfig, RecipeName};
use forge_core::Error;

fn small() -> RecipeConfig {
    let mut cfg = RecipeConfig::default();
    cfg.model = ModelConfig {
        hidden: 16,
        ffn_dim: 32,
        heads: 2,
        ..ModelConfig::tiny(64)
    };
    cfg.parallel_pairs = 40;
    cfg.finetune_pairs = 40;
    cfg.test_size = 10;
    cfg.mono_sizes = (60, 20);
    cfg.pretrain.total_steps = 20;
    cfg.pretrain.warmup_steps = 5;
    cfg.pretrain.save_every = 10;
    cfg.finetune.total_steps = 20;
    cfg.finetune.warmup_steps = 5;
    cfg.finetune.save_every = 4;
    cfg.beam.max_len = 12;
    cfg
}

#[test]
fn names_round_trip() {
    for r in RecipeName::ALL {
        assert_eq!(r.as_str().parse::<RecipeName>().unwrap(), r);
    }
    assert!(matches!("warmup-demo".parse::<RecipeName>(), Err(Error::Argument(_))));
}

#[test]
fn config_from_toml_overrides_defaults() {
    let cfg = RecipeConfig::from_toml("views = 3\n[pretrain]\ntotal_steps = 500\n").unwrap();
    assert_eq!(cfg.views, 3);
    assert_eq!(cfg.pretrain.total_steps, 500);
    assert_eq!(cfg.pretrain.lr_peak, RecipeConfig::default().pretrain.lr_peak);
    assert_eq!(cfg.finetune, RecipeConfig::default().finetune);
    assert!(matches!(RecipeConfig::from_toml("viewz = 3"), Err(Error::Config(_))));
    assert!(matches!(RecipeConfig::from_toml("mix_ratio = 1.5"), Err(Error::Config(_))));
    assert!(matches!(RecipeConfig::from_toml("[finetune]\nlr = 1.0"), Err(Error::Config(_))));
}

#[test]
fn finetune_demo_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let report = run_recipe(RecipeName::FinetuneDemo, &small(), 3, out).unwrap();
    for f in [
        "data/train.tsv",
        "data/test.tsv",
        "data/xspan.tsv",
        "data/span0.tsv",
        "encoder/manifest.json",
        "init/mapping_report.json",
        "pretrained/tensors.bin",
        "finetune/train.log",
        "finetuned/config.json",
        "hyp.txt",
        "ref.txt",
        "metrics.log",
        "report.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(out.join("metrics.log")).unwrap();
    let stages: Vec<&str> = log.lines().filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(
        stages,
        ["stage=gen", "stage=corrupt", "stage=init-map", "stage=pretrain", "stage=eval", "stage=finetune", "stage=eval"]
    );
    assert!(log.contains("unmapped=0"));
    assert!(log.contains("averaged=5"));
    assert_eq!(report.finetune_steps, Some(20));
    let eval = report.eval.unwrap();
    assert_eq!(eval.outputs, 10);
    assert_eq!(fs::read_to_string(out.join("hyp.txt")).unwrap().lines().count(), 10);
    load_model::<f32>(&out.join("finetuned")).unwrap();
}

#[test]
fn pretrain_demo_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_recipe(RecipeName::PretrainDemo, &small(), 5, a.path()).unwrap();
    run_recipe(RecipeName::PretrainDemo, &small(), 5, b.path()).unwrap();
    let x = CheckpointArchive::read_dir(&a.path().join("pretrained")).unwrap();
    let y = CheckpointArchive::read_dir(&b.path().join("pretrained")).unwrap();
    assert_eq!(x, y);
    assert!(!a.path().join("finetuned").exists());
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    // a file where the data directory should go
    fs::write(dir.path().join("data"), "").unwrap();
    let err = run_recipe(RecipeName::PretrainDemo, &small(), 1, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "gen", .. }), "{err}");
    assert!(err.to_string().starts_with("stage `gen` failed"));
    assert!(!err.is_validation());
}
