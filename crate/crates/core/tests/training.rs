use std::fs;

use minidarts::bilevel::{apply_scheme, BilevelTrainer};
use minidarts::harness::{
    derive, generate_dataset, resume_search, run_search, run_seeds, Checkpoint, DatasetSpec,
    ResolvedRun, RunConfig, RunPaths, SearchOptions,
};
use minidarts::magnitude_stop::{early_stop_run, OnlineStopper, StopCriterion};
use minidarts::search_space::{discretize, ArchParams, SupernetSpec};

fn small_run(preset: &str, epochs: usize) -> ResolvedRun {
    let mut c = RunConfig {
        dataset: DatasetSpec {
            n_samples: 160,
            ..DatasetSpec::default()
        },
        ..RunConfig::default()
    };
    c.supernet.feature_dim = 8;
    c.overrides.total_epochs = Some(epochs);
    c.overrides.batch_size = Some(32);
    c.resolve(Some(preset), None).unwrap()
}

#[test]
fn warmup_keeps_alpha_at_init_for_k_epochs() {
    let run = small_run("warmup_10", 12);
    let data = generate_dataset(&run.dataset).unwrap();
    let mut tr = BilevelTrainer::new(run.supernet.clone(), run.train.clone()).unwrap();
    let init = ArchParams::for_spec(&run.supernet).bit_pattern();
    let mut prev_w = tr.state().weights.bit_pattern();
    for epoch in 1..=12 {
        tr.run_epoch(&data.train, &data.val).unwrap();
        let w = tr.state().weights.bit_pattern();
        assert_ne!(w, prev_w, "weights frozen at epoch {epoch}");
        prev_w = w;
        let frozen = tr.state().arch.bit_pattern() == init;
        assert_eq!(frozen, epoch <= 10, "epoch {epoch}");
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run("lr_0.003", 8);
    let full = run_search(&run, &dir.path().join("full"), &SearchOptions::default()).unwrap();

    let part = dir.path().join("part");
    run_search(&run, &part, &SearchOptions::default()).unwrap();
    let resumed = resume_search(&part, 3, &SearchOptions::default()).unwrap();
    assert_eq!(
        resumed.final_arch.bit_pattern(),
        full.final_arch.bit_pattern()
    );
    assert_eq!(resumed.metrics, full.metrics);
    for f in ["metrics.csv", "magnitudes.csv", "checkpoints/epoch_8.json"] {
        assert_eq!(
            fs::read(part.join(f)).unwrap(),
            fs::read(dir.path().join("full").join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(resume_search(&part, 99, &SearchOptions::default()).is_err());
}

#[test]
fn derive_rolls_back_to_stored_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run("lr_0.003", 6);
    run_search(&run, dir.path(), &SearchOptions::default()).unwrap();
    let criteria =
        StopCriterion::parse_list("peak:op_large,residual:skip_connect,sc:1,rt:2").unwrap();
    let derived = derive(dir.path(), &criteria).unwrap();
    let paths = RunPaths::new(dir.path());
    for d in &derived {
        let ckpt = Checkpoint::load(&paths.checkpoint(d.epoch)).unwrap();
        let want = discretize(&ckpt.arch_params().unwrap())
            .genotype(&run.supernet)
            .unwrap();
        assert_eq!(d.genotype, want);
        let on_disk: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(paths.genotype(&d.criterion)).unwrap())
                .unwrap();
        assert_eq!(on_disk, serde_json::to_value(&want).unwrap());
    }
    assert!(paths.derive_summary().exists());
}

#[test]
fn early_stop_returns_the_firing_epoch() {
    let run = small_run("lr_0.003", 10);
    let data = generate_dataset(&run.dataset).unwrap();
    let stopper = OnlineStopper::new(
        StopCriterion::Peak("op_large".into()),
        run.supernet.op_set.clone(),
        2,
    )
    .unwrap();
    let mut tr = BilevelTrainer::new(run.supernet.clone(), run.train.clone()).unwrap();
    let es = early_stop_run(&mut tr, &data.train, &data.val, stopper).unwrap();

    // replay without stopping and compare against the parameters at the selected epoch
    let mut replay = BilevelTrainer::new(run.supernet.clone(), run.train.clone()).unwrap();
    for _ in 0..es.selected_epoch {
        replay.run_epoch(&data.train, &data.val).unwrap();
    }
    assert_eq!(es.architecture, discretize(&replay.state().arch));
    assert!(es.stopped_at <= 10 && es.selected_epoch <= es.stopped_at);
    if es.fired {
        assert_eq!(es.stopped_at - es.selected_epoch, 2);
    }
}

#[test]
fn early_stop_writes_record_and_final_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run("lr_0.003", 10);
    let opts = SearchOptions {
        early_stop: Some(StopCriterion::RankStable(1)),
        patience: 5,
    };
    let out = run_search(&run, dir.path(), &opts).unwrap();
    let rec = out.early_stop.unwrap();
    assert_eq!(
        (rec.stopped_at, rec.selected_epoch, out.metrics.len()),
        (1, 1, 1)
    );
    let paths = RunPaths::new(dir.path());
    assert!(
        paths.early_stop().exists()
            && paths.checkpoint(1).exists()
            && !paths.checkpoint(2).exists()
    );
}

#[test]
fn sparse_checkpoints_keep_final_epoch_and_flag_missing() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = small_run("baseline", 5);
    run.checkpoint_every = 2;
    run_search(&run, dir.path(), &SearchOptions::default()).unwrap();
    let paths = RunPaths::new(dir.path());
    let present: Vec<bool> = (1..=5).map(|t| paths.checkpoint(t).exists()).collect();
    assert_eq!(present, [false, true, false, true, true]);
    let err = derive(dir.path(), &[StopCriterion::SkipCount(10)]).unwrap();
    assert_eq!(err[0].epoch, 5);
    fs::remove_file(paths.checkpoint(5)).unwrap();
    let err = derive(dir.path(), &[StopCriterion::SkipCount(10)]).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn seed_batch_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run("baseline", 2);
    let results = run_seeds(&run, dir.path(), &[1, 2], &SearchOptions::default()).unwrap();
    assert_eq!(results.len(), 2);
    assert_ne!(results[0].final_metrics, results[1].final_metrics);
    let text = fs::read_to_string(dir.path().join("seeds_summary.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("mean,") && lines[4].starts_with("std,"));
    assert!(dir.path().join("seed_2/metrics.csv").exists());
}

#[test]
fn separable_blobs_are_fit_under_exchanged_rates() {
    let spec = SupernetSpec {
        classes: 2,
        ..SupernetSpec::default()
    };
    let data = generate_dataset(&DatasetSpec {
        classes: 2,
        noise: 0.0,
        n_samples: 400,
        ..DatasetSpec::default()
    })
    .unwrap();
    let mut c = apply_scheme("ex_darts").unwrap();
    c.total_epochs = 20;
    let mut tr = BilevelTrainer::new(spec, c).unwrap();
    let mut last = None;
    for _ in 0..20 {
        last = Some(tr.run_epoch(&data.train, &data.val).unwrap());
    }
    assert_eq!(last.unwrap().train_acc, 1.0);
}
