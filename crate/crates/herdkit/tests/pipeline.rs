//! End-to-end runs through the command line on a small stand-in dataset.

use std::fs;
use std::path::Path;

use herdkit::checkpoint::load_checkpoint;
use herdkit::cifar::write_synthetic_cifar;
use herdkit::cli::run;
use herdkit::run::{final_checkpoint_path, init_checkpoint_path, FAILED_FILE};

fn write_config(dir: &Path, data: &Path, out: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    fs::write(
        &path,
        format!(
            "dataset_dir = {data:?}\noutput_dir = {out:?}\nnum_peers = 3\nnum_teachers = 1\nbatch_size = 4\nepochs = 1\n\
             train_subset_size = 12\neval_every_batches = 2\nfit_subset = 12\ntest_subset = 10\nprobe_epochs = 2\n\
             master_seed = 11\nlearning_rate = 1e-3\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn arg(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn train_probe_analyse() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("cifar");
    write_synthetic_cifar(&data, 4, 20, 3).unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &data, &out, "");

    let msg = run(["herdkit", "train", "--config", &arg(&cfg), "--override", "loss_kind=mse"]).unwrap();
    assert!(msg.contains("batches=3"), "{msg}");
    for f in ["config.snapshot.toml", "train_log.csv", "probe_log.csv", "metrics.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let snapshot = fs::read_to_string(out.join("config.snapshot.toml")).unwrap();
    assert!(snapshot.contains("loss_kind = \"mse\""));
    for i in 0..3 {
        assert!(init_checkpoint_path(&out, i).exists());
        assert!(final_checkpoint_path(&out, i).exists());
    }
    let train_log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(train_log.lines().count(), 4);
    // Evaluations before training and after batch 2.
    let probe_log = fs::read_to_string(out.join("probe_log.csv")).unwrap();
    let steps: Vec<&str> = probe_log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["0", "0", "0", "2", "2", "2"]);

    let probe_csv = tmp.path().join("probe.csv");
    let ckpt = final_checkpoint_path(&out, 1);
    let msg = run(["herdkit", "probe", "--config", &arg(&cfg), "--checkpoint", &arg(&ckpt), "--kind", "knn", "--out", &arg(&probe_csv)]).unwrap();
    assert!(msg.contains("probe_kind=knn peer_id=1"), "{msg}");
    run(["herdkit", "probe", "--config", &arg(&cfg), "--checkpoint", &arg(&ckpt), "--kind", "linear", "--out", &arg(&probe_csv)]).unwrap();
    let rows = fs::read_to_string(&probe_csv).unwrap();
    assert_eq!(rows.lines().count(), 3);
    assert!(rows.starts_with("step,peer_id,probe_kind,macro_f1,accuracy,fit_size,test_size\n"));

    let msg = run(["herdkit", "ensemble-eval", "--config", &arg(&cfg), "--peers", "1,2"]).unwrap();
    assert_eq!(msg.lines().count(), 2, "{msg}");
    assert!(out.join("ensemble_metrics.csv").exists());

    let msg = run(["herdkit", "distance-shift", "--config", &arg(&cfg), "--peer", "0", "--sample-size", "8"]).unwrap();
    assert!(msg.starts_with("pairs=8 "), "{msg}");
    let shift = fs::read_to_string(out.join("distance_shift.csv")).unwrap();
    assert_eq!(shift.lines().count(), 9);

    let plot = tmp.path().join("plot.csv");
    let svg = tmp.path().join("plot.svg");
    run(["herdkit", "emit-plots", "--input", &arg(&out.join("distance_shift.csv")), "--kind", "distance-shift", "--out", &arg(&plot), "--svg", &arg(&svg)]).unwrap();
    assert_eq!(fs::read_to_string(&plot).unwrap().lines().count(), 17);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    run(["herdkit", "emit-plots", "--input", &arg(&out.join("metrics.csv")), "--kind", "group-dynamics", "--out", &arg(&plot)]).unwrap();
    let series: std::collections::BTreeSet<String> = fs::read_to_string(&plot)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(series.len(), 3);
    assert!(run(["herdkit", "emit-plots", "--input", &arg(&plot), "--kind", "bogus", "--out", &arg(&plot)]).is_err());
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("cifar");
    write_synthetic_cifar(&data, 2, 4, 5).unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &data, &out, "");
    run(["herdkit", "train", "--config", &arg(&cfg), "--override", "eval_every_batches=0", "--override", "train_subset_size=4"]).unwrap();
    let init = load_checkpoint(init_checkpoint_path(&out, 0)).unwrap();
    let fin = load_checkpoint(final_checkpoint_path(&out, 0)).unwrap();
    assert_eq!(init.param_count(), 962_304);
    assert_eq!(init.init_seed(), fin.init_seed());
}

#[test]
fn sweep_runs_every_point_and_survives_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("cifar");
    write_synthetic_cifar(&data, 2, 4, 7).unwrap();
    let out = tmp.path().join("sweep");
    let cfg = write_config(
        tmp.path(),
        &data,
        &out,
        "optimizer_kind = \"sgd\"\n",
    );
    let msg = run([
        "herdkit", "sweep", "--config", &arg(&cfg), "--override", "eval_every_batches=0", "--override", "train_subset_size=4",
        "--lrs", "1e-8,1e300",
    ])
    .unwrap();
    assert!(msg.starts_with("runs=2 failed=1"), "{msg}");
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",ok,"));
    assert!(lines[2].contains(",failed,"));
    let dirs: Vec<_> = fs::read_dir(&out).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    assert_eq!(dirs.len(), 2);
    let failed_dir = dirs.iter().find(|d| d.path().join(FAILED_FILE).exists()).expect("failed run marked");
    assert!(!final_checkpoint_path(&failed_dir.path(), 0).exists());
}

#[test]
fn invalid_config_is_a_one_line_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "dataset_dir = \"d\"\nnum_peers = 2\nnum_teachers = 2\n").unwrap();
    let e = run(["herdkit", "train", "--config", &arg(&cfg)]).unwrap_err();
    let line = herdkit::cli::error_line(&e);
    assert!(line.starts_with("herdkit: error[invalid-config]:"), "{line}");
    assert!(!line.contains('\n'));
    assert_ne!(e.exit_code(), 0);
}
