use std::fs;
use std::path::Path;
use std::process::Command;

use kfed::evaluation::matched_accuracy;
use kfed::federation::run_kfed;
use kfed::io;
use kfed::local::local_cluster;
use kfed_cli::commands::{cmd_generate, cmd_join, cmd_profile, cmd_run, JoinArgs, ProfileArgs};
use kfed_cli::experiment;
use kfed_cli::{CliError, RunConfig};

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_json(
        r#"{
            "version": 1,
            "experiment": "single_run",
            "mixture": {"k": 9, "d": 30, "per_cluster": 60},
            "partition": {"mode": "structured", "group_size": 3, "m0": 3.0},
            "seeds": [0, 1]
        }"#,
    )
    .unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kfed"))
}

#[test]
fn generate_writes_four_consistent_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_generate(&cfg, Some(4), &a).unwrap();
    cmd_generate(&cfg, Some(4), &b).unwrap();
    for f in [io::DATA_FILE, io::LABELS_FILE, io::PARTITION_FILE, io::SPEC_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let data = io::read_data_csv(&a.join(io::DATA_FILE)).unwrap();
    assert_eq!((data.nrows(), data.ncols()), (540, 30));
    assert_eq!(io::read_labels_csv(&a.join(io::LABELS_FILE), Some(9)).unwrap().len(), 540);
    let rows = io::read_partition_json(&a.join(io::PARTITION_FILE)).unwrap();
    assert_eq!(rows.iter().map(Vec::len).sum::<usize>(), 540);
    let text = fs::read_to_string(a.join(io::DATA_FILE)).unwrap();
    assert!(text.starts_with(&format!("# config_hash {}\n# seed 4\n", cfg.hash())));
}

#[test]
fn invalid_weights_rejected_before_any_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.mixture.weights = Some(vec![0.1; 9]);
    let out = dir.path().join("inst");
    let err = cmd_generate(&cfg, None, &out).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());
}

#[test]
fn profile_rejects_unseen_cluster_id_with_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let inst = dir.path().join("inst");
    cmd_generate(&cfg, None, &inst).unwrap();
    let mut args = ProfileArgs {
        instance: Some(inst.clone()),
        c: 100.0,
        out: dir.path().join("prof"),
        ..Default::default()
    };
    let p = cmd_profile(&args).unwrap();
    assert!(p.audit.passed());
    for pair in p.separation.pairs.iter().filter(|q| q.status == kfed::PairStatus::Active) {
        assert!(pair.active_ok);
    }
    for f in ["separation.json", "separation_pairs.csv", "lemma_audit.json"] {
        assert!(dir.path().join("prof").join(f).exists());
    }

    let labels = inst.join(io::LABELS_FILE);
    let text = fs::read_to_string(&labels).unwrap().replacen("\n0\n", "\n12\n", 1);
    let bad_row = text.lines().filter(|l| !l.starts_with('#')).position(|l| l == "12").unwrap();
    fs::write(&labels, text).unwrap();
    args.out = dir.path().join("prof2");
    let err = cmd_profile(&args).unwrap_err();
    assert!(err.to_string().contains(&format!("row {bad_row}")), "{err}");
}

#[test]
fn run_outputs_are_reproducible_and_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("r1"));
    let r1 = cmd_run(&cfg, true).unwrap();
    cfg.output_dir = dir.path().join("r2");
    cmd_run(&cfg, false).unwrap();
    let a = fs::read_to_string(dir.path().join("r1/results.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("r2/results.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().next().unwrap(), "run_id,config_hash,seed,accuracy,cost,distance_count");
    assert_eq!(a.lines().count(), 3);
    assert!(a.contains(&r1.config_hash));
    assert!(dir.path().join("r1/state-s0.json").exists());
    let uploads = fs::read_to_string(dir.path().join("r1/uploads-s0.jsonl")).unwrap();
    assert_eq!(uploads.lines().count(), 9);
    let msg: io::UploadMessage = serde_json::from_str(uploads.lines().next().unwrap()).unwrap();
    assert_eq!(msg.k_z, msg.centers.len());
    assert_eq!(r1.failures(), 0);
}

#[test]
fn failing_seed_does_not_stop_others() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    // Dropping eight of nine devices leaves too few centers.
    cfg.exclude_devices = (0..8).collect();
    let report = cmd_run(&cfg, false).unwrap();
    assert_eq!(report.failures(), 2);
    assert_eq!(report.status().unwrap_err().exit_code(), 3);
}

#[test]
fn dropout_flags_vanished_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.exclude_devices = vec![0, 1, 2];
    let report = cmd_run(&cfg, false).unwrap();
    let r = report.entries[0].result.as_ref().unwrap();
    assert_eq!(r.vanished_clusters, vec![0, 1, 2]);
}

#[test]
fn single_device_run_equals_local_solve() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.partition = kfed::PartitionSpec::Iid { devices: 1 };
    let inst = experiment::build_instance(&cfg, 3, cfg.c).unwrap();
    let out = experiment::run_instance(&cfg, "h", &inst, cfg.c, "x".into()).unwrap();
    let local = local_cluster(&inst.a, 9, kfed::federation::device_seed(3, 0), cfg.tol).unwrap();
    let m = matched_accuracy(&out.run.induced.global.assignment, &local.clusters.assignment).unwrap();
    assert_eq!(m.accuracy, 1.0);
}

#[test]
fn join_copy_of_device_zero_matches_its_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let inst = experiment::build_instance(&cfg, 0, cfg.c).unwrap();
    let run = run_kfed(&inst.partition, &inst.a, &experiment::options(&cfg, 0)).unwrap();
    let out = experiment::run_instance(&cfg, &cfg.hash(), &inst, cfg.c, "s0".into()).unwrap();
    let state = dir.path().join("state.json");
    out.state.save(&state).unwrap();
    let rows = &inst.partition.device_rows[0];
    let dev_data = dir.path().join("dev.csv");
    io::write_data_csv(&dev_data, &inst.a.select_rows(rows).unwrap(), &[]).unwrap();
    let j = cmd_join(&JoinArgs {
        state,
        data: dev_data,
        k_z: inst.partition.k_per_device[0],
        device_id: Some(0),
        out: dir.path().join("join"),
    })
    .unwrap();
    let labels = run.induced.labels(inst.a.nrows());
    let expect: Vec<usize> = rows.iter().map(|&i| labels[i].unwrap()).collect();
    assert_eq!(j.labels, expect);
    assert_eq!(j.distance_count, inst.partition.k_per_device[0] * 9);
    let csv = fs::read_to_string(dir.path().join("join/join_results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn corrupted_state_is_rejected_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let inst = experiment::build_instance(&cfg, 0, cfg.c).unwrap();
    let out = experiment::run_instance(&cfg, "h", &inst, cfg.c, "s0".into()).unwrap();
    let state = dir.path().join("state.json");
    out.state.save(&state).unwrap();
    let text = fs::read_to_string(&state).unwrap();
    let idx = text.rfind(|c: char| c.is_ascii_digit() && c != '0').unwrap();
    let mut bytes = text.into_bytes();
    bytes[idx] = b'0';
    fs::write(&state, bytes).unwrap();
    let dev = dir.path().join("dev.csv");
    io::write_data_csv(&dev, &inst.a.select_rows(&inst.partition.device_rows[0]).unwrap(), &[]).unwrap();
    let join_out = dir.path().join("join");
    let err = cmd_join(&JoinArgs { state, data: dev, k_z: 3, device_id: None, out: join_out.clone() }).unwrap_err();
    assert!(matches!(err, CliError::Checksum { .. }), "{err}");
    assert!(!join_out.exists());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, small_config(&dir.path().join("o")).to_json()).unwrap();
    let ok = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--seeds", "0..2"])
        .env("KFED_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("c=100: 100.00 ± 0.00"));

    let bad = bin().args(["run", "--config"]).arg(&cfg_path).args(["--tol", "-1"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));

    let missing = bin().args(["run", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(4));

    let gen = bin()
        .args(["generate", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("inst"))
        .output()
        .unwrap();
    assert_eq!(gen.status.code(), Some(0));
    let ev = bin()
        .arg("eval")
        .arg("--data")
        .arg(dir.path().join("inst/data.csv"))
        .arg("--pred")
        .arg(dir.path().join("inst/labels.csv"))
        .arg("--truth")
        .arg(dir.path().join("inst/labels.csv"))
        .output()
        .unwrap();
    assert_eq!(ev.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ev.stdout).contains("\"accuracy\": 1.0"));
}
