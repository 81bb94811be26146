use std::path::Path;
use std::process::{Command, Output};

fn beamid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamid")).args(args).env("RUST_LOG", "warn").output().expect("run beamid")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "[training]\nepochs = 1\n[dnn]\nepochs = 3\n[pinn]\nepochs = 2\n";

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[training]\nepoch = 5\n");
    let o = beamid(&["generate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));
}

#[test]
fn invalid_values_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[training]\nratio = 1.5\n");
    let o = beamid(&["generate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_artifacts_name_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = beamid(&["train", "--out", out]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("beamid generate"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), SMALL);
    assert!(beamid(&["generate", "--config", &cfg, "--out", out]).status.success());
    let o = beamid(&["eval", "--config", &cfg, "--out", out, "--method", "pinn"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("train --method pinn"), "{}", stderr(&o));
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = beamid(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["truth.csv", "truth_extended.csv", "fields_truth.csv", "samples.csv", "truth.csv.prov"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }

    let text = std::fs::read_to_string(a.join("truth.csv")).unwrap();
    let times: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(times.len(), 161);
    for w in times.windows(2) {
        assert!((w[1] - w[0] - 2.8125e-4).abs() < 1e-15);
    }
    let samples = std::fs::read_to_string(a.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().filter(|l| !l.starts_with('#')).count() - 1, 512);
}

#[test]
fn artifacts_from_another_config_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert!(beamid(&["generate", "--config", &cfg, "--out", out]).status.success());
    let o = beamid(&["train", "--config", &cfg, "--out", out, "--seed", "7"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("seed 0 vs 7"), "{}", stderr(&o));

    let trained = beamid(&["train", "--config", &cfg, "--out", out]);
    assert!(trained.status.success(), "{}", stderr(&trained));
    let other = write_config(dir.path(), &format!("{SMALL}[load]\namplitude = 900.0\n"));
    let o = beamid(&["eval", "--config", &other, "--out", out]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("config hash"), "{}", stderr(&o));
}

#[test]
fn small_pipeline_writes_metrics_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for args in [
        vec!["generate"],
        vec!["train"],
        vec!["train", "--method", "dnn"],
        vec!["train", "--method", "pinn"],
        vec!["eval"],
    ] {
        let mut full = args.clone();
        full.extend(["--config", &cfg, "--out", out]);
        let o = beamid(&full);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let methods: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["neuralsi", "dnn", "pinn"]);
    for plot in ["field_truth", "error_neuralsi", "response_midspan", "parameter_p", "parameter_c"] {
        let svg = std::fs::read_to_string(dir.path().join("plots").join(format!("{plot}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{plot}");
    }
}

#[test]
fn sweep_records_failed_cells_and_keeps_going() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = beamid(&["sweep", "--config", &cfg, "--out", out, "--axis", "batch", "--values", "0,32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("sweep_batch.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][..3], ["batch", "0", "failed"]);
    assert_eq!(&rows[1][..3], ["batch", "32", "ok"]);
    assert!(rows[1][4].parse::<f64>().unwrap() > 0.0);
}
