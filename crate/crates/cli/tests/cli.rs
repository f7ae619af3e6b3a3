use std::fs;
use std::path::Path;

use assert_cmd::Command;
use serde_json::Value;

fn bppm() -> Command {
    let mut cmd = Command::cargo_bin("bppm").unwrap();
    cmd.env("RUST_LOG", "error");
    cmd
}

fn simulate(dir: &Path, seed: &str) {
    bppm()
        .args(["simulate", "--nodes", "24", "--horizon", "40", "--k", "2"])
        .args(["--diagonal", "0.4,1.0,1.5", "--off-diagonal", "0.4,1.0,0.1"])
        .args(["--seed", seed, "--out-dir"])
        .arg(dir)
        .assert()
        .success();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_fit_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "7");
    for f in ["events.csv", "truth.csv", "model.json", "provenance.json"] {
        assert!(sim.join(f).exists(), "{f} missing");
    }
    let model = read_json(&sim.join("model.json"));
    assert_eq!(model["schema_version"], 1);
    assert_eq!(model["params"][0][1]["lambda_inf"], 0.1);

    let fit = tmp.path().join("fit");
    bppm()
        .args(["fit", "--method", "spectral+ls", "--k", "2", "--horizon", "40", "--seed", "1", "--events"])
        .arg(sim.join("events.csv"))
        .arg("--out-dir")
        .arg(&fit)
        .assert()
        .success();
    let labels = fs::read_to_string(fit.join("labels.csv")).unwrap();
    assert!(labels.starts_with("node,label\n"));

    let out = bppm()
        .arg("eval-ari")
        .arg("--truth")
        .arg(sim.join("truth.csv"))
        .arg("--estimate")
        .arg(fit.join("labels.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let ari: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(ari > 0.9, "ARI {ari}");

    let trace = fs::read_to_string(fit.join("trace.csv")).unwrap();
    let values: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "11");
    simulate(&b, "11");
    for f in ["events.csv", "truth.csv", "model.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let first = fs::read(a.join("provenance.json")).unwrap();
    simulate(&a, "11");
    assert_eq!(first, fs::read(a.join("provenance.json")).unwrap());
    assert_eq!(read_json(&a.join("provenance.json"))["seed"], 11);

    for dir in [&a, &b] {
        bppm()
            .args(["fit", "--method", "random+vem", "--k", "2", "--restarts", "2", "--seed", "3", "--events"])
            .arg(dir.join("events.csv"))
            .arg("--out-dir")
            .arg(dir.join("fit"))
            .assert()
            .success();
    }
    for f in ["labels.csv", "model.json", "trace.csv", "tau.csv"] {
        assert_eq!(
            fs::read(a.join("fit").join(f)).unwrap(),
            fs::read(b.join("fit").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn missing_seed_is_generated_and_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    bppm()
        .args(["simulate", "--nodes", "6", "--horizon", "5", "--k", "2", "--out-dir"])
        .arg(tmp.path())
        .assert()
        .success();
    let prov = read_json(&tmp.path().join("provenance.json"));
    assert!(prov["seed"].is_u64());
    assert_eq!(prov["seed"], prov["config"]["seed"]);
    assert_eq!(prov["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"simulate": {"nodes": 9, "horizon": 3, "classes": 3, "seed": 5}}"#).unwrap();
    bppm()
        .arg("--config")
        .arg(&cfg)
        .args(["simulate", "--nodes", "12", "--out-dir"])
        .arg(tmp.path())
        .assert()
        .success();
    let prov = read_json(&tmp.path().join("provenance.json"));
    assert_eq!(prov["config"]["nodes"], 12);
    assert_eq!(prov["config"]["classes"], 3);
    assert_eq!(prov["config"]["horizon"], 3.0);
    assert_eq!(prov["seed"], 5);
    assert_eq!(fs::read_to_string(tmp.path().join("truth.csv")).unwrap().lines().count(), 13);
}

fn error_record(stderr: &[u8]) -> Value {
    let text = String::from_utf8_lossy(stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bppm().args(["fit", "--bogus", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out.stderr)["error"]["kind"], "usage");
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"fit": {"klasses": 3}}"#).unwrap();
    let out = bppm().arg("--config").arg(&cfg).args(["fit", "--events", "x.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out.stderr)["error"]["kind"], "usage");
}

#[test]
fn missing_input_reports_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bppm()
        .arg("fit")
        .arg("--events")
        .arg(tmp.path().join("absent.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let rec = error_record(&out.stderr);
    assert_eq!(rec["error"]["kind"], "io");
    assert!(rec["error"]["message"].as_str().unwrap().contains("absent.csv"));
}

#[test]
fn invalid_parameters_report_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bppm()
        .args(["simulate", "--nodes", "6", "--diagonal", "0.5,-1,1", "--out-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out.stderr)["error"]["kind"], "validation");
    assert!(!tmp.path().join("events.csv").exists());
}

#[test]
fn check_theorem_reports_every_point_within_bound() {
    let tmp = tempfile::tempdir().unwrap();
    bppm()
        .args(["check-theorem", "--sizes", "10,20", "--sims", "400", "--seed", "2", "--out-dir"])
        .arg(tmp.path())
        .assert()
        .success();
    let mut rdr = csv::Reader::from_path(tmp.path().join("deviation.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(&row[col("within_bound")], "true");
        let bound: f64 = row[col("bound")].parse().unwrap();
        for c in ["delta0", "delta1"] {
            if !row[col(c)].is_empty() {
                assert!(row[col(c)].parse::<f64>().unwrap() <= bound);
            }
        }
    }
}

#[test]
fn spectral_predict_and_aggregate_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "21");
    let events = sim.join("events.csv");

    let spec = tmp.path().join("spec");
    bppm()
        .args(["spectral", "--k", "2", "--top", "5", "--seed", "4", "--events"])
        .arg(&events)
        .arg("--out-dir")
        .arg(&spec)
        .assert()
        .success();
    let sv = fs::read_to_string(spec.join("singular_values.csv")).unwrap();
    assert_eq!(sv.lines().count(), 6);
    let emb = fs::read_to_string(spec.join("embedding.csv")).unwrap();
    assert!(emb.starts_with("node,u_0,u_1,v_0,v_1\n"));

    let pred = tmp.path().join("pred");
    bppm()
        .args(["predict", "--horizon", "40", "--windows", "4", "--snapshots", "1,2", "--events"])
        .arg(&events)
        .arg("--labels")
        .arg(sim.join("truth.csv"))
        .arg("--out-dir")
        .arg(&pred)
        .assert()
        .success();
    let rmse = fs::read_to_string(pred.join("rmse.csv")).unwrap();
    let lines: Vec<&str> = rmse.lines().collect();
    assert_eq!(lines[0], "method,snapshot_hours,within_rmse_hours,between_rmse_hours,total_rmse_hours");
    assert!(lines[1].starts_with("bhm,,"));
    assert!(lines[2].starts_with("discrete,1,"));
    assert_eq!(lines.len(), 4);

    let adj = tmp.path().join("adj.csv");
    bppm()
        .args(["aggregate", "--weighted", "--events"])
        .arg(&events)
        .arg("--out")
        .arg(&adj)
        .assert()
        .success();
    let text = fs::read_to_string(&adj).unwrap();
    let total: u64 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total as usize, fs::read_to_string(&events).unwrap().lines().count() - 1);
    assert!(tmp.path().join("adj.csv.provenance.json").exists());
}
