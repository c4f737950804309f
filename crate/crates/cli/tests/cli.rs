use std::path::{Path, PathBuf};
use std::process::Command;

use obshte_cli::{Artifact, PipelineConfig};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_obshte"));
    for (k, _) in std::env::vars() {
        if k.starts_with("OBSHTE_") {
            c.env_remove(k);
        }
    }
    c
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(
        &p,
        "seed = 5\n[dgp]\nn_units = 300\nt_periods = 40\n[train]\nn_trees = 20\nmin_leaf = 10\n[analysis]\nn_strata = 4\ntreated_fraction = 0.3\nbudget_k = 10\n",
    )
    .unwrap();
    p
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn demo_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "pipeline",
        "--config",
        demo_config().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    for a in Artifact::ALL {
        assert!(out.join(a.file_name()).is_file(), "missing {}", a.file_name());
    }
    let report: serde_json::Value = serde_json::from_slice(&read(&out.join("rank_report.json"))).unwrap();
    assert!(report["kendall_tau"].as_f64().unwrap() > 0.5);
    assert_eq!(report["run"]["seed"], 20240601);
    // no temporaries left behind
    let stray: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".tmp"))
        .collect();
    assert!(stray.is_empty());
}

#[test]
fn csv_headers_are_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = small_config(dir.path());
    run_ok(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let expect = [
        ("panel.csv", "unit_id,t,x,y"),
        ("covariates.csv", "unit_id,c1,c2,c3,c4,c5,c6,c7,c8"),
        ("experiment.csv", "unit_id,treated,y_pre,y_post"),
        ("truth.csv", "unit_id,a,theta,mu,beta,psi,gamma"),
        ("effects.csv", "unit_id,beta_hat,intercept,stderr_beta,n_obs,r_squared"),
        ("skips.csv", "unit_id,reason"),
        ("labels.csv", "unit_id,label"),
        ("scores.csv", "unit_id,score"),
        (
            "strata.csv",
            "stratum_index,score_low,score_high,n_treated,n_control,ate,stderr",
        ),
        ("figure3.csv", "stratum_index,score_mid,ate,ci_low,ci_high"),
        ("targets.csv", "unit_id,score,rank"),
    ];
    for (file, header) in expect {
        let text = String::from_utf8(read(&out.join(file))).unwrap();
        assert_eq!(text.lines().next().unwrap(), header, "{file}");
    }
    let targets = String::from_utf8(read(&out.join("targets.csv"))).unwrap();
    assert_eq!(targets.lines().count(), 11);
}

#[test]
fn same_seed_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| dir.path().join(d)).collect();
    for (d, threads) in dirs.iter().zip(["1", "8", "8"]) {
        run_ok(&[
            "pipeline",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
            "--threads",
            threads,
        ]);
    }
    for a in Artifact::ALL {
        let base = read(&dirs[0].join(a.file_name()));
        for d in &dirs[1..] {
            assert_eq!(
                base,
                read(&d.join(a.file_name())),
                "{} differs in {}",
                a.file_name(),
                d.display()
            );
        }
    }
}

#[test]
fn seed_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    let out = bin()
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            b.to_str().unwrap(),
        ])
        .env("OBSHTE_SEED", "6")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(read(&a.join("panel.csv")), read(&b.join("panel.csv")));
}

#[test]
fn constant_x_unit_is_skipped_and_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    let mut panel = String::from("unit_id,t,x,y\n");
    for t in 0..40 {
        panel.push_str(&format!(
            "1,{t},{},{}\n",
            t as f64 * 0.1,
            1.0 + 0.5 * t as f64 * 0.1 + (t % 3) as f64
        ));
        panel.push_str(&format!("2,{t},3.0,{}\n", t as f64));
    }
    std::fs::write(out.join("panel.csv"), panel).unwrap();
    run_ok(&["fit", "--out", out.to_str().unwrap()]);
    let effects = String::from_utf8(read(&out.join("effects.csv"))).unwrap();
    assert_eq!(effects.lines().count(), 2);
    assert!(effects.lines().nth(1).unwrap().starts_with("1,"));
    let skips = String::from_utf8(read(&out.join("skips.csv"))).unwrap();
    assert!(
        skips.lines().nth(1).unwrap().starts_with("2,degenerate_regressor"),
        "{skips}"
    );
}

#[test]
fn failures_emit_an_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["fit", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let line = String::from_utf8(out.stderr).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(rec["error"]["kind"], "io");
    assert_eq!(rec["error"]["subcommand"], "fit");
    assert!(rec["error"]["message"].as_str().unwrap().contains("panel.csv"));

    std::fs::write(dir.path().join("panel.csv"), "unit_id,t,x,y\n1,0,0.5,oops\n").unwrap();
    let out = bin()
        .args(["fit", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"]["kind"], "parse");
    let msg = rec["error"]["message"].as_str().unwrap();
    assert!(msg.contains("panel.csv:2") && msg.contains("column y"), "{msg}");

    std::fs::write(dir.path().join("panel.csv"), "unit,t,x,y\n").unwrap();
    let out = bin()
        .args(["fit", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"]["kind"], "schema");
}

#[test]
fn invalid_settings_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate", "--out", dir.path().to_str().unwrap(), "--quantile", "1.5"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("quantile"));
    assert!(!dir.path().join("panel.csv").exists());
}

#[test]
fn demo_config_round_trips() {
    let cfg = PipelineConfig::load(&demo_config()).unwrap();
    let again = PipelineConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.dgp.n_units, 1000);
}

#[test]
fn steps_consume_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    for step in [
        "simulate", "fit", "label", "train", "score", "analyze", "target", "report",
    ] {
        run_ok(&[step, "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    }
    for art in Artifact::ALL {
        assert_eq!(
            read(&a.join(art.file_name())),
            read(&b.join(art.file_name())),
            "{}",
            art.file_name()
        );
    }
}
