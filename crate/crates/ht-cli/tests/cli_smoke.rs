//! End-to-end smoke test of the `ht` binary: generate data, train briefly,
//! evaluate, analyze, bench, and check error reporting conventions.

use std::path::Path;
use std::process::Command;

fn ht() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ht"))
}

fn run_ok(args: &[&str]) -> String {
    let out = ht().args(args).output().expect("spawn ht");
    assert!(
        out.status.success(),
        "ht {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn full_pipeline_via_binary() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).display().to_string();

    // config for a tiny run
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, "epochs_downstream=2\nepochs_finetune=2\nbase_lr=0.005\nbatch_size=8\n")
        .unwrap();
    let cfg = cfg.display().to_string();
    let tiny_model = [
        "--depth", "2", "--width", "32", "--heads", "2", "--bottleneck", "8", "--squeeze",
        "4", "--reduced", "16", "--cls-hidden", "32",
    ];

    // gen-data
    let out = run_ok(&["gen-data", "--out", &p("data"), "--domain", "a", "--n", "24", "--seed", "3"]);
    assert!(out.contains("splits:"), "{out}");
    assert!(dir.path().join("data/manifest.tsv").exists());
    assert!(dir.path().join("data/run_summary.txt").exists());

    // train-seg
    let mut args = vec![
        "train-seg", "--data", &p("data"), "--out", &p("seg"), "--seed", "1", "--config", &cfg,
    ];
    args.extend_from_slice(&tiny_model);
    run_ok(&args);
    assert!(dir.path().join("seg/seg.ck").exists());
    assert!(dir.path().join("seg/train_trace.csv").exists());
    let trace = std::fs::read_to_string(dir.path().join("seg/train_trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,split,loss,metric"), "{trace}");

    // eval on the test split
    let out = run_ok(&[
        "eval", "--checkpoint", &p("seg/seg.ck"), "--data", &p("data"), "--split", "test",
        "--out", &p("eval"),
    ]);
    assert!(out.contains("mean dice"), "{out}");
    let metrics = std::fs::read_to_string(dir.path().join("eval/metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,mean,std,n"), "{metrics}");

    // finetune + zeroshot with the produced checkpoint
    let mut args = vec![
        "finetune", "--data", &p("data"), "--out", &p("ft"), "--seed", "1", "--config", &cfg,
    ];
    args.extend_from_slice(&tiny_model[..10]); // geometry + adapter dims
    run_ok(&args);
    let bank = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/prompts/breast.txt");
    run_ok(&[
        "zeroshot", "--data", &p("data"), "--bank", &bank.display().to_string(),
        "--checkpoint", &p("ft/finetune.ck"), "--out", &p("zs"),
    ]);
    assert!(dir.path().join("zs/zeroshot_scores.csv").exists());

    // spectral diagnostics on the trained seg checkpoint
    run_ok(&[
        "analyze-spectrum", "--data", &p("data"), "--checkpoint", &p("seg/seg.ck"),
        "--out", &p("spec"), "--probes", "2",
    ]);
    for f in ["theta_stats.csv", "energy_change.csv", "ne_profile.csv"] {
        assert!(dir.path().join("spec").join(f).exists(), "{f}");
    }

    // count-params emits the closed-form budgets
    let out = run_ok(&["count-params", "--out", &p("cp"), "--preset", "paper"]);
    assert!(out.contains("113027"), "{out}");
    assert!(out.contains("1356324"), "{out}");
    assert!(out.contains("1179648"), "{out}");
}

#[test]
fn errors_exit_nonzero_with_category_prefix() {
    let dir = tempfile::tempdir().unwrap();
    // missing dataset directory -> integrity error from the manifest read
    let out = ht()
        .args([
            "train-seg",
            "--data",
            &dir.path().join("nope").display().to_string(),
            "--out",
            &dir.path().join("out").display().to_string(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.starts_with("integrity:"),
        "stderr should carry a category prefix, got: {stderr}"
    );

    // cross-domain with a single domain -> protocol error
    let data = dir.path().join("d1");
    let ok = ht()
        .args([
            "gen-data", "--out", &data.display().to_string(), "--n", "12", "--seed", "1",
        ])
        .output()
        .unwrap();
    assert!(ok.status.success());
    let out = ht()
        .args([
            "cross-domain",
            "--data",
            &data.display().to_string(),
            "--out",
            &dir.path().join("xd").display().to_string(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("protocol:"), "{stderr}");
}
