use std::process::Command;

fn ifagg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ifagg"))
}

#[test]
fn list_names_experiments_and_schedulers() {
    let out = ifagg().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["bandwidth-sweep", "loss-sweep", "workload-sweep", "granularity", "co-max-throughput", "po-wrr"] {
        assert!(text.contains(name), "{name} missing from:\n{text}");
    }
}

#[test]
fn run_writes_csv_with_optimal_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let status = ifagg()
        .args(["run", "granularity", "--runs", "2", "--seed", "9", "--scheduler", "only-one,po-wrr", "--out"])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "experiment,scheduler,sweep_var,sweep_value,mean_throughput_bps,stddev,runs,seed_base");
    // two sweep points, two schedulers plus the optimal row each
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[3].starts_with("granularity,optimal,if2_bandwidth_mbps,2,4000000.000,0.000,2,9"), "{}", lines[3]);
}

#[test]
fn simulate_reads_config_and_prints_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(
        &path,
        "[experiment]\nname = \"tiny\"\nruns = 1\nduration = 5.0\n\n[schedulers]\nnames = [\"co-rr\"]\n",
    )
    .unwrap();
    let out = ifagg().arg("simulate").arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("tiny,co-rr,none,0,"));
}

#[test]
fn errors_exit_nonzero_before_simulating() {
    let out = ifagg().args(["run", "granularity", "--scheduler", "fastest"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fastest"));

    let out = ifagg().args(["run", "bandwidth-sweep", "--out", "/nonexistent-dir/x.csv"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent-dir/x.csv"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[topology]\n\n[[topology.interface]]\nbadnwidth = 2\n").unwrap();
    let out = ifagg().arg("simulate").arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("badnwidth"), "{err}");
}

#[test]
fn sweep_out_of_range_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(
        &path,
        "[experiment]\nruns = 1\nduration = 2.0\n[schedulers]\nnames = [\"only-one\"]\n[sweep]\nvar = \"if2_loss_percent\"\nvalues = [20]\n",
    )
    .unwrap();
    let out = ifagg().arg("simulate").arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force-range"));
    let out = ifagg().arg("simulate").arg(&path).arg("--force-range").output().unwrap();
    assert!(out.status.success());
}
