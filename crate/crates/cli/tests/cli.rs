use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nash-cbo"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("NASH_CBO_THREADS").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const EXAMPLE: [&str; 17] = [
    "solve", "--game", "quadratic_perturbed", "--m", "4", "--alpha", "1e7", "--lambda", "5000.005",
    "--sigma", "0.1", "--dt", "1e-4", "--steps", "100", "--n", "40",
];

#[test]
fn solve_writes_one_row_per_step_plus_initial() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = EXAMPLE.to_vec();
    args.extend(["--seed", "7", "--out-dir", path(dir.path())]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 1 + 101);
    assert_eq!(
        lines[0],
        "step,t,V,V_1,V_2,V_3,V_4,consensus_1_1,consensus_1_2,consensus_1_3,consensus_1_4"
    );
    assert!(lines[101].starts_with("100,"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final V=") && stdout.contains("wall_time="), "{stdout}");
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn missing_game_is_a_usage_error() {
    let out = run(&["solve", "--m", "4"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--game"));
}

#[test]
fn unknown_flag_and_bad_shapes_are_usage_errors() {
    assert_eq!(code(&run(&["solve", "--game", "cournot", "--beta", "2"])), 1);
    assert_eq!(code(&run(&["solve", "--game", "quadratic_perturbed", "--d", "3"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[game]\nkind = \"quadratic\"\nplayers = 4\ndim = 1\ncolour = 3\n").unwrap();
    assert_eq!(code(&run(&["solve", "--config", path(&cfg)])), 1);
}

#[test]
fn divergence_exits_two_with_sentinel_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "solve", "--game", "quadratic_perturbed", "--lambda", "0.001", "--sigma", "10", "--dt",
        "0.1", "--steps", "5000", "--out-dir", path(dir.path()),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let last = trace.lines().last().unwrap();
    assert_eq!(last.split(',').nth(2), Some("inf"), "{last}");
}

#[test]
fn manifest_replays_byte_identical_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run(&[
        "solve", "--game", "cournot", "--d", "3", "--m", "3", "--lambda", "5.5", "--sigma", "1",
        "--alpha", "1e10", "--dt", "1e-3", "--steps", "40", "--n", "300", "--trace-every", "3",
        "--seed", "11", "--out-dir", path(&a),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = a.join("manifest.json");
    assert_eq!(code(&run(&["solve", "--config", path(&manifest), "--out-dir", path(&b)])), 0);
    let first = fs::read(a.join("trace.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("trace.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.lines().next().unwrap().contains(",residual,"));
    // Every third step plus the last one and the initial record.
    assert_eq!(text.lines().count(), 1 + 14 + 1);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[game]\nkind = \"quadratic\"\nplayers = 2\ndim = 1\n\n\
         [solver]\nlambda = 2.0\nsigma = 0.5\nalpha = 1e5\ndt = 1e-2\nsteps = 20\nparticles = 50\nmode = \"iso\"\nseed = 1\n\n\
         [init]\nvariance = 1.0\n",
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = run(&["solve", "--config", path(&cfg), "--steps", "5", "--out-dir", path(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 6);
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"mode\": \"iso\""));
}

#[test]
fn unknown_case_is_a_usage_error() {
    assert_eq!(code(&run(&["sweep", "--case", "zz"])), 1);
}

#[test]
fn sweep_bytes_do_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for threads in ["1", "8"] {
        let out_dir = dir.path().join(threads);
        let out = run(&[
            "sweep", "--case", "a4", "--preset", "desk", "--threads", threads, "--out-dir",
            path(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(fs::read(out_dir.join("sweep_summary.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    // 100 cells x 5 seeds, 100 aggregate rows, one header.
    assert_eq!(text.lines().count(), 1 + 500 + 100);
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", "--case", "b2", "--seeds", "1", "--out-dir", path(dir.path())])
        .env("NASH_CBO_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"threads\": 3"));
}

#[test]
fn sweep_manifest_replays_and_traces_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run(&["sweep", "--case", "a2", "--seeds", "2", "--trace", "--out-dir", path(&a)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(a.join("traces")).unwrap().count(), 12 * 2);
    let manifest = a.join("manifest.json");
    assert_eq!(code(&run(&["sweep", "--config", path(&manifest), "--out-dir", path(&b)])), 0);
    assert_eq!(
        fs::read(a.join("sweep_summary.csv")).unwrap(),
        fs::read(b.join("sweep_summary.csv")).unwrap()
    );
}

#[test]
fn check_runs_selected_suite() {
    let out = run(&["check", "--only", "laplace"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1, "{stdout}");
    assert!(stdout.starts_with("PASS  laplace"));
}

#[test]
fn flipped_gradient_sign_is_caught() {
    let out = run(&["check", "--only", "gradient", "--flip-gradient-sign"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gradient"));
}

#[test]
fn full_check_passes() {
    let out = run(&["check"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 5);
}
