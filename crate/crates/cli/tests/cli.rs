//! Black-box tests for the `homp` binary: every subcommand, the exit-code
//! contract (0 ok / 1 usage / 2 degenerate input), config-file precedence,
//! and byte-level determinism of the artifacts modulo timing columns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn homp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_homp"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to launch the homp binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is utf-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is utf-8")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        stderr(out)
    );
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("temp paths are utf-8")
}

/// Runs gen-completion with a small instance and returns (obs, truth) paths.
fn gen_small_completion(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let obs = dir.join(format!("obs-{seed}.txt"));
    let truth = dir.join(format!("truth-{seed}.txt"));
    let out = run(homp()
        .args(["gen-completion", "--dims", "8,8,8", "--rank", "2"])
        .args(["--mr", "0.3", "--seed", &seed.to_string()])
        .args(["--out", path_str(&obs), "--truth-out", path_str(&truth)]));
    assert_ok(&out);
    assert!(
        stdout(&out).contains("wrote"),
        "generator should report what it wrote: {}",
        stdout(&out)
    );
    (obs, truth)
}

/// Extracts `name = value` from the report lines printed after a fit.
fn report_value(text: &str, name: &str) -> f64 {
    for line in text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            if key.trim() == name {
                return value.trim().parse().unwrap_or_else(|_| {
                    panic!("report line `{line}` does not end in a number")
                });
            }
        }
    }
    panic!("no `{name} = ...` line in:\n{text}");
}

#[test]
fn complete_pipeline_writes_monotone_trace_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let (obs, truth) = gen_small_completion(dir.path(), 1);
    let trace = dir.path().join("trace.csv");
    let model = dir.path().join("model.txt");

    let out = run(homp()
        .args(["complete", "--input", path_str(&obs)])
        .args(["--k", "20", "--tol", "0", "--bcu-sweeps", "2"])
        .args(["--trace-out", path_str(&trace), "--model-out", path_str(&model)])
        .args(["--truth", path_str(&truth)]));
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("strategy"), "fit report missing strategy: {text}");
    let rel_truth = report_value(&text, "relative error vs truth");
    assert!(rel_truth.is_finite() && rel_truth >= 0.0);
    let rel_obs = report_value(&text, "relative error on observed entries");
    assert!(rel_obs.is_finite() && rel_obs >= 0.0);

    let raw = std::fs::read_to_string(&trace).unwrap();
    let header = raw
        .lines()
        .find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .expect("trace has a header line");
    assert_eq!(header, "k,objective,atom_value,grad12_norm_est,ratio,elapsed_ms");

    let rows = homp::io::load_trace(&trace).unwrap();
    assert!(rows.len() >= 2, "trace should hold a baseline plus iterations");
    assert_eq!(rows[0].k, 0, "first row is the empty-model baseline");
    for pair in rows.windows(2) {
        assert_eq!(pair[1].k, pair[0].k + 1, "iteration numbers are contiguous");
        assert!(
            pair[1].objective <= pair[0].objective,
            "objective went up between k={} and k={}",
            pair[0].k,
            pair[1].k
        );
    }

    let fitted = homp::io::load_kruskal(&model).unwrap();
    assert_eq!(fitted.dims(), &[8, 8, 8]);
    assert!(fitted.num_terms() >= 1 && fitted.num_terms() <= 20);
}

#[test]
fn empty_observation_file_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("empty.txt");
    // Well-formed header, zero observation lines.
    std::fs::write(&obs, "3\n4 4 4\n").unwrap();
    let out = run(homp().args(["complete", "--input", path_str(&obs)]));
    assert_exit(&out, 2);
    assert!(
        stderr(&out).contains("error:"),
        "degenerate input should be reported on stderr: {}",
        stderr(&out)
    );
}

#[test]
fn usage_errors_exit_one() {
    // Unknown flag (clap-level).
    let out = run(homp().args(["complete", "--no-such-flag"]));
    assert_exit(&out, 1);

    // Well-formed flags, nonsense value (application-level).
    let dir = tempfile::tempdir().unwrap();
    let (obs, _) = gen_small_completion(dir.path(), 3);
    let out = run(homp()
        .args(["complete", "--input", path_str(&obs)])
        .args(["--strategy", "definitely-not-a-strategy"]));
    assert_exit(&out, 1);
    assert!(stderr(&out).contains("strategy"), "stderr: {}", stderr(&out));

    // Missing input file.
    let gone = dir.path().join("missing.txt");
    let out = run(homp().args(["complete", "--input", path_str(&gone)]));
    assert_exit(&out, 1);
}

#[test]
fn rank1_certifies_and_rejects_zero_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("diag.txt");
    // diag(1.0, 0.5) as a dense 2x2 tensor; its best rank-one value is 1.
    std::fs::write(&t, "2\n2 2\n1 0\n0 0.5\n").unwrap();
    let out = run(homp().args(["rank1", "--input", path_str(&t), "--bcu-sweeps", "2"]));
    assert_ok(&out);
    let text = stdout(&out);
    let value = report_value(&text, "value");
    let bound = report_value(&text, "certified_lower_bound");
    assert!((value - 1.0).abs() <= 1e-9, "top value should be 1.0, got {value}");
    assert!(
        bound <= value + 1e-12 && bound > 0.0,
        "certified bound {bound} should sit in (0, value]"
    );

    let z = dir.path().join("zero.txt");
    std::fs::write(&z, "2\n2 2\n0 0\n0 0\n").unwrap();
    let out = run(homp().args(["rank1", "--input", path_str(&z)]));
    assert_exit(&out, 2);
}

#[test]
fn oracle_agrees_with_rank1_on_a_small_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.txt");
    // 2x2x2 tensor with a dominant separable part.
    std::fs::write(&t, "3\n2 2 2\n2.0 0.4\n0.4 0.1\n0.4 0.1\n0.1 0.3\n").unwrap();
    let r1 = run(homp().args(["rank1", "--input", path_str(&t), "--bcu-sweeps", "3"]));
    assert_ok(&r1);
    let spectral = report_value(&stdout(&r1), "value");

    let or = run(homp().args(["oracle", "--input", path_str(&t), "--starts", "30"]));
    assert_ok(&or);
    let brute = report_value(&stdout(&or), "value");

    assert!(
        spectral <= brute + 1e-9,
        "certified pipeline value {spectral} cannot beat the brute-force reference {brute}"
    );
    assert!(
        spectral >= 0.5 * brute,
        "selection value {spectral} far below reference {brute}"
    );
}

#[test]
fn sweep_summary_is_sorted_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("s1.csv");
    let second = dir.path().join("s2.csv");
    let args = |out: &Path| {
        vec![
            "sweep".to_string(),
            "--dims".into(),
            "6,6,6".into(),
            "--rank".into(),
            "1".into(),
            "--mr".into(),
            "0.5,0.3".into(),
            "--strategies".into(),
            "hoomp-ls,homp-ls".into(),
            "--seeds".into(),
            "2".into(),
            "--k".into(),
            "8".into(),
            "--tol".into(),
            "1e-8".into(),
            "--out".into(),
            path_str(out).into(),
        ]
    };
    assert_ok(&run(homp().args(args(&first))));
    assert_ok(&run(homp().args(args(&second))));

    let text = std::fs::read_to_string(&first).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("mr,strategy,mean_rel_error,mean_iters,mean_seconds")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4, "2 ratios x 2 strategies: {text}");
    let keys: Vec<(f64, String)> = rows
        .iter()
        .map(|r| {
            let mut cols = r.split(',');
            let mr: f64 = cols.next().unwrap().parse().unwrap();
            (mr, cols.next().unwrap().to_string())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted, "summary rows are sorted by (mr, strategy)");

    // Identical modulo the timing column.
    let strip_timing = |s: &str| -> Vec<String> {
        s.lines()
            .map(|l| match l.rsplit_once(',') {
                Some((head, _)) if l.contains(',') && !l.starts_with("mr,") => head.to_string(),
                _ => l.to_string(),
            })
            .collect()
    };
    let again = std::fs::read_to_string(&second).unwrap();
    assert_eq!(strip_timing(&text), strip_timing(&again));
}

#[test]
fn artifacts_are_deterministic_modulo_timing() {
    let dir = tempfile::tempdir().unwrap();

    // Generation: same seed, byte-identical files.
    let (obs_a, truth_a) = gen_small_completion(dir.path(), 7);
    let obs_b = dir.path().join("obs-b.txt");
    let truth_b = dir.path().join("truth-b.txt");
    assert_ok(&run(homp()
        .args(["gen-completion", "--dims", "8,8,8", "--rank", "2"])
        .args(["--mr", "0.3", "--seed", "7"])
        .args(["--out", path_str(&obs_b), "--truth-out", path_str(&truth_b)])));
    assert_eq!(
        std::fs::read(&obs_a).unwrap(),
        std::fs::read(&obs_b).unwrap(),
        "same seed must produce identical observation files"
    );
    assert_eq!(
        std::fs::read(&truth_a).unwrap(),
        std::fs::read(&truth_b).unwrap()
    );

    // Fitting: identical models, traces equal after dropping elapsed_ms.
    let fit = |tag: &str| -> (Vec<u8>, Vec<String>) {
        let model = dir.path().join(format!("m-{tag}.txt"));
        let trace = dir.path().join(format!("t-{tag}.csv"));
        assert_ok(&run(homp()
            .args(["complete", "--input", path_str(&obs_a)])
            .args(["--k", "10", "--tol", "0"])
            .args(["--model-out", path_str(&model)])
            .args(["--trace-out", path_str(&trace)])));
        let rows = homp::io::load_trace(&trace)
            .unwrap()
            .into_iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{}",
                    r.k, r.objective, r.atom_value, r.grad12_norm_est, r.ratio
                )
            })
            .collect();
        (std::fs::read(&model).unwrap(), rows)
    };
    let (model_a, rows_a) = fit("a");
    let (model_b, rows_b) = fit("b");
    assert_eq!(model_a, model_b, "model files must be byte-identical");
    assert_eq!(rows_a, rows_b, "trace rows must agree except for timing");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let (obs, _) = gen_small_completion(dir.path(), 9);
    let cfg = dir.path().join("solver.cfg");
    std::fs::write(
        &cfg,
        "# solver settings\nstrategy = hoomp-ls\nk = 3\ntol = 0\n",
    )
    .unwrap();

    let model_file = dir.path().join("from-config.txt");
    assert_ok(&run(homp()
        .args(["complete", "--input", path_str(&obs)])
        .args(["--config", path_str(&cfg)])
        .args(["--model-out", path_str(&model_file)])));
    let m = homp::io::load_kruskal(&model_file).unwrap();
    assert_eq!(m.num_terms(), 3, "config file sets the rank budget");

    let model_file2 = dir.path().join("flag-wins.txt");
    assert_ok(&run(homp()
        .args(["complete", "--input", path_str(&obs)])
        .args(["--config", path_str(&cfg), "--k", "2"])
        .args(["--model-out", path_str(&model_file2)])));
    let m2 = homp::io::load_kruskal(&model_file2).unwrap();
    assert_eq!(m2.num_terms(), 2, "explicit flag beats the config file");

    // Unknown keys are rejected with the offending location.
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "iterations = 5\n").unwrap();
    let out = run(homp()
        .args(["complete", "--input", path_str(&obs)])
        .args(["--config", path_str(&bad)]));
    assert_exit(&out, 1);
    assert!(
        stderr(&out).contains("iterations"),
        "error should name the unknown key: {}",
        stderr(&out)
    );
}

#[test]
fn mlmtl_fits_with_and_without_ridge() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tasks.txt");
    let truth = dir.path().join("truth.txt");
    assert_ok(&run(homp()
        .args(["gen-mlmtl", "--input-dim", "6", "--task-dims", "2,3"])
        .args(["--rank", "2", "--samples-per-task", "30", "--seed", "2"])
        .args(["--out", path_str(&data), "--truth-out", path_str(&truth)])));

    let plain = run(homp()
        .args(["mlmtl", "--input", path_str(&data)])
        .args(["--k", "10", "--tol", "0", "--truth", path_str(&truth)]));
    assert_ok(&plain);
    let text = stdout(&plain);
    let objective = report_value(&text, "final objective");
    assert!(objective >= 0.0 && objective.is_finite());
    assert!(
        report_value(&text, "relative error vs truth") < 1e-3,
        "noiseless planted instance should be recovered: {text}"
    );

    let ridged = run(homp()
        .args(["mlmtl", "--input", path_str(&data), "--ridge", "0.5"])
        .args(["--k", "10", "--tol", "0"]));
    assert_ok(&ridged);
    let text = stdout(&ridged);
    let constant = report_value(&text, "ridge constant");
    let total = report_value(&text, "objective + const");
    assert!(constant > 0.0, "ridge constant should be positive");
    assert!(
        total >= constant - 1e-12,
        "penalized objective {total} cannot undercut its constant part {constant}"
    );
}
