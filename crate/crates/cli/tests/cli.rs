use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tickvol"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn tickvol");
    assert!(
        out.status.success(),
        "tickvol {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, name: &str, seed: &str, extra: &[&str]) -> (PathBuf, PathBuf) {
    let ticks = dir.join(format!("{name}.csv"));
    let truth = dir.join(format!("{name}.truth.csv"));
    let mut args = vec![
        "simulate",
        "--seed",
        seed,
        "--output",
        s(&ticks),
        "--truth",
        s(&truth),
        "--t-len",
        "300",
    ];
    args.extend_from_slice(extra);
    run(&args);
    (ticks, truth)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .collect()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, ta) = simulate(dir.path(), "a", "11", &[]);
    let (b, tb) = simulate(dir.path(), "b", "11", &[]);
    let (c, _) = simulate(dir.path(), "c", "12", &[]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(&ta).unwrap(), std::fs::read(&tb).unwrap());
    assert_ne!(read(&a), read(&c));
    let text = read(&a);
    assert!(text.starts_with("time,price,exchange,cond,corr\n"));
    assert_eq!(data_rows(&text).len(), 300);
    assert!(!text.contains('\r'));
}

#[test]
fn poisson_arrivals_increase() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = simulate(dir.path(), "p", "3", &["--arrivals", "poisson:2.0"]);
    let times: Vec<f64> = data_rows(&read(&t))
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}

fn estimate(dir: &Path, ticks: &Path, mode: &str, name: &str, extra: &[&str]) -> String {
    let out = dir.join(format!("{name}.csv"));
    let mut args = vec![
        "estimate",
        "--seed",
        "5",
        "--input",
        s(ticks),
        "--output",
        s(&out),
        "--mode",
        mode,
        "--sigma2-init",
        "1e-8",
        "--particles",
        "100",
    ];
    args.extend_from_slice(extra);
    run(&args);
    read(&out)
}

#[test]
fn estimate_modes_emit_one_row_per_update() {
    let dir = tempfile::tempdir().unwrap();
    let (ticks, truth) = simulate(dir.path(), "sim", "21", &[]);
    let kappa = dir.path().join("kappa.txt");
    run(&[
        "calibrate",
        "kappa",
        "--seed",
        "1",
        "--output",
        s(&kappa),
        "--grid",
        "0.05:0.005:3log",
        "--runs",
        "200",
        "--t-len",
        "200",
        "--particles",
        "50",
    ]);
    assert!(read(&kappa).starts_with("# kappa-sidecar hash="));

    let sages = estimate(
        dir.path(),
        &ticks,
        "tv-sages",
        "sages",
        &["--grid", "0.05:0.005:3log", "--kappa", s(&kappa)],
    );
    assert_eq!(data_rows(&sages).len(), 299);
    assert!(sages
        .lines()
        .last()
        .unwrap()
        .starts_with("# timing updates="));

    let tv = estimate(dir.path(), &ticks, "tv-lambda", "tv", &[]);
    let bench = estimate(dir.path(), &ticks, "benchmark-tv", "bench", &[]);
    let (h_tv, h_bench) = (tv.lines().next().unwrap(), bench.lines().next().unwrap());
    assert_eq!(
        h_tv,
        "time,j,price,sigma2_hat[tv-lambda],ess,resampled,diverged"
    );
    assert_eq!(
        h_bench,
        "time,j,price,sigma2_hat[benchmark-tv],eta2_hat[benchmark-tv],ess,resampled,diverged"
    );
    assert_eq!(data_rows(&bench).len(), 299);

    let oracle = estimate(
        dir.path(),
        &ticks,
        "oracle",
        "oracle",
        &["--truth", s(&truth)],
    );
    assert_eq!(data_rows(&oracle).len(), 299);

    for mode in ["const-gamma", "clock", "clock-alt", "benchmark-const"] {
        let text = estimate(dir.path(), &ticks, mode, mode, &["--no-timing"]);
        assert_eq!(data_rows(&text).len(), 299, "{mode}");
        let row = data_rows(&text)[100];
        let v: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert!(v.is_finite() && v > 0.0, "{mode}: {row}");
    }
}

#[test]
fn oracle_needs_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (ticks, _) = simulate(dir.path(), "sim", "2", &[]);
    let out = bin()
        .args([
            "estimate",
            "--seed",
            "1",
            "--input",
            s(&ticks),
            "--output",
            s(&dir.path().join("o.csv")),
            "--mode",
            "oracle",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--truth"));
}

#[test]
fn estimate_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (ticks, _) = simulate(dir.path(), "sim", "8", &[]);
    let a = estimate(
        dir.path(),
        &ticks,
        "const-gamma",
        "a",
        &["--no-timing", "--threads", "1"],
    );
    let b = estimate(
        dir.path(),
        &ticks,
        "const-gamma",
        "b",
        &["--no-timing", "--threads", "1"],
    );
    let c = estimate(
        dir.path(),
        &ticks,
        "const-gamma",
        "c",
        &["--no-timing", "--threads", "0"],
    );
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(!a.contains('#'));
}

#[test]
fn malformed_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time,price\n1,50.00\n2,oops\n").unwrap();
    let out = bin()
        .args([
            "estimate",
            "--seed",
            "1",
            "--input",
            s(&bad),
            "--output",
            s(&dir.path().join("o.csv")),
            "--mode",
            "tv-lambda",
            "--sigma2-init",
            "1e-8",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("price"));
}

#[test]
fn calibrate_lambda_prints_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (ticks, _) = simulate(dir.path(), "sim", "4", &[]);
    let out = run(&[
        "calibrate",
        "lambda",
        "--seed",
        "1",
        "--input",
        s(&ticks),
        "--sigma2-init",
        "1e-8",
        "--particles",
        "50",
        "--grid",
        "0.05:0.00005:15log",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "lambda,crit");
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 16);
    assert!(text.lines().last().unwrap().starts_with("# argmin lambda="));

    for which in ["duration", "bench-lambda"] {
        let out = run(&[
            "calibrate",
            which,
            "--input",
            s(&ticks),
            "--grid",
            "0.5:0.01:5log",
        ]);
        assert!(String::from_utf8(out.stdout)
            .unwrap()
            .contains("# argmin lambda="));
    }
    let empty = bin()
        .args(["calibrate", "duration", "--input", s(&ticks), "--grid", ","])
        .output()
        .unwrap();
    assert!(!empty.status.success());
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    let ticks = dir.path().join("t.csv");
    let truth = dir.path().join("x.csv");
    std::fs::write(
        &conf,
        format!(
            "seed = 9\nt_len = 120\noutput = {}\ntruth = {}\n",
            s(&ticks),
            s(&truth)
        ),
    )
    .unwrap();
    run(&["simulate", "--config", s(&conf), "--t-len", "150"]);
    assert_eq!(data_rows(&read(&ticks)).len(), 150);
    let first = read(&ticks);
    run(&[
        "simulate",
        "--config",
        s(&conf),
        "--t-len",
        "150",
        "--seed",
        "9",
    ]);
    assert_eq!(read(&ticks), first);
}

#[test]
fn clean_and_match() {
    let dir = tempfile::tempdir().unwrap();
    let trades = dir.path().join("trades.csv");
    let quotes = dir.path().join("quotes.csv");
    std::fs::write(
        &trades,
        "time,price,exchange,cond,corr\n\
         09:29:59,50.01,N,,0\n\
         09:30:00,50.01,N,,0\n\
         09:30:05,50.03,N,,0\n\
         09:30:05,50.01,N,,0\n\
         09:30:06,50.02,N,,0\n\
         10:00:00,50.03,N,,1\n\
         10:00:01,50.03,T,,0\n\
         garbage\n",
    )
    .unwrap();
    std::fs::write(&quotes, "time,bid,ask,exchange\n09:30:01,50.01,50.03,N\n").unwrap();
    let out = dir.path().join("clean.csv");
    run(&[
        "clean",
        "--trades",
        s(&trades),
        "--quotes",
        s(&quotes),
        "--output",
        s(&out),
    ]);
    let text = read(&out);
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 4);
    let times: Vec<f64> = rows
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert!((times[2] - 34_205.5).abs() < 1e-9);
    let audit = read(&dir.path().join("clean.csv.audit.csv"));
    for line in [
        "session,1",
        "exchange,1",
        "condition,1",
        "kept,4",
        "unparseable,1",
        "no_quote,1",
        "off_quote,1",
    ] {
        assert!(
            audit.lines().any(|l| l == line),
            "{line} missing from\n{audit}"
        );
    }
}

#[test]
fn stylized_reports_acf() {
    let dir = tempfile::tempdir().unwrap();
    let (ticks, _) = simulate(dir.path(), "sim", "6", &[]);
    let out = run(&["stylized", "--input", s(&ticks), "--max-lag", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 + 3 + 1);
    let lag1: f64 = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(lag1 < 0.0);
    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "time,price\n1,50\n2,50\n3,50\n4,50\n5,50\n").unwrap();
    assert!(!bin()
        .args(["stylized", "--input", s(&flat), "--max-lag", "2"])
        .output()
        .unwrap()
        .status
        .success());
}
