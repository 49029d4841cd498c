use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use refprior_cli::channel::{channel_to_string, parse_channel_file, parse_channel_str};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn refprior(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refprior"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str], out: &Path) {
    let o = refprior(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn single_count_posterior_rows_and_cdf() {
    let dir = tempfile::tempdir().unwrap();
    let ch = data("minimal.json");
    run_ok(
        &["posterior", "--channel", ch.to_str().unwrap(), "--grid", "151"],
        dir.path(),
    );
    let (header, rows) = csv(&dir.path().join("density.csv"));
    assert_eq!(header, ["sigma", "prior_density", "posterior_density", "posterior_cdf"]);
    assert_eq!(rows.len(), 151);
    assert!(rows.windows(2).all(|w| w[1][3] >= w[0][3] && w[1][0] > w[0][0]));
    assert_eq!(rows[0][3], 0.0);
    assert!((rows[150][3] - 1.0).abs() < 1e-12);
    let at_one = rows.iter().find(|r| r[0] == 1.0).expect("σ = 1 is a grid node");
    assert_eq!(at_one[1], 1.0);

    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let limit: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("upper_limit_95 "))
        .unwrap()
        .parse()
        .unwrap();
    // Exact value from the single-count tail integral.
    assert!((limit - 2.6708336770534515).abs() < 2e-3, "{limit}");
}

#[test]
fn same_seed_gives_identical_files() {
    let ch = data("four_events.json");
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            run_ok(
                &[
                    "posterior",
                    "--method",
                    "2",
                    "--channel",
                    ch.to_str().unwrap(),
                    "--grid",
                    "41",
                    "--samples",
                    "200",
                    "--seed",
                    "9",
                ],
                dir.path(),
            );
            let bytes = fs::read(dir.path().join("density.csv")).unwrap();
            (dir, bytes)
        })
        .collect();
    assert_eq!(runs[0].1, runs[1].1);
}

#[test]
fn multi_bin_method1_and_flat() {
    let dir = tempfile::tempdir().unwrap();
    let ch = data("synthetic_50bin.json");
    let ch = ch.to_str().unwrap();
    run_ok(
        &["posterior", "--channel", ch, "--samples", "5000", "--grid", "101"],
        &dir.path().join("m1"),
    );
    run_ok(
        &["posterior", "--method", "flat", "--channel", ch, "--grid", "101"],
        &dir.path().join("flat"),
    );
    for sub in ["m1", "flat"] {
        let (_, rows) = csv(&dir.path().join(sub).join("density.csv"));
        assert_eq!(rows.len(), 101);
        assert!((rows.last().unwrap()[3] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn prior_is_one_at_unit_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let ch = data("minimal.json");
    run_ok(
        &[
            "prior",
            "--channel",
            ch.to_str().unwrap(),
            "--grid",
            "21",
            "--sigma-max",
            "10",
        ],
        dir.path(),
    );
    let (header, rows) = csv(&dir.path().join("prior.csv"));
    assert_eq!(header, ["sigma", "prior_density"]);
    let at_one = rows.iter().find(|r| r[0] == 1.0).unwrap();
    assert!((at_one[1] - 1.0).abs() < 1e-12);
    assert!(rows.windows(2).all(|w| w[1][1] < w[0][1]));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(data("minimal.json"))
        .unwrap()
        .replacen("0.2", "2.0", 1);
    fs::write(&bad, text).unwrap();
    let o = refprior(&["posterior", "--channel", bad.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("eff_lumi_prior"), "{err}");

    let o = refprior(&["coverage", "--method", "flat"], dir.path());
    assert!(!o.status.success());
    let o = refprior(&["posterior"], dir.path());
    assert!(!o.status.success());
    let o = refprior(&["posterior", "--channel", "/nonexistent.json"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn channel_file_round_trip() {
    for name in ["minimal.json", "four_events.json", "synthetic_50bin.json"] {
        let ch = parse_channel_file(&data(name)).unwrap();
        let again = parse_channel_str(&channel_to_string(&ch), Path::new(name)).unwrap();
        assert_eq!(ch, again, "{name}");
    }
}

#[test]
fn analysis_subcommands_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(
        &["coverage", "--n-replications", "1,5", "--samples", "50"],
        &d.join("cov"),
    );
    let (_, rows) = csv(&d.join("cov").join("coverage.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows
        .iter()
        .all(|r| r[2] <= r[3] && r[3] == 50.0 && (0.0..=1.0).contains(&r[4])));

    run_ok(&["limit-scan", "--mean-bg-steps", "4"], &d.join("scan"));
    let (_, rows) = csv(&d.join("scan").join("limit_scan.csv"));
    assert_eq!(rows.len(), 4);

    run_ok(&["paradox", "--grid", "11"], &d.join("paradox"));
    let (header, rows) = csv(&d.join("paradox").join("paradox.csv"));
    assert_eq!(header, ["theta", "r_t1", "r_t2", "ratio"]);
    assert_eq!(rows.len(), 11);

    run_ok(&["constructive", "--k", "10", "--grid", "11"], &d.join("cons"));
    let (_, rows) = csv(&d.join("cons").join("constructive.csv"));
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r[1] > 0.0));
}
