use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use keys::Dataset;
use tempfile::TempDir;

fn keys(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keys"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field<'a>(report: &'a str, key: &str) -> &'a str {
    let prefix = format!("{key}: ");
    report
        .lines()
        .find_map(|l| l.strip_prefix(prefix.as_str()))
        .unwrap_or_else(|| panic!("no `{key}` in report:\n{report}"))
}

fn gen(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let mut all = vec!["gen", "--out", name];
    all.extend_from_slice(args);
    let o = keys(&all, dir);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    dir.join(name)
}

#[test]
fn gen_is_reproducible_and_loadable() {
    let dir = TempDir::new().unwrap();
    let args = [
        "--family", "sphere", "--rows", "256", "--dims", "5", "--seed", "3",
    ];
    let a = std::fs::read(gen(dir.path(), "a.csv", &args)).unwrap();
    let b = std::fs::read(gen(dir.path(), "b.csv", &args)).unwrap();
    assert_eq!(a, b);
    let ds = Dataset::from_path(dir.path().join("a.csv")).unwrap();
    assert_eq!((ds.len(), ds.decision_columns().len()), (256, 5));
}

#[test]
fn injected_optimum_is_in_heaven() {
    let dir = TempDir::new().unwrap();
    let path = gen(dir.path(), "s.csv", &["--rows", "200", "--inject-optimum"]);
    let ds = Dataset::from_path(path).unwrap();
    let best = (0..ds.len())
        .map(|i| ds.d2h(i).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best, 0.0);
}

#[test]
fn tradeoff_has_no_single_winner() {
    let dir = TempDir::new().unwrap();
    let path = gen(
        dir.path(),
        "t.csv",
        &["--family", "tradeoff", "--rows", "1000"],
    );
    let ds = Dataset::from_path(path).unwrap();
    let objs: Vec<Vec<f64>> = (0..ds.len())
        .map(|i| ds.objective_values(i).unwrap())
        .collect();
    let dominates_all = |i: usize| {
        objs.iter()
            .all(|o| objs[i][0] <= o[0] && objs[i][1] <= o[1])
    };
    assert!(!(0..ds.len()).any(dominates_all));
}

#[test]
fn cluster_edge_cases() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("one.csv"), "x,y-\n1,2\n").unwrap();
    let o = keys(&["cluster", "--data", "one.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\n0,0,1,-,-,-,-,0\n"));

    std::fs::write(dir.path().join("bad.csv"), "a,b\n1,2\n3,4\n5\n").unwrap();
    let o = keys(&["cluster", "--data", "bad.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));

    let o = keys(&["cluster", "--data", "missing.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cluster_ten_thousand_rows() {
    let dir = TempDir::new().unwrap();
    gen(dir.path(), "big.csv", &["--rows", "10000", "--seed", "2"]);
    let o = keys(&["cluster", "--data", "big.csv", "--seed", "2"], dir.path());
    let text = stdout(&o);
    let tree = keys::cluster::ClusterTree::from_text(&text).unwrap();
    assert!(text.contains("\n# rows 10000 min_leaf 100 leaves "));
    assert!(tree.leaves().all(|l| l.rows.len() <= 100));
    let hist: usize = text
        .lines()
        .skip_while(|l| !l.starts_with("# leaf sizes"))
        .skip(1)
        .map(|l| {
            l.split_whitespace()
                .nth(2)
                .unwrap()
                .parse::<usize>()
                .unwrap()
        })
        .sum();
    assert_eq!(hist, tree.leaves().count());
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        keys(&["cluster", "--frobnicate"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(keys(&["optimize"], dir.path()).status.code(), Some(1));
    assert_eq!(
        keys(
            &["optimize", "--data", "x.csv", "--budget", "lots"],
            dir.path()
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(keys(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn optimize_budgets() {
    let dir = TempDir::new().unwrap();
    gen(dir.path(), "big.csv", &["--rows", "10000", "--seed", "5"]);
    let o = keys(
        &["optimize", "--data", "big.csv", "--budget", "auto"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let report = stdout(&o);
    assert_eq!(field(&report, "budget"), "28");
    assert!(field(&report, "evals").parse::<usize>().unwrap() <= 28);

    let o = keys(
        &[
            "optimize", "--data", "big.csv", "--algo", "random", "--budget", "26",
        ],
        dir.path(),
    );
    assert_eq!(field(&stdout(&o), "evals"), "26");

    let o = keys(
        &["optimize", "--data", "big.csv", "--budget", "4"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(field(&stdout(&o), "truncated"), "true");
}

#[test]
fn greedy_repeats_beat_random_repeats() {
    let dir = TempDir::new().unwrap();
    gen(dir.path(), "s.csv", &["--rows", "2000", "--seed", "8"]);
    let median = |algo: &str| -> f64 {
        let o = keys(
            &[
                "optimize",
                "--data",
                "s.csv",
                "--algo",
                algo,
                "--repeats",
                "20",
                "--budget",
                "22",
            ],
            dir.path(),
        );
        let report = stdout(&o);
        assert_eq!(report.matches("\nrun seed=").count(), 20);
        field(&report, "median_d2h").parse().unwrap()
    };
    assert!(median("greedy") <= median("random"));
}

#[test]
fn scripted_answers_drive_optimize() {
    let dir = TempDir::new().unwrap();
    gen(dir.path(), "s.csv", &["--rows", "500"]);
    std::fs::write(
        dir.path().join("answers.txt"),
        "# reviewer\nA\nB\n\nA\nB\nA\nB\nA\n",
    )
    .unwrap();
    let run = || {
        stdout(&keys(
            &["optimize", "--data", "s.csv", "--answers", "answers.txt"],
            dir.path(),
        ))
    };
    let report = run();
    assert_eq!(report, run());
    assert_eq!(field(&report, "best_d2h"), "-");
    let winners: String = report
        .lines()
        .filter(|l| l.starts_with("step "))
        .map(|l| l.split(" -> ").nth(1).unwrap().chars().next().unwrap())
        .collect();
    assert_eq!(winners, "ABABABA");
}

#[test]
fn explain_separating_column() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("x,?noise,y-\n");
    for i in 0..200 {
        let x = i as f64 / 200.0;
        csv.push_str(&format!("{x},{},{}\n", (i * 7919) % 13, x));
    }
    std::fs::write(dir.path().join("sep.csv"), csv).unwrap();
    let o = keys(
        &["explain", "--data", "sep.csv", "--min-leaf", "20"],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = stdout(&o);
    assert!(field(&report, "rule").starts_with("x ∈ "));
    assert_eq!(field(&report, "score"), "1");
    let json: serde_json::Value = serde_json::from_str(field(&report, "json")).unwrap();
    assert_eq!(json["score"], 1.0);
    assert_eq!(json["clauses"][0]["column"], "x");

    let tree = keys::cluster::ClusterTree::from_text(&stdout(&keys(
        &["cluster", "--data", "sep.csv", "--min-leaf", "20"],
        dir.path(),
    )))
    .unwrap();
    let leaves: Vec<usize> = tree.leaves().map(|l| l.id).collect();
    let (d, c) = (leaves[1].to_string(), leaves[2].to_string());
    let o = keys(
        &[
            "explain",
            "--data",
            "sep.csv",
            "--min-leaf",
            "20",
            "--desired",
            &d,
            "--current",
            &c,
        ],
        dir.path(),
    );
    let report = stdout(&o);
    assert!(field(&report, "desired").starts_with(&format!("leaf {d} ")));
    assert!(field(&report, "current").starts_with(&format!("leaf {c} ")));

    let o = keys(
        &[
            "explain",
            "--data",
            "sep.csv",
            "--desired",
            "0",
            "--current",
            &c,
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "the root is not a leaf");
}

#[test]
fn artifacts_replay_from_their_header() {
    let dir = TempDir::new().unwrap();
    gen(
        dir.path(),
        "s.csv",
        &["--rows", "300", "--family", "tradeoff", "--seed", "4"],
    );
    for cmd in ["cluster", "optimize", "explain"] {
        let first = keys(
            &[cmd, "--data", "s.csv", "--seed", "6", "--out", "first.txt"],
            dir.path(),
        );
        assert_eq!(first.status.code(), Some(0));
        let again = keys(&[cmd, "--config", "first.txt"], dir.path());
        assert_eq!(
            std::fs::read(dir.path().join("first.txt")).unwrap(),
            again.stdout,
            "{cmd}"
        );
    }
}
