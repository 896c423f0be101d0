use std::fs;
use std::process::Command;

fn molt(args: &[&str], out_dir: &std::path::Path) -> (i32, String, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_molt"))
        .args(args)
        .env("MOLT_OUTPUT_DIR", out_dir)
        .output()
        .expect("binary runs");
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

#[test]
fn scenarios_lists_every_name() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = molt(&["scenarios"], dir.path());
    assert_eq!(code, 0);
    for (name, _) in molt::cli::SCENARIOS {
        assert!(out.lines().any(|l| l.starts_with(name)), "{name}");
    }
}

#[test]
fn run_writes_snapshots_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "scenario = bessel_dirichlet\nn = 32\nny = 32\nt_final = 0.4\nsnapshots = 0.2, 0.4\n").unwrap();
    let out = dir.path().join("out");
    let (code, stdout, err) = molt(&["run", cfg.to_str().unwrap()], &out);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("linf_error"));
    assert!(out.join("summary.txt").exists());
    assert!(out.join("bessel_dirichlet_t0.2000.csv").exists());
    let text = fs::read_to_string(out.join("bessel_dirichlet_t0.4000.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("x,y,u"));
}

#[test]
fn converge_reports_orders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "scenario = sine_1d\nn = 25\nt_final = 0.6\n").unwrap();
    let (code, stdout, err) = molt(&["converge", cfg.to_str().unwrap(), "--levels", "3"], dir.path());
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout.lines().count(), 4);
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("dx,dy,dt,l2_error,l2_order,linf_error,linf_order"));
    let orders: Vec<f64> = csv.lines().skip(2).map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
    assert!(orders.iter().all(|p| (p - 2.0).abs() < 0.2), "{orders:?}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "scenario = sine_1d\nbogus = 3\n",
        "n = 10\n",
        "scenario = sine_1d\ncfl = zero\n",
        "scenario = bessel_neumann\nvariant = dispersive\n",
    ];
    for text in cases {
        let cfg = dir.path().join("bad.cfg");
        fs::write(&cfg, text).unwrap();
        let (code, _, err) = molt(&["run", cfg.to_str().unwrap()], dir.path());
        assert_eq!(code, 2, "{text}: {err}");
        assert!(err.starts_with("molt: "));
    }
    let (code, _, _) = molt(&["run", dir.path().join("missing.cfg").to_str().unwrap()], dir.path());
    assert_eq!(code, 2);
}

#[test]
fn runtime_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("flip.cfg");
    // the flipped correction sign is unstable on a long run
    fs::write(&cfg, "scenario = bessel_dirichlet\nn = 24\nny = 24\nt_final = 400\ncorrection = flipped\n").unwrap();
    let (code, _, err) = molt(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("blew up"));
}
