use std::path::Path;
use std::process::{Command, Output};

use robinheat::oracle;

/// Runs the binary in `dir` with whitespace-separated `args`.
fn robinheat(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robinheat"))
        .current_dir(dir)
        .env_remove("ROBIN_SEED")
        .args(args.split_whitespace())
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &str) -> String {
    let out = robinheat(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Data rows of a CSV with `#` comments and a header line.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && l.contains(','))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(text: &str, idx: usize) -> Vec<f64> {
    rows(text).iter().map(|r| r[idx].parse().unwrap()).collect()
}

#[test]
fn neumann_interval_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &format!(
            "mesh interval --length {} --cells 400 --out m.txt",
            std::f64::consts::PI
        ),
    );
    ok(dir.path(), "eigs --mesh m.txt --alpha 0 --k 5 --out-csv e.csv");
    let text = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert!(text.starts_with("# robinheat"));
    let lambdas = column(&text, 1);
    for (j, lam) in lambdas.iter().enumerate() {
        let exact = (j * j) as f64;
        assert!((lam - exact).abs() <= 5e-3 * exact.max(1.0), "λ{} = {lam}", j + 1);
    }
    for r in column(&text, 2) {
        assert!(r < 1e-9);
    }
}

#[test]
fn oracle_output_lists_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), "oracle interval --length 1 --alpha -3 --k 4");
    let kinds: Vec<String> = rows(&text).into_iter().map(|r| r[2].clone()).collect();
    assert_eq!(kinds, ["negative", "negative", "positive", "positive"]);
    let exact = oracle::interval_spectrum(1.0, -3.0, 4).unwrap();
    for (got, want) in column(&text, 1).iter().zip(&exact) {
        assert_eq!(*got, want.lambda);
    }

    let rect = ok(dir.path(), "oracle rect --lx 1 --ly 2 --alpha 0 --k 3");
    let lams = column(&rect, 1);
    assert_eq!(lams.len(), 3);
    assert!(lams[0].abs() < 1e-12);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cells = robinheat(dir.path(), "mesh interval --length 1 --cells 0 --out m.txt");
    assert_eq!(bad_cells.status.code(), Some(2));

    ok(dir.path(), "mesh interval --length 1 --cells 10 --out m.txt");
    let too_many = robinheat(dir.path(), "eigs --mesh m.txt --alpha 1 --k 50");
    assert_eq!(too_many.status.code(), Some(2));

    let missing = robinheat(dir.path(), "eigs --mesh nope.txt --alpha 1 --k 2");
    assert_ne!(missing.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.txt"));

    std::fs::write(dir.path().join("bad.cfg"), "checks = no_such_check\n").unwrap();
    let bad_cfg = robinheat(dir.path(), "verify --config bad.cfg");
    assert_eq!(bad_cfg.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_cfg.stderr).contains("kernel_symmetry"));
}

#[test]
fn kernel_slice_matches_exact_kernel() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), "mesh interval --length 1 --cells 400 --out m.txt");
    ok(dir.path(), "eigs --mesh m.txt --alpha 1 --k 60 --out-spec s.txt");
    ok(
        dir.path(),
        "kernel --spec s.txt --mesh m.txt --t 0.5 --fix-y 0.3 --out h.csv",
    );
    let text = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    let table = rows(&text);
    assert_eq!(table.len(), 401);
    let modes = oracle::interval_spectrum(1.0, 1.0, 60).unwrap();
    for r in table.iter().step_by(20) {
        let x: f64 = r[0].parse().unwrap();
        let h: f64 = r[1].parse().unwrap();
        let exact = oracle::interval_kernel_from(&modes, 1.0, x, 0.3, 0.5).unwrap();
        assert!((h - exact.value).abs() < 1e-3, "x = {x}: {h} vs {}", exact.value);
    }

    let outside = robinheat(dir.path(), "kernel --spec s.txt --mesh m.txt --t 0.5 --fix-y 2.0");
    assert_eq!(outside.status.code(), Some(2));
}

#[test]
fn evolving_an_eigenfunction_decays_at_its_rate() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), "mesh interval --length 1 --cells 200 --out m.txt");
    ok(dir.path(), "eigs --mesh m.txt --alpha -1 --k 20 --out-spec s.txt");
    let spectrum = robinheat::spectral::read_spectrum(&dir.path().join("s.txt")).unwrap();
    let phi2 = &spectrum.pairs[1];
    let u0: String = phi2.phi.iter().map(|v| format!("{v:e}\n")).collect();
    std::fs::write(dir.path().join("u0.txt"), u0).unwrap();

    ok(
        dir.path(),
        "evolve --spec s.txt --mesh m.txt --u0 u0.txt --times 0.2,0.7 --out u.csv",
    );
    let text = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
    let table = rows(&text);
    assert_eq!(table.len(), 2 * phi2.phi.len());
    for (i, r) in table.iter().enumerate() {
        let t: f64 = r[0].parse().unwrap();
        let value: f64 = r[2].parse().unwrap();
        let want = (-phi2.lambda * t).exp() * phi2.phi[i % phi2.phi.len()];
        assert!((value - want).abs() < 1e-10, "row {i}: {value} vs {want}");
    }
}

#[test]
fn verify_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "checks = kernel_symmetry, semigroup, truncated_energy\ndims = 1\ninterval_cells = 60\nmodes = 30\n";
    std::fs::write(dir.path().join("v.cfg"), cfg).unwrap();
    ok(dir.path(), "verify --config v.cfg --no-timings --report a.json");
    ok(dir.path(), "verify --config v.cfg --no-timings --report b.json");
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);

    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["passed"], serde_json::Value::Bool(true));
    let names: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(names.len(), 3);
    assert!(names.contains(&"semigroup"));
}

#[test]
fn planted_defects_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "checks = kernel_symmetry\ndims = 1\ninterval_cells = 40\nmodes = 20\nplanted = true\n";
    std::fs::write(dir.path().join("p.cfg"), cfg).unwrap();
    let out = robinheat(dir.path(), "verify --config p.cfg --no-timings --report p.json");
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], serde_json::Value::Bool(false));
}
