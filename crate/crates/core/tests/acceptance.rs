//! Acceptance suite: one PASS/FAIL line per criterion and a summary line.
//!
//! A failing criterion is reported but only fails the process when
//! `ROBIN_ACCEPTANCE_STRICT` is set, so the rest of the workspace tests still
//! run under `cargo test`.

use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use robinheat::kernel::{Field, SpectralKernel};
use robinheat::mesh::{interval_mesh, rectangle_mesh, Mesh};
use robinheat::oracle::{self, ModeKind};
use robinheat::spectral::{count_eigenvalues_below, solve_spectrum, Spectrum};
use robinheat::verify::{self, check_rng, fixtures, run_all, Config, Domain};
use robinheat::RobinForm;

struct Outcome {
    passed: bool,
    summary: String,
}

fn outcome(passed: bool, summary: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        summary: summary.into(),
    }
}

fn solve(mesh: &Mesh, alpha: f64, k: usize) -> (RobinForm, Spectrum) {
    let form = RobinForm::assemble(mesh, alpha).expect("assembly");
    let spectrum = solve_spectrum(&form, k).expect("eigensolve");
    (form, spectrum)
}

fn kernel(mesh: &Mesh, alpha: f64, k: usize) -> (RobinForm, SpectralKernel) {
    let (form, s) = solve(mesh, alpha, k);
    (form, SpectralKernel::new(s, mesh.clone()).expect("kernel"))
}

const ALPHAS: [f64; 5] = [-3.0, -1.0, 0.0, 1.0, 3.0];

fn relative_error(fem: f64, exact: f64) -> f64 {
    (fem - exact).abs() / exact.abs().max(1.0)
}

/// Largest relative error over paired eigenvalues, with its 1-based index.
fn worst_relative(fem: &Spectrum, exact: impl Iterator<Item = f64>) -> (f64, usize) {
    fem.pairs
        .iter()
        .zip(exact)
        .enumerate()
        .map(|(i, (p, e))| (relative_error(p.lambda, e), i + 1))
        .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

fn criterion_1() -> Outcome {
    let interval = interval_mesh(1.0, 800).unwrap();
    let square = rectangle_mesh(1.0, 1.0, 32, 32).unwrap();
    let errors: Vec<((f64, usize), (f64, usize))> = ALPHAS
        .par_iter()
        .map(|&alpha| {
            let (_, s1) = solve(&interval, alpha, 10);
            let e1 = oracle::interval_spectrum(1.0, alpha, 10).unwrap();
            let (_, s2) = solve(&square, alpha, 6);
            let e2 = oracle::rectangle_spectrum(1.0, 1.0, alpha, 6).unwrap();
            (
                worst_relative(&s1, e1.iter().map(|e| e.lambda)),
                worst_relative(&s2, e2.iter().map(|e| e.lambda)),
            )
        })
        .collect();
    let worst = |pick: fn(&((f64, usize), (f64, usize))) -> (f64, usize)| {
        errors
            .iter()
            .zip(ALPHAS)
            .map(|(e, a)| (pick(e), a))
            .fold(((0.0, 0), 0.0), |acc, x| if x.0 .0 > acc.0 .0 { x } else { acc })
    };
    let ((w1, k1), a1) = worst(|e| e.0);
    let ((w2, k2), a2) = worst(|e| e.1);
    outcome(
        w1 <= 5e-3 && w2 <= 1e-2,
        format!(
            "interval max rel err {w1:.3e} at α={a1}, λ{k1} (<= 5e-3); \
             square max rel err {w2:.3e} at α={a2}, λ{k2} (<= 1e-2)"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut cases: Vec<(Domain, f64, usize, Vec<usize>)> = Vec::new();
    for &a in &ALPHAS {
        cases.push((Domain::Interval { length: 1.0 }, a, 5, vec![50, 100, 200, 400]));
    }
    for a in [-1.0, 0.0, 1.0] {
        cases.push((Domain::Rectangle { lx: 1.0, ly: 1.0 }, a, 4, vec![8, 16, 32]));
    }
    let results: Vec<(String, f64, bool)> = cases
        .par_iter()
        .map(|(d, a, k, sizes)| {
            let r = verify::convergence_study(*d, *a, *k, sizes).unwrap();
            let label = match d {
                Domain::Interval { .. } => format!("1d α={a}"),
                Domain::Rectangle { .. } => format!("2d α={a}"),
            };
            (label, r.fitted_constants["median_eoc"], r.passed && !r.skipped)
        })
        .collect();
    let all = results.iter().all(|r| r.2);
    let text: Vec<String> = results.iter().map(|(l, e, _)| format!("{l}: {e:.3}")).collect();
    outcome(all, format!("median EOC in [1.7, 2.3]: {}", text.join(", ")))
}

fn criterion_3() -> Outcome {
    let mut failures = Vec::new();
    // ground state sign and positivity
    let interval = interval_mesh(1.0, 400).unwrap();
    let square = rectangle_mesh(1.0, 1.0, 16, 16).unwrap();
    for alpha in [-3.0, -2.0, -1.0, -0.5] {
        for (label, mesh) in [("interval", &interval), ("square", &square)] {
            let (_, s) = solve(mesh, alpha, 4);
            let r = verify::check_first_eigen(&s);
            if !r.passed {
                failures.push(format!("{label} α={alpha}: {}", r.details));
            }
        }
    }
    // negative eigenvalue counts: oracle, expected, and inertia of the n = 2000 discretization
    let cases: [(f64, f64, usize); 8] = [
        (1.0, -0.5, 1),
        (1.0, -1.0, 1),
        (1.0, -1.9, 1),
        (1.0, -2.5, 2),
        (1.0, -3.0, 2),
        (1.0, -5.0, 2),
        (2.0, -0.5, 1),
        (2.0, -1.5, 2),
    ];
    let counts: Vec<String> = cases
        .par_iter()
        .map(|&(l, alpha, expected)| {
            let modes = oracle::interval_spectrum(l, alpha, 4).unwrap();
            let exact = modes.iter().filter(|m| m.kind == ModeKind::Negative).count();
            let form = RobinForm::assemble(&interval_mesh(l, 2000).unwrap(), alpha).unwrap();
            let fem = count_eigenvalues_below(&form.robin_matrix().unwrap(), &form.mass, 0.0).unwrap();
            if exact == expected && fem == expected {
                String::new()
            } else {
                format!("L={l} α={alpha}: oracle {exact}, fem {fem}, expected {expected}")
            }
        })
        .filter(|s| !s.is_empty())
        .collect();
    failures.extend(counts);
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "λ₁ < 0 and φ₁ > 0 for α ∈ {-3,-2,-1,-0.5}; negative counts 1/2 match oracle and n=2000 inertia".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn criterion_4() -> Outcome {
    let alphas = [-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0];
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for mesh in [
        interval_mesh(1.0, 200).unwrap(),
        rectangle_mesh(1.0, 1.0, 16, 16).unwrap(),
    ] {
        let form = RobinForm::assemble(&mesh, 0.0).unwrap();
        let r = verify::check_monotone_alpha(&form, &alphas, 8).unwrap();
        ok &= r.passed;
        worst = worst.max(r.statistic);
    }
    outcome(ok, format!("max λ_k(αᵢ) − λ_k(αᵢ₊₁) = {worst:.3e} (<= 1e-9), k <= 8"))
}

fn kernel_cases() -> Vec<(String, Mesh, f64)> {
    let mut out = Vec::new();
    for alpha in [-1.0, 0.0, 1.0] {
        out.push((format!("1d α={alpha}"), interval_mesh(1.0, 200).unwrap(), alpha));
        out.push((
            format!("2d α={alpha}"),
            rectangle_mesh(1.0, 1.0, 16, 16).unwrap(),
            alpha,
        ));
    }
    out
}

fn criterion_5() -> Outcome {
    let times = [0.1, 0.5, 1.0];
    let ts: Vec<(f64, f64)> = times.iter().flat_map(|&t| times.map(|s| (t, s))).collect();
    let results: Vec<(bool, f64, f64, f64)> = kernel_cases()
        .par_iter()
        .map(|(label, mesh, alpha)| {
            let (form, k) = kernel(mesh, *alpha, 60);
            let mut rng = check_rng(42, label);
            // both domains are unit-sized
            let point = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..mesh.dim()).map(|_| rand::Rng::random::<f64>(rng)).collect()
            };
            let pts: Vec<(Vec<f64>, Vec<f64>)> = (0..50).map(|_| (point(&mut rng), point(&mut rng))).collect();
            let sym = verify::check_kernel_symmetry(&k, &pts, &times).unwrap();
            let semi = verify::check_semigroup(&k, &ts).unwrap();
            let mut energy_worst = 0.0_f64;
            let mut energy_ok = true;
            for &t in &times {
                for x in [0, k.mesh().num_vertices() / 2, k.mesh().num_vertices() - 1] {
                    let r = verify::check_truncated_energy(&form, k.spectrum(), t, 30, x);
                    energy_ok &= r.passed;
                    energy_worst = energy_worst.max(r.statistic);
                }
            }
            (
                sym.passed && semi.passed && energy_ok,
                sym.statistic,
                semi.statistic,
                energy_worst,
            )
        })
        .collect();
    let ok = results.iter().all(|r| r.0);
    let mism = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let semi = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let energy = results.iter().map(|r| r.3).fold(0.0, f64::max);
    outcome(
        ok,
        format!(
            "symmetry mismatches {mism}, semigroup error {semi:.3e} (<= 1e-10), energy identity {energy:.3e} (<= 1e-8)"
        ),
    )
}

fn criterion_6() -> Outcome {
    let times = [0.1, 0.5, 1.0];
    let results: Vec<(String, bool, f64, f64)> = kernel_cases()
        .par_iter()
        .map(|(label, mesh, alpha)| {
            let (_, k) = kernel(mesh, *alpha, 60);
            let mut rng = check_rng(42, label);
            let n = mesh.num_vertices();
            let random: Vec<f64> = (0..n).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
            let interior: Vec<usize> = (0..n).filter(|&v| !mesh.boundary_vertex_flags()[v]).collect();
            let mut bump = vec![0.0; n];
            bump[interior[interior.len() / 2]] = 1.0;
            let u0s = [
                Field::constant(n, 1.0).unwrap(),
                Field::new(random, 0.0).unwrap(),
                Field::new(bump, 0.0).unwrap(),
            ];
            let mp = verify::check_max_principle(&k, &u0s, &times).unwrap();
            let pairs: Vec<(usize, usize)> = (0..100)
                .map(|_| {
                    (
                        rand::Rng::random_range(&mut rng, 0..n),
                        rand::Rng::random_range(&mut rng, 0..n),
                    )
                })
                .collect();
            let kp = verify::check_kernel_positivity(&k, &times, &pairs).unwrap();
            let min_sol = mp.fitted_constants["min_value"];
            let min_ker = kp.fitted_constants["min_value"];
            let mut ok = mp.passed && kp.passed && !mp.skipped && !kp.skipped;
            if mesh.dim() == 1 {
                ok &= min_sol > 0.0 && min_ker > 0.0;
            }
            (label.clone(), ok, min_sol, min_ker)
        })
        .collect();
    let ok = results.iter().all(|r| r.1);
    let text: Vec<String> = results
        .iter()
        .map(|(l, _, s, k)| format!("{l}: u {s:.2e}, H {k:.2e}"))
        .collect();
    outcome(
        ok,
        format!(
            "min values ≥ −(tail + 1e-8), interval strictly positive: {}",
            text.join(", ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let square = rectangle_mesh(1.0, 1.0, 16, 16).unwrap();
    let results: Vec<(f64, bool, f64, f64, f64)> = [-1.0, 0.0, 1.0]
        .par_iter()
        .map(|&alpha| {
            let (_, s) = solve(&square, alpha, 90);
            let w = verify::check_weyl_bound(&s, 2);
            let g = verify::check_linf_growth(&s, 2);
            let ok = w.passed && !w.skipped && w.fitted_constants["C2"] > 0.0 && g.passed && !g.skipped;
            (
                alpha,
                ok,
                w.fitted_constants["C2"],
                g.fitted_constants["slope_lambda"],
                g.fitted_constants["slope_gap"],
            )
        })
        .collect();
    let ok = results.iter().all(|r| r.1);
    let text: Vec<String> = results
        .iter()
        .map(|(a, _, c2, sl, sg)| format!("α={a}: C₂ {c2:.3}, slopes {sl:.3}/{sg:.3}"))
        .collect();
    outcome(ok, format!("C₂ > 0 and L∞ slopes ≤ 0.8 (λ/gap): {}", text.join(", ")))
}

fn criterion_8() -> Outcome {
    let coarse = rectangle_mesh(1.0, 1.0, 16, 16).unwrap();
    let fine = rectangle_mesh(1.0, 1.0, 32, 32).unwrap();
    let mut rng = check_rng(42, "trace");
    let t = verify::check_trace_inequality(&coarse, &fine, 500, &mut rng).unwrap();
    let s = verify::check_trace_sobolev(&coarse, &fine, 4.0, 500, &mut rng).unwrap();
    let c1 = (t.fitted_constants["C1_coarse"], t.fitted_constants["C1_fine"]);
    let c4 = (s.fitted_constants["C4_coarse"], s.fitted_constants["C4_fine"]);
    let within_factor = |a: f64, b: f64, f: f64| a > 0.0 && b > 0.0 && a.max(b) / a.min(b) <= f;
    outcome(
        t.passed && s.passed && within_factor(c1.0, c1.1, 1.5) && within_factor(c4.0, c4.1, 2.0),
        format!(
            "C₁ {:.4} → {:.4} (factor ≤ 1.5), C₄ {:.4} → {:.4} (factor ≤ 2)",
            c1.0, c1.1, c4.0, c4.1
        ),
    )
}

fn criterion_9() -> Outcome {
    // planted violations, each against its targeted check
    let form = RobinForm::assemble(&rectangle_mesh(1.0, 1.0, 8, 8).unwrap(), 0.0).unwrap();
    let negated =
        verify::check_monotone_alpha(&fixtures::negated_boundary(&form), &[-2.0, -1.0, 0.0, 1.0, 2.0], 8).unwrap();
    let mesh = interval_mesh(1.0, 100).unwrap();
    let (_, s) = solve(&mesh, 1.0, 30);
    let corrupted = SpectralKernel::new(fixtures::corrupt_orthonormality(&s, 1e-3), mesh).unwrap();
    let ts: Vec<(f64, f64)> = [0.1, 0.5, 1.0]
        .iter()
        .flat_map(|&t| [0.1, 0.5, 1.0].map(|s| (t, s)))
        .collect();
    let semigroup = verify::check_semigroup(&corrupted, &ts).unwrap();
    let sublinear = verify::check_weyl_bound(&fixtures::sublinear_spectrum(90), 2);
    let planted_ok = !negated.passed && !semigroup.passed && !sublinear.passed;

    // the full default suite, twice, with the planted checks enabled
    let cfg = Config {
        planted: true,
        timings: false,
        ..Config::default()
    };
    let a = run_all(&cfg).unwrap();
    let b = run_all(&cfg).unwrap();
    let identical = a.to_json() == b.to_json();
    let regular_pass = a
        .checks
        .iter()
        .filter(|c| !c.name.starts_with("planted_"))
        .all(|c| c.passed);
    let planted_fail = a
        .checks
        .iter()
        .filter(|c| c.name.starts_with("planted_"))
        .all(|c| !c.passed);
    let round_trip = verify::VerificationReport::from_json(&a.to_json())
        .map(|r| r == a)
        .unwrap_or(false);
    outcome(
        planted_ok && identical && regular_pass && planted_fail && round_trip,
        format!(
            "fixtures fail (monotone {}, semigroup {:.1e}, weyl ratio {:.2}); suite pass {regular_pass}, planted in suite fail {planted_fail}, byte-identical {identical}, JSON round-trip {round_trip}",
            negated.statistic, semigroup.statistic, sublinear.statistic
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut worst = 0.0_f64;
    let mut ok = true;
    for (label, mesh, alpha) in kernel_cases() {
        let (form, k) = kernel(&mesh, alpha, 60);
        let mut rng = check_rng(42, &label);
        let values: Vec<f64> = (0..mesh.num_vertices())
            .map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal))
            .collect();
        let r = verify::check_mass_flux(&k, &form, &Field::new(values, 0.0).unwrap(), &[0.5, 1.0]).unwrap();
        ok &= r.passed;
        worst = worst.max(r.statistic);
    }
    outcome(
        ok,
        format!("max relative residual {worst:.3e} (<= 1e-8) for α ∈ {{-1,0,1}}, t ∈ {{0.5,1}}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("oracle spectrum agreement", criterion_1),
        ("convergence order", criterion_2),
        ("negative regime ground state", criterion_3),
        ("monotonicity in alpha", criterion_4),
        ("kernel algebra", criterion_5),
        ("positivity and maximum principle", criterion_6),
        ("growth-rate checks", criterion_7),
        ("trace inequalities", criterion_8),
        ("harness integrity", criterion_9),
        ("mass-flux identity", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let r = f();
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {:>2} {status} {name}: {} [{:.1}s]",
            i + 1,
            r.summary,
            start.elapsed().as_secs_f64()
        );
        if !r.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 || std::env::var_os("ROBIN_ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
