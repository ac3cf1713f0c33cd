//! End-to-end acceptance suite. Every test prints one `[criterion NN] PASS`
//! or `FAIL` line (visible with `--nocapture`) and asserts the same verdict,
//! so the suite doubles as a checklist of what this workspace promises:
//! composition bounds, projection exactness, operator identities, recovery
//! rates at frozen seeds, certified-contraction convergence, the cost model,
//! and bit-level determinism of the command-line tools.
//!
//! Frozen constants (success floors, the tall-factor convergence instance,
//! timing repetition counts) were calibrated once on fixed seeds and are
//! asserted as-is; they are deliberately below the observed values so that
//! platform-level floating-point drift cannot flip a verdict.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hisparse::certify::{
    estimate_cert_cost, hirip_constant, jokar_mehrmann_check, rip_constant, RipKind,
};
use hisparse::ensembles::{
    sample_matrix, sample_noise, sample_signal, EnsembleSpec, MatrixKind, SignalMagnitude,
};
use hisparse::hierarchy::HierarchySpec;
use hisparse::hihtp::{recover, HihtpOptions};
use hisparse::linop::{DenseMatrix, MeasurementOperator};
use hisparse::projection::{project, project_bruteforce};

fn verdict(number: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "[criterion {number:02}] {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {number} ({name}) failed: {detail}");
}

fn gaussian_factor(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    sample_matrix(&EnsembleSpec::new(MatrixKind::Gaussian, rows, cols, seed).unwrap())
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

// --- 1: two-factor composition bound ---------------------------------------

#[test]
fn c01_product_constant_bounded_by_factor_combination() {
    let spec = HierarchySpec::new(vec![8, 8], vec![2, 2]).unwrap();
    let mut worst_slack = f64::MIN;
    for t in 0..20u64 {
        let a = gaussian_factor(6, 8, 100 + t);
        let b = gaussian_factor(5, 8, 200 + t);
        let da = rip_constant(&a, 2, RipKind::RipSquared).unwrap().delta;
        let db = rip_constant(&b, 2, RipKind::RipSquared).unwrap().delta;
        let combined = da + db + da * db;
        let op = MeasurementOperator::kronecker(vec![a, b]).unwrap();
        let product = hirip_constant(&op, &spec).unwrap().delta;
        worst_slack = worst_slack.max(product - combined);
    }
    verdict(
        1,
        "two-factor composition bound",
        worst_slack <= 1e-10,
        &format!("max(product - combined) = {worst_slack:.3e} over 20 pairs"),
    );
}

// --- 2: Kronecker-power bound -----------------------------------------------

#[test]
fn c02_kron_power_bound_dominates_enumeration() {
    let spec = HierarchySpec::new(vec![6, 6], vec![2, 2]).unwrap();
    let mut worst_slack = f64::MIN;
    for t in 0..10u64 {
        let b = gaussian_factor(5, 6, 300 + t);
        let d = rip_constant(&b, 2, RipKind::RipSquared).unwrap().delta;
        let bound = (1.0 + d) * (1.0 + d) - 1.0;
        let op = MeasurementOperator::kronecker(vec![b.clone(), b]).unwrap();
        let exact = hirip_constant(&op, &spec).unwrap().delta;
        worst_slack = worst_slack.max(exact - bound);
    }
    verdict(
        2,
        "Kronecker-power bound",
        worst_slack <= 1e-10,
        &format!("max(exact - bound) = {worst_slack:.3e} over 10 factors"),
    );
}

// --- 3: two-sided Kronecker sandwich -----------------------------------------

#[test]
fn c03_sandwich_holds_in_alt_convention() {
    let mut held = 0;
    let mut example = String::new();
    for t in 0..10u64 {
        let b = gaussian_factor(5, 6, 300 + t);
        let report = jokar_mehrmann_check(&[b.clone(), b], 2).unwrap();
        held += report.holds as usize;
        if t == 0 {
            example = format!(
                "instance 0: {:.4} <= {:.4} <= {:.4}",
                report.factor_max, report.kron_delta, report.product_bound
            );
        }
    }
    verdict(3, "two-sided Kronecker sandwich", held == 10, &format!("{held}/10 held; {example}"));
}

// --- 4: projection equals brute force -----------------------------------------

#[test]
fn c04_projection_matches_bruteforce_exactly() {
    let specs = [
        HierarchySpec::new(vec![3, 3], vec![1, 2]).unwrap(),
        HierarchySpec::new(vec![4, 4], vec![2, 2]).unwrap(),
        HierarchySpec::new(vec![3, 3, 3], vec![1, 2, 1]).unwrap(),
    ];
    let started = Instant::now();
    let mut checked = 0;
    for (si, spec) in specs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + si as u64);
        for _ in 0..1000 {
            let x: Vec<f64> =
                (0..spec.ambient_dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let fast = project(&x, spec).unwrap();
            let brute = project_bruteforce(&x, spec, 1_000_000).unwrap();
            assert_eq!(fast.captured_energy, brute.captured_energy, "energy must match exactly");
            assert_eq!(fast.support, brute.support, "supports must coincide");
            checked += 1;
        }
    }
    verdict(
        4,
        "projection equals brute force",
        checked == 3000 && started.elapsed() < Duration::from_secs(10),
        &format!("{checked} vectors, exact energy and support agreement, {:?}", started.elapsed()),
    );
}

// --- 5: operator identities ----------------------------------------------------

#[test]
fn c05_operator_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut worst_rel = 0.0f64;

    // transpose and swap identities on random (A, B, X) triples
    for _ in 0..100 {
        let p = rng.gen_range(1..=6);
        let q = rng.gen_range(1..=6);
        let r = rng.gen_range(1..=6);
        let s = rng.gen_range(1..=6);
        let rand_mat = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            DenseMatrix::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            )
            .unwrap()
        };
        let a = rand_mat(&mut rng, p, q);
        let b = rand_mat(&mut rng, r, s);
        let x = rand_mat(&mut rng, q, s);

        // flipping vec(X) transposes the matrix behind it
        let flip_qs = MeasurementOperator::flip(q, s).unwrap();
        let flipped = flip_qs.apply(x.entries()).unwrap();
        let transposed: Vec<f64> = {
            let xt = x.transpose();
            xt.entries().to_vec()
        };
        let rel = l2_diff(&flipped, &transposed) / (1.0 + l2(&transposed));
        worst_rel = worst_rel.max(rel);

        // flip(A (x) B) vec(X) equals (B (x) A) flip vec(X)
        let kron_ab = MeasurementOperator::kronecker(vec![a.clone(), b.clone()]).unwrap();
        let kron_ba = MeasurementOperator::kronecker(vec![b, a]).unwrap();
        let flip_pr = MeasurementOperator::flip(p, r).unwrap();
        let lhs = flip_pr.apply(&kron_ab.apply(x.entries()).unwrap()).unwrap();
        let rhs = kron_ba.apply(&flip_qs.apply(x.entries()).unwrap()).unwrap();
        let rel = l2_diff(&lhs, &rhs) / (1.0 + l2(&lhs));
        worst_rel = worst_rel.max(rel);
    }

    // matrix-free three-factor apply against materialization
    for t in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + t);
        let factors: Vec<DenseMatrix> = (0..3)
            .map(|_| {
                let rows = rng.gen_range(1..=4);
                let cols = rng.gen_range(1..=4);
                DenseMatrix::new(
                    rows,
                    cols,
                    (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                )
                .unwrap()
            })
            .collect();
        let op = MeasurementOperator::kronecker(factors).unwrap();
        let dense = op.materialize().unwrap();
        let x: Vec<f64> =
            (0..op.input_dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> =
            (0..op.output_dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let rel = l2_diff(&op.apply(&x).unwrap(), &dense.matvec(&x).unwrap())
            / (1.0 + l2(&x));
        worst_rel = worst_rel.max(rel);
        let rel = l2_diff(&op.adjoint_apply(&y).unwrap(), &dense.matvec_transposed(&y).unwrap())
            / (1.0 + l2(&y));
        worst_rel = worst_rel.max(rel);
    }

    verdict(
        5,
        "operator identities",
        worst_rel <= 1e-12,
        &format!("worst relative deviation {worst_rel:.3e} over 100 triples + 100 instances"),
    );
}

// --- 6 and 8: recovery rates at frozen seeds -----------------------------------

struct TrialStats {
    successes: usize,
    median_iterations: usize,
}

/// One hundred seeded trials at 20x30 / 15x25 Gaussian factors, hierarchy
/// (30,25)/(2,2). Noiseless trials succeed below 1e-6 relative error; noisy
/// trials (expected noise norm 1e-3) succeed below 100x the realized noise
/// norm. The success floors are frozen from a calibration run (observed:
/// 79/100 noiseless, 82/100 noisy) with margin for floating-point drift.
fn run_recovery_trials(noisy: bool) -> TrialStats {
    let spec = HierarchySpec::new(vec![30, 25], vec![2, 2]).unwrap();
    let mut successes = 0;
    let mut iterations = Vec::new();
    for t in 0..100u64 {
        let a = gaussian_factor(20, 30, 1000 + t);
        let b = gaussian_factor(15, 25, 2000 + t);
        let op = MeasurementOperator::kronecker(vec![a, b]).unwrap();
        let (x, _) = sample_signal(&spec, 3000 + t, SignalMagnitude::Gaussian);
        let mut y = op.apply(&x).unwrap();
        let mut noise_norm = 0.0;
        if noisy {
            let sigma = 1e-3 / (300f64).sqrt();
            let e = sample_noise(y.len(), sigma, 4000 + t);
            noise_norm = l2(&e);
            for (yi, ei) in y.iter_mut().zip(&e) {
                *yi += ei;
            }
        }
        let opts = HihtpOptions { ground_truth: Some(x.clone()), ..Default::default() };
        let result = recover(&op, &y, &spec, &opts).unwrap();
        let err = l2_diff(&result.estimate, &x);
        let ok = if noisy { err <= 100.0 * noise_norm } else { err < 1e-6 };
        successes += ok as usize;
        iterations.push(result.iterations_run);
    }
    iterations.sort_unstable();
    TrialStats { successes, median_iterations: iterations[iterations.len() / 2] }
}

#[test]
fn c06_noiseless_recovery_rate() {
    let stats = run_recovery_trials(false);
    verdict(
        6,
        "noiseless recovery rate",
        stats.successes >= 70 && stats.median_iterations <= 10,
        &format!(
            "{}/100 below 1e-6 relative error (frozen floor 70), median iterations {}",
            stats.successes, stats.median_iterations
        ),
    );
}

#[test]
fn c08_noisy_recovery_rate() {
    let stats = run_recovery_trials(true);
    verdict(
        8,
        "noisy recovery within 100x noise norm",
        stats.successes >= 72,
        &format!("{}/100 within 100x noise norm (frozen floor 72)", stats.successes),
    );
}

// --- 7: certified contraction implies geometric convergence ---------------------

#[test]
fn c07_certified_instance_converges_geometrically() {
    // Frozen from a seed search over tall Gaussian factors: 192x6 factors with
    // seeds 1 and 101 certify delta at hierarchy (6,6)/(3,2) around 0.283,
    // below 1/sqrt(3). The trace check degrades to monotone decrease when a
    // rebuilt instance certifies only below 0.9 (recorded fallback), and
    // fails outright above that.
    let a = gaussian_factor(192, 6, 1);
    let b = gaussian_factor(192, 6, 101);
    let op = MeasurementOperator::kronecker(vec![a, b]).unwrap();
    let cert_spec = HierarchySpec::new(vec![6, 6], vec![3, 2]).unwrap();
    let delta = hirip_constant(&op, &cert_spec).unwrap().delta;

    let spec = HierarchySpec::new(vec![6, 6], vec![1, 1]).unwrap();
    let (x, _) = sample_signal(&spec, 3100, SignalMagnitude::Gaussian);
    let y = op.apply(&x).unwrap();
    let opts = HihtpOptions { ground_truth: Some(x.clone()), ..Default::default() };
    let result = recover(&op, &y, &spec, &opts).unwrap();
    let errors = result.error_trace.expect("ground truth supplied");

    let floor = 1e-12;
    let mut prev = l2(&x); // starting error: the iterate starts at zero
    let mut decreasing = true;
    for &e in &errors {
        if prev > floor && e > floor && e >= prev {
            decreasing = false;
        }
        prev = e;
    }
    let final_error = errors.last().copied().unwrap_or(f64::NAN);

    let inv_sqrt3 = 1.0 / 3f64.sqrt();
    let (pass, branch) = if delta < inv_sqrt3 {
        (decreasing && final_error <= floor, "certified branch (delta < 1/sqrt(3))")
    } else if delta < 0.9 {
        (decreasing, "fallback branch (delta < 0.9, monotone only)")
    } else {
        (false, "instance no longer certifies below 0.9")
    };
    verdict(
        7,
        "certified contraction convergence",
        pass,
        &format!(
            "{branch}: delta = {delta:.4}, {} iterations, final error {final_error:.3e}",
            result.iterations_run
        ),
    );
}

// --- 9: certification cost model -------------------------------------------------

#[test]
fn c09_cost_model_predicts_scaling() {
    // Tiny support counts finish in microseconds, so each measurement loops
    // the certification many times and keeps the fastest of several runs.
    let reps = 200;
    let measure = |n: usize, seed: u64| -> f64 {
        let m = gaussian_factor(32, n, seed);
        let mut best = f64::MAX;
        for _ in 0..5 {
            let started = Instant::now();
            for _ in 0..reps {
                let r = rip_constant(&m, 3, RipKind::RipSquared).unwrap();
                std::hint::black_box(r.delta);
            }
            best = best.min(started.elapsed().as_secs_f64());
        }
        best
    };
    let sizes = [8usize, 10, 12];
    let measured: Vec<f64> = sizes.iter().map(|&n| measure(n, 900 + n as u64)).collect();
    let predicted: Vec<f64> = sizes
        .iter()
        .map(|&n| estimate_cert_cost(n, 3, 1, 32).unwrap().flop_estimate)
        .collect();
    let mut pass = true;
    let mut detail = String::new();
    for w in 0..sizes.len() - 1 {
        let measured_ratio = measured[w + 1] / measured[w];
        let predicted_ratio = predicted[w + 1] / predicted[w];
        let off = measured_ratio / predicted_ratio;
        pass &= (0.25..=4.0).contains(&off);
        detail.push_str(&format!(
            "n {}->{}: measured x{measured_ratio:.2} vs predicted x{predicted_ratio:.2}; ",
            sizes[w],
            sizes[w + 1]
        ));
    }
    verdict(9, "cost model scaling", pass, detail.trim_end_matches("; "));
}

// --- 10: CLI determinism across runs and thread counts ---------------------------

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hisparse")
}

fn run_cli(args: &[&str], config: Option<(&Path, &str)>, out: &Path, threads: &str) {
    std::fs::create_dir_all(out).unwrap();
    let mut cmd = Command::new(bin());
    cmd.args(args);
    if let Some((path, text)) = config {
        std::fs::write(path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.arg("--out").arg(out).arg("--threads").arg(threads);
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.code().is_some(),
        "command killed by signal: {:?}",
        output.status
    );
}

/// JSON comparison that ignores every `elapsed_ms` field.
fn normalized_json(path: &Path) -> serde_json::Value {
    fn strip(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(map) => {
                map.remove("elapsed_ms");
                for child in map.values_mut() {
                    strip(child);
                }
            }
            serde_json::Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    strip(&mut value);
    value
}

/// CSV comparison that drops any `elapsed_ms` column (always the last).
fn normalized_csv(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let mut kept = String::new();
    let mut drop_last_column = false;
    for line in text.lines() {
        if line.starts_with('#') {
            kept.push_str(line);
        } else if line.contains("elapsed_ms") {
            drop_last_column = true;
            kept.push_str(line.rsplit_once(',').map(|(head, _)| head).unwrap_or(line));
        } else if drop_last_column {
            kept.push_str(line.rsplit_once(',').map(|(head, _)| head).unwrap_or(line));
        } else {
            kept.push_str(line);
        }
        kept.push('\n');
    }
    kept
}

fn assert_same_outputs(dir_a: &Path, dir_b: &Path, what: &str) {
    let mut names: Vec<String> = std::fs::read_dir(dir_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty(), "{what}: no outputs to compare");
    for name in names {
        let (a, b) = (dir_a.join(&name), dir_b.join(&name));
        if name.ends_with(".json") {
            assert_eq!(normalized_json(&a), normalized_json(&b), "{what}: {name} differs");
        } else if name.ends_with(".csv") {
            assert_eq!(normalized_csv(&a), normalized_csv(&b), "{what}: {name} differs");
        } else {
            assert_eq!(
                std::fs::read(&a).unwrap(),
                std::fs::read(&b).unwrap(),
                "{what}: {name} differs"
            );
        }
    }
}

#[test]
fn c10_cli_outputs_are_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let base = root.path().to_path_buf();

    let certify_config = r#"{
        "mode": "hirip",
        "factors": [
            { "ensemble": { "kind": "gaussian", "rows": 6, "cols": 8, "seed": 11 } },
            { "ensemble": { "kind": "gaussian", "rows": 5, "cols": 8, "seed": 12 } }
        ],
        "hierarchy": { "block_counts": [8, 8], "sparsities": [2, 2] },
        "target_delta": 5.0
    }"#;
    let recover_config = r#"{
        "factors": [
            { "ensemble": { "kind": "gaussian", "rows": 20, "cols": 30, "seed": 21 } },
            { "ensemble": { "kind": "gaussian", "rows": 15, "cols": 25, "seed": 22 } }
        ],
        "hierarchy": { "block_counts": [30, 25], "sparsities": [2, 2] },
        "seed": 5,
        "signal": { "magnitude": "gaussian" }
    }"#;
    let phase_config = r#"{
        "hierarchy": { "block_counts": [10, 8], "sparsities": [2, 2] },
        "rows_outer": [6, 8],
        "rows_inner": [5],
        "trials": 8,
        "seed": 9,
        "noise_sigma": 0.001
    }"#;
    let convergence_config = r#"{
        "factors": [
            { "ensemble": { "kind": "gaussian", "rows": 48, "cols": 6, "seed": 31 } },
            { "ensemble": { "kind": "gaussian", "rows": 48, "cols": 6, "seed": 32 } }
        ],
        "hierarchy": { "block_counts": [6, 6], "sparsities": [1, 1] },
        "seed": 3
    }"#;

    struct Fixture {
        name: &'static str,
        args: Vec<&'static str>,
        config: Option<&'static str>,
    }
    let fixtures = [
        Fixture { name: "certify", args: vec!["certify"], config: Some(certify_config) },
        Fixture { name: "recover", args: vec!["recover"], config: Some(recover_config) },
        Fixture {
            name: "phase",
            args: vec!["phase-transition"],
            config: Some(phase_config),
        },
        Fixture {
            name: "convergence",
            args: vec!["convergence"],
            config: Some(convergence_config),
        },
        Fixture {
            name: "cost",
            args: vec![
                "estimate-cost",
                "--cols",
                "40",
                "--sparsity",
                "4",
                "--levels",
                "2",
                "--rows",
                "16",
            ],
            config: None,
        },
    ];

    for fixture in &fixtures {
        let config_path = base.join(format!("{}.json", fixture.name));
        let runs = [
            (base.join(format!("{}_t1_a", fixture.name)), "1"),
            (base.join(format!("{}_t1_b", fixture.name)), "1"),
            (base.join(format!("{}_t4", fixture.name)), "4"),
        ];
        for (out, threads) in &runs {
            run_cli(
                &fixture.args,
                fixture.config.map(|text| (config_path.as_path(), text)),
                out,
                threads,
            );
        }
        assert_same_outputs(&runs[0].0, &runs[1].0, fixture.name);
        assert_same_outputs(&runs[0].0, &runs[2].0, fixture.name);
    }
    verdict(
        10,
        "deterministic command-line outputs",
        true,
        "5 commands x 2 repeat runs x threads {1,4}: outputs identical up to timing fields",
    );
}
