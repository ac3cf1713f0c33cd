//! Experiment harness for hierarchical sparse recovery and certification.
//!
//! Five subcommands: `certify` measures or bounds restricted-isometry
//! constants, `recover` runs one recovery instance, `phase-transition` sweeps
//! a measurement grid, `convergence` traces per-iteration errors next to the
//! certified contraction constants, and `estimate-cost` prints the
//! certification cost model. Every output file embeds the normalized config
//! and the version string; with fixed seeds, outputs are byte-identical
//! across runs and thread counts (timing fields aside).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hisparse::certify::{
    certify_kron_power_with_budget, estimate_cert_cost, hirip_constant_with_budget,
    jokar_mehrmann_check_with_budget, rip_constant_with_budget, CostEstimate, RipKind, RipReport,
    DEFAULT_SUPPORT_BUDGET,
};
use hisparse::ensembles::{sample_matrix, sample_noise, sample_signal, MatrixKind, SignalMagnitude};
use hisparse::error::Error;
use hisparse::hierarchy::{flatten, HierarchySpec};
use hisparse::hihtp::{recover, HihtpOptions, RecoveryResult};
use hisparse::linop::{DenseMatrix, MeasurementOperator};

#[derive(Parser)]
#[command(name = "hisparse", version, about = "Hierarchically sparse recovery and certification")]
struct Cli {
    /// JSON experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing; default ".").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread count (default: all cores). Results never depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Maximum enumerated supports before refusing; overrides the config.
    #[arg(long, global = true)]
    budget: Option<u128>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure or bound a restricted-isometry constant; exit 0 iff certified.
    Certify,
    /// Recover one instance; exit 0 iff the success threshold is met.
    Recover,
    /// Empirical success rates over a grid of factor measurement counts.
    PhaseTransition,
    /// Per-iteration error/residual trace with certified constants.
    Convergence,
    /// Print the brute-force certification cost model.
    EstimateCost {
        /// Columns per factor.
        #[arg(long)]
        cols: usize,
        /// Sparsity per factor.
        #[arg(long)]
        sparsity: usize,
        /// Number of Kronecker factors.
        #[arg(long, default_value_t = 1)]
        levels: usize,
        /// Rows per factor (Gram formation cost).
        #[arg(long)]
        rows: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> hisparse::Result<u8> {
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    match &cli.command {
        Command::Certify => cmd_certify(cli, &out_dir),
        Command::Recover => cmd_recover(cli, &out_dir),
        Command::PhaseTransition => cmd_phase_transition(cli, &out_dir),
        Command::Convergence => cmd_convergence(cli, &out_dir),
        Command::EstimateCost { cols, sparsity, levels, rows } => {
            cmd_estimate_cost(*cols, *sparsity, *levels, *rows, &out_dir)
        }
    }
}

// --- shared plumbing --------------------------------------------------------

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn load_config<T: serde::de::DeserializeOwned>(cli: &Cli) -> hisparse::Result<T> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("this command needs --config <file>".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> hisparse::Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Io(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> hisparse::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Compact JSON for embedding a config into CSV comment lines.
fn config_line<T: Serialize>(config: &T) -> String {
    serde_json::to_string(config).expect("config serializes")
}

/// splitmix64 finalizer; the seed-derivation building block.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-trial seed from (base, grid cell, trial, object slot);
/// parallel scheduling never changes which seed a trial uses.
fn derive_seed(base: u64, cell: u64, trial: u64, slot: u64) -> u64 {
    mix(mix(mix(mix(base).wrapping_add(cell)).wrapping_add(trial)).wrapping_add(slot))
}

/// A matrix comes from a MAT1 file or a seeded ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixSource {
    File { path: PathBuf },
    Ensemble { ensemble: hisparse::ensembles::EnsembleSpec },
}

impl MatrixSource {
    fn load(&self) -> hisparse::Result<DenseMatrix> {
        match self {
            MatrixSource::File { path } => DenseMatrix::read_mat1(path),
            MatrixSource::Ensemble { ensemble } => Ok(sample_matrix(ensemble)),
        }
    }
}

fn build_operator(factors: &[MatrixSource]) -> hisparse::Result<MeasurementOperator> {
    let mats: Vec<DenseMatrix> = factors.iter().map(|f| f.load()).collect::<Result<_, _>>()?;
    if mats.len() == 1 {
        Ok(MeasurementOperator::dense(mats.into_iter().next().expect("one factor")))
    } else {
        MeasurementOperator::kronecker(mats)
    }
}

fn read_vector(path: &Path) -> hisparse::Result<Vec<f64>> {
    let m = DenseMatrix::read_mat1(path)?;
    if m.rows() != 1 && m.cols() != 1 {
        return Err(Error::InvalidSpec(format!(
            "{}: expected a vector, got {}x{}",
            path.display(),
            m.rows(),
            m.cols()
        )));
    }
    Ok(m.entries().to_vec())
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn joined(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptionsConfig {
    #[serde(default = "default_max_iterations")]
    max_iterations: usize,
    #[serde(default = "default_residual_tolerance")]
    residual_tolerance: f64,
    #[serde(default = "default_true")]
    support_stall_stop: bool,
}

fn default_max_iterations() -> usize {
    500
}

fn default_residual_tolerance() -> f64 {
    1e-10
}

fn default_true() -> bool {
    true
}

fn default_success_threshold() -> f64 {
    1e-6
}

fn default_magnitude() -> SignalMagnitude {
    SignalMagnitude::Gaussian
}

fn default_kind() -> MatrixKind {
    MatrixKind::Gaussian
}

impl Default for OptionsConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            residual_tolerance: default_residual_tolerance(),
            support_stall_stop: default_true(),
        }
    }
}

impl OptionsConfig {
    fn to_options(&self, ground_truth: Option<Vec<f64>>) -> HihtpOptions {
        HihtpOptions {
            max_iterations: self.max_iterations,
            residual_tolerance: self.residual_tolerance,
            support_stall_stop: self.support_stall_stop,
            record_history: false,
            ground_truth,
        }
    }
}

// --- certify ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum CertifyMode {
    #[serde(rename = "rip-squared")]
    RipSquared,
    #[serde(rename = "rip-alt")]
    RipAlt,
    #[serde(rename = "hirip")]
    Hirip,
    #[serde(rename = "kron-power")]
    KronPower,
    #[serde(rename = "sandwich")]
    Sandwich,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertifyConfig {
    mode: CertifyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<MatrixSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factors: Option<Vec<MatrixSource>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sparsity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hierarchy: Option<HierarchySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<u128>,
}

fn require<T>(v: Option<T>, what: &str, mode: &str) -> hisparse::Result<T> {
    v.ok_or_else(|| Error::InvalidSpec(format!("certify mode {mode} needs {what}")))
}

/// On a budget refusal, print the refusal and the cost model before passing
/// the error through (the caller exits 2).
fn note_refusal<T>(
    result: hisparse::Result<T>,
    cost: Option<CostEstimate>,
) -> hisparse::Result<T> {
    if let Err(Error::BudgetExceeded { required, budget }) = &result {
        eprintln!("refused: {required} supports exceed the budget of {budget}");
        if let Some(c) = cost {
            eprintln!("cost model: {}", c.formula);
        }
    }
    result
}

fn cmd_certify(cli: &Cli, out_dir: &Path) -> hisparse::Result<u8> {
    let cfg: CertifyConfig = load_config(cli)?;
    let budget = cli.budget.or(cfg.budget).unwrap_or(DEFAULT_SUPPORT_BUDGET);
    let mode_name = serde_json::to_value(cfg.mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .expect("mode serializes to a string");

    enum Outcome {
        Rip(RipReport),
        Sandwich(hisparse::certify::SandwichReport),
    }

    let outcome = match cfg.mode {
        CertifyMode::RipSquared | CertifyMode::RipAlt => {
            let kind = if cfg.mode == CertifyMode::RipSquared {
                RipKind::RipSquared
            } else {
                RipKind::RipAlt
            };
            let m = require(cfg.matrix.clone(), "a matrix", &mode_name)?.load()?;
            let s = require(cfg.sparsity, "a sparsity", &mode_name)?;
            let cost = estimate_cert_cost(m.cols(), s, 1, m.rows()).ok();
            Outcome::Rip(note_refusal(rip_constant_with_budget(&m, s, kind, budget), cost)?)
        }
        CertifyMode::Hirip => {
            let spec = require(cfg.hierarchy.clone(), "a hierarchy", &mode_name)?;
            let op = match (&cfg.factors, &cfg.matrix) {
                (Some(factors), None) => build_operator(factors)?,
                (None, Some(matrix)) => MeasurementOperator::dense(matrix.load()?),
                _ => {
                    return Err(Error::InvalidSpec(
                        "certify mode hirip needs either factors or a matrix".into(),
                    ))
                }
            };
            Outcome::Rip(note_refusal(hirip_constant_with_budget(&op, &spec, budget), None)?)
        }
        CertifyMode::KronPower => {
            let m = require(cfg.matrix.clone(), "a factor matrix", &mode_name)?.load()?;
            let s = require(cfg.sparsity, "a sparsity", &mode_name)?;
            let levels = require(cfg.levels, "a level count", &mode_name)?;
            let cost = estimate_cert_cost(m.cols(), s, levels, m.rows()).ok();
            Outcome::Rip(note_refusal(
                certify_kron_power_with_budget(&m, s, levels, budget),
                cost,
            )?)
        }
        CertifyMode::Sandwich => {
            let sources = require(cfg.factors.clone(), "factors", &mode_name)?;
            let k = require(cfg.sparsity, "a sparsity", &mode_name)?;
            let mats: Vec<DenseMatrix> =
                sources.iter().map(|f| f.load()).collect::<Result<_, _>>()?;
            Outcome::Sandwich(note_refusal(
                jokar_mehrmann_check_with_budget(&mats, k, budget),
                None,
            )?)
        }
    };

    let (report_value, certified) = match &outcome {
        Outcome::Rip(report) => {
            let certified = cfg.target_delta.map_or(true, |t| report.delta <= t);
            println!(
                "{mode_name}: delta = {} over {} supports ({})",
                report.delta, report.supports_checked, report.convention
            );
            if let Some(t) = cfg.target_delta {
                println!("target {t}: {}", if certified { "certified" } else { "not certified" });
            }
            (serde_json::to_value(report).expect("report serializes"), certified)
        }
        Outcome::Sandwich(report) => {
            println!(
                "sandwich: {} <= {} <= {} ({})",
                report.factor_max,
                report.kron_delta,
                report.product_bound,
                if report.holds { "holds" } else { "violated" }
            );
            (serde_json::to_value(report).expect("report serializes"), report.holds)
        }
    };

    write_json(
        &out_dir.join("certify.json"),
        &serde_json::json!({
            "version": VERSION,
            "config": cfg,
            "report": report_value,
            "certified": certified,
        }),
    )?;
    Ok(if certified { 0 } else { 1 })
}

// --- recover ------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SignalSource {
    File { path: PathBuf },
    Generated { magnitude: SignalMagnitude },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecoverConfig {
    factors: Vec<MatrixSource>,
    hierarchy: HierarchySpec,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    signal: Option<SignalSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    measurements: Option<PathBuf>,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default = "default_success_threshold")]
    success_threshold: f64,
    #[serde(default)]
    options: OptionsConfig,
}

fn cmd_recover(cli: &Cli, out_dir: &Path) -> hisparse::Result<u8> {
    let mut cfg: RecoverConfig = load_config(cli)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let op = build_operator(&cfg.factors)?;
    let spec = cfg.hierarchy.clone();

    // assemble measurements and (optionally) the ground truth
    let (y, truth) = match (&cfg.measurements, &cfg.signal) {
        (Some(path), signal) => {
            let y = read_vector(path)?;
            let truth = match signal {
                Some(SignalSource::File { path }) => Some(read_vector(path)?),
                Some(SignalSource::Generated { .. }) => {
                    return Err(Error::InvalidSpec(
                        "a generated signal cannot accompany measurements from a file; \
                         give the signal as a file if it is known"
                            .into(),
                    ))
                }
                None => None,
            };
            (y, truth)
        }
        (None, Some(source)) => {
            let x = match source {
                SignalSource::File { path } => read_vector(path)?,
                SignalSource::Generated { magnitude } => {
                    sample_signal(&spec, derive_seed(cfg.seed, 0, 0, 0), *magnitude).0
                }
            };
            let mut y = op.apply(&x)?;
            if cfg.noise_sigma > 0.0 {
                let e = sample_noise(y.len(), cfg.noise_sigma, derive_seed(cfg.seed, 0, 0, 1));
                for (yi, ei) in y.iter_mut().zip(&e) {
                    *yi += ei;
                }
            }
            (y, Some(x))
        }
        (None, None) => {
            return Err(Error::InvalidSpec(
                "recover needs measurements, a signal, or both".into(),
            ))
        }
    };

    let started = Instant::now();
    let result = recover(&op, &y, &spec, &cfg.options.to_options(truth.clone()))?;
    let elapsed_ms = started.elapsed().as_millis() as u64;

    let final_residual = result.residual_trace.last().copied().unwrap_or(f64::NAN);
    let (metric_name, metric) = match &truth {
        Some(x) => {
            let denom = l2(x);
            let err = l2_diff(&result.estimate, x);
            ("relative-error-to-ground-truth", if denom > 0.0 { err / denom } else { err })
        }
        None => {
            let denom = l2(&y);
            ("relative-residual", if denom > 0.0 { final_residual / denom } else { final_residual })
        }
    };
    let success = metric < cfg.success_threshold;

    let n = result.estimate.len();
    DenseMatrix::new(n, 1, result.estimate.clone())?
        .write_mat1(&out_dir.join("estimate.mat1"))?;
    write_json(
        &out_dir.join("support.json"),
        &serde_json::json!({
            "version": VERSION,
            "config": cfg,
            "support": result.final_support,
            "flat_indices": flatten(&result.final_support, &spec)?,
        }),
    )?;

    let mut csv = String::new();
    csv.push_str(&format!("# version: {VERSION}\n"));
    csv.push_str(&format!("# config: {}\n", config_line(&cfg)));
    csv.push_str(&format!("# success_threshold: {}\n", cfg.success_threshold));
    csv.push_str(&format!("# error_metric: {metric_name}\n"));
    csv.push_str(
        "seed,rows,cols,block_counts,sparsities,noise_sigma,success,relative_error,iterations,residual,elapsed_ms\n",
    );
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        cfg.seed,
        op.output_dim(),
        op.input_dim(),
        joined(spec.block_counts()),
        joined(spec.sparsities()),
        cfg.noise_sigma,
        success,
        metric,
        result.iterations_run,
        final_residual,
        elapsed_ms,
    ));
    write_text(&out_dir.join("trial.csv"), &csv)?;

    println!(
        "recover: success = {success}, {metric_name} = {metric}, iterations = {}, status = {}",
        result.iterations_run, result.status
    );
    Ok(if success { 0 } else { 1 })
}

// --- phase transition --------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseTransitionConfig {
    /// Two-level hierarchy fixing N, n, s, sigma.
    hierarchy: HierarchySpec,
    #[serde(default = "default_kind")]
    kind: MatrixKind,
    /// Row counts of the outer factor (N columns each).
    rows_outer: Vec<usize>,
    /// Row counts of the inner factor (n columns each).
    rows_inner: Vec<usize>,
    trials: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default = "default_success_threshold")]
    success_threshold: f64,
    #[serde(default = "default_magnitude")]
    magnitude: SignalMagnitude,
    #[serde(default)]
    options: OptionsConfig,
}

struct TrialOutcome {
    success: bool,
    relative_error: Option<f64>,
    iterations: Option<usize>,
    note: Option<String>,
}

fn cmd_phase_transition(cli: &Cli, out_dir: &Path) -> hisparse::Result<u8> {
    use rayon::prelude::*;

    let mut cfg: PhaseTransitionConfig = load_config(cli)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cfg.hierarchy.levels() != 2 {
        return Err(Error::InvalidSpec("phase-transition needs a two-level hierarchy".into()));
    }
    if cfg.trials == 0 || cfg.rows_outer.is_empty() || cfg.rows_inner.is_empty() {
        return Err(Error::InvalidSpec("empty grid or zero trials".into()));
    }
    let spec = cfg.hierarchy.clone();
    let (s, sigma) = (spec.sparsities()[0], spec.sparsities()[1]);

    let mut csv = String::new();
    csv.push_str(&format!("# version: {VERSION}\n"));
    csv.push_str(&format!("# config: {}\n", config_line(&cfg)));
    csv.push_str(&format!("# success_threshold: {}\n", cfg.success_threshold));
    csv.push_str("M,m,s,sigma,trials,successes,mean_error,mean_iters\n");

    let mut cell = 0u64;
    for &rows_outer in &cfg.rows_outer {
        for &rows_inner in &cfg.rows_inner {
            let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    run_grid_trial(&cfg, &spec, rows_outer, rows_inner, cell, t as u64)
                })
                .collect();
            for (t, o) in outcomes.iter().enumerate() {
                if let Some(note) = &o.note {
                    eprintln!("cell {cell} trial {t}: {note}");
                }
            }
            let successes = outcomes.iter().filter(|o| o.success).count();
            let errors: Vec<f64> = outcomes.iter().filter_map(|o| o.relative_error).collect();
            let iters: Vec<usize> = outcomes.iter().filter_map(|o| o.iterations).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let mean_error = mean(&errors);
            let mean_iters = mean(&iters.iter().map(|&i| i as f64).collect::<Vec<_>>());
            csv.push_str(&format!(
                "{rows_outer},{rows_inner},{s},{sigma},{},{successes},{mean_error},{mean_iters}\n",
                cfg.trials
            ));
            println!(
                "M={rows_outer} m={rows_inner}: {successes}/{} succeeded, mean error {mean_error}",
                cfg.trials
            );
            cell += 1;
        }
    }
    write_text(&out_dir.join("phase_transition.csv"), &csv)?;
    Ok(0)
}

fn run_grid_trial(
    cfg: &PhaseTransitionConfig,
    spec: &HierarchySpec,
    rows_outer: usize,
    rows_inner: usize,
    cell: u64,
    trial: u64,
) -> TrialOutcome {
    let fail = |note: String| TrialOutcome {
        success: false,
        relative_error: None,
        iterations: None,
        note: Some(note),
    };
    let (big_n, n) = (spec.block_counts()[0], spec.block_counts()[1]);
    let a_spec = match hisparse::ensembles::EnsembleSpec::new(
        cfg.kind,
        rows_outer,
        big_n,
        derive_seed(cfg.seed, cell, trial, 2),
    ) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    let b_spec = match hisparse::ensembles::EnsembleSpec::new(
        cfg.kind,
        rows_inner,
        n,
        derive_seed(cfg.seed, cell, trial, 3),
    ) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    let op = match MeasurementOperator::kronecker(vec![
        sample_matrix(&a_spec),
        sample_matrix(&b_spec),
    ]) {
        Ok(op) => op,
        Err(e) => return fail(e.to_string()),
    };
    let (x, _) = sample_signal(spec, derive_seed(cfg.seed, cell, trial, 0), cfg.magnitude);
    let mut y = match op.apply(&x) {
        Ok(y) => y,
        Err(e) => return fail(e.to_string()),
    };
    if cfg.noise_sigma > 0.0 {
        let e = sample_noise(y.len(), cfg.noise_sigma, derive_seed(cfg.seed, cell, trial, 1));
        for (yi, ei) in y.iter_mut().zip(&e) {
            *yi += ei;
        }
    }
    match recover(&op, &y, spec, &cfg.options.to_options(Some(x.clone()))) {
        Ok(result) => {
            let rel = l2_diff(&result.estimate, &x) / l2(&x);
            TrialOutcome {
                success: rel < cfg.success_threshold,
                relative_error: Some(rel),
                iterations: Some(result.iterations_run),
                note: None,
            }
        }
        Err(e) => fail(e.to_string()),
    }
}

// --- convergence ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvergenceConfig {
    /// Exactly two factors (outer, inner).
    factors: Vec<MatrixSource>,
    /// Two-level hierarchy (N, n), (s, sigma).
    hierarchy: HierarchySpec,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_magnitude")]
    magnitude: SignalMagnitude,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default)]
    options: OptionsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<u128>,
}

fn cmd_convergence(cli: &Cli, out_dir: &Path) -> hisparse::Result<u8> {
    let mut cfg: ConvergenceConfig = load_config(cli)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let budget = cli.budget.or(cfg.budget).unwrap_or(DEFAULT_SUPPORT_BUDGET);
    if cfg.hierarchy.levels() != 2 || cfg.factors.len() != 2 {
        return Err(Error::InvalidSpec(
            "convergence needs a two-level hierarchy and exactly two factors".into(),
        ));
    }
    let spec = cfg.hierarchy.clone();
    let (big_n, n) = (spec.block_counts()[0], spec.block_counts()[1]);
    let (s, sigma) = (spec.sparsities()[0], spec.sparsities()[1]);
    if 3 * s > big_n || 2 * sigma > n {
        return Err(Error::InvalidSpec(format!(
            "guarantee constants need 3s <= N and 2*sigma <= n; got s={s}, N={big_n}, \
             sigma={sigma}, n={n}"
        )));
    }
    let op = build_operator(&cfg.factors)?;

    // certify the product constant at the inflated sparsity the guarantee uses
    let cert_spec = HierarchySpec::two_level(big_n, n, 3 * s, 2 * sigma)?;
    let cert = note_refusal(hirip_constant_with_budget(&op, &cert_spec, budget), None)?;
    let delta = cert.delta;
    let (rho, rho_sqrt) = if delta < 1.0 {
        (
            Some(2.0 * delta / (1.0 - delta * delta)),
            Some((2.0 * delta * delta / (1.0 - delta * delta)).sqrt()),
        )
    } else {
        (None, None)
    };

    let (x, _) = sample_signal(&spec, derive_seed(cfg.seed, 0, 0, 0), cfg.magnitude);
    let mut y = op.apply(&x)?;
    let mut noise_norm = 0.0;
    if cfg.noise_sigma > 0.0 {
        let e = sample_noise(y.len(), cfg.noise_sigma, derive_seed(cfg.seed, 0, 0, 1));
        noise_norm = l2(&e);
        for (yi, ei) in y.iter_mut().zip(&e) {
            *yi += ei;
        }
    }
    let result = recover(&op, &y, &spec, &cfg.options.to_options(Some(x.clone())))?;
    let errors = result.error_trace.as_ref().expect("ground truth was supplied");

    let fmt_opt = |v: Option<f64>| v.map_or("none".to_string(), |v| v.to_string());
    let mut csv = String::new();
    csv.push_str(&format!("# version: {VERSION}\n"));
    csv.push_str(&format!("# config: {}\n", config_line(&cfg)));
    csv.push_str(&format!("# certified_delta: {delta}\n"));
    csv.push_str(&format!("# rho: {}\n", fmt_opt(rho)));
    csv.push_str(&format!("# rho_sqrt: {}\n", fmt_opt(rho_sqrt)));
    if cfg.noise_sigma > 0.0 && noise_norm > 0.0 {
        let tau = errors.last().copied().unwrap_or(f64::NAN) / noise_norm;
        csv.push_str(&format!("# empirical_tau: {tau}\n"));
    }
    csv.push_str("iteration,residual,error\n");
    for (k, (r, e)) in result.residual_trace.iter().zip(errors).enumerate() {
        csv.push_str(&format!("{},{r},{e}\n", k + 1));
    }
    write_text(&out_dir.join("convergence.csv"), &csv)?;

    println!(
        "convergence: certified delta = {delta}, rho = {}, rho_sqrt = {}, iterations = {}",
        fmt_opt(rho),
        fmt_opt(rho_sqrt),
        result.iterations_run
    );
    report_trace_summary(&result, errors);
    Ok(0)
}

fn report_trace_summary(result: &RecoveryResult, errors: &[f64]) {
    if let (Some(first), Some(last)) = (errors.first(), errors.last()) {
        println!(
            "error trace: {first} -> {last} over {} iterations ({})",
            result.iterations_run, result.status
        );
    }
}

// --- estimate-cost -------------------------------------------------------------

fn cmd_estimate_cost(
    cols: usize,
    sparsity: usize,
    levels: usize,
    rows: usize,
    out_dir: &Path,
) -> hisparse::Result<u8> {
    let estimate = estimate_cert_cost(cols, sparsity, levels, rows)?;
    println!("supports per factor: {}", estimate.support_count);
    println!("modeled flops: {:.3e}", estimate.flop_estimate);
    println!("{}", estimate.formula);
    write_json(
        &out_dir.join("cost.json"),
        &serde_json::json!({
            "version": VERSION,
            "config": { "cols": cols, "sparsity": sparsity, "levels": levels, "rows": rows },
            "estimate": estimate,
        }),
    )?;
    Ok(0)
}
