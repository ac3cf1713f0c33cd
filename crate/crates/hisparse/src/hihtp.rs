//! HiHTP: hard-thresholding pursuit over hierarchical supports.
//!
//! Starting from zero, each iteration takes a gradient step toward the
//! measurements, projects the step onto the hierarchical sparsity model to
//! pick a candidate support, and then solves least squares restricted to that
//! support's columns. Iteration stops when the support repeats (the fit on it
//! is already optimal), the residual falls below tolerance, or the iteration
//! cap is hit.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::{flatten, HierarchicalSupport, HierarchySpec};
use crate::linop::{DenseMatrix, MeasurementOperator};
use crate::projection::project;

/// Knobs for [`recover`].
#[derive(Debug, Clone)]
pub struct HihtpOptions {
    /// Hard cap on support updates (default 500).
    pub max_iterations: usize,
    /// Stop once the measurement residual norm falls this low (default 1e-10).
    pub residual_tolerance: f64,
    /// Stop when the candidate support repeats (default true). The previous
    /// iterate is already the least-squares fit on that support, so repeating
    /// it cannot improve anything.
    pub support_stall_stop: bool,
    /// Keep every iterate in [`RecoveryResult::history`].
    pub record_history: bool,
    /// Known signal for error tracking; fills [`RecoveryResult::error_trace`].
    pub ground_truth: Option<Vec<f64>>,
}

impl Default for HihtpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            residual_tolerance: 1e-10,
            support_stall_stop: true,
            record_history: false,
            ground_truth: None,
        }
    }
}

/// Why [`recover`] stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryStatus {
    SupportStalled,
    ResidualConverged,
    MaxIterations,
}

impl std::fmt::Display for RecoveryStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RecoveryStatus::SupportStalled => "support-stalled",
            RecoveryStatus::ResidualConverged => "residual-converged",
            RecoveryStatus::MaxIterations => "max-iterations",
        };
        f.write_str(s)
    }
}

/// Outcome of a [`recover`] run. `iterations_run` counts estimate updates, so
/// `residual_trace.len() == iterations_run` always holds.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    /// Final iterate; hierarchically sparse with support inside `final_support`.
    pub estimate: Vec<f64>,
    pub final_support: HierarchicalSupport,
    pub iterations_run: usize,
    /// Measurement residual norm after each update.
    pub residual_trace: Vec<f64>,
    /// l2 distance to the ground truth after each update, when one was given.
    pub error_trace: Option<Vec<f64>>,
    /// Every iterate, when requested via [`HihtpOptions::record_history`].
    pub history: Option<Vec<Vec<f64>>>,
    pub status: RecoveryStatus,
}

/// Restricted least-squares solution with rank diagnostics.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// Minimum-norm minimizer of the residual.
    pub coefficients: Vec<f64>,
    /// Numerical rank of the column matrix.
    pub rank: usize,
    /// True when rank < number of columns; the solution is then the smallest
    /// of infinitely many minimizers.
    pub rank_deficient: bool,
}

/// Recovers a hierarchically sparse vector from `y = op(x)`.
///
/// Iteration `k`: gradient step `g = x + op^T (y - op(x))`, candidate support
/// `project(g, spec)`, then `x` becomes the minimum-norm least-squares fit of
/// `y` on that support's columns.
pub fn recover(
    op: &MeasurementOperator,
    y: &[f64],
    spec: &HierarchySpec,
    opts: &HihtpOptions,
) -> Result<RecoveryResult> {
    if y.len() != op.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.output_dim(),
            got: y.len(),
            context: "measurement vector",
        });
    }
    if op.input_dim() != spec.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.ambient_dim(),
            got: op.input_dim(),
            context: "operator input vs hierarchy",
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "measurement vector".into() });
    }
    if opts.max_iterations == 0 {
        return Err(Error::InvalidSpec("max_iterations must be at least 1".into()));
    }
    if !(opts.residual_tolerance >= 0.0) {
        return Err(Error::InvalidSpec(format!(
            "residual_tolerance must be nonnegative, got {}",
            opts.residual_tolerance
        )));
    }
    if let Some(truth) = &opts.ground_truth {
        if truth.len() != spec.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.ambient_dim(),
                got: truth.len(),
                context: "ground truth",
            });
        }
    }

    let n = spec.ambient_dim();
    let mut x = vec![0.0; n];
    let mut prev_support: Option<HierarchicalSupport> = None;
    let mut final_support = HierarchicalSupport::empty();
    let mut residual_trace = Vec::new();
    let mut error_trace = opts.ground_truth.as_ref().map(|_| Vec::new());
    let mut history = opts.record_history.then(Vec::new);
    let mut iterations_run = 0;
    let mut status = RecoveryStatus::MaxIterations;

    for k in 1..=opts.max_iterations {
        let ax = op.apply(&x)?;
        let r: Vec<f64> = y.iter().zip(&ax).map(|(a, b)| a - b).collect();
        let atr = op.adjoint_apply(&r)?;
        let g: Vec<f64> = x.iter().zip(&atr).map(|(a, b)| a + b).collect();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("gradient step at iteration {k}") });
        }
        let support = project(&g, spec)?.support;
        if opts.support_stall_stop && prev_support.as_ref() == Some(&support) {
            status = RecoveryStatus::SupportStalled;
            break;
        }
        let flat = flatten(&support, spec)?;
        let cols = op.extract_columns(&flat)?;
        let ls = restricted_least_squares(&cols, y)?;
        x = vec![0.0; n];
        for (&i, &c) in flat.iter().zip(&ls.coefficients) {
            x[i - 1] = c;
        }
        iterations_run = k;
        final_support = support.clone();
        prev_support = Some(support);

        let ax = op.apply(&x)?;
        let residual = l2_diff(y, &ax);
        residual_trace.push(residual);
        if let (Some(trace), Some(truth)) = (error_trace.as_mut(), opts.ground_truth.as_ref()) {
            trace.push(l2_diff(&x, truth));
        }
        if let Some(h) = history.as_mut() {
            h.push(x.clone());
        }
        if residual <= opts.residual_tolerance {
            status = RecoveryStatus::ResidualConverged;
            break;
        }
    }

    Ok(RecoveryResult {
        estimate: x,
        final_support,
        iterations_run,
        residual_trace,
        error_trace,
        history,
        status,
    })
}

/// Minimum-norm least-squares solve of `columns * c = y` by singular value
/// decomposition; small singular values are truncated at a scaled-epsilon
/// threshold, which also defines the reported rank.
pub fn restricted_least_squares(columns: &DenseMatrix, y: &[f64]) -> Result<LeastSquares> {
    if y.len() != columns.rows() {
        return Err(Error::DimensionMismatch {
            expected: columns.rows(),
            got: y.len(),
            context: "least-squares right-hand side",
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "least-squares right-hand side".into() });
    }
    let m = DMatrix::from_row_slice(columns.rows(), columns.cols(), columns.entries());
    let b = DVector::from_column_slice(y);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let eps = smax * columns.rows().max(columns.cols()) as f64 * f64::EPSILON;
    let rank = svd.rank(eps);
    let sol = svd
        .solve(&b, eps)
        .map_err(|e| Error::DomainError(format!("least-squares solve: {e}")))?;
    Ok(LeastSquares {
        coefficients: sol.iter().copied().collect(),
        rank,
        rank_deficient: rank < columns.cols(),
    })
}

/// Factor-isometry threshold of the recovery guarantee: the largest per-factor
/// constant for which the combined product constant stays at or below 1/sqrt(3).
pub fn guarantee_threshold() -> f64 {
    ((3f64.sqrt() + 1.0) / 3f64.sqrt()).sqrt() - 1.0
}

/// Convergence guarantee check for a two-factor Kronecker measurement.
#[derive(Debug, Clone, Serialize)]
pub struct GuaranteeReport {
    /// Isometry constant of the outer factor at three times its sparsity.
    pub delta_a: f64,
    /// Isometry constant of the inner factor at twice its sparsity.
    pub delta_b: f64,
    /// Product-operator constant implied by the factors:
    /// `delta_a + delta_b + delta_a * delta_b`.
    pub combined_delta: f64,
    /// Displayed contraction factor `2 d / (1 - d^2)` of the combined
    /// constant `d`; only meaningful as a rate when it is below 1.
    pub rho: f64,
    /// Square-rooted variant `sqrt(2 d^2 / (1 - d^2))`, which drops below 1
    /// exactly when `d < 1/sqrt(3)`; `None` when `d >= 1`.
    pub rho_sqrt: Option<f64>,
    /// True when both factor constants are at most [`guarantee_threshold`]
    /// and the combined constant is below `1/sqrt(3)`.
    pub condition_met: bool,
}

/// Evaluates the two-factor convergence condition. Inputs must lie in [0, 1).
pub fn check_guarantee(delta_a: f64, delta_b: f64) -> Result<GuaranteeReport> {
    for (name, d) in [("first", delta_a), ("second", delta_b)] {
        if !d.is_finite() || !(0.0..1.0).contains(&d) {
            return Err(Error::DomainError(format!(
                "{name} isometry constant {d} outside [0, 1)"
            )));
        }
    }
    let combined = delta_a + delta_b + delta_a * delta_b;
    let rho = 2.0 * combined / (1.0 - combined * combined);
    let rho_sqrt = (combined < 1.0)
        .then(|| (2.0 * combined * combined / (1.0 - combined * combined)).sqrt());
    let threshold = guarantee_threshold();
    let condition_met =
        delta_a <= threshold && delta_b <= threshold && combined < 1.0 / 3f64.sqrt();
    Ok(GuaranteeReport {
        delta_a,
        delta_b,
        combined_delta: combined,
        rho,
        rho_sqrt,
        condition_met,
    })
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
