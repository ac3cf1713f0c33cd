//! Brute-force certification of restricted-isometry constants.
//!
//! A matrix acts near-isometrically on sparse vectors when every small column
//! subset is well conditioned. These routines measure that directly: they
//! enumerate all supports of the requested sparsity model, compute each
//! support's isometry defect, and report the exact maximum together with the
//! support attaining it. Enumeration is chunked across threads with a
//! deterministic tie rule (earliest support wins), so reports never depend on
//! scheduling. Composition rules bound Kronecker-product constants from
//! factor constants without enumerating the product.

use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{
    binomial, flatten, unrank_combination, unrank_support, visit_supports_range,
    HierarchicalSupport, HierarchySpec,
};
use crate::linop::{DenseMatrix, MeasurementOperator};

/// Default cap on enumerated supports; exceeding it refuses rather than
/// truncates, because a truncated maximum certifies nothing.
pub const DEFAULT_SUPPORT_BUDGET: u128 = 10_000_000;

/// Entry cap for precomputing a full Gram matrix (32 MB of doubles). Every
/// support's Gram is a slice of the full one, so precomputing once makes the
/// per-support cost independent of the row count; above the cap the scan
/// falls back to forming each support's Gram from extracted columns.
const GRAM_CACHE_LIMIT: usize = 4_000_000;

/// Which restricted-isometry constant a report states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RipKind {
    /// Squared-norm convention: the defect is the spectral norm of the
    /// support's Gram deviation `A_S^T A_S - I`.
    #[serde(rename = "rip-squared")]
    RipSquared,
    /// Non-squared convention: the defect is
    /// `max(sigma_max - 1, 1 - sigma_min)` over the support's column slice.
    #[serde(rename = "rip-alt")]
    RipAlt,
    /// Squared-norm convention restricted to hierarchical supports.
    #[serde(rename = "hirip")]
    Hirip,
}

impl RipKind {
    pub fn convention(self) -> &'static str {
        match self {
            RipKind::RipSquared | RipKind::Hirip => "squared-norm",
            RipKind::RipAlt => "non-squared-norm",
        }
    }
}

/// Sparsity model a constant was certified against.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SparsityModel {
    Flat(usize),
    Hierarchical(HierarchySpec),
}

/// Support attaining the certified constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ExtremalSupport {
    /// 1-based column indices.
    Flat(Vec<usize>),
    Hierarchical(HierarchicalSupport),
}

/// Certified restricted-isometry constant with its witness.
#[derive(Debug, Clone, Serialize)]
pub struct RipReport {
    pub kind: RipKind,
    pub convention: &'static str,
    pub sparsity: SparsityModel,
    /// The certified constant (for composition rules, a certified bound).
    pub delta: f64,
    /// First support in enumeration order attaining `delta`; for composed
    /// bounds, the factor's extremal support.
    pub extremal_support: ExtremalSupport,
    /// Exact number of supports enumerated.
    pub supports_checked: u128,
    pub elapsed_ms: u64,
    /// Measured factor constant underlying a composed Kronecker-power bound;
    /// absent for directly enumerated constants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_delta: Option<f64>,
}

/// Exact flat-sparsity constant of a dense matrix at the default budget.
pub fn rip_constant(matrix: &DenseMatrix, s: usize, kind: RipKind) -> Result<RipReport> {
    rip_constant_with_budget(matrix, s, kind, DEFAULT_SUPPORT_BUDGET)
}

/// Exact flat-sparsity constant: maximizes the per-support defect over all
/// `C(cols, s)` column subsets. `kind` selects the convention; use
/// [`hirip_constant`] for hierarchical supports.
pub fn rip_constant_with_budget(
    matrix: &DenseMatrix,
    s: usize,
    kind: RipKind,
    budget: u128,
) -> Result<RipReport> {
    if kind == RipKind::Hirip {
        return Err(Error::DomainError(
            "hierarchical constants need a hierarchy; use hirip_constant".into(),
        ));
    }
    if s == 0 || s > matrix.cols() {
        return Err(Error::DomainError(format!(
            "sparsity {s} outside [1, {}]",
            matrix.cols()
        )));
    }
    let count = binomial(matrix.cols(), s);
    if count > budget {
        return Err(Error::BudgetExceeded { required: count, budget });
    }
    let started = Instant::now();
    let n = matrix.cols();
    let gram = (n * n <= GRAM_CACHE_LIMIT).then(|| Gram::from_columns(matrix));
    let (delta, best_rank) = chunk_ranges(count)
        .into_par_iter()
        .map(|range| {
            let mut combo = Vec::with_capacity(s);
            unrank_combination(n, s, range.start, &mut combo);
            let mut best = (-1.0, u128::MAX);
            for rank in range.start..range.end {
                let defect = match (&gram, kind) {
                    (Some(g), RipKind::RipSquared) => g.squared_defect(&combo),
                    (Some(g), RipKind::RipAlt) => g.alt_defect(&combo),
                    (None, RipKind::RipSquared) => gram_deviation_norm_indexed(matrix, &combo),
                    (None, RipKind::RipAlt) => singular_defect(matrix, &combo),
                    (_, RipKind::Hirip) => unreachable!(),
                };
                best = better(best, (defect, rank));
                if !advance_combination(&mut combo, n) {
                    break;
                }
            }
            best
        })
        .reduce(|| (-1.0, u128::MAX), better);
    let mut witness = Vec::with_capacity(s);
    unrank_combination(n, s, best_rank, &mut witness);
    Ok(RipReport {
        kind,
        convention: kind.convention(),
        sparsity: SparsityModel::Flat(s),
        delta,
        extremal_support: ExtremalSupport::Flat(witness),
        supports_checked: count,
        elapsed_ms: started.elapsed().as_millis() as u64,
        factor_delta: None,
    })
}

/// Exact hierarchical constant of an operator at the default budget.
pub fn hirip_constant(op: &MeasurementOperator, spec: &HierarchySpec) -> Result<RipReport> {
    hirip_constant_with_budget(op, spec, DEFAULT_SUPPORT_BUDGET)
}

/// Exact hierarchical constant: maximizes the Gram-deviation norm over every
/// maximal hierarchical support of `spec`, extracting operator columns
/// matrix-free.
pub fn hirip_constant_with_budget(
    op: &MeasurementOperator,
    spec: &HierarchySpec,
    budget: u128,
) -> Result<RipReport> {
    if op.input_dim() != spec.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.ambient_dim(),
            got: op.input_dim(),
            context: "operator columns vs hierarchy",
        });
    }
    let count = spec.count_supports();
    if count > budget {
        return Err(Error::BudgetExceeded { required: count, budget });
    }
    let started = Instant::now();
    let gram = operator_gram(op);
    let (delta, best_rank) = chunk_ranges(count)
        .into_par_iter()
        .map(|range| {
            let mut best = (-1.0, u128::MAX);
            let mut rank = range.start;
            visit_supports_range(spec, range.clone(), |support| {
                let flat = flatten(support, spec).expect("enumerated support is valid");
                let defect = match &gram {
                    Some(g) => g.squared_defect(&flat),
                    None => {
                        let cols =
                            op.extract_columns(&flat).expect("flat indices are in range");
                        gram_deviation_norm(&cols)
                    }
                };
                best = better(best, (defect, rank));
                rank += 1;
            });
            best
        })
        .reduce(|| (-1.0, u128::MAX), better);
    Ok(RipReport {
        kind: RipKind::Hirip,
        convention: RipKind::Hirip.convention(),
        sparsity: SparsityModel::Hierarchical(spec.clone()),
        delta,
        extremal_support: ExtremalSupport::Hierarchical(unrank_support(spec, best_rank)),
        supports_checked: count,
        elapsed_ms: started.elapsed().as_millis() as u64,
        factor_delta: None,
    })
}

/// Composes per-factor constants into a bound for their Kronecker product:
/// `prod(1 + delta_i) - 1`. A single factor passes through unchanged.
pub fn hirip_bound_from_factors(factor_deltas: &[f64]) -> Result<f64> {
    if factor_deltas.is_empty() {
        return Err(Error::DomainError("no factor constants given".into()));
    }
    for &d in factor_deltas {
        if !d.is_finite() || !(0.0..1.0).contains(&d) {
            return Err(Error::DomainError(format!(
                "factor constant {d} outside [0, 1)"
            )));
        }
    }
    if factor_deltas.len() == 1 {
        return Ok(factor_deltas[0]);
    }
    Ok(factor_deltas.iter().fold(1.0, |acc, d| acc * (1.0 + d)) - 1.0)
}

/// Certifies the L-fold Kronecker power of one factor by enumeration of the
/// factor alone: measures `delta_s(factor)` and returns the composed bound
/// `(1 + delta_s)^L - 1` for the hierarchy with `L` levels of `factor.cols()`
/// blocks and sparsity `s`.
pub fn certify_kron_power(factor: &DenseMatrix, s: usize, levels: usize) -> Result<RipReport> {
    certify_kron_power_with_budget(factor, s, levels, DEFAULT_SUPPORT_BUDGET)
}

pub fn certify_kron_power_with_budget(
    factor: &DenseMatrix,
    s: usize,
    levels: usize,
    budget: u128,
) -> Result<RipReport> {
    if levels == 0 {
        return Err(Error::DomainError("Kronecker power needs at least one level".into()));
    }
    let started = Instant::now();
    let base = rip_constant_with_budget(factor, s, RipKind::RipSquared, budget)?;
    if base.delta >= 1.0 {
        return Err(Error::DomainError(format!(
            "factor constant {} is not below 1; the composed bound is vacuous",
            base.delta
        )));
    }
    let bound = (1.0 + base.delta).powi(levels as i32) - 1.0;
    let spec = HierarchySpec::new(vec![factor.cols(); levels], vec![s; levels])?;
    Ok(RipReport {
        kind: RipKind::Hirip,
        convention: RipKind::Hirip.convention(),
        sparsity: SparsityModel::Hierarchical(spec),
        delta: bound,
        extremal_support: base.extremal_support,
        supports_checked: base.supports_checked,
        elapsed_ms: started.elapsed().as_millis() as u64,
        factor_delta: Some(base.delta),
    })
}

/// Three sides of the Kronecker sandwich: factor maximum, product constant,
/// and composed product bound, all in the non-squared convention.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    /// `max_l` of the factor constants.
    pub factor_max: f64,
    /// Constant of the materialized Kronecker product.
    pub kron_delta: f64,
    /// `prod(1 + factor constants) - 1`.
    pub product_bound: f64,
    /// Whether `factor_max <= kron_delta <= product_bound` (1e-12 slack for
    /// roundoff).
    pub holds: bool,
}

/// Checks the two-sided Kronecker bound
/// `max_l defect(factor_l) <= defect(product) <= prod(1 + defect) - 1`
/// by materializing the product and enumerating all three constants in the
/// non-squared convention (the convention in which the sandwich is valid).
pub fn jokar_mehrmann_check(factors: &[DenseMatrix], k: usize) -> Result<SandwichReport> {
    jokar_mehrmann_check_with_budget(factors, k, DEFAULT_SUPPORT_BUDGET)
}

pub fn jokar_mehrmann_check_with_budget(
    factors: &[DenseMatrix],
    k: usize,
    budget: u128,
) -> Result<SandwichReport> {
    if factors.is_empty() {
        return Err(Error::DomainError("no factors given".into()));
    }
    let alt_deltas: Vec<f64> = factors
        .iter()
        .map(|f| rip_constant_with_budget(f, k, RipKind::RipAlt, budget).map(|r| r.delta))
        .collect::<Result<_>>()?;
    let factor_max = alt_deltas.iter().fold(0.0f64, |a, &d| a.max(d));
    let op = MeasurementOperator::kronecker(factors.to_vec())?;
    let kron = op.materialize()?;
    let kron_delta = rip_constant_with_budget(&kron, k, RipKind::RipAlt, budget)?.delta;
    let product_bound = alt_deltas.iter().fold(1.0, |acc, d| acc * (1.0 + d)) - 1.0;
    let holds =
        factor_max <= kron_delta + 1e-12 && kron_delta <= product_bound + 1e-12;
    Ok(SandwichReport { factor_max, kron_delta, product_bound, holds })
}

/// Predicted certification cost.
#[derive(Debug, Clone, Serialize)]
pub struct CostEstimate {
    /// Exact per-factor support count `C(n, s)`.
    pub support_count: u128,
    /// Modeled flops: `levels * C(n, s) * (s^3 + rows * s^2)`, covering the
    /// eigendecomposition and the Gram formation per support.
    pub flop_estimate: f64,
    /// Human-readable trace of the model, including the supports-only
    /// headline scaling `(n/s)^s`.
    pub formula: String,
}

/// Predicts the cost of brute-force certification at sparsity `s` for
/// `levels` factors of `rows x n` each.
pub fn estimate_cert_cost(n: usize, s: usize, levels: usize, rows: usize) -> Result<CostEstimate> {
    if s == 0 || s > n {
        return Err(Error::DomainError(format!("sparsity {s} outside [1, {n}]")));
    }
    if levels == 0 || rows == 0 {
        return Err(Error::DomainError("levels and rows must be positive".into()));
    }
    let support_count = binomial(n, s);
    let per_support = (s * s * s + rows * s * s) as f64;
    let flop_estimate = levels as f64 * support_count as f64 * per_support;
    let headline = (n as f64 / s as f64).powi(s as i32);
    let formula = format!(
        "levels * C(n,s) * (s^3 + rows*s^2) = {levels} * {support_count} * ({} + {}) \
         = {flop_estimate:.3e}; supports-only headline (n/s)^s = {headline:.3e}, \
         with cubic factor (n/s)^s * s^3 = {:.3e}",
        s * s * s,
        rows * s * s,
        headline * (s * s * s) as f64,
    );
    Ok(CostEstimate { support_count, flop_estimate, formula })
}

// --- internals ------------------------------------------------------------

/// Full Gram matrix of an operator's columns, precomputed once so the scan
/// reads each support's Gram as a slice.
struct Gram {
    n: usize,
    /// Row-major `n x n`, symmetric.
    entries: Vec<f64>,
}

impl Gram {
    fn from_columns(m: &DenseMatrix) -> Self {
        let n = m.cols();
        let mut entries = vec![0.0; n * n];
        for p in 0..n {
            for q in p..n {
                let g: f64 = (0..m.rows()).map(|r| m.get(r, p) * m.get(r, q)).sum();
                entries[p * n + q] = g;
                entries[q * n + p] = g;
            }
        }
        Gram { n, entries }
    }

    fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for p in 0..n {
            entries[p * n + p] = 1.0;
        }
        Gram { n, entries }
    }

    /// Gram of a Kronecker product is the Kronecker product of the Grams:
    /// `<a_i (x) b_j, a_i' (x) b_j'> = <a_i, a_i'> <b_j, b_j'>`.
    fn kron(&self, other: &Gram) -> Self {
        let (p, q) = (self.n, other.n);
        let n = p * q;
        let mut entries = vec![0.0; n * n];
        for i in 0..p {
            for ip in 0..p {
                let a = self.entries[i * p + ip];
                for j in 0..q {
                    for jp in 0..q {
                        entries[(i * q + j) * n + (ip * q + jp)] = a * other.entries[j * q + jp];
                    }
                }
            }
        }
        Gram { n, entries }
    }

    /// Spectral norm of `G_S - I` for the 1-based column subset `support`.
    fn squared_defect(&self, support: &[usize]) -> f64 {
        let k = support.len();
        let mut dev = DMatrix::<f64>::zeros(k, k);
        for (i, &p) in support.iter().enumerate() {
            for (j, &q) in support.iter().enumerate().skip(i) {
                let g = self.entries[(p - 1) * self.n + (q - 1)];
                let v = if i == j { g - 1.0 } else { g };
                dev[(i, j)] = v;
                dev[(j, i)] = v;
            }
        }
        spectral_norm_symmetric(dev)
    }

    /// Non-squared defect `max(sigma_max - 1, 1 - sigma_min)`; the singular
    /// values of the column slice are the square roots of `G_S` eigenvalues.
    fn alt_defect(&self, support: &[usize]) -> f64 {
        let k = support.len();
        let mut slice = DMatrix::<f64>::zeros(k, k);
        for (i, &p) in support.iter().enumerate() {
            for (j, &q) in support.iter().enumerate().skip(i) {
                let g = self.entries[(p - 1) * self.n + (q - 1)];
                slice[(i, j)] = g;
                slice[(j, i)] = g;
            }
        }
        let eigs = SymmetricEigen::new(slice).eigenvalues;
        let lmax = eigs.iter().fold(f64::MIN, |a, &l| a.max(l));
        let lmin = eigs.iter().fold(f64::MAX, |a, &l| a.min(l));
        let smax = lmax.max(0.0).sqrt();
        let smin = lmin.max(0.0).sqrt();
        (smax - 1.0).max(1.0 - smin)
    }
}

/// Gram of the operator's columns when small enough to cache; `None` above
/// [`GRAM_CACHE_LIMIT`]. Kronecker Grams compose from factor Grams without
/// touching product columns, and a flip is orthogonal, so its Gram is exact.
fn operator_gram(op: &MeasurementOperator) -> Option<Gram> {
    let n = op.input_dim();
    if n * n > GRAM_CACHE_LIMIT {
        return None;
    }
    match op {
        MeasurementOperator::Dense(m) => Some(Gram::from_columns(m)),
        MeasurementOperator::Kronecker(factors) => {
            let mut gram: Option<Gram> = None;
            for f in factors {
                let g = Gram::from_columns(f);
                gram = Some(match gram {
                    Some(acc) => acc.kron(&g),
                    None => g,
                });
            }
            gram
        }
        MeasurementOperator::Flip { .. } => Some(Gram::identity(n)),
    }
}

/// Larger defect wins; exact ties go to the earlier enumeration rank, which
/// keeps parallel reductions deterministic.
fn better(a: (f64, u128), b: (f64, u128)) -> (f64, u128) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Splits `0..count` into contiguous chunks sized for parallel scanning.
fn chunk_ranges(count: u128) -> Vec<Range<u128>> {
    let workers = rayon::current_num_threads().max(1) as u128;
    let chunk = (count / (workers * 8)).max(512);
    let mut ranges = Vec::new();
    let mut at = 0u128;
    while at < count {
        let end = (at + chunk).min(count);
        ranges.push(at..end);
        at = end;
    }
    ranges
}

/// Next lexicographic k-combination of 1..=n in place; false after the last.
fn advance_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for p in (0..k).rev() {
        if combo[p] < n - k + p + 1 {
            combo[p] += 1;
            for q in p + 1..k {
                combo[q] = combo[q - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Spectral norm of `C^T C - I` for an extracted column matrix.
fn gram_deviation_norm(cols: &DenseMatrix) -> f64 {
    let k = cols.cols();
    let mut dev = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let g: f64 = (0..cols.rows()).map(|r| cols.get(r, i) * cols.get(r, j)).sum();
            let v = if i == j { g - 1.0 } else { g };
            dev[(i, j)] = v;
            dev[(j, i)] = v;
        }
    }
    spectral_norm_symmetric(dev)
}

/// Same as [`gram_deviation_norm`] on the 1-based columns `combo` of `m`.
fn gram_deviation_norm_indexed(m: &DenseMatrix, combo: &[usize]) -> f64 {
    let k = combo.len();
    let mut dev = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let (ci, cj) = (combo[i] - 1, combo[j] - 1);
            let g: f64 = (0..m.rows()).map(|r| m.get(r, ci) * m.get(r, cj)).sum();
            let v = if i == j { g - 1.0 } else { g };
            dev[(i, j)] = v;
            dev[(j, i)] = v;
        }
    }
    spectral_norm_symmetric(dev)
}

fn spectral_norm_symmetric(dev: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(dev).eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()))
}

/// Non-squared defect `max(sigma_max - 1, 1 - sigma_min)` of the 1-based
/// columns `combo` of `m`, via singular values of the column slice.
fn singular_defect(m: &DenseMatrix, combo: &[usize]) -> f64 {
    let rows = m.rows();
    let k = combo.len();
    let mut slice = DMatrix::<f64>::zeros(rows, k);
    for (j, &c) in combo.iter().enumerate() {
        for r in 0..rows {
            slice[(r, j)] = m.get(r, c - 1);
        }
    }
    let sv = slice.singular_values();
    let smax = sv.iter().fold(f64::MIN, |a, &b| a.max(b));
    let smin = sv.iter().fold(f64::MAX, |a, &b| a.min(b));
    (smax - 1.0).max(1.0 - smin)
}
