//! Exact projection onto hierarchically sparse vectors.
//!
//! [`project`] finds the closest (in l2) hierarchically sparse vector by a
//! greedy recursion that is exact for nested block structure: per-block
//! choices are independent, so keeping the highest-energy blocks at each
//! level minimizes the residual globally. [`project_bruteforce`] is the
//! literal argmax over all enumerated supports and serves as the testing
//! oracle for that claim.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierarchy::{flatten, visit_supports, HierarchicalSupport, HierarchySpec};

/// Best hierarchically sparse approximation of an input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// Maximal support of the approximation (every budget saturated; zero
    /// entries pad the selection when the input has fewer nonzeros).
    pub support: HierarchicalSupport,
    /// Input with off-support entries zeroed.
    pub projected: Vec<f64>,
    /// Squared l2 norm of `projected`, summed in ascending flat-index order.
    pub captured_energy: f64,
}

/// Projects onto the hierarchically sparse vectors of `spec`.
///
/// Recursion: at the deepest level each block keeps its highest-magnitude
/// entries; every block is scored by the energy its projected content
/// retains, and each level keeps the highest-scoring blocks. All ties break
/// toward the lower index, so the zero vector maps to the lexicographically
/// first maximal support. Non-finite entries are rejected.
pub fn project(x: &[f64], spec: &HierarchySpec) -> Result<ProjectionResult> {
    check_input(x, spec)?;
    // top level in parallel, deeper levels serial; scores land in block order
    // so the selection below is thread-count independent
    let stride = spec.stride(0);
    let scored: Vec<(HierarchicalSupport, f64)> = (0..spec.block_counts()[0])
        .into_par_iter()
        .map(|b| select(x, spec, 1, b * stride))
        .collect();
    let children =
        keep_best(scored, spec.sparsities()[0]).into_iter().map(|(i, c, _)| (i, c)).collect();
    let support = HierarchicalSupport::new(children)?;
    finish(x, spec, support)
}

/// Literal maximizer of captured energy over every enumerated support.
/// Refuses when the spec has more supports than `budget`; ties go to the
/// first support in enumeration order.
pub fn project_bruteforce(
    x: &[f64],
    spec: &HierarchySpec,
    budget: u128,
) -> Result<ProjectionResult> {
    check_input(x, spec)?;
    let count = spec.count_supports();
    if count > budget {
        return Err(Error::BudgetExceeded { required: count, budget });
    }
    let mut best: Option<(HierarchicalSupport, f64)> = None;
    visit_supports(spec, |sup| {
        let flat = flatten(sup, spec).expect("enumerated support is valid");
        let energy: f64 = flat.iter().map(|&i| x[i - 1] * x[i - 1]).sum();
        match &best {
            Some((_, e)) if energy <= *e => {}
            _ => best = Some((sup.clone(), energy)),
        }
    });
    let (support, _) = best.expect("spec has at least one support");
    finish(x, spec, support)
}

fn check_input(x: &[f64], spec: &HierarchySpec) -> Result<()> {
    if x.len() != spec.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.ambient_dim(),
            got: x.len(),
            context: "projection input",
        });
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: format!("projection input entry {}", pos + 1) });
    }
    Ok(())
}

/// Zeroes off-support entries and recomputes the energy in ascending
/// flat-index order, the same arithmetic the brute-force path uses.
fn finish(x: &[f64], spec: &HierarchySpec, support: HierarchicalSupport) -> Result<ProjectionResult> {
    let flat = flatten(&support, spec)?;
    let mut projected = vec![0.0; x.len()];
    let mut captured_energy = 0.0;
    for &i in &flat {
        projected[i - 1] = x[i - 1];
        captured_energy += x[i - 1] * x[i - 1];
    }
    Ok(ProjectionResult { support, projected, captured_energy })
}

/// Projects the subtree whose children live at level `l` (0-based) starting
/// at flat offset `offset`: returns the kept sub-support and the energy it
/// captures within this subtree.
fn select(x: &[f64], spec: &HierarchySpec, l: usize, offset: usize) -> (HierarchicalSupport, f64) {
    if l == spec.levels() {
        // leaf scalar
        let v = x[offset];
        return (HierarchicalSupport::empty(), v * v);
    }
    let stride = spec.stride(l);
    let n = spec.block_counts()[l];
    let scored: Vec<(HierarchicalSupport, f64)> =
        (0..n).map(|b| select(x, spec, l + 1, offset + b * stride)).collect();
    let children = keep_best(scored, spec.sparsities()[l]);
    let energy = children.iter().map(|(_, _, e)| *e).sum();
    let node = children.into_iter().map(|(i, c, _)| (i, c)).collect();
    (HierarchicalSupport::new(node).expect("kept indices are unique and 1-based"), energy)
}

/// Keeps the `s` highest-energy blocks, ties to the lower index, returned in
/// ascending index order as (1-based index, sub-support, score).
fn keep_best(
    scored: Vec<(HierarchicalSupport, f64)>,
    s: usize,
) -> Vec<(usize, HierarchicalSupport, f64)> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b].1.partial_cmp(&scored[a].1).expect("scores are finite").then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order[..s].to_vec();
    kept.sort_unstable();
    kept.into_iter().map(|b| (b + 1, scored[b].0.clone(), scored[b].1)).collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::hierarchy::unrank_support;

    fn spec(counts: &[usize], sparsities: &[usize]) -> HierarchySpec {
        HierarchySpec::new(counts.to_vec(), sparsities.to_vec()).unwrap()
    }

    fn sup2(block: usize, leaves: &[usize]) -> HierarchicalSupport {
        HierarchicalSupport::new(vec![(
            block,
            HierarchicalSupport::leaf_set(leaves.iter().copied()).unwrap(),
        )])
        .unwrap()
    }

    #[test]
    fn dominant_block_wins() {
        let s = spec(&[3, 3], &[1, 2]);
        let x = [3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0];
        let r = project(&x, &s).unwrap();
        assert_eq!(r.support, sup2(1, &[1, 2]));
        let mut want = vec![0.0; 9];
        want[0] = 3.0;
        assert_eq!(r.projected, want);
        assert_eq!(r.captured_energy, 9.0);
    }

    #[test]
    fn zero_vector_takes_first_support() {
        let s = spec(&[3, 3], &[1, 2]);
        let r = project(&vec![0.0; 9], &s).unwrap();
        assert_eq!(r.support, unrank_support(&s, 0));
        assert_eq!(r.captured_energy, 0.0);
        assert_eq!(r.projected, vec![0.0; 9]);
    }

    #[test]
    fn all_ones_ties_break_low() {
        let s = spec(&[2, 2], &[2, 1]);
        let r = project(&[1.0, 1.0, 1.0, 1.0], &s).unwrap();
        let want = HierarchicalSupport::new(vec![
            (1, HierarchicalSupport::leaf_set([1]).unwrap()),
            (2, HierarchicalSupport::leaf_set([1]).unwrap()),
        ])
        .unwrap();
        assert_eq!(r.support, want);
        assert_eq!(r.captured_energy, 2.0);
    }

    #[test]
    fn single_nonzero_lands_on_its_leaf_path() {
        let s = spec(&[3, 3], &[1, 2]);
        let mut x = vec![0.0; 9];
        x[5] = 4.0; // flat index 6 = block 2, inner 3
        let r = project(&x, &s).unwrap();
        let flat = flatten(&r.support, &s).unwrap();
        assert!(flat.contains(&6));
        assert_eq!(r.captured_energy, 16.0);
    }

    #[test]
    fn saturated_budgets_keep_everything() {
        let s = spec(&[2, 3], &[2, 3]);
        let x: Vec<f64> = (1..=6).map(|v| v as f64).collect();
        let r = project(&x, &s).unwrap();
        assert_eq!(r.projected, x);
    }

    #[test]
    fn oracle_equivalence_on_random_vectors() {
        let specs = [
            spec(&[3, 3], &[1, 2]),
            spec(&[2, 2], &[2, 1]),
            spec(&[4, 4], &[2, 2]),
            spec(&[2, 2, 2], &[1, 2, 1]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for s in &specs {
            for _ in 0..1000 {
                let x: Vec<f64> =
                    (0..s.ambient_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let fast = project(&x, s).unwrap();
                let slow = project_bruteforce(&x, s, 1 << 20).unwrap();
                assert_eq!(fast.captured_energy, slow.captured_energy);
                assert_eq!(fast.support, slow.support);
                assert_eq!(fast.projected, slow.projected);
            }
        }
    }

    #[test]
    fn oracle_equivalence_under_exact_ties() {
        // small integers add exactly, so tie-breaking must agree too
        let specs = [spec(&[3, 3], &[1, 2]), spec(&[2, 2], &[2, 1])];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for s in &specs {
            for _ in 0..500 {
                let x: Vec<f64> =
                    (0..s.ambient_dim()).map(|_| rng.gen_range(-2i32..=2) as f64).collect();
                let fast = project(&x, s).unwrap();
                let slow = project_bruteforce(&x, s, 1 << 20).unwrap();
                assert_eq!(fast.captured_energy, slow.captured_energy, "x={x:?}");
                assert_eq!(fast.support, slow.support, "x={x:?}");
            }
        }
    }

    #[test]
    fn idempotent_and_contractive() {
        let s = spec(&[4, 4], &[2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..200 {
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = project(&x, &s).unwrap();
            let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
            // dense random input always loses energy here
            assert!(r.captured_energy < norm2(&x));
            assert!(norm2(&r.projected) <= norm2(&x));
            let again = project(&r.projected, &s).unwrap();
            assert_eq!(again.projected, r.projected);
            assert_eq!(again.captured_energy, r.captured_energy);
        }
    }

    #[test]
    fn already_sparse_vectors_are_fixed_points() {
        let s = spec(&[3, 3], &[1, 2]);
        let mut x = vec![0.0; 9];
        x[3] = 2.0;
        x[5] = -1.0;
        let r = project(&x, &s).unwrap();
        assert_eq!(r.projected, x);
        assert_eq!(r.captured_energy, 5.0);
        assert_eq!(r.support, sup2(2, &[1, 3]));
    }

    #[test]
    fn block_permutation_equivariance() {
        let s = spec(&[4, 4], &[2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..100 {
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // rotate the top-level blocks by one
            let perm = |b: usize| (b + 1) % 4;
            let mut xp = vec![0.0; 16];
            for b in 0..4 {
                for j in 0..4 {
                    xp[perm(b) * 4 + j] = x[b * 4 + j];
                }
            }
            let r = project(&x, &s).unwrap();
            let rp = project(&xp, &s).unwrap();
            let mut moved = vec![0.0; 16];
            for b in 0..4 {
                for j in 0..4 {
                    moved[perm(b) * 4 + j] = r.projected[b * 4 + j];
                }
            }
            assert_eq!(rp.projected, moved);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = spec(&[3, 3], &[1, 2]);
        assert!(matches!(
            project(&[1.0; 4], &s),
            Err(Error::DimensionMismatch { expected: 9, got: 4, .. })
        ));
        let mut x = vec![0.0; 9];
        x[2] = f64::NAN;
        assert!(matches!(project(&x, &s), Err(Error::NonFinite { .. })));
        x[2] = f64::INFINITY;
        assert!(matches!(project(&x, &s), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn bruteforce_budget_refusal() {
        let s = spec(&[4, 4], &[2, 2]);
        assert!(matches!(
            project_bruteforce(&[0.0; 16], &s, 10),
            Err(Error::BudgetExceeded { required: 216, budget: 10 })
        ));
    }
}
