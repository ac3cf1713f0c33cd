//! Multi-level hierarchical sparsity structure.
//!
//! A signal of length `n_1 * n_2 * ... * n_L` is viewed as `n_1` blocks, each
//! of which splits into `n_2` blocks, and so on. A hierarchical support keeps
//! at most `s_l` children active at every node of level `l`. All indices in
//! this module are 1-based, matching the JSON and file interfaces; the first
//! level is the slowest-varying (most significant) flat-index digit.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Binomial coefficient C(n, k), saturating at `u128::MAX` on overflow.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - k + i + 1) is always divisible by (i + 1) here
        match acc.checked_mul((n - k + i + 1) as u128) {
            Some(v) => acc = v / (i + 1) as u128,
            None => return u128::MAX,
        }
    }
    acc
}

/// Level structure of a hierarchically sparse signal model: per-level block
/// counts `n_1..n_L` and sparsity budgets `s_1..s_L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HierarchySpec {
    block_counts: Vec<usize>,
    sparsities: Vec<usize>,
}

impl HierarchySpec {
    pub fn new(block_counts: Vec<usize>, sparsities: Vec<usize>) -> Result<Self> {
        if block_counts.is_empty() {
            return Err(Error::InvalidSpec("at least one level required".into()));
        }
        if block_counts.len() != sparsities.len() {
            return Err(Error::InvalidSpec(format!(
                "{} block counts vs {} sparsities",
                block_counts.len(),
                sparsities.len()
            )));
        }
        for (l, (&n, &s)) in block_counts.iter().zip(&sparsities).enumerate() {
            if n == 0 || s == 0 || s > n {
                return Err(Error::InvalidSpec(format!(
                    "level {}: need 1 <= s <= n, got s={s}, n={n}",
                    l + 1
                )));
            }
        }
        Ok(Self { block_counts, sparsities })
    }

    /// Two-level convenience constructor: `N` blocks of length `n`, at most
    /// `s` active blocks with at most `sigma` entries each.
    pub fn two_level(big_n: usize, n: usize, s: usize, sigma: usize) -> Result<Self> {
        Self::new(vec![big_n, n], vec![s, sigma])
    }

    pub fn levels(&self) -> usize {
        self.block_counts.len()
    }

    pub fn block_counts(&self) -> &[usize] {
        &self.block_counts
    }

    pub fn sparsities(&self) -> &[usize] {
        &self.sparsities
    }

    /// Product of all block counts: the flat signal length.
    pub fn ambient_dim(&self) -> usize {
        self.block_counts.iter().product()
    }

    /// Product of all sparsity budgets: the leaf count of a maximal support.
    pub fn total_sparsity(&self) -> usize {
        self.sparsities.iter().product()
    }

    /// Flat-index stride of level `l` (0-based): product of block counts of
    /// all deeper levels.
    pub(crate) fn stride(&self, l: usize) -> usize {
        self.block_counts[l + 1..].iter().product()
    }

    /// Sub-spec covering levels `l..L` (0-based `l`).
    fn tail(&self, l: usize) -> HierarchySpec {
        HierarchySpec {
            block_counts: self.block_counts[l..].to_vec(),
            sparsities: self.sparsities[l..].to_vec(),
        }
    }

    /// Number of maximal hierarchical supports, saturating at `u128::MAX`.
    /// Use [`HierarchySpec::count_supports_checked`] to detect saturation.
    pub fn count_supports(&self) -> u128 {
        self.count_supports_checked().unwrap_or(u128::MAX)
    }

    /// Exact maximal-support count, or `None` if it overflows `u128`.
    pub fn count_supports_checked(&self) -> Option<u128> {
        let mut count: u128 = 1;
        for l in (0..self.levels()).rev() {
            let combs = binomial(self.block_counts[l], self.sparsities[l]);
            if combs == u128::MAX {
                return None;
            }
            let mut pow: u128 = 1;
            for _ in 0..self.sparsities[l] {
                pow = pow.checked_mul(count)?;
            }
            count = combs.checked_mul(pow)?;
        }
        Some(count)
    }
}

impl<'de> Deserialize<'de> for HierarchySpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            block_counts: Vec<usize>,
            sparsities: Vec<usize>,
        }
        let raw = Raw::deserialize(deserializer)?;
        HierarchySpec::new(raw.block_counts, raw.sparsities).map_err(serde::de::Error::custom)
    }
}

/// Nested set of active indices. Each node maps a 1-based child index to the
/// support of that child's subtree; leaves are empty nestings.
///
/// Serializes to nested JSON objects with stringified indices:
/// `{"1": {"1": {}, "3": {}}}` means block 1 is active with inner indices
/// 1 and 3.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HierarchicalSupport {
    /// Sorted by child index, indices unique.
    children: Vec<(usize, HierarchicalSupport)>,
}

impl HierarchicalSupport {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a node from child entries; entries are sorted by index and
    /// duplicates are rejected.
    pub fn new(mut children: Vec<(usize, HierarchicalSupport)>) -> Result<Self> {
        children.sort_by_key(|(i, _)| *i);
        for w in children.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidSupport(format!("duplicate child index {}", w[0].0)));
            }
        }
        if children.iter().any(|(i, _)| *i == 0) {
            return Err(Error::InvalidSupport("indices are 1-based; got 0".into()));
        }
        Ok(Self { children })
    }

    /// Leaf-level node with the given active indices.
    pub fn leaf_set<I: IntoIterator<Item = usize>>(indices: I) -> Result<Self> {
        Self::new(indices.into_iter().map(|i| (i, Self::empty())).collect())
    }

    pub fn children(&self) -> &[(usize, HierarchicalSupport)] {
        &self.children
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    /// Depth of the deepest active path (0 for an empty support).
    pub fn max_depth(&self) -> usize {
        self.children
            .iter()
            .map(|(_, c)| 1 + c.max_depth())
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for HierarchicalSupport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (i, c)) in self.children.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{i}: {c}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for HierarchicalSupport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.children.len()))?;
        for (i, child) in &self.children {
            map.serialize_entry(&i.to_string(), child)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for HierarchicalSupport {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct SupportVisitor;

        impl<'de> Visitor<'de> for SupportVisitor {
            type Value = HierarchicalSupport;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nested map of 1-based indices")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut entries = BTreeMap::new();
                while let Some((key, value)) =
                    access.next_entry::<String, HierarchicalSupport>()?
                {
                    let idx: usize = key
                        .parse()
                        .map_err(|_| serde::de::Error::custom(format!("bad index key {key:?}")))?;
                    if entries.insert(idx, value).is_some() {
                        return Err(serde::de::Error::custom(format!("duplicate index {idx}")));
                    }
                }
                HierarchicalSupport::new(entries.into_iter().collect())
                    .map_err(serde::de::Error::custom)
            }
        }

        deserializer.deserialize_map(SupportVisitor)
    }
}

/// True iff every node keeps at most the level's sparsity budget of children
/// and all indices lie within the level's block count.
///
/// Returns an error when the support nests deeper than the spec has levels.
pub fn validate_support(support: &HierarchicalSupport, spec: &HierarchySpec) -> Result<bool> {
    let depth = support.max_depth();
    if depth > spec.levels() {
        return Err(Error::LevelMismatch { spec_levels: spec.levels(), support_depth: depth });
    }
    fn check(node: &HierarchicalSupport, spec: &HierarchySpec, l: usize) -> bool {
        if node.children.is_empty() {
            return true;
        }
        if node.children.len() > spec.sparsities[l] {
            return false;
        }
        node.children
            .iter()
            .all(|(i, c)| *i >= 1 && *i <= spec.block_counts[l] && check(c, spec, l + 1))
    }
    Ok(check(support, spec, 0))
}

/// Maps a support to its sorted 1-based flat indices. The leaf at path
/// `(i_1, .., i_L)` lands on `sum_l (i_l - 1) * prod_{k>l} n_k + 1`.
pub fn flatten(support: &HierarchicalSupport, spec: &HierarchySpec) -> Result<Vec<usize>> {
    if !validate_support(support, spec)? {
        return Err(Error::InvalidSupport(format!("{support} violates {spec:?}")));
    }
    let mut out = Vec::new();
    fn walk(
        node: &HierarchicalSupport,
        spec: &HierarchySpec,
        l: usize,
        offset: usize,
        out: &mut Vec<usize>,
    ) {
        for (i, child) in &node.children {
            let base = offset + (i - 1) * spec.stride(l);
            if l + 1 == spec.levels() {
                out.push(base + 1);
            } else {
                walk(child, spec, l + 1, base, out);
            }
        }
    }
    walk(support, spec, 0, 0, &mut out);
    Ok(out)
}

/// Rebuilds a support from sorted or unsorted 1-based flat indices.
/// Fails if any index is out of range or the result violates the spec.
pub fn from_flat_indices(spec: &HierarchySpec, flat: &[usize]) -> Result<HierarchicalSupport> {
    let dim = spec.ambient_dim();
    let mut root = HierarchicalSupport::empty();
    for &f in flat {
        if f == 0 || f > dim {
            return Err(Error::InvalidSupport(format!(
                "flat index {f} outside [1, {dim}]"
            )));
        }
        let mut rem = f - 1;
        let mut node = &mut root;
        for l in 0..spec.levels() {
            let stride = spec.stride(l);
            let idx = rem / stride + 1;
            rem %= stride;
            let pos = match node.children.binary_search_by_key(&idx, |(i, _)| *i) {
                Ok(p) => p,
                Err(p) => {
                    node.children.insert(p, (idx, HierarchicalSupport::empty()));
                    p
                }
            };
            node = &mut node.children[pos].1;
        }
    }
    if !validate_support(&root, spec)? {
        return Err(Error::InvalidSupport(
            "flat indices do not form a hierarchical support".into(),
        ));
    }
    Ok(root)
}

/// Closed-form support count, see [`HierarchySpec::count_supports`].
pub fn count_supports(spec: &HierarchySpec) -> u128 {
    spec.count_supports()
}

// --- enumeration ---------------------------------------------------------

/// Lexicographic rank -> k-combination of [n] (1-based ascending).
pub(crate) fn unrank_combination(n: usize, k: usize, mut rank: u128, out: &mut Vec<usize>) {
    out.clear();
    let mut prev = 0usize;
    for p in 0..k {
        let mut v = prev + 1;
        loop {
            let block = binomial(n - v, k - p - 1);
            if rank < block {
                break;
            }
            rank -= block;
            v += 1;
        }
        out.push(v);
        prev = v;
    }
}

/// Builds the maximal support of the given lexicographic rank. Rank 0 is the
/// support activating indices `1..=s_l` at every node; ranks are ordered by
/// the nested index tuples (root combination first, then each child subtree
/// left to right).
///
/// Requires `rank < spec.count_supports()` and an overflow-free count.
pub fn unrank_support(spec: &HierarchySpec, rank: u128) -> HierarchicalSupport {
    let total = spec
        .count_supports_checked()
        .expect("support count overflows u128; cannot unrank");
    assert!(rank < total, "rank {rank} out of range (count {total})");
    build(spec, 0, rank)
}

fn build(spec: &HierarchySpec, l: usize, rank: u128) -> HierarchicalSupport {
    let s = spec.sparsities[l];
    let sub_count = if l + 1 < spec.levels() {
        spec.tail(l + 1).count_supports()
    } else {
        1
    };
    // rank = combo_rank * sub_count^s + child digits, child 1 most significant
    let pow = sub_count.pow(s as u32);
    let combo_rank = rank / pow;
    let mut child_digits = rank % pow;
    let mut indices = Vec::with_capacity(s);
    unrank_combination(spec.block_counts[l], s, combo_rank, &mut indices);
    let mut children = Vec::with_capacity(s);
    for (p, idx) in indices.into_iter().enumerate() {
        let digit_pow = sub_count.pow((s - p - 1) as u32);
        let child_rank = child_digits / digit_pow;
        child_digits %= digit_pow;
        let sub = if l + 1 < spec.levels() {
            build(spec, l + 1, child_rank)
        } else {
            HierarchicalSupport::empty()
        };
        children.push((idx, sub));
    }
    HierarchicalSupport { children }
}

/// Streaming enumeration of all maximal supports in lexicographic order.
/// Refuses (naming the count) when the spec has more supports than `budget`.
pub fn enumerate_supports(spec: &HierarchySpec, budget: u128) -> Result<SupportIter> {
    let count = spec.count_supports();
    if count > budget {
        return Err(Error::BudgetExceeded { required: count, budget });
    }
    Ok(SupportIter { spec: spec.clone(), range: 0..count })
}

/// Enumeration restricted to a contiguous rank range; the building block for
/// deterministic parallel partitioning.
pub fn enumerate_supports_range(spec: &HierarchySpec, range: Range<u128>) -> SupportIter {
    SupportIter { spec: spec.clone(), range }
}

/// Iterator over maximal supports by rank. Each item is built by unranking;
/// use [`visit_supports_range`] for allocation-free bulk scans.
#[derive(Debug)]
pub struct SupportIter {
    spec: HierarchySpec,
    range: Range<u128>,
}

impl Iterator for SupportIter {
    type Item = HierarchicalSupport;

    fn next(&mut self) -> Option<Self::Item> {
        if self.range.start >= self.range.end {
            return None;
        }
        let s = unrank_support(&self.spec, self.range.start);
        self.range.start += 1;
        Some(s)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.range.end - self.range.start).min(usize::MAX as u128) as usize;
        (n, Some(n))
    }
}

/// Advances `node` to the lexicographically next state at its level, keeping
/// the maximal shape. Returns false (and resets to first) after the last.
fn advance(node: &mut HierarchicalSupport, spec: &HierarchySpec, l: usize) -> bool {
    let s = spec.sparsities[l];
    let n = spec.block_counts[l];
    if l + 1 < spec.levels() {
        // children are less significant than this node's combination;
        // the last child is the least significant digit overall
        for p in (0..s).rev() {
            if advance(&mut node.children[p].1, spec, l + 1) {
                return true;
            }
        }
    }
    // all subtrees wrapped; advance this node's index combination
    for p in (0..s).rev() {
        if node.children[p].0 < n - s + p + 1 {
            node.children[p].0 += 1;
            for q in p + 1..s {
                node.children[q].0 = node.children[q - 1].0 + 1;
            }
            return true;
        }
    }
    for (p, entry) in node.children.iter_mut().enumerate() {
        entry.0 = p + 1;
    }
    false
}

/// Calls `f` for every maximal support with rank in `start..end`, reusing one
/// in-place odometer state (no per-item allocation).
pub fn visit_supports_range<F: FnMut(&HierarchicalSupport)>(
    spec: &HierarchySpec,
    range: Range<u128>,
    mut f: F,
) {
    if range.start >= range.end {
        return;
    }
    let mut state = unrank_support(spec, range.start);
    f(&state);
    let mut rank = range.start + 1;
    while rank < range.end {
        let advanced = advance(&mut state, spec, 0);
        debug_assert!(advanced, "odometer wrapped before end of range");
        f(&state);
        rank += 1;
    }
}

/// Allocation-free scan over all maximal supports (no budget check; intended
/// for callers that already checked the count).
pub fn visit_supports<F: FnMut(&HierarchicalSupport)>(spec: &HierarchySpec, f: F) {
    visit_supports_range(spec, 0..spec.count_supports(), f);
}
