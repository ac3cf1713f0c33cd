//! Seeded random ensembles: measurement matrices, hierarchically sparse
//! signals, and noise.
//!
//! Everything here is a pure function of its spec and seed, drawn from a
//! ChaCha8 stream in a fixed fill order, so results are identical across
//! runs, platforms, and thread counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize};

use crate::hierarchy::{flatten, unrank_support, HierarchicalSupport, HierarchySpec};
use crate::linop::DenseMatrix;
use crate::error::{Error, Result};

/// Entry distribution of a sampled matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    /// I.i.d. normal entries with standard deviation `scale`.
    Gaussian,
    /// Entries `+scale` or `-scale` with equal probability.
    Rademacher,
}

/// Recipe for one random matrix. The default scale `1/sqrt(rows)` makes the
/// expected squared image norm match the input: `E |A x|^2 = |x|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleSpec {
    kind: MatrixKind,
    rows: usize,
    cols: usize,
    scale: f64,
    seed: u64,
}

impl EnsembleSpec {
    /// Spec with the default scale `1/sqrt(rows)`.
    pub fn new(kind: MatrixKind, rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidSpec(format!("zero ensemble dimension {rows}x{cols}")));
        }
        Ok(Self { kind, rows, cols, scale: 1.0 / (rows as f64).sqrt(), seed })
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidSpec(format!("scale must be positive, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl<'de> Deserialize<'de> for EnsembleSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            kind: MatrixKind,
            rows: usize,
            cols: usize,
            #[serde(default)]
            scale: Option<f64>,
            seed: u64,
        }
        let raw = Raw::deserialize(deserializer)?;
        let spec = EnsembleSpec::new(raw.kind, raw.rows, raw.cols, raw.seed)
            .map_err(serde::de::Error::custom)?;
        match raw.scale {
            Some(s) => spec.with_scale(s).map_err(serde::de::Error::custom),
            None => Ok(spec),
        }
    }
}

/// Draws the matrix described by `spec`, filling row-major from a ChaCha8
/// stream seeded with `spec.seed`.
pub fn sample_matrix(spec: &EnsembleSpec) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
    let n = spec.rows() * spec.cols();
    let entries: Vec<f64> = match spec.kind() {
        MatrixKind::Gaussian => {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * spec.scale()).collect()
        }
        MatrixKind::Rademacher => {
            (0..n).map(|_| if rng.gen::<bool>() { spec.scale() } else { -spec.scale() }).collect()
        }
    };
    DenseMatrix::new(spec.rows(), spec.cols(), entries).expect("finite by construction")
}

/// Magnitude profile of sampled signal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalMagnitude {
    /// I.i.d. normal magnitudes.
    Gaussian,
    /// Random signs of equal magnitude.
    Unit,
}

/// Draws a unit-norm signal on a uniformly random maximal support of `spec`:
/// the support rank is uniform over the full enumeration, entries follow
/// `magnitude`, and the result is scaled to unit l2 norm.
///
/// Panics if the support count of `spec` overflows a `u128`.
pub fn sample_signal(
    spec: &HierarchySpec,
    seed: u64,
    magnitude: SignalMagnitude,
) -> (Vec<f64>, HierarchicalSupport) {
    let count = spec
        .count_supports_checked()
        .expect("support count overflows u128; cannot sample uniformly");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = rng.gen_range(0..count);
    let support = unrank_support(spec, rank);
    let flat = flatten(&support, spec).expect("enumerated support is valid");
    let mut x = vec![0.0; spec.ambient_dim()];
    for &i in &flat {
        x[i - 1] = match magnitude {
            SignalMagnitude::Gaussian => rng.sample::<f64, _>(StandardNormal),
            SignalMagnitude::Unit => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    debug_assert!(norm > 0.0, "sampled signal collapsed to zero");
    for v in &mut x {
        *v /= norm;
    }
    (x, support)
}

/// I.i.d. normal(0, sigma^2) noise vector. `sigma` must be nonnegative.
pub fn sample_noise(dim: usize, sigma: f64, seed: u64) -> Vec<f64> {
    assert!(sigma >= 0.0, "noise level must be nonnegative, got {sigma}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * sigma).collect()
}
