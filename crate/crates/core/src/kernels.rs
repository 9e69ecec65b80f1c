//! Gram matrices, the median-heuristic bandwidth and zero-diagonal masking.

use serde::Serialize;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::par;

/// Positive Gaussian kernel bandwidth, in input-space distance units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(Bandwidth(sigma))
        } else {
            Err(Error::InvalidArgument(format!(
                "bandwidth must be positive and finite, got {sigma}"
            )))
        }
    }

    pub fn sigma(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Linear,
    /// Values supplied directly by the caller.
    Precomputed,
}

/// Which kernel produced a Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelDescriptor {
    pub family: KernelFamily,
    pub bandwidth: Option<Bandwidth>,
}

/// Per-variable kernel choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// Gaussian kernel; `None` selects the median heuristic.
    Gaussian(Option<Bandwidth>),
    Linear,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::MEDIAN_GAUSSIAN
    }
}

impl KernelSpec {
    pub const MEDIAN_GAUSSIAN: KernelSpec = KernelSpec::Gaussian(None);

    /// Gram matrix of `s` under this kernel (full diagonal).
    pub fn gram(&self, s: &Sample) -> Result<GramMatrix> {
        match *self {
            KernelSpec::Linear => Ok(gram_linear(s)),
            KernelSpec::Gaussian(Some(b)) => Ok(gram_gaussian(s, b)),
            KernelSpec::Gaussian(None) => {
                let sq = upper_sq_distances(s);
                let b = median_of_sq_distances(&sq, s.m())?;
                Ok(gaussian_from_sq(sq, s.m(), b))
            }
        }
    }
}

/// Kernel choices for the variables of a joint sample, indexed like
/// [`crate::dataset::JointSample::variables`]. Variables without an entry
/// use a median-heuristic Gaussian kernel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelConfig {
    specs: Vec<KernelSpec>,
}

impl KernelConfig {
    pub fn new(specs: Vec<KernelSpec>) -> Self {
        KernelConfig { specs }
    }

    pub fn spec(&self, variable: usize) -> KernelSpec {
        self.specs
            .get(variable)
            .copied()
            .unwrap_or(KernelSpec::MEDIAN_GAUSSIAN)
    }
}

/// Symmetric `m x m` kernel matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Vec<f64>,
    m: usize,
    zero_diagonal: bool,
    kernel: KernelDescriptor,
}

impl GramMatrix {
    /// Wraps caller-supplied values. The matrix must be square, finite and
    /// exactly symmetric.
    pub fn precomputed(values: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 || values.len() != m * m {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form a non-empty square matrix of size {m}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "gram matrix has non-finite entries".into(),
            ));
        }
        for i in 0..m {
            for j in 0..i {
                if values[i * m + j] != values[j * m + i] {
                    return Err(Error::InvalidArgument(format!(
                        "gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(GramMatrix {
            values,
            m,
            zero_diagonal: false,
            kernel: KernelDescriptor {
                family: KernelFamily::Precomputed,
                bandwidth: None,
            },
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero_diagonal(&self) -> bool {
        self.zero_diagonal
    }

    pub fn kernel(&self) -> KernelDescriptor {
        self.kernel
    }

    /// Principal submatrix over `rows` (in the given order).
    pub fn submatrix(&self, rows: &[usize]) -> Result<GramMatrix> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.m) {
            return Err(Error::InvalidArgument(format!(
                "row {bad} out of range for gram matrix of size {}",
                self.m
            )));
        }
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for &i in rows {
            let row = self.row(i);
            values.extend(rows.iter().map(|&j| row[j]));
        }
        Ok(GramMatrix {
            values,
            m: n,
            zero_diagonal: self.zero_diagonal,
            kernel: self.kernel,
        })
    }

    /// Sets the diagonal to zero, consuming the matrix.
    pub fn into_zero_diagonal(mut self) -> Result<GramMatrix> {
        if self.zero_diagonal {
            return Err(Error::AlreadyZeroDiagonal);
        }
        for i in 0..self.m {
            self.values[i * self.m + i] = 0.0;
        }
        self.zero_diagonal = true;
        Ok(self)
    }
}

/// Copy of `g` with its diagonal set to zero. Fails if `g` is already
/// zero-diagonal.
pub fn zero_diagonal(g: &GramMatrix) -> Result<GramMatrix> {
    g.clone().into_zero_diagonal()
}

/// Fills an `m x m` symmetric matrix from `entry(i, j)` evaluated once per
/// unordered pair `i < j`; the diagonal comes from `diag(i)`.
fn symmetric_from_pairs<F, D>(m: usize, entry: F, diag: D) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
    D: Fn(usize) -> f64 + Sync + Send,
{
    let mut values = upper_from_pairs(m, entry, diag);
    mirror_upper(&mut values, m);
    values
}

/// Like [`symmetric_from_pairs`] but leaves the strict lower triangle zero.
fn upper_from_pairs<F, D>(m: usize, entry: F, diag: D) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
    D: Fn(usize) -> f64 + Sync + Send,
{
    let mut values = vec![0.0; m * m];
    par::for_each_row(&mut values, m, |i, row| {
        row[i] = diag(i);
        for (j, slot) in row.iter_mut().enumerate().skip(i + 1) {
            *slot = entry(i, j);
        }
    });
    values
}

/// Side of the square tiles used when copying the upper triangle down.
const MIRROR_TILE: usize = 64;

/// Copies the strict upper triangle onto the lower one, tile by tile so
/// both the reads and the writes stay within a few cache lines.
fn mirror_upper(values: &mut [f64], m: usize) {
    for bi in (0..m).step_by(MIRROR_TILE) {
        for bj in (0..=bi).step_by(MIRROR_TILE) {
            for i in bi..(bi + MIRROR_TILE).min(m) {
                for j in bj..(bj + MIRROR_TILE).min(i) {
                    values[i * m + j] = values[j * m + i];
                }
            }
        }
    }
}

fn upper_sq_distances(s: &Sample) -> Vec<f64> {
    upper_from_pairs(
        s.m(),
        |i, j| {
            s.row(i)
                .iter()
                .zip(s.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        },
        |_| 0.0,
    )
}

/// Squared Euclidean distances between all rows, as a row-major `m x m`
/// matrix with zero diagonal.
pub fn pairwise_sq_distances(s: &Sample) -> Vec<f64> {
    let mut sq = upper_sq_distances(s);
    mirror_upper(&mut sq, s.m());
    sq
}

/// Median of the `m(m-1)/2` pairwise Euclidean distances.
pub fn median_heuristic(s: &Sample) -> Result<Bandwidth> {
    if s.m() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            got: s.m(),
        });
    }
    median_of_sq_distances(&upper_sq_distances(s), s.m())
}

/// Reads only the strict upper triangle of `sq`.
fn median_of_sq_distances(sq: &[f64], m: usize) -> Result<Bandwidth> {
    if m < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: m });
    }
    // Selection on squared distances; sqrt is monotone.
    let mut pool: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        pool.extend_from_slice(&sq[i * m + i + 1..(i + 1) * m]);
    }
    let n = pool.len();
    let mid = n / 2;
    let (below, &mut upper, _) = pool.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if n % 2 == 1 {
        upper.sqrt()
    } else {
        let lower = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower.sqrt() + upper.sqrt())
    };
    if median > 0.0 {
        Bandwidth::new(median)
    } else {
        Err(Error::DegenerateSample)
    }
}

/// Reads only the strict upper triangle of `sq`.
fn gaussian_from_sq(mut sq: Vec<f64>, m: usize, b: Bandwidth) -> GramMatrix {
    let scale = -1.0 / (2.0 * b.sigma() * b.sigma());
    par::for_each_row(&mut sq, m, |i, row| {
        row[i] = 1.0;
        for v in row[i + 1..].iter_mut() {
            *v = (*v * scale).exp();
        }
    });
    mirror_upper(&mut sq, m);
    GramMatrix {
        values: sq,
        m,
        zero_diagonal: false,
        kernel: KernelDescriptor {
            family: KernelFamily::Gaussian,
            bandwidth: Some(b),
        },
    }
}

/// Gaussian Gram matrix `exp(-|x_i - x_j|^2 / (2 sigma^2))`.
pub fn gram_gaussian(s: &Sample, b: Bandwidth) -> GramMatrix {
    gaussian_from_sq(upper_sq_distances(s), s.m(), b)
}

/// Linear-kernel Gram matrix of row inner products.
pub fn gram_linear(s: &Sample) -> GramMatrix {
    let dot =
        |i: usize, j: usize| -> f64 { s.row(i).iter().zip(s.row(j)).map(|(a, b)| a * b).sum() };
    GramMatrix {
        values: symmetric_from_pairs(s.m(), dot, |i| dot(i, i)),
        m: s.m(),
        zero_diagonal: false,
        kernel: KernelDescriptor {
            family: KernelFamily::Linear,
            bandwidth: None,
        },
    }
}
