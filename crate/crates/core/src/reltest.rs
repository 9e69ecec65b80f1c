//! Tests of relative dependency.
//!
//! * [`dependent_test`]: both HSIC statistics on the full sample, with their
//!   estimated covariance.
//! * [`independent_test`]: the half-split baseline whose two statistics are
//!   independent by construction.
//! * [`generalized_test`]: a weighted sum of any number of HSIC statistics,
//!   projected onto one axis with a composition of Givens rotations.
//!
//! All p-values are computed at the null boundary where the weighted
//! difference of population HSIC values is zero.

use indexmap::IndexMap;
use serde::Serialize;

use crate::dataset::{split_half, JointSample};
use crate::error::{Error, Result};
use crate::hsic::{self, CovarianceSummary, HsicEstimate, VARIANCE_FLOOR};
use crate::kernels::{GramMatrix, KernelConfig, KernelDescriptor};

/// Below this many observations per statistic, results carry a warning
/// that the Gaussian approximation may be poor.
pub const SMALL_SAMPLE_WARNING_M: usize = 100;

const SMALL_SAMPLE_WARNING: &str =
    "small sample: asymptotic p-value may be unreliable below 100 observations per statistic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dependent,
    Independent,
    Generalized,
}

/// Outcome of a relative dependency test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub method: Method,
    /// Weighted difference of HSIC estimates.
    pub statistic: f64,
    pub std_dev: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject_null: bool,
    pub m: usize,
    pub kernel: IndexMap<String, KernelDescriptor>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub small_m_warning: bool,
}

impl TestResult {
    fn new(
        method: Method,
        statistic: f64,
        variance: f64,
        alpha: f64,
        m: usize,
        per_stat_m: usize,
    ) -> Self {
        let std_dev = variance.max(VARIANCE_FLOOR).sqrt();
        let p_value = upper_tail(statistic / std_dev);
        let small_m_warning = per_stat_m < SMALL_SAMPLE_WARNING_M;
        TestResult {
            method,
            statistic,
            std_dev,
            p_value,
            alpha,
            reject_null: p_value < alpha,
            m,
            kernel: IndexMap::new(),
            warnings: if small_m_warning {
                vec![SMALL_SAMPLE_WARNING.to_string()]
            } else {
                Vec::new()
            },
            small_m_warning,
        }
    }

    fn with_kernels(mut self, kernel: IndexMap<String, KernelDescriptor>) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("test results always serialize")
    }
}

/// Standard normal CDF, `erfc(-x / sqrt 2) / 2`.
///
/// `libm::erfc` (the musl rational approximations) is accurate to about one
/// ulp, far inside the `1e-12` absolute error budget.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `1 - Phi(x)`, evaluated without cancellation in the upper tail.
pub fn upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Zero-diagonal Gram matrices for source `x` and targets `y`, `z`.
///
#[derive(Debug, Clone)]
pub struct RelativeGrams {
    pub kx: GramMatrix,
    pub ky: GramMatrix,
    pub kz: GramMatrix,
}

impl RelativeGrams {
    pub fn build(j: &JointSample, kernels: &KernelConfig) -> Result<Self> {
        let z = j.z().ok_or_else(|| {
            Error::InvalidArgument("relative test needs three variables x, y, z".into())
        })?;
        Ok(RelativeGrams {
            kx: kernels.spec(0).gram(j.x())?.into_zero_diagonal()?,
            ky: kernels.spec(1).gram(j.y())?.into_zero_diagonal()?,
            kz: kernels.spec(2).gram(z)?.into_zero_diagonal()?,
        })
    }

    pub fn m(&self) -> usize {
        self.kx.m()
    }

    fn kernel_map(&self) -> IndexMap<String, KernelDescriptor> {
        IndexMap::from([
            ("x".to_string(), self.kx.kernel()),
            ("y".to_string(), self.ky.kernel()),
            ("z".to_string(), self.kz.kernel()),
        ])
    }

    /// Full-sample test with correlated statistics.
    pub fn dependent(&self, alpha: f64) -> Result<DependentOutcome> {
        check_alpha(alpha)?;
        let xy = HsicEstimate::compute(&self.kx, &self.ky, "XY")?;
        let xz = HsicEstimate::compute(&self.kx, &self.kz, "XZ")?;
        let covariance = CovarianceSummary::from_estimates(&xy, &xz)?;
        let statistic = xy.value - xz.value;
        let result = TestResult::new(
            Method::Dependent,
            statistic,
            covariance.difference_variance(),
            alpha,
            self.m(),
            self.m(),
        )
        .with_kernels(self.kernel_map());
        Ok(DependentOutcome {
            result,
            hsic_xy: xy.value,
            hsic_xz: xz.value,
            covariance,
        })
    }
}

/// Dependent test result together with the quantities behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct DependentOutcome {
    pub result: TestResult,
    pub hsic_xy: f64,
    pub hsic_xz: f64,
    pub covariance: CovarianceSummary,
}

/// Independent test result together with the half-sample estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentOutcome {
    pub result: TestResult,
    pub hsic_xy: f64,
    pub hsic_xz: f64,
    pub var_xy: f64,
    pub var_xz: f64,
}

/// Tests `HSIC(X, Y) <= HSIC(X, Z)` against `HSIC(X, Y) > HSIC(X, Z)` using
/// both statistics on the full sample.
pub fn dependent_test(j: &JointSample, kernels: &KernelConfig, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    Ok(RelativeGrams::build(j, kernels)?.dependent(alpha)?.result)
}

/// The same hypothesis tested on two disjoint halves of the sample:
/// `(X', Y')` from the first half of the rows and `(X'', Z'')` from the
/// second.
pub fn independent_test(
    j: &JointSample,
    kernels: &KernelConfig,
    alpha: f64,
    shuffle_seed: Option<u64>,
) -> Result<TestResult> {
    Ok(independent_outcome(j, kernels, alpha, shuffle_seed)?.result)
}

/// [`independent_test`] with the half-sample estimates.
///
/// Kernels are fitted on each half separately (the median heuristic sees
/// only that half), so the two statistics share no data.
pub fn independent_outcome(
    j: &JointSample,
    kernels: &KernelConfig,
    alpha: f64,
    shuffle_seed: Option<u64>,
) -> Result<IndependentOutcome> {
    check_alpha(alpha)?;
    let (first, second) = split_half(j, shuffle_seed)?;
    let kx1 = kernels.spec(0).gram(first.x())?.into_zero_diagonal()?;
    let ky1 = kernels.spec(1).gram(first.y())?.into_zero_diagonal()?;
    let kx2 = kernels.spec(0).gram(second.x())?.into_zero_diagonal()?;
    let kz2 = kernels.spec(2).gram(second.y())?.into_zero_diagonal()?;
    let xy = HsicEstimate::compute(&kx1, &ky1, "X'Y'")?;
    let xz = HsicEstimate::compute(&kx2, &kz2, "X''Z''")?;
    let var_xy = hsic::variance_hsic(&xy);
    let var_xz = hsic::variance_hsic(&xz);
    let kernel_map = IndexMap::from([
        ("x'".to_string(), kx1.kernel()),
        ("y'".to_string(), ky1.kernel()),
        ("x''".to_string(), kx2.kernel()),
        ("z''".to_string(), kz2.kernel()),
    ]);
    let result = TestResult::new(
        Method::Independent,
        xy.value - xz.value,
        var_xy + var_xz,
        alpha,
        j.m(),
        first.m(),
    )
    .with_kernels(kernel_map);
    Ok(IndependentOutcome {
        result,
        hsic_xy: xy.value,
        hsic_xz: xz.value,
        var_xy,
        var_xz,
    })
}

/// Proper rotation taking a weight vector onto the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    q: Vec<f64>,
    n: usize,
}

impl RotationMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    /// `max |Q'Q - I|`
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                let qtq: f64 = (0..n).map(|k| self.get(k, a) * self.get(k, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((qtq - target).abs());
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Composes Givens rotations in the planes `(1, i)`, `i = 2..n`, so that
/// `Q v = (|v|, 0, .., 0)`.
///
/// Each angle is `-atan2(v_i, [Qv]_1)`, which leaves the first coordinate
/// non-negative after every step.
pub fn rotation_matrix(v: &[f64]) -> Result<RotationMatrix> {
    let n = v.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "weight vector needs at least 2 entries, got {n}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite".into()));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidArgument("weight vector is zero".into()));
    }
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    for i in 1..n {
        // Rows 1.. of Q are untouched identity rows until their own step,
        // so [Qv]_i == v_i here.
        let lead = dot(&q[..n], v);
        let theta = -v[i].atan2(lead);
        let (s, c) = theta.sin_cos();
        for k in 0..n {
            let top = q[k];
            let bottom = q[i * n + k];
            q[k] = c * top - s * bottom;
            q[i * n + k] = s * top + c * bottom;
        }
    }
    Ok(RotationMatrix { q, n })
}

/// Means and covariance of several HSIC statistics over one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointGaussianSummary {
    pub means: Vec<f64>,
    /// Row-major `n x n` covariance of the unscaled statistics.
    pub covariance: Vec<f64>,
    pub m: usize,
}

impl JointGaussianSummary {
    pub fn new(means: Vec<f64>, covariance: Vec<f64>, m: usize) -> Result<Self> {
        let n = means.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least two statistics, got {n}"
            )));
        }
        if covariance.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} means but {} covariance entries",
                n,
                covariance.len()
            )));
        }
        for a in 0..n {
            for b in 0..a {
                if covariance[a * n + b] != covariance[b * n + a] {
                    return Err(Error::InvalidArgument(format!(
                        "covariance is not symmetric at ({a}, {b})"
                    )));
                }
            }
        }
        Ok(JointGaussianSummary {
            means,
            covariance,
            m,
        })
    }

    pub fn n(&self) -> usize {
        self.means.len()
    }

    pub fn cov(&self, a: usize, b: usize) -> f64 {
        self.covariance[a * self.n() + b]
    }

    /// Floors the variances and shrinks every covariance into
    /// `[-sqrt(v_a v_b), sqrt(v_a v_b)]`. For `n = 2` the result is PSD.
    pub fn clamped(&self) -> Self {
        let n = self.n();
        let diag: Vec<f64> = (0..n).map(|a| self.cov(a, a).max(VARIANCE_FLOOR)).collect();
        let mut covariance = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                covariance[a * n + b] = if a == b {
                    diag[a]
                } else {
                    let bound = (diag[a] * diag[b]).sqrt();
                    self.cov(a, b).clamp(-bound, bound)
                };
            }
        }
        JointGaussianSummary {
            means: self.means.clone(),
            covariance,
            m: self.m,
        }
    }

    /// Cholesky factorization of `cov + tol * I`, with `tol` a small multiple
    /// of the largest variance; fails iff the matrix has a clearly negative
    /// eigenvalue.
    pub fn is_psd(&self) -> bool {
        let n = self.n();
        let scale = (0..n).map(|a| self.cov(a, a).abs()).fold(0.0, f64::max);
        let tol = 1e-10 * scale.max(VARIANCE_FLOOR);
        let mut l = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..=a {
                let mut s = self.cov(a, b) - dot(&l[a * n..a * n + b], &l[b * n..b * n + b]);
                if a == b {
                    s += tol;
                    if s <= 0.0 {
                        return false;
                    }
                    l[a * n + a] = s.sqrt();
                } else {
                    l[a * n + b] = s / l[b * n + b];
                }
            }
        }
        true
    }
}

/// Estimates the joint Gaussian summary of HSIC statistics for the given
/// `(source, target)` variable pairs of `j`.
pub fn joint_summary(
    j: &JointSample,
    pairs: &[(usize, usize)],
    kernels: &KernelConfig,
) -> Result<JointGaussianSummary> {
    Ok(fit_joint(j, pairs, kernels)?.0)
}

fn fit_joint(
    j: &JointSample,
    pairs: &[(usize, usize)],
    kernels: &KernelConfig,
) -> Result<(JointGaussianSummary, IndexMap<String, KernelDescriptor>)> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two pairs, got {}",
            pairs.len()
        )));
    }
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= j.len() || b >= j.len()) {
        return Err(Error::InvalidArgument(format!(
            "pair {a}-{b} refers to a variable outside 0..{}",
            j.len()
        )));
    }
    let mut used: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    used.sort_unstable();
    used.dedup();

    let mut grams: IndexMap<usize, GramMatrix> = IndexMap::new();
    for &v in &used {
        let g = kernels
            .spec(v)
            .gram(&j.variables()[v])?
            .into_zero_diagonal()?;
        grams.insert(v, g);
    }
    let estimates = pairs
        .iter()
        .map(|&(a, b)| HsicEstimate::compute(&grams[&a], &grams[&b], format!("{a}-{b}")))
        .collect::<Result<Vec<_>>>()?;

    let n = estimates.len();
    let mut covariance = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let c = hsic::cross_covariance(&estimates[a], &estimates[b])?;
            covariance[a * n + b] = c;
            covariance[b * n + a] = c;
        }
    }
    let summary = JointGaussianSummary::new(
        estimates.iter().map(|e| e.value).collect(),
        covariance,
        j.m(),
    )?
    .clamped();
    let kernel_map = grams
        .iter()
        .map(|(v, g)| (v.to_string(), g.kernel()))
        .collect();
    Ok((summary, kernel_map))
}

/// Tests `sum_k v_k HSIC_k <= 0` against `> 0`.
///
/// The statistic is `v' means`; the p-value projects the joint Gaussian
/// onto the first axis of [`rotation_matrix`]`(v)`.
pub fn generalized_test(
    summary: &JointGaussianSummary,
    v: &[f64],
    alpha: f64,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    let n = summary.n();
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} statistics",
            v.len(),
            n
        )));
    }
    let q = rotation_matrix(v)?;
    let sigma = summary.clamped();
    if !sigma.is_psd() {
        return Err(Error::NotPositiveSemidefinite);
    }
    let axis = q.row(0);
    // [Q Sigma Q']_11
    let projected_var: f64 = (0..n)
        .map(|a| axis[a] * (0..n).map(|b| sigma.cov(a, b) * axis[b]).sum::<f64>())
        .sum();
    let norm_sq = dot(v, v);
    let statistic = dot(v, &summary.means);
    Ok(TestResult::new(
        Method::Generalized,
        statistic,
        norm_sq * projected_var,
        alpha,
        summary.m,
        summary.m,
    ))
}

/// Estimates the summary for `pairs` and runs [`generalized_test`], keeping
/// the kernel choices in the result.
pub fn generalized_test_on(
    j: &JointSample,
    pairs: &[(usize, usize)],
    kernels: &KernelConfig,
    v: &[f64],
    alpha: f64,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    if v.len() != pairs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} pairs",
            v.len(),
            pairs.len()
        )));
    }
    rotation_matrix(v)?;
    let (summary, kernel_map) = fit_joint(j, pairs, kernels)?;
    Ok(generalized_test(&summary, v, alpha)?.with_kernels(kernel_map))
}
