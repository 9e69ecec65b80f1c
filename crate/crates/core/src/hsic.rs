//! Unbiased HSIC estimation and the variance machinery built on its
//! U-statistic representation.
//!
//! Every estimator here works on zero-diagonal Gram matrices and runs in
//! `O(m^2)` time. The `*_bruteforce` functions enumerate index tuples
//! directly and exist as oracles for small `m`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::par;

/// Smallest sample size the unbiased estimator is defined for.
pub const MIN_SAMPLE_SIZE: usize = 4;

/// Largest `m` accepted by [`hsic_bruteforce`].
pub const BRUTE_FORCE_MAX_M: usize = 40;

/// Largest `m` accepted by [`h_vector_bruteforce`].
pub const H_VECTOR_BRUTE_FORCE_MAX_M: usize = 30;

/// Ratio between the compact h-vector of [`h_vector`] and the raw sums of
/// the U-statistic kernel over ordered 3-tuples excluding each index.
///
/// Fixed by enumeration at m = 8, 10, 12 and checked by a regression test.
pub const H_VECTOR_SCALE: f64 = 2.0;

/// Lower bound applied to variance estimates.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Unbiased HSIC estimate with its per-observation h-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HsicEstimate {
    pub value: f64,
    /// Compact h-vector; entry `i` equals [`H_VECTOR_SCALE`] times the sum
    /// of the U-statistic kernel over 3-tuples of indices other than `i`.
    pub h_vector: Vec<f64>,
    pub m: usize,
    pub pair_label: String,
}

impl HsicEstimate {
    /// Estimates HSIC and the h-vector from one pair of zero-diagonal Grams.
    pub fn compute(
        kt: &GramMatrix,
        lt: &GramMatrix,
        pair_label: impl Into<String>,
    ) -> Result<Self> {
        let m = check_pair(kt, lt)?;
        let moments = PairMoments::new(kt, lt);
        Ok(HsicEstimate {
            value: moments.hsic(),
            h_vector: moments.h_vector(kt, lt),
            m,
            pair_label: pair_label.into(),
        })
    }

    /// Estimates of `E[h | S_i]`: each raw h-vector sum divided by the
    /// number of 3-tuples `(m-1)(m-2)(m-3)`.
    pub fn conditional_means(&self) -> impl Iterator<Item = f64> + '_ {
        let norm = H_VECTOR_SCALE * falling3(self.m - 1);
        self.h_vector.iter().map(move |h| h / norm)
    }

    /// Mean of squared conditional means.
    pub fn second_moment(&self) -> f64 {
        self.conditional_means().map(|c| c * c).sum::<f64>() / self.m as f64
    }
}

/// Row sums that every estimator in this module is assembled from.
struct PairMoments {
    m: usize,
    /// `(K o L) 1`
    hadamard_rows: Vec<f64>,
    /// `K 1`
    k_rows: Vec<f64>,
    /// `L 1`
    l_rows: Vec<f64>,
}

impl PairMoments {
    fn new(kt: &GramMatrix, lt: &GramMatrix) -> Self {
        let m = kt.m();
        let rows = par::map_range(m, |i| {
            let (mut kl, mut k, mut l) = (0.0, 0.0, 0.0);
            for (a, b) in kt.row(i).iter().zip(lt.row(i)) {
                kl += a * b;
                k += a;
                l += b;
            }
            (kl, k, l)
        });
        let mut moments = PairMoments {
            m,
            hadamard_rows: Vec::with_capacity(m),
            k_rows: Vec::with_capacity(m),
            l_rows: Vec::with_capacity(m),
        };
        for (kl, k, l) in rows {
            moments.hadamard_rows.push(kl);
            moments.k_rows.push(k);
            moments.l_rows.push(l);
        }
        moments
    }

    /// `Tr(K L)`, using symmetry of both matrices.
    fn trace(&self) -> f64 {
        self.hadamard_rows.iter().sum()
    }

    fn sum_k(&self) -> f64 {
        self.k_rows.iter().sum()
    }

    fn sum_l(&self) -> f64 {
        self.l_rows.iter().sum()
    }

    /// `1' K L 1`
    fn cross(&self) -> f64 {
        self.k_rows
            .iter()
            .zip(&self.l_rows)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn hsic(&self) -> f64 {
        let m = self.m as f64;
        let bracket = self.trace() + self.sum_k() * self.sum_l() / ((m - 1.0) * (m - 2.0))
            - 2.0 / (m - 2.0) * self.cross();
        bracket / (m * (m - 3.0))
    }

    fn h_vector(&self, kt: &GramMatrix, lt: &GramMatrix) -> Vec<f64> {
        let m = self.m as f64;
        let trace = self.trace();
        let (sum_k, sum_l, cross) = (self.sum_k(), self.sum_l(), self.cross());
        par::map_range(self.m, |i| {
            // K (L 1) and L (K 1), entry i
            let k_l1: f64 = kt.row(i).iter().zip(&self.l_rows).map(|(a, b)| a * b).sum();
            let l_k1: f64 = lt.row(i).iter().zip(&self.k_rows).map(|(a, b)| a * b).sum();
            (m - 2.0) * (m - 2.0) * self.hadamard_rows[i] - m * self.k_rows[i] * self.l_rows[i]
                + (m - 2.0) * (trace - k_l1 - l_k1)
                + sum_l * self.k_rows[i]
                + sum_k * self.l_rows[i]
                - cross
        })
    }
}

/// `n (n-1) (n-2)`
fn falling3(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) * (n - 2.0)
}

fn check_pair(kt: &GramMatrix, lt: &GramMatrix) -> Result<usize> {
    if !kt.is_zero_diagonal() || !lt.is_zero_diagonal() {
        return Err(Error::NotZeroDiagonal);
    }
    if kt.m() != lt.m() {
        return Err(Error::DimensionMismatch(format!(
            "gram matrices have sizes {} and {}",
            kt.m(),
            lt.m()
        )));
    }
    if kt.m() < MIN_SAMPLE_SIZE {
        return Err(Error::TooFewObservations {
            needed: MIN_SAMPLE_SIZE,
            got: kt.m(),
        });
    }
    Ok(kt.m())
}

fn check_brute_force(kt: &GramMatrix, lt: &GramMatrix, max_m: usize) -> Result<usize> {
    let m = check_pair(kt, lt)?;
    if m > max_m {
        return Err(Error::InvalidArgument(format!(
            "brute-force enumeration is limited to m <= {max_m}, got {m}"
        )));
    }
    Ok(m)
}

/// Unbiased HSIC estimate from zero-diagonal Gram matrices.
///
/// The result can be negative when the population value is near zero.
pub fn hsic_unbiased(kt: &GramMatrix, lt: &GramMatrix) -> Result<f64> {
    check_pair(kt, lt)?;
    Ok(PairMoments::new(kt, lt).hsic())
}

/// Compact h-vector in `O(m^2)`; see [`HsicEstimate::h_vector`].
pub fn h_vector(kt: &GramMatrix, lt: &GramMatrix) -> Result<Vec<f64>> {
    check_pair(kt, lt)?;
    Ok(PairMoments::new(kt, lt).h_vector(kt, lt))
}

const PERMUTATIONS_OF_4: [[usize; 4]; 24] = [
    [0, 1, 2, 3],
    [0, 1, 3, 2],
    [0, 2, 1, 3],
    [0, 2, 3, 1],
    [0, 3, 1, 2],
    [0, 3, 2, 1],
    [1, 0, 2, 3],
    [1, 0, 3, 2],
    [1, 2, 0, 3],
    [1, 2, 3, 0],
    [1, 3, 0, 2],
    [1, 3, 2, 0],
    [2, 0, 1, 3],
    [2, 0, 3, 1],
    [2, 1, 0, 3],
    [2, 1, 3, 0],
    [2, 3, 0, 1],
    [2, 3, 1, 0],
    [3, 0, 1, 2],
    [3, 0, 2, 1],
    [3, 1, 0, 2],
    [3, 1, 2, 0],
    [3, 2, 0, 1],
    [3, 2, 1, 0],
];

/// U-statistic kernel `h_{ijqr}`: the average over all 24 orderings
/// `(s, t, u, v)` of the indices of `k_st (l_st + l_uv - 2 l_su)`.
pub fn ustat_kernel(kt: &GramMatrix, lt: &GramMatrix, idx: [usize; 4]) -> f64 {
    PERMUTATIONS_OF_4
        .iter()
        .map(|p| {
            let (s, t, u, v) = (idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]]);
            kt.get(s, t) * (lt.get(s, t) + lt.get(u, v) - 2.0 * lt.get(s, u))
        })
        .sum::<f64>()
        / 24.0
}

/// Calls `f` on every ordered tuple of `len` distinct indices from `0..m`
/// that avoids `exclude`.
fn for_each_ordered_tuple(
    m: usize,
    len: usize,
    exclude: Option<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    fn recurse(
        m: usize,
        len: usize,
        exclude: Option<usize>,
        prefix: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        if prefix.len() == len {
            f(prefix);
            return;
        }
        for i in 0..m {
            if Some(i) == exclude || prefix.contains(&i) {
                continue;
            }
            prefix.push(i);
            recurse(m, len, exclude, prefix, f);
            prefix.pop();
        }
    }
    recurse(m, len, exclude, &mut Vec::with_capacity(len), f);
}

/// HSIC by direct enumeration of all ordered 4-tuples of distinct indices.
/// Cost grows as `m^4`; limited to `m <= 40`.
pub fn hsic_bruteforce(kt: &GramMatrix, lt: &GramMatrix) -> Result<f64> {
    let m = check_brute_force(kt, lt, BRUTE_FORCE_MAX_M)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for_each_ordered_tuple(m, 4, None, &mut |t| {
        total += ustat_kernel(kt, lt, [t[0], t[1], t[2], t[3]]);
        count += 1;
    });
    Ok(total / count as f64)
}

/// Raw per-observation sums of `h_{ijqr}` over ordered 3-tuples of
/// distinct indices other than `i`, by enumeration. Limited to `m <= 30`.
pub fn h_vector_bruteforce(kt: &GramMatrix, lt: &GramMatrix) -> Result<Vec<f64>> {
    let m = check_brute_force(kt, lt, H_VECTOR_BRUTE_FORCE_MAX_M)?;
    Ok((0..m)
        .map(|i| {
            let mut sum = 0.0;
            for_each_ordered_tuple(m, 3, Some(i), &mut |t| {
                sum += ustat_kernel(kt, lt, [i, t[0], t[1], t[2]]);
            });
            sum
        })
        .collect())
}

/// Estimated variance of the unscaled statistic `HSIC_m`:
/// `16 / m * (R - HSIC_m^2)`, floored at [`VARIANCE_FLOOR`].
pub fn variance_hsic(e: &HsicEstimate) -> f64 {
    raw_variance(e).max(VARIANCE_FLOOR)
}

fn raw_variance(e: &HsicEstimate) -> f64 {
    16.0 / e.m as f64 * (e.second_moment() - e.value * e.value)
}

/// Estimated covariance between two unscaled HSIC statistics computed on
/// the same sample (and, for the relative test, the same source Gram).
pub fn cross_covariance(a: &HsicEstimate, b: &HsicEstimate) -> Result<f64> {
    if a.m != b.m || a.h_vector.len() != b.h_vector.len() {
        return Err(Error::SampleSizeMismatch(vec![a.m, b.m]));
    }
    let m = a.m as f64;
    let r: f64 = a
        .conditional_means()
        .zip(b.conditional_means())
        .map(|(x, y)| x * y)
        .sum::<f64>()
        / m;
    Ok(16.0 / m * (r - a.value * b.value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleNote {
    /// Asymptotic covariance of `sqrt(m) * HSIC_m`.
    PerSqrtMScaled,
    /// Covariance of `HSIC_m` itself.
    UnscaledStatistic,
}

/// Variances and covariance of two HSIC statistics sharing a source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceSummary {
    pub var_xy: f64,
    pub var_xz: f64,
    pub cov_xyxz: f64,
    pub scale_note: ScaleNote,
}

impl CovarianceSummary {
    /// Clamped summary for the unscaled statistics.
    pub fn from_estimates(xy: &HsicEstimate, xz: &HsicEstimate) -> Result<Self> {
        let cov = cross_covariance(xy, xz)?;
        let (var_xy, var_xz, cov_xyxz) = clamp_pair(raw_variance(xy), raw_variance(xz), cov);
        Ok(CovarianceSummary {
            var_xy,
            var_xz,
            cov_xyxz,
            scale_note: ScaleNote::UnscaledStatistic,
        })
    }

    /// The same summary for `sqrt(m)`-scaled statistics.
    pub fn scaled_by_sqrt_m(self, m: usize) -> Self {
        match self.scale_note {
            ScaleNote::PerSqrtMScaled => self,
            ScaleNote::UnscaledStatistic => {
                let m = m as f64;
                CovarianceSummary {
                    var_xy: self.var_xy * m,
                    var_xz: self.var_xz * m,
                    cov_xyxz: self.cov_xyxz * m,
                    scale_note: ScaleNote::PerSqrtMScaled,
                }
            }
        }
    }

    /// Variance of the difference `HSIC_xy - HSIC_xz`.
    pub fn difference_variance(&self) -> f64 {
        (self.var_xy + self.var_xz - 2.0 * self.cov_xyxz).max(VARIANCE_FLOOR)
    }
}

/// Floors both variances and shrinks the covariance into
/// `[-sqrt(va vb), sqrt(va vb)]`, which makes the 2x2 matrix PSD.
pub fn clamp_pair(var_a: f64, var_b: f64, cov: f64) -> (f64, f64, f64) {
    let va = var_a.max(VARIANCE_FLOOR);
    let vb = var_b.max(VARIANCE_FLOOR);
    let bound = (va * vb).sqrt();
    (va, vb, cov.clamp(-bound, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Zero-diagonal Gram of `m` random points in 3 dimensions.
    fn random_gram(rng: &mut ChaCha8Rng, m: usize) -> GramMatrix {
        let pts: Vec<[f64; 3]> = (0..m)
            .map(|_| {
                [
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                ]
            })
            .collect();
        let mut v = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                v[i * m + j] = pts[i].iter().zip(&pts[j]).map(|(a, b)| a * b).sum();
            }
        }
        GramMatrix::precomputed(v, m)
            .unwrap()
            .into_zero_diagonal()
            .unwrap()
    }

    fn constant_gram(m: usize, c: f64) -> GramMatrix {
        GramMatrix::precomputed(vec![c; m * m], m)
            .unwrap()
            .into_zero_diagonal()
            .unwrap()
    }

    #[test]
    fn constant_target_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_gram(&mut rng, 9);
        let l = constant_gram(9, 0.75);
        assert!(hsic_unbiased(&k, &l).unwrap().abs() < 1e-14);
        assert!(hsic_bruteforce(&k, &l).unwrap().abs() < 1e-14);
        assert!(h_vector(&k, &l).unwrap().iter().all(|h| h.abs() < 1e-12));
        assert!(h_vector_bruteforce(&k, &l)
            .unwrap()
            .iter()
            .all(|h| h.abs() < 1e-12));
        let e = HsicEstimate::compute(&k, &l, "XY").unwrap();
        assert_eq!(variance_hsic(&e), VARIANCE_FLOOR);
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = random_gram(&mut rng, 11);
        let l = random_gram(&mut rng, 11);
        assert_eq!(
            hsic_unbiased(&k, &l).unwrap(),
            hsic_unbiased(&l, &k).unwrap()
        );
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [4, 5, 8] {
            let k = random_gram(&mut rng, m);
            let l = random_gram(&mut rng, m);
            let fast = hsic_unbiased(&k, &l).unwrap();
            let slow = hsic_bruteforce(&k, &l).unwrap();
            assert!((fast - slow).abs() < 1e-9 * slow.abs().max(1.0), "m={m}");
        }
    }

    #[test]
    fn h_vector_scale_is_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in [8, 10, 12] {
            let k = random_gram(&mut rng, m);
            let l = random_gram(&mut rng, m);
            let fast = h_vector(&k, &l).unwrap();
            let raw = h_vector_bruteforce(&k, &l).unwrap();
            for (f, r) in fast.iter().zip(&raw) {
                assert!((f / r - H_VECTOR_SCALE).abs() < 1e-9, "m={m}: {f} vs {r}");
            }
        }
    }

    #[test]
    fn raw_sums_add_up_to_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 8;
        let k = random_gram(&mut rng, m);
        let l = random_gram(&mut rng, m);
        let raw: f64 = h_vector_bruteforce(&k, &l).unwrap().iter().sum();
        let falling4 = (m * (m - 1) * (m - 2) * (m - 3)) as f64;
        let hsic = hsic_unbiased(&k, &l).unwrap();
        assert!((raw - falling4 * hsic).abs() < 1e-9 * raw.abs().max(1.0));
    }

    #[test]
    fn smallest_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = random_gram(&mut rng, 4);
        let l = random_gram(&mut rng, 4);
        assert!(hsic_bruteforce(&k, &l).unwrap().is_finite());
        let mut tuples = 0;
        for_each_ordered_tuple(4, 3, Some(0), &mut |_| tuples += 1);
        assert_eq!(tuples, 6);
    }

    #[test]
    fn precondition_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k3 = random_gram(&mut rng, 3);
        assert!(matches!(
            hsic_unbiased(&k3, &k3),
            Err(Error::TooFewObservations { needed: 4, got: 3 })
        ));
        let k5 = random_gram(&mut rng, 5);
        let k6 = random_gram(&mut rng, 6);
        assert!(matches!(
            hsic_unbiased(&k5, &k6),
            Err(Error::DimensionMismatch(_))
        ));
        let full = GramMatrix::precomputed(vec![1.0; 25], 5).unwrap();
        assert!(matches!(
            hsic_unbiased(&full, &k5),
            Err(Error::NotZeroDiagonal)
        ));
        let big = constant_gram(41, 1.0);
        assert!(hsic_bruteforce(&big, &big).is_err());
        let big = constant_gram(31, 1.0);
        assert!(h_vector_bruteforce(&big, &big).is_err());
    }

    #[test]
    fn covariance_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = random_gram(&mut rng, 30);
        let l = random_gram(&mut rng, 30);
        let xy = HsicEstimate::compute(&k, &l, "XY").unwrap();
        let same = HsicEstimate::compute(&k, &l, "XZ").unwrap();
        let var = variance_hsic(&xy);
        assert!(var > VARIANCE_FLOOR);
        assert!((cross_covariance(&xy, &same).unwrap() - var).abs() < 1e-12);

        let flat = HsicEstimate::compute(&k, &constant_gram(30, 2.0), "XZ").unwrap();
        assert!(cross_covariance(&xy, &flat).unwrap().abs() < 1e-12);

        let small =
            HsicEstimate::compute(&random_gram(&mut rng, 10), &random_gram(&mut rng, 10), "XZ")
                .unwrap();
        assert!(cross_covariance(&xy, &small).is_err());
    }

    #[test]
    fn clamping_restores_psd() {
        let (a, b, c) = clamp_pair(1.0, 4.0, 3.0);
        assert_eq!((a, b, c), (1.0, 4.0, 2.0));
        let (a, b, c) = clamp_pair(-1.0, 4.0, -3.0);
        assert_eq!(a, VARIANCE_FLOOR);
        assert!(c >= -(a * b).sqrt() && a * b - c * c >= 0.0);
        assert_eq!(b, 4.0);
    }
}
