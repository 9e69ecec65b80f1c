//! Synthetic experiments: the three-scatter generator, power curves,
//! calibration at the null boundary, paired-statistic scatters and a
//! convergence-rate diagnostic.
//!
//! Every experiment is a pure function of its configuration. Trial `t` draws
//! from its own ChaCha stream seeded by [`trial_seed`], so trials run in
//! parallel and results do not depend on scheduling.

use std::f64::consts::TAU;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::{align, JointSample, Sample, MIN_SPLIT_SIZE};
use crate::error::{Error, Result};
use crate::hsic::hsic_unbiased;
use crate::kernels::KernelConfig;
use crate::par;
use crate::reltest::{independent_outcome, RelativeGrams};

/// Default number of trials per grid point for power curves.
pub const DEFAULT_POWER_TRIALS: usize = 200;

/// Default significance level for the synthetic experiments.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Parameters of the three-scatter generator.
///
/// With `t ~ U(0, 2 pi)` shared by all three variables of a row:
///
/// * `X = (t + g1 e, sin t + g1 e)`
/// * `Y = (t cos t + g2 e, t sin t + g2 e)`
/// * `Z = (t cos t + g3 e, t sin t + g3 e)`
///
/// where each `e` is an independent standard normal draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthConfig {
    pub m: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            m: 500,
            gamma1: 0.3,
            gamma2: 0.3,
            gamma3: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < MIN_SPLIT_SIZE {
            return Err(Error::TooFewObservations {
                needed: MIN_SPLIT_SIZE,
                got: self.m,
            });
        }
        for (name, g) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
        ] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a non-negative number, got {g}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SynthConfig { seed, ..self }
    }

    pub fn with_m(self, m: usize) -> Self {
        SynthConfig { m, ..self }
    }

    pub fn with_gamma3(self, gamma3: f64) -> Self {
        SynthConfig { gamma3, ..self }
    }
}

/// Seed of stream `index` derived from `seed` (splitmix64 finalizer over
/// the pair).
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `(X, Y, Z)` from the three-scatter model; each is `m x 2`.
pub fn sample_synthetic(c: &SynthConfig) -> Result<JointSample> {
    c.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut x = Vec::with_capacity(2 * c.m);
    let mut y = Vec::with_capacity(2 * c.m);
    let mut z = Vec::with_capacity(2 * c.m);
    for _ in 0..c.m {
        let t: f64 = rng.random_range(0.0..TAU);
        let mut noise = [0.0f64; 6];
        for e in noise.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let (sin, cos) = t.sin_cos();
        x.extend([t + c.gamma1 * noise[0], sin + c.gamma1 * noise[1]]);
        y.extend([t * cos + c.gamma2 * noise[2], t * sin + c.gamma2 * noise[3]]);
        z.extend([t * cos + c.gamma3 * noise[4], t * sin + c.gamma3 * noise[5]]);
    }
    align(
        Sample::new(x, c.m, 2, "a")?,
        Sample::new(y, c.m, 2, "b")?,
        Sample::new(z, c.m, 2, "c")?,
    )
}

/// Both tests on one synthetic draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Full-sample estimates used by the dependent test.
    pub hsic_xy: f64,
    pub hsic_xz: f64,
    /// Half-sample estimates used by the independent test.
    pub hsic_xy_half: f64,
    pub hsic_xz_half: f64,
    pub p_dep: f64,
    pub p_indep: f64,
}

impl TrialRecord {
    pub fn dependent_difference(&self) -> f64 {
        self.hsic_xy - self.hsic_xz
    }

    pub fn independent_difference(&self) -> f64 {
        self.hsic_xy_half - self.hsic_xz_half
    }
}

/// Runs the dependent and the independent test on one draw with
/// median-heuristic Gaussian kernels fitted to that draw.
pub fn run_trial(c: &SynthConfig, trial: usize, alpha: f64) -> Result<TrialRecord> {
    let j = sample_synthetic(c)?;
    let kernels = KernelConfig::default();
    let dep = RelativeGrams::build(&j, &kernels)?.dependent(alpha)?;
    let indep = independent_outcome(&j, &kernels, alpha, None)?;
    Ok(TrialRecord {
        trial,
        hsic_xy: dep.hsic_xy,
        hsic_xz: dep.hsic_xz,
        hsic_xy_half: indep.hsic_xy,
        hsic_xz_half: indep.hsic_xz,
        p_dep: dep.result.p_value,
        p_indep: indep.result.p_value,
    })
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        Err(Error::InvalidArgument("trials must be at least 1".into()))
    } else {
        Ok(())
    }
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

/// `trials` independent draws of `c`, trial `t` seeded with
/// `trial_seed(c.seed, t)`.
fn run_trials(c: &SynthConfig, trials: usize, alpha: f64) -> Result<Vec<TrialRecord>> {
    c.validate()?;
    par::map_range(trials, |t| {
        run_trial(&c.with_seed(trial_seed(c.seed, t as u64)), t, alpha)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerRow {
    pub gamma3: f64,
    pub power_dependent: f64,
    pub power_independent: f64,
    pub trials: usize,
    pub alpha: f64,
    pub m: usize,
}

impl PowerRow {
    /// Two-standard-error binomial slack for `power_dependent >=
    /// power_independent`.
    pub fn difference_slack(&self) -> f64 {
        let n = self.trials as f64;
        let var = |p: f64| p * (1.0 - p) / n;
        2.0 * (var(self.power_dependent) + var(self.power_independent)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
}

impl PowerTable {
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_records(out, &self.rows)
    }
}

/// Fraction of trials in which each test rejects, for every `gamma3` in
/// the grid. Trial `t` uses the same seed at every grid point, so the
/// curves differ only through `gamma3`.
pub fn power_curve(
    gamma3_grid: &[f64],
    base: &SynthConfig,
    trials: usize,
    alpha: f64,
) -> Result<PowerTable> {
    if gamma3_grid.is_empty() {
        return Err(Error::InvalidArgument("gamma3 grid is empty".into()));
    }
    check_trials(trials)?;
    check_alpha(alpha)?;
    for &g in gamma3_grid {
        base.with_gamma3(g).validate()?;
    }
    let records = par::map_range(gamma3_grid.len() * trials, |k| {
        let (g, t) = (k / trials, k % trials);
        let c = base
            .with_gamma3(gamma3_grid[g])
            .with_seed(trial_seed(base.seed, t as u64));
        run_trial(&c, t, alpha)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let rows = gamma3_grid
        .iter()
        .zip(records.chunks(trials))
        .map(|(&gamma3, chunk)| PowerRow {
            gamma3,
            power_dependent: rejection_rate(chunk.iter().map(|r| r.p_dep), alpha),
            power_independent: rejection_rate(chunk.iter().map(|r| r.p_indep), alpha),
            trials,
            alpha,
            m: base.m,
        })
        .collect();
    Ok(PowerTable { rows })
}

fn rejection_rate(p_values: impl ExactSizeIterator<Item = f64>, alpha: f64) -> f64 {
    let n = p_values.len();
    p_values.filter(|&p| p < alpha).count() as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    /// Type I error rate of the dependent test.
    pub rejection_rate: f64,
    pub rejection_rate_independent: f64,
    pub trials: usize,
    pub alpha: f64,
    pub m: usize,
}

/// Empirical rejection rate at the null boundary `gamma3 == gamma2`,
/// where `Y` and `Z` are equally dependent on `X` by construction.
pub fn calibration(base: &SynthConfig, trials: usize, alpha: f64) -> Result<Calibration> {
    if base.gamma3 != base.gamma2 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs gamma3 == gamma2, got {} and {}",
            base.gamma3, base.gamma2
        )));
    }
    check_trials(trials)?;
    check_alpha(alpha)?;
    let records = run_trials(base, trials, alpha)?;
    Ok(Calibration {
        rejection_rate: rejection_rate(records.iter().map(|r| r.p_dep), alpha),
        rejection_rate_independent: rejection_rate(records.iter().map(|r| r.p_indep), alpha),
        trials,
        alpha,
        m: base.m,
    })
}

/// Paired estimates of both tests over repeated draws, for scatter plots
/// of the two statistics.
pub fn scatter_experiment(c: &SynthConfig, trials: usize) -> Result<Vec<TrialRecord>> {
    check_trials(trials)?;
    run_trials(c, trials, DEFAULT_ALPHA)
}

/// Sample mean and covariance of a 2-d point cloud. The `2 sigma` ellipse
/// of the fitted Gaussian is drawn from these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloudMoments {
    pub mean_xy: f64,
    pub mean_xz: f64,
    pub var_xy: f64,
    pub var_xz: f64,
    pub cov: f64,
    /// Sample variance of `hsic_xy - hsic_xz`.
    pub difference_variance: f64,
}

impl CloudMoments {
    fn from_points(points: &[(f64, f64)]) -> Self {
        let n = points.len() as f64;
        let mean_a = points.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_b = points.iter().map(|p| p.1).sum::<f64>() / n;
        let denom = (n - 1.0).max(1.0);
        let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
        for &(a, b) in points {
            saa += (a - mean_a) * (a - mean_a);
            sbb += (b - mean_b) * (b - mean_b);
            sab += (a - mean_a) * (b - mean_b);
        }
        let diffs: Vec<f64> = points.iter().map(|(a, b)| a - b).collect();
        CloudMoments {
            mean_xy: mean_a,
            mean_xz: mean_b,
            var_xy: saa / denom,
            var_xz: sbb / denom,
            cov: sab / denom,
            difference_variance: sample_variance(&diffs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterSummary {
    pub trials: usize,
    pub median_p_dep: f64,
    pub median_p_indep: f64,
    pub dependent: CloudMoments,
    pub independent: CloudMoments,
}

impl ScatterSummary {
    pub fn from_records(records: &[TrialRecord]) -> Result<Self> {
        check_trials(records.len())?;
        let dep: Vec<(f64, f64)> = records.iter().map(|r| (r.hsic_xy, r.hsic_xz)).collect();
        let indep: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (r.hsic_xy_half, r.hsic_xz_half))
            .collect();
        Ok(ScatterSummary {
            trials: records.len(),
            median_p_dep: median(records.iter().map(|r| r.p_dep).collect()),
            median_p_indep: median(records.iter().map(|r| r.p_indep).collect()),
            dependent: CloudMoments::from_points(&dep),
            independent: CloudMoments::from_points(&indep),
        })
    }
}

pub fn write_trial_records<W: Write>(out: W, records: &[TrialRecord]) -> io::Result<()> {
    write_records(out, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub m: usize,
    /// Median over trials of `|delta_m - delta_pop|`.
    pub median_abs_deviation: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    /// Mean difference statistic at the reference size, standing in for the
    /// population difference.
    pub delta_pop: f64,
    pub reference_m: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Least-squares slope of `ln(deviation)` against `ln(m)`.
    pub fn log_log_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| ((r.m as f64).ln(), r.median_abs_deviation.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_records(out, &self.rows)
    }
}

/// Ratio between the reference sample size and the largest grid size.
pub const REFERENCE_SIZE_FACTOR: usize = 4;

/// The reference size runs `trials / REFERENCE_TRIAL_DIVISOR` draws (rounded
/// up). Its mean then has the standard error of a full-trial mean at the
/// largest grid size, far below the deviations being measured.
pub const REFERENCE_TRIAL_DIVISOR: usize = 4;

/// Median absolute deviation of the dependent difference statistic
/// `HSIC_xy - HSIC_xz` from its large-sample mean, for each `m` in the grid.
pub fn convergence_diagnostic(
    m_grid: &[usize],
    c: &SynthConfig,
    trials: usize,
) -> Result<ConvergenceTable> {
    if m_grid.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "convergence grid needs at least 3 sizes, got {}",
            m_grid.len()
        )));
    }
    if m_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "convergence grid must be strictly ascending".into(),
        ));
    }
    check_trials(trials)?;
    let reference_m = REFERENCE_SIZE_FACTOR * m_grid[m_grid.len() - 1];
    for &m in m_grid {
        c.with_m(m).validate()?;
    }

    // Stream 0 feeds the reference size, stream k + 1 grid point k.
    let deltas = |stream: u64, m: usize, trials: usize| -> Result<Vec<f64>> {
        let level = trial_seed(c.seed, stream);
        par::map_range(trials, |t| {
            difference_statistic(&c.with_m(m).with_seed(trial_seed(level, t as u64)))
        })
        .into_iter()
        .collect()
    };
    let reference = deltas(0, reference_m, trials.div_ceil(REFERENCE_TRIAL_DIVISOR))?;
    let delta_pop = reference.iter().sum::<f64>() / reference.len() as f64;

    let rows = m_grid
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let devs = deltas(k as u64 + 1, m, trials)?
                .into_iter()
                .map(|d| (d - delta_pop).abs())
                .collect();
            Ok(ConvergenceRow {
                m,
                median_abs_deviation: median(devs),
                trials,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable {
        delta_pop,
        reference_m,
        rows,
    })
}

fn difference_statistic(c: &SynthConfig) -> Result<f64> {
    let j = sample_synthetic(c)?;
    let g = RelativeGrams::build(&j, &KernelConfig::default())?;
    Ok(hsic_unbiased(&g.kx, &g.ky)? - hsic_unbiased(&g.kx, &g.kz)?)
}

/// Median; mean of the two central values for even lengths.
pub fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Unbiased sample variance (`n - 1` denominator).
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn write_records<W: Write, T: Serialize>(out: W, rows: &[T]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(io::Error::other)?;
    }
    w.flush()
}

/// Output file name `{experiment}_{m}_{seed}.{extension}`.
pub fn output_file_name(experiment: &str, m: usize, seed: u64, extension: &str) -> String {
    format!("{experiment}_{m}_{seed}.{extension}")
}
