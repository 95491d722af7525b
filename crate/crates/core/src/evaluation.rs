//! Monte Carlo MSE/NMSE evaluation.
//!
//! Samples are split into fixed-size contiguous blocks; block `b` draws from
//! `RandomStream::new(seed, b)`. Per-block statistics are merged in block
//! order, so reports are bitwise identical for any worker count. Every
//! estimator evaluated in one call sees the same draws.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::LinearGMModel;
use crate::exec::{map_indexed, Execution};
use crate::linalg;
use crate::mixture::GaussianComponent;
use crate::rng::RandomStream;

/// Samples per Monte Carlo block (one random stream each).
pub const MC_BLOCK_SIZE: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Mmse,
    Lmmse,
    Genie,
    PriorMean,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Mmse => "mmse",
            EstimatorKind::Lmmse => "lmmse",
            EstimatorKind::Genie => "genie",
            EstimatorKind::PriorMean => "prior_mean",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmse" => Ok(EstimatorKind::Mmse),
            "lmmse" => Ok(EstimatorKind::Lmmse),
            "genie" => Ok(EstimatorKind::Genie),
            "prior_mean" => Ok(EstimatorKind::PriorMean),
            other => Err(Error::InvalidArgument(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Streaming mean/variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance (n - 1 denominator).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Sample standard deviation over √n.
    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub estimator: EstimatorKind,
    pub samples: usize,
    pub seed: u64,
    /// Mean squared error `E‖x - x̂‖²`.
    pub mmse: f64,
    /// Standard error of `mmse`.
    pub stderr: f64,
    /// `mmse / E‖x‖²` with the denominator computed analytically.
    pub nmse: f64,
    pub signal_energy: f64,
    /// `Σ p_k (tr C_k + ‖u_k‖²) - E‖u_{x|y}‖²`, only for the MMSE estimator.
    pub identity_mmse: Option<f64>,
    pub identity_stderr: Option<f64>,
}

impl EvaluationReport {
    pub fn nmse_stderr(&self) -> f64 {
        self.stderr / self.signal_energy
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockStats {
    errors: [RunningStats; 4],
    estimate_energy: RunningStats,
}

/// Evaluates one estimator with the default execution mode.
pub fn evaluate_nmse(
    model: &LinearGMModel,
    kind: EstimatorKind,
    samples: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    let mut reports = evaluate_paired(model, &[kind], samples, seed, Execution::default())?;
    Ok(reports.remove(0))
}

/// Evaluates several estimators on common random numbers.
pub fn evaluate_paired(
    model: &LinearGMModel,
    kinds: &[EstimatorKind],
    samples: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<EvaluationReport>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if kinds.contains(&EstimatorKind::Lmmse) && model.lmmse_filter().is_none() {
        return Err(Error::SingularCovariance);
    }
    let mut wanted = [false; 4];
    for &k in kinds {
        wanted[k as usize] = true;
    }
    let blocks = samples.div_ceil(MC_BLOCK_SIZE);
    let per_block = map_indexed(blocks, execution, |b| {
        let count = MC_BLOCK_SIZE.min(samples - b * MC_BLOCK_SIZE);
        run_block(model, &wanted, seed, b as u64, count)
    });
    let mut total = BlockStats {
        errors: [RunningStats::default(); 4],
        estimate_energy: RunningStats::default(),
    };
    for block in &per_block {
        for (t, s) in total.errors.iter_mut().zip(block.errors.iter()) {
            t.merge(s);
        }
        total.estimate_energy.merge(&block.estimate_energy);
    }
    let energy = model.signal_energy();
    Ok(kinds
        .iter()
        .map(|&kind| {
            let s = &total.errors[kind as usize];
            let (identity_mmse, identity_stderr) = if kind == EstimatorKind::Mmse {
                (
                    Some(energy - total.estimate_energy.mean()),
                    Some(total.estimate_energy.standard_error()),
                )
            } else {
                (None, None)
            };
            EvaluationReport {
                estimator: kind,
                samples,
                seed,
                mmse: s.mean(),
                stderr: s.standard_error(),
                nmse: s.mean() / energy,
                signal_energy: energy,
                identity_mmse,
                identity_stderr,
            }
        })
        .collect())
}

fn run_block(model: &LinearGMModel, wanted: &[bool; 4], seed: u64, stream: u64, count: usize) -> BlockStats {
    let (d, m) = (model.x_dim(), model.y_dim());
    let nc = model.components().len();
    let h = model.transfer();
    let xmix = model.x_mixture();
    let nmix = model.noise_mixture();
    let mut rng = RandomStream::new(seed, stream);
    let (mut x, mut n, mut y) = (vec![0.0; d], vec![0.0; m], vec![0.0; m]);
    let (mut est, mut scratch) = (vec![0.0; d], vec![0.0; m]);
    let (mut logs, mut weights) = (vec![0.0; nc], vec![0.0; nc]);
    let mut stats = BlockStats {
        errors: [RunningStats::default(); 4],
        estimate_energy: RunningStats::default(),
    };
    let sq_err = |x: &[f64], e: &[f64]| x.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let need_logs = wanted[EstimatorKind::Mmse as usize] || wanted[EstimatorKind::Genie as usize];
    for _ in 0..count {
        xmix.sample_into(&mut rng, &mut x);
        let l = nmix.sample_into(&mut rng, &mut n);
        y.copy_from_slice(&n);
        linalg::gemv_acc(&mut y, 1.0, h, &x);
        if need_logs {
            model.log_terms(&y, &mut logs, &mut scratch);
        }
        if wanted[EstimatorKind::Mmse as usize] {
            model.normalize(&logs, &mut weights, None);
            model.mix_posterior_means(&y, &weights, &mut est, &mut scratch);
            stats.errors[EstimatorKind::Mmse as usize].push(sq_err(&x, &est));
            stats.estimate_energy.push(linalg::dot(&est, &est));
        }
        if wanted[EstimatorKind::Genie as usize] {
            model.normalize(&logs, &mut weights, Some(l));
            model.mix_posterior_means(&y, &weights, &mut est, &mut scratch);
            stats.errors[EstimatorKind::Genie as usize].push(sq_err(&x, &est));
        }
        if wanted[EstimatorKind::Lmmse as usize] {
            // availability checked by the caller
            let _ = model.lmmse_into(&y, &mut est, &mut scratch);
            stats.errors[EstimatorKind::Lmmse as usize].push(sq_err(&x, &est));
        }
        if wanted[EstimatorKind::PriorMean as usize] {
            stats.errors[EstimatorKind::PriorMean as usize].push(sq_err(&x, model.prior_mean().as_slice()));
        }
    }
    stats
}

/// `tr(C_xx - C_xx Hᵀ (H C_xx Hᵀ + C_nn)⁻¹ H C_xx)` for single Gaussian inputs.
pub fn analytic_gaussian_mmse(
    h: &DMatrix<f64>,
    x: &GaussianComponent,
    n: &GaussianComponent,
) -> Result<f64> {
    if h.ncols() != x.dim() || h.nrows() != n.dim() {
        return Err(Error::ShapeMismatch {
            context: "analytic_gaussian_mmse",
            expected_rows: n.dim(),
            expected_cols: x.dim(),
            rows: h.nrows(),
            cols: h.ncols(),
        });
    }
    let hc = h * x.covariance();
    let cy = linalg::symmetrize(&(&hc * h.transpose() + n.covariance()));
    let chol = linalg::cholesky(&cy).ok_or(Error::SingularCovariance)?;
    let reduction = hc.transpose() * chol.solve(&hc);
    Ok(x.covariance().trace() - reduction.trace())
}

/// Empirical mean and covariance of `count` draws (test and diagnostics helper).
pub fn empirical_moments(
    mix: &crate::mixture::GaussianMixture,
    count: usize,
    seed: u64,
) -> (DVector<f64>, DMatrix<f64>) {
    let d = mix.dim();
    let mut rng = RandomStream::new(seed, 0);
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for _ in 0..count {
        let (v, _) = mix.sample(&mut rng);
        mean += &v;
        second += &v * v.transpose();
    }
    mean /= count as f64;
    second /= count as f64;
    let cov = second - &mean * mean.transpose();
    (mean, cov)
}
