//! Gaussian mixtures: construction, sampling, log densities, moments, and the
//! push-forward through `y = Hx + n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, LN_2PI};
use crate::rng::RandomStream;

/// Weight deviations up to this size are renormalized at construction.
pub const WEIGHT_RENORMALIZE_TOLERANCE: f64 = 1e-9;
const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// One weighted multivariate normal component.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    log_det: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::build(0, weight, mean, covariance)
    }

    /// Adds `jitter * I` to the covariance before factorizing.
    pub fn with_jitter(
        weight: f64,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        jitter: f64,
    ) -> Result<Self> {
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {jitter}")));
        }
        let n = covariance.nrows();
        let covariance = covariance + DMatrix::identity(n, n) * jitter;
        Self::build(0, weight, mean, covariance)
    }

    fn build(index: usize, weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidComponent { index, reason };
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(invalid(format!("weight must be a finite nonnegative number, got {weight}")));
        }
        let d = mean.len();
        if d == 0 {
            return Err(invalid("mean has dimension zero".into()));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(invalid(format!(
                "covariance is {}x{}, mean has dimension {d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite mean or covariance entry".into()));
        }
        let asym = linalg::relative_asymmetry(&covariance);
        if asym > SYMMETRY_TOLERANCE {
            return Err(invalid(format!("covariance is not symmetric (relative defect {asym:e})")));
        }
        let covariance = linalg::symmetrize(&covariance);
        let chol = linalg::cholesky(&covariance)
            .ok_or_else(|| invalid("covariance is not positive definite".into()))?;
        let cholesky = chol.unpack();
        let log_det = linalg::log_det_from_lower(&cholesky);
        Ok(Self {
            weight,
            mean,
            covariance,
            cholesky,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular factor `L` with `L Lᵀ = covariance`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Log of the (unweighted) normal density at `v`.
    pub fn log_pdf(&self, v: &DVector<f64>) -> f64 {
        let mut diff: Vec<f64> = v.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        linalg::solve_lower_in_place(&self.cholesky, &mut diff);
        let q: f64 = diff.iter().map(|z| z * z).sum();
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + q)
    }

    fn reweighted(&self, weight: f64) -> Self {
        Self {
            weight,
            ..self.clone()
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            weight: self.weight,
            mean: self.mean.clone(),
            covariance: &self.covariance * factor,
            cholesky: &self.cholesky * factor.sqrt(),
            log_det: self.log_det + self.dim() as f64 * factor.ln(),
        }
    }
}

/// A finite, ordered mixture of equal-dimension Gaussian components.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
    log_weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components.first().ok_or(Error::EmptyMixture)?;
        let d = first.dim();
        for (index, c) in components.iter().enumerate() {
            if c.dim() != d {
                return Err(Error::InvalidComponent {
                    index,
                    reason: format!("dimension {} differs from component 0 ({d})", c.dim()),
                });
            }
        }
        let sum: f64 = components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_RENORMALIZE_TOLERANCE {
            return Err(Error::WeightSum { sum });
        }
        let components: Vec<_> = components.iter().map(|c| c.reweighted(c.weight / sum)).collect();
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        let mut acc = 0.0;
        let cumulative = components
            .iter()
            .map(|c| {
                acc += c.weight;
                acc
            })
            .collect();
        Ok(Self {
            components,
            log_weights,
            cumulative,
        })
    }

    /// Builds a mixture from parallel lists of weights, means and covariances.
    pub fn from_parts(
        weights: &[f64],
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights, {} means, {} covariances",
                weights.len(),
                means.len(),
                covariances.len()
            )));
        }
        let components = weights
            .iter()
            .zip(means)
            .zip(covariances)
            .enumerate()
            .map(|(i, ((&w, m), c))| GaussianComponent::build(i, w, m, c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    /// Single-component mixture.
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::from_parts(&[1.0], vec![mean], vec![covariance])
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, index: usize) -> &GaussianComponent {
        &self.components[index]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Draws a categorical component index by weight.
    pub fn sample_index(&self, rng: &mut RandomStream) -> usize {
        let u = rng.uniform();
        match self.cumulative.iter().position(|&c| u < c) {
            Some(i) => i,
            // Rounding left the last cumulative weight below `u`.
            None => self
                .components
                .iter()
                .rposition(|c| c.weight > 0.0)
                .unwrap_or(self.components.len() - 1),
        }
    }

    /// Writes one draw into `out` and returns the latent component index.
    pub fn sample_into(&self, rng: &mut RandomStream, out: &mut [f64]) -> usize {
        let k = self.sample_index(rng);
        let c = &self.components[k];
        let d = c.dim();
        debug_assert_eq!(out.len(), d);
        let mut z = [0.0_f64; 16];
        let mut z_heap;
        let z: &mut [f64] = if d <= z.len() {
            &mut z[..d]
        } else {
            z_heap = vec![0.0; d];
            &mut z_heap
        };
        rng.fill_standard_normal(z);
        for i in 0..d {
            let mut s = c.mean[i];
            for j in 0..=i {
                s += c.cholesky[(i, j)] * z[j];
            }
            out[i] = s;
        }
        k
    }

    /// Draws `(x, k)`: the component `k` by weight, then `x ~ N(mean_k, cov_k)`.
    pub fn sample(&self, rng: &mut RandomStream) -> (DVector<f64>, usize) {
        let mut x = DVector::zeros(self.dim());
        let k = self.sample_into(rng, x.as_mut_slice());
        (x, k)
    }

    /// `log Σ_j w_j N(v; mean_j, cov_j)` evaluated with log-sum-exp.
    pub fn log_density(&self, v: &DVector<f64>) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "log_density",
                expected: self.dim(),
                actual: v.len(),
            });
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + c.log_pdf(v))
            .collect();
        Ok(linalg::log_sum_exp(&terms))
    }

    /// Overall mean and covariance.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for c in &self.components {
            mean += &c.mean * c.weight;
            second += (&c.covariance + &c.mean * c.mean.transpose()) * c.weight;
        }
        let cov = second - &mean * mean.transpose();
        (mean, linalg::symmetrize(&cov))
    }

    /// `E‖v‖² = Σ_j w_j (tr C_j + ‖μ_j‖²)`.
    pub fn second_moment_trace(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * (c.covariance.trace() + c.mean.norm_squared()))
            .sum()
    }

    /// Same weights and means with every covariance multiplied by `factor`.
    pub fn with_scaled_covariances(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "covariance scale must be positive, got {factor}"
            )));
        }
        Ok(Self {
            components: self.components.iter().map(|c| c.scaled(factor)).collect(),
            log_weights: self.log_weights.clone(),
            cumulative: self.cumulative.clone(),
        })
    }
}

/// Mixture of `y = Hx + n`: components `(k, l)` in k-major order with weight
/// `p_k q_l`, mean `H u_k + u_l` and covariance `H C_k Hᵀ + C_l`.
pub fn push_forward(
    h: &DMatrix<f64>,
    xmix: &GaussianMixture,
    nmix: &GaussianMixture,
) -> Result<GaussianMixture> {
    check_transfer_shape(h, xmix, nmix)?;
    let mut components = Vec::with_capacity(xmix.len() * nmix.len());
    for xc in xmix.components() {
        let hx_mean = h * xc.mean();
        let hch = h * xc.covariance() * h.transpose();
        for nc in nmix.components() {
            let index = components.len();
            components.push(GaussianComponent::build(
                index,
                xc.weight() * nc.weight(),
                &hx_mean + nc.mean(),
                linalg::symmetrize(&(&hch + nc.covariance())),
            )?);
        }
    }
    GaussianMixture::new(components)
}

pub(crate) fn check_transfer_shape(
    h: &DMatrix<f64>,
    xmix: &GaussianMixture,
    nmix: &GaussianMixture,
) -> Result<()> {
    if h.ncols() != xmix.dim() || h.nrows() != nmix.dim() {
        return Err(Error::ShapeMismatch {
            context: "transfer matrix",
            expected_rows: nmix.dim(),
            expected_cols: xmix.dim(),
            rows: h.nrows(),
            cols: h.ncols(),
        });
    }
    Ok(())
}

/// One joint draw of signal and noise with their latent component indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub x: DVector<f64>,
    pub k: usize,
    pub n: DVector<f64>,
    pub l: usize,
}

impl Draw {
    pub fn sample(xmix: &GaussianMixture, nmix: &GaussianMixture, rng: &mut RandomStream) -> Self {
        let (x, k) = xmix.sample(rng);
        let (n, l) = nmix.sample(rng);
        Self { x, k, n, l }
    }

    pub fn observation(&self, h: &DMatrix<f64>) -> DVector<f64> {
        h * &self.x + &self.n
    }
}
