//! Random well-conditioned model instances for gradient checks and tests.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::mixture::{Draw, GaussianMixture};
use crate::rng::RandomStream;

/// Bounds of a random instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub max_dim: usize,
    pub max_components: usize,
    /// Covariance eigenvalues are log-uniform in `[eig_min, eig_max]`.
    pub eig_min: f64,
    pub eig_max: f64,
    pub mean_scale: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            max_dim: 3,
            max_components: 2,
            eig_min: 0.2,
            eig_max: 2.0,
            mean_scale: 1.0,
        }
    }
}

/// Mixtures, a transfer matrix and one latent draw.
#[derive(Debug, Clone)]
pub struct Instance {
    pub xmix: GaussianMixture,
    pub nmix: GaussianMixture,
    pub h: DMatrix<f64>,
    pub draw: Draw,
}

fn uniform_int(rng: &mut RandomStream, lo: usize, hi: usize) -> usize {
    lo + ((rng.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut RandomStream, d: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d, d);
    rng.fill_standard_normal(a.as_mut_slice());
    a.qr().q()
}

/// `Q diag(λ) Qᵀ` with log-uniform eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut RandomStream, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, d);
    let lam = DVector::from_fn(d, |_, _| (lo.ln() + rng.uniform() * (hi / lo).ln()).exp());
    let c = &q * DMatrix::from_diagonal(&lam) * q.transpose();
    (&c + c.transpose()) * 0.5
}

pub fn random_mixture(rng: &mut RandomStream, d: usize, k: usize, spec: &InstanceSpec) -> Result<GaussianMixture> {
    let raw: Vec<f64> = (0..k).map(|_| 0.2 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let means = (0..k)
        .map(|_| DVector::from_fn(d, |_, _| spec.mean_scale * rng.standard_normal()))
        .collect();
    let covs = (0..k).map(|_| random_spd(rng, d, spec.eig_min, spec.eig_max)).collect();
    GaussianMixture::from_parts(&weights, means, covs)
}

/// Instance with random dimensions `D, M ∈ [1, max_dim]` and component counts
/// `K, L ∈ [1, max_components]`.
pub fn random_instance(rng: &mut RandomStream, spec: &InstanceSpec) -> Result<Instance> {
    let d = uniform_int(rng, 1, spec.max_dim);
    let m = uniform_int(rng, 1, spec.max_dim);
    random_instance_with_dims(rng, spec, d, m)
}

pub fn random_instance_with_dims(rng: &mut RandomStream, spec: &InstanceSpec, d: usize, m: usize) -> Result<Instance> {
    let k = uniform_int(rng, 1, spec.max_components);
    let l = uniform_int(rng, 1, spec.max_components);
    let xmix = random_mixture(rng, d, k, spec)?;
    let nmix = random_mixture(rng, m, l, spec)?;
    let mut h = DMatrix::zeros(m, d);
    rng.fill_standard_normal(h.as_mut_slice());
    let draw = Draw::sample(&xmix, &nmix, rng);
    Ok(Instance { xmix, nmix, h, draw })
}
