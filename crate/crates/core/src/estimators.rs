//! The linear model `y = Hx + n` with cached per-component output quantities,
//! and the MMSE, LMMSE, genie-aided and prior-mean estimators built on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, LN_2PI};
use crate::mixture::{check_transfer_shape, GaussianMixture};

/// Output component `(k, l)` of the push-forward mixture, with everything the
/// estimators and the gradient need per observation.
#[derive(Debug, Clone)]
pub struct OutputComponent {
    k: usize,
    l: usize,
    log_weight: f64,
    log_norm: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
    gain: DMatrix<f64>,
}

impl OutputComponent {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// `log p_k + log q_l`.
    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    /// `u_y = H u_x + u_n`.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `C_yy = H C_xx Hᵀ + C_nn`.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    /// `C_yy⁻¹`, formed once from the Cholesky factor.
    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Cross gain `C_xx Hᵀ C_yy⁻¹` (D×M).
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// Log of the weighted component density `p_k q_l f^{(k,l)}(y)`.
    pub fn weighted_log_density(&self, y: &[f64], scratch: &mut [f64]) -> f64 {
        for (s, (yi, mi)) in scratch.iter_mut().zip(y.iter().zip(self.mean.iter())) {
            *s = yi - mi;
        }
        linalg::solve_lower_in_place(&self.cholesky, scratch);
        let q: f64 = scratch.iter().map(|v| v * v).sum();
        self.log_weight + self.log_norm - 0.5 * q
    }
}

/// Affine estimator `x̂ = μ_x + K (y - μ_y)` from overall moments.
#[derive(Debug, Clone)]
pub struct AffineEstimator {
    pub x_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
    pub gain: DMatrix<f64>,
}

/// Posterior component weights `ρ^{(k,l)}(y)` in k-major order and `log f(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub weights: Vec<f64>,
    pub log_density: f64,
}

#[derive(Debug, Clone)]
pub struct LinearGMModel {
    h: DMatrix<f64>,
    xmix: GaussianMixture,
    nmix: GaussianMixture,
    components: Vec<OutputComponent>,
    h_cov_x: Vec<DMatrix<f64>>,
    lmmse: Option<AffineEstimator>,
    prior_mean: DVector<f64>,
    signal_energy: f64,
}

impl LinearGMModel {
    pub fn new(h: DMatrix<f64>, xmix: &GaussianMixture, nmix: &GaussianMixture) -> Result<Self> {
        check_transfer_shape(&h, xmix, nmix)?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("transfer matrix has non-finite entries".into()));
        }
        let m = nmix.dim();
        let ht = h.transpose();
        let h_cov_x: Vec<DMatrix<f64>> = xmix.components().iter().map(|c| &h * c.covariance()).collect();
        let mut components = Vec::with_capacity(xmix.len() * nmix.len());
        for (k, xc) in xmix.components().iter().enumerate() {
            let hch = &h_cov_x[k] * &ht;
            let hu = &h * xc.mean();
            for (l, nc) in nmix.components().iter().enumerate() {
                let cov = linalg::symmetrize(&(&hch + nc.covariance()));
                let chol = linalg::cholesky(&cov).ok_or(Error::OutputCovariance { k, l })?;
                let inverse = linalg::symmetrize(&chol.inverse());
                // gainᵀ = C_yy⁻¹ H C_xx
                let gain = chol.solve(&h_cov_x[k]).transpose();
                let cholesky = chol.unpack();
                let log_det = linalg::log_det_from_lower(&cholesky);
                components.push(OutputComponent {
                    k,
                    l,
                    log_weight: xmix.log_weights()[k] + nmix.log_weights()[l],
                    log_norm: -0.5 * (m as f64 * LN_2PI + log_det),
                    mean: &hu + nc.mean(),
                    covariance: cov,
                    cholesky,
                    inverse,
                    log_det,
                    gain,
                });
            }
        }
        let (x_mean, x_cov) = xmix.moments();
        let (n_mean, n_cov) = nmix.moments();
        let y_cov = linalg::symmetrize(&(&h * &x_cov * &ht + n_cov));
        let lmmse = linalg::cholesky(&y_cov).map(|chol| AffineEstimator {
            y_mean: &h * &x_mean + n_mean,
            gain: chol.solve(&(&h * &x_cov)).transpose(),
            x_mean: x_mean.clone(),
        });
        Ok(Self {
            signal_energy: xmix.second_moment_trace(),
            prior_mean: x_mean,
            h,
            xmix: xmix.clone(),
            nmix: nmix.clone(),
            components,
            h_cov_x,
            lmmse,
        })
    }

    /// Same mixtures, new transfer matrix.
    pub fn with_transfer(&self, h: DMatrix<f64>) -> Result<Self> {
        Self::new(h, &self.xmix, &self.nmix)
    }

    pub fn transfer(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn x_mixture(&self) -> &GaussianMixture {
        &self.xmix
    }

    pub fn noise_mixture(&self) -> &GaussianMixture {
        &self.nmix
    }

    pub fn x_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn y_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn components(&self) -> &[OutputComponent] {
        &self.components
    }

    /// Flat k-major index of `(k, l)`.
    pub fn component_index(&self, k: usize, l: usize) -> usize {
        k * self.nmix.len() + l
    }

    /// `H C_xx^{(k)}`.
    pub fn h_cov_x(&self, k: usize) -> &DMatrix<f64> {
        &self.h_cov_x[k]
    }

    pub fn lmmse_filter(&self) -> Option<&AffineEstimator> {
        self.lmmse.as_ref()
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    /// `E‖x‖² = Σ p_k (tr C_xx^{(k)} + ‖u_x^{(k)}‖²)`.
    pub fn signal_energy(&self) -> f64 {
        self.signal_energy
    }

    fn check_observation(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.y_dim() {
            return Err(Error::DimensionMismatch {
                context: "observation",
                expected: self.y_dim(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// Fills `logs[a] = log p_k q_l f^{(k,l)}(y)` for every component.
    pub(crate) fn log_terms(&self, y: &[f64], logs: &mut [f64], scratch: &mut [f64]) {
        for (c, out) in self.components.iter().zip(logs.iter_mut()) {
            *out = c.weighted_log_density(y, scratch);
        }
    }

    /// Turns log terms into normalized weights, optionally restricted to the
    /// components with noise index `only_l`. Returns the log normalizer.
    pub(crate) fn normalize(&self, logs: &[f64], weights: &mut [f64], only_l: Option<usize>) -> f64 {
        let keep = |c: &OutputComponent| only_l.is_none_or(|l| c.l == l);
        let max = self
            .components
            .iter()
            .zip(logs)
            .filter(|(c, _)| keep(c))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for ((c, &v), w) in self.components.iter().zip(logs).zip(weights.iter_mut()) {
            *w = if keep(c) { (v - max).exp() } else { 0.0 };
            total += *w;
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        max + total.ln()
    }

    /// `out = Σ_a ρ_a u_{x|y}^{(a)}`.
    pub(crate) fn mix_posterior_means(&self, y: &[f64], weights: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, &rho) in self.components.iter().zip(weights) {
            if rho == 0.0 {
                continue;
            }
            let ux = self.xmix.component(c.k).mean();
            for (o, u) in out.iter_mut().zip(ux.iter()) {
                *o += rho * u;
            }
            for (s, (yi, mi)) in scratch.iter_mut().zip(y.iter().zip(c.mean.iter())) {
                *s = yi - mi;
            }
            linalg::gemv_acc(out, rho, &c.gain, scratch);
        }
    }

    pub(crate) fn lmmse_into(&self, y: &[f64], out: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        let f = self.lmmse.as_ref().ok_or(Error::SingularCovariance)?;
        out.copy_from_slice(f.x_mean.as_slice());
        for (s, (yi, mi)) in scratch.iter_mut().zip(y.iter().zip(f.y_mean.iter())) {
            *s = yi - mi;
        }
        linalg::gemv_acc(out, 1.0, &f.gain, scratch);
        Ok(())
    }

    pub fn responsibilities(&self, y: &DVector<f64>) -> Result<Responsibilities> {
        self.check_observation(y)?;
        let mut logs = vec![0.0; self.components.len()];
        let mut weights = vec![0.0; self.components.len()];
        let mut scratch = vec![0.0; self.y_dim()];
        self.log_terms(y.as_slice(), &mut logs, &mut scratch);
        let log_density = self.normalize(&logs, &mut weights, None);
        Ok(Responsibilities { weights, log_density })
    }

    /// Component posterior mean `u_x^{(k)} + C_xx^{(k)} Hᵀ C_yy^{-(k,l)} (y - u_y^{(k,l)})`.
    pub fn component_posterior_mean(&self, index: usize, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_observation(y)?;
        let c = &self.components[index];
        Ok(self.xmix.component(c.k).mean() + &c.gain * (y - &c.mean))
    }

    /// Conditional mean `E{x | y}`.
    pub fn mmse_estimate(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.responsibilities(y)?;
        let mut out = DVector::zeros(self.x_dim());
        let mut scratch = vec![0.0; self.y_dim()];
        self.mix_posterior_means(y.as_slice(), &r.weights, out.as_mut_slice(), &mut scratch);
        Ok(out)
    }

    /// Best affine estimator from the overall first and second moments.
    pub fn lmmse_estimate(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_observation(y)?;
        let mut out = DVector::zeros(self.x_dim());
        let mut scratch = vec![0.0; self.y_dim()];
        self.lmmse_into(y.as_slice(), out.as_mut_slice(), &mut scratch)?;
        Ok(out)
    }

    /// MMSE estimate when the active noise component `l` is revealed.
    pub fn genie_estimate(&self, y: &DVector<f64>, l: usize) -> Result<DVector<f64>> {
        self.check_observation(y)?;
        if l >= self.nmix.len() {
            return Err(Error::ComponentIndex {
                index: l,
                count: self.nmix.len(),
            });
        }
        let n = self.components.len();
        let (mut logs, mut weights) = (vec![0.0; n], vec![0.0; n]);
        let mut scratch = vec![0.0; self.y_dim()];
        self.log_terms(y.as_slice(), &mut logs, &mut scratch);
        self.normalize(&logs, &mut weights, Some(l));
        let mut out = DVector::zeros(self.x_dim());
        self.mix_posterior_means(y.as_slice(), &weights, out.as_mut_slice(), &mut scratch);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn iso(d: usize, s: f64) -> DMatrix<f64> {
        DMatrix::identity(d, d) * s
    }

    fn std_gaussian(d: usize) -> GaussianMixture {
        GaussianMixture::gaussian(DVector::zeros(d), iso(d, 1.0)).unwrap()
    }

    fn cluster_noise() -> GaussianMixture {
        GaussianMixture::from_parts(
            &[0.5, 0.5],
            vec![dvector![5.0, 5.0], dvector![-5.0, -5.0]],
            vec![iso(2, 0.5), iso(2, 0.5)],
        )
        .unwrap()
    }

    #[test]
    fn gaussian_cache() {
        let m = LinearGMModel::new(iso(3, 1.0), &std_gaussian(3), &std_gaussian(3)).unwrap();
        let c = &m.components()[0];
        assert!((c.covariance() - iso(3, 2.0)).norm() < 1e-14);
        assert!((c.log_det() - 3.0 * 2f64.ln()).abs() < 1e-14);
        assert!((c.inverse() - iso(3, 0.5)).norm() < 1e-14);
    }

    #[test]
    fn cluster_model_cache() {
        let m = LinearGMModel::new(iso(2, 1.0), &std_gaussian(2), &cluster_noise()).unwrap();
        for c in m.components() {
            assert!((c.covariance() - iso(2, 1.5)).norm() < 1e-14);
        }
        let zero = LinearGMModel::new(DMatrix::zeros(2, 2), &std_gaussian(2), &cluster_noise()).unwrap();
        assert!(zero.components().iter().all(|c| c.gain().norm() == 0.0));
    }

    #[test]
    fn cache_matches_recomputation() {
        let x = GaussianMixture::from_parts(
            &[0.4, 0.6],
            vec![dvector![1.0, 0.0, -1.0], dvector![0.0, 2.0, 0.5]],
            vec![iso(3, 0.7), DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 0.5])],
        )
        .unwrap();
        let n = cluster_noise();
        let h = DMatrix::from_row_slice(2, 3, &[0.3, -1.0, 0.4, 1.1, 0.2, -0.7]);
        let m = LinearGMModel::new(h.clone(), &x, &n).unwrap();
        for c in m.components() {
            let xc = x.component(c.k());
            let nc = n.component(c.l());
            let cov = &h * xc.covariance() * h.transpose() + nc.covariance();
            let inv = cov.clone().try_inverse().unwrap();
            let gain = xc.covariance() * h.transpose() * &inv;
            assert!((c.covariance() - &cov).norm() <= 1e-10 * cov.norm());
            assert!((c.inverse() - &inv).norm() <= 1e-10 * inv.norm());
            assert!((c.gain() - &gain).norm() <= 1e-10 * gain.norm());
            assert!((c.mean() - (&h * xc.mean() + nc.mean())).norm() < 1e-12);
            assert!((c.log_det() - cov.determinant().ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_component_responsibility() {
        let m = LinearGMModel::new(iso(2, 1.0), &std_gaussian(2), &std_gaussian(2)).unwrap();
        let r = m.responsibilities(&dvector![3.0, -1.0]).unwrap();
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn equidistant_observation_splits_evenly() {
        let m = LinearGMModel::new(iso(2, 1.0), &std_gaussian(2), &cluster_noise()).unwrap();
        let r = m.responsibilities(&dvector![0.0, 0.0]).unwrap();
        assert!((r.weights[0] - 0.5).abs() < 1e-15 && (r.weights[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cluster_center_responsibility_matches_direct_ratio() {
        // y = (5,5), C_yy = 1.5 I: ρ_2/ρ_1 = exp(-½·200/1.5) exactly.
        let m = LinearGMModel::new(iso(2, 1.0), &std_gaussian(2), &cluster_noise()).unwrap();
        let r = m.responsibilities(&dvector![5.0, 5.0]).unwrap();
        let ratio = (-200.0_f64 / 3.0).exp();
        let expected_far = ratio / (1.0 + ratio);
        assert!((r.weights[1] - expected_far).abs() <= 1e-12 * expected_far);
        assert!((r.weights[0] - 1.0 / (1.0 + ratio)).abs() < 1e-15);
        let expected_log_f = -(2.0 * std::f64::consts::PI * 1.5).ln() + (0.5f64).ln() + ratio.ln_1p();
        assert!((r.log_density - expected_log_f).abs() < 1e-13);
    }

    #[test]
    fn gaussian_posterior_mean() {
        let m = LinearGMModel::new(iso(2, 1.0), &std_gaussian(2), &std_gaussian(2)).unwrap();
        let est = m.mmse_estimate(&dvector![2.0, 2.0]).unwrap();
        assert!((est - dvector![1.0, 1.0]).norm() < 1e-15);
    }

    #[test]
    fn zero_map_returns_prior_mean() {
        let x = GaussianMixture::from_parts(
            &[0.25, 0.75],
            vec![dvector![4.0, 0.0], dvector![0.0, -1.0]],
            vec![iso(2, 1.0), iso(2, 2.0)],
        )
        .unwrap();
        let m = LinearGMModel::new(DMatrix::zeros(2, 2), &x, &cluster_noise()).unwrap();
        let prior = dvector![1.0, -0.75];
        for y in [dvector![0.0, 0.0], dvector![10.0, -3.0], dvector![-50.0, 7.0]] {
            let err = (m.mmse_estimate(&y).unwrap() - &prior).norm();
            assert!(err < 1e-12, "{err}");
            assert!((m.lmmse_estimate(&y).unwrap() - &prior).norm() < 1e-14);
        }
    }

    #[test]
    fn lmmse_equals_mmse_for_gaussians() {
        let x = GaussianMixture::gaussian(dvector![1.0, -1.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let n = GaussianMixture::gaussian(dvector![0.3, 0.0, 0.1], iso(3, 0.4)).unwrap();
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.5, 1.0, 0.3, 0.3]);
        let m = LinearGMModel::new(h, &x, &n).unwrap();
        let mut rng = crate::rng::RandomStream::new(5, 0);
        for _ in 0..20 {
            let y = DVector::from_fn(3, |_, _| 3.0 * rng.standard_normal());
            let a = m.mmse_estimate(&y).unwrap();
            let b = m.lmmse_estimate(&y).unwrap();
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn genie_with_single_noise_component_is_mmse() {
        let x = GaussianMixture::from_parts(
            &[0.5, 0.5],
            vec![dvector![2.0, 0.0], dvector![-2.0, 0.0]],
            vec![iso(2, 1.0), iso(2, 1.0)],
        )
        .unwrap();
        let m = LinearGMModel::new(iso(2, 0.8), &x, &std_gaussian(2)).unwrap();
        let y = dvector![0.7, -0.2];
        assert!((m.genie_estimate(&y, 0).unwrap() - m.mmse_estimate(&y).unwrap()).norm() < 1e-15);
        assert!(matches!(m.genie_estimate(&y, 1), Err(Error::ComponentIndex { .. })));
    }

    #[test]
    fn genie_matches_reduced_gaussian_formula() {
        let a = 1.7;
        let m = LinearGMModel::new(iso(2, a), &std_gaussian(2), &cluster_noise()).unwrap();
        let y = dvector![0.4, 2.0];
        for (l, un) in [(0, dvector![5.0, 5.0]), (1, dvector![-5.0, -5.0])] {
            let expected = (&y - un) * (a / (a * a + 0.5));
            assert!((m.genie_estimate(&y, l).unwrap() - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn shift_of_noise_means_is_absorbed() {
        let x = GaussianMixture::from_parts(
            &[0.3, 0.7],
            vec![dvector![1.0, 0.0], dvector![-1.0, 1.0]],
            vec![iso(2, 0.5), iso(2, 1.5)],
        )
        .unwrap();
        let shift = dvector![3.0, -2.0];
        let shifted = GaussianMixture::from_parts(
            &[0.5, 0.5],
            vec![dvector![5.0, 5.0] + &shift, dvector![-5.0, -5.0] + &shift],
            vec![iso(2, 0.5), iso(2, 0.5)],
        )
        .unwrap();
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 0.9]);
        let m0 = LinearGMModel::new(h.clone(), &x, &cluster_noise()).unwrap();
        let m1 = LinearGMModel::new(h, &x, &shifted).unwrap();
        let y = dvector![0.3, -1.2];
        let a = m0.mmse_estimate(&y).unwrap();
        let b = m1.mmse_estimate(&(&y + &shift)).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn observation_dimension_checked() {
        let m = LinearGMModel::new(iso(2, 1.0), &std_gaussian(2), &std_gaussian(2)).unwrap();
        assert!(m.mmse_estimate(&dvector![1.0]).is_err());
        assert!(LinearGMModel::new(DMatrix::zeros(3, 2), &std_gaussian(2), &std_gaussian(2)).is_err());
    }
}
