//! Slow reference forms of the gradient, used as oracles for the contracted
//! implementation.

use nalgebra::{DMatrix, DVector};

use super::GradientWorkspace;
use crate::error::{Error, Result};
use crate::estimators::LinearGMModel;
use crate::linalg::LN_2PI;
use crate::mixture::GaussianMixture;

/// Pair-loop form built from explicit `R`, `C` and `D` matrices:
///
/// `Σ_{a,b} ρ_a ρ_b [-(R_a + R_b) z^{a,b} + D^{(a,b)} + D^{(b,a)}] + 2 Ğ Σ_c ρ_c R_c`.
///
/// The bracket is symmetric in `(a, b)`, so only `a ≤ b` is visited and
/// off-diagonal pairs are doubled.
pub fn pairwise_gradient(model: &LinearGMModel, x: &DVector<f64>, n: &DVector<f64>) -> Result<DMatrix<f64>> {
    let ws = GradientWorkspace::new(model, x, n)?;
    let count = ws.rho.len();
    let g = ws.breve_g();
    let mut grad = DMatrix::zeros(model.y_dim(), model.x_dim());
    for a in 0..count {
        grad += &ws.r[a] * (2.0 * g * ws.rho[a]);
        for b in a..count {
            let w = ws.rho[a] * ws.rho[b] * if a == b { 1.0 } else { 2.0 };
            if w == 0.0 {
                continue;
            }
            let term = -(&ws.r[a] + &ws.r[b]) * ws.z.get(a, b) + ws.d_matrix(model, a, b) + ws.d_matrix(model, b, a);
            grad += term * w;
        }
    }
    Ok(grad)
}

/// Gradient written with linear-domain weights `h = p_k q_l p_r q_s f_a f_b`
/// and `t = Σ p q f`, recomputing every covariance, inverse and determinant
/// from the raw mixtures. Only usable where the densities do not underflow.
pub fn literal_gradient(
    h: &DMatrix<f64>,
    xmix: &GaussianMixture,
    nmix: &GaussianMixture,
    x: &DVector<f64>,
    n: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let y = h * x + n;
    let m = h.nrows();
    struct Term {
        weight: f64,
        r: DMatrix<f64>,
        u: DVector<f64>,
        cinv: DMatrix<f64>,
        w: DVector<f64>,
        cxx: DMatrix<f64>,
        dx: DVector<f64>,
    }
    let mut terms = Vec::new();
    for xc in xmix.components() {
        for nc in nmix.components() {
            let cxx = xc.covariance().clone();
            let cyy = h * &cxx * h.transpose() + nc.covariance();
            let cinv = cyy.clone().try_inverse().ok_or(Error::SingularCovariance)?;
            let det = cyy.determinant();
            let w = &y - (h * xc.mean() + nc.mean());
            let quad = (w.transpose() * &cinv * &w)[(0, 0)];
            let f = (-0.5 * (m as f64 * LN_2PI + det.ln() + quad)).exp();
            let p = h * &cxx;
            let r = &cinv * &w * (x - xc.mean()).transpose()
                + &cinv * (DMatrix::identity(m, m) - &w * w.transpose() * &cinv) * &p;
            let u = xc.mean() + &cxx * h.transpose() * &cinv * &w;
            terms.push(Term {
                weight: xc.weight() * nc.weight() * f,
                r,
                u,
                cinv,
                w,
                cxx,
                dx: x - xc.mean(),
            });
        }
    }
    let t: f64 = terms.iter().map(|s| s.weight).sum();
    let d_mat = |a: &Term, ub: &DVector<f64>| {
        let c = &a.cinv * &a.w * ub.transpose() * &a.cxx * h.transpose() * &a.cinv;
        &a.cinv * &a.w * ub.transpose() * &a.cxx - (&c + c.transpose()) * h * &a.cxx
            + &a.cinv * h * &a.cxx * ub * a.dx.transpose()
    };
    let d = x.len();
    let mut sum_h = 0.0;
    let mut first = DMatrix::zeros(m, d);
    let mut second = DMatrix::zeros(m, d);
    let mut sum_hz = 0.0;
    for a in &terms {
        for b in &terms {
            let hw = a.weight * b.weight;
            let z = a.u.dot(&b.u);
            sum_h += hw;
            sum_hz += hw * z;
            first += (&a.r + &b.r) * (hw * z);
            second += (d_mat(a, &b.u) + d_mat(b, &a.u)) * hw;
        }
    }
    let mut weighted_r = DMatrix::zeros(m, d);
    for a in &terms {
        weighted_r += &a.r * a.weight;
    }
    Ok(-first / sum_h + second / sum_h + weighted_r * (2.0 * sum_hz / (t * sum_h)))
}
