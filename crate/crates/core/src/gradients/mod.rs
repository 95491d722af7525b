//! Stochastic gradient of `Ğ(Hx + n) = ‖u_{x|y}‖²` with respect to `H`, its
//! pullbacks through the precoder (`H = BF`) and pilot (`H = Sᵀ ⊗ I_m`)
//! structures, and a central finite-difference oracle.
//!
//! Every ratio of the form `p_k q_l f^{(k,l)} / Σ p q f` is handled as a
//! responsibility `ρ^{(k,l)}` computed in the log domain, and products of two
//! such ratios as `ρ^{(k,l)} ρ^{(r,s)}`. With that substitution the pair sum
//! over `((k,l), (r,s))` contracts to a single sum over components:
//!
//! ```text
//! ∂Ğ/∂H = 2 Σ_a ρ_a [ (Ğ - u_aᵀū) R_a + D_a(ū) ]
//! ```
//!
//! where `ū = Σ ρ_a u_a` is the MMSE estimate and `D_a(·)` is linear in its
//! argument. [`reference`] keeps the pair-loop and the linear-domain forms.

pub mod reference;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{LinearGMModel, Responsibilities};
use crate::exec::{map_indexed, pairwise_sum, Execution};
use crate::linalg;
use crate::mixture::Draw;

/// Default relative finite-difference step: `h = step · (1 + |θ|)`.
pub const FD_RELATIVE_STEP: f64 = 1e-6;

/// Symmetric table `z^{a,b} = u_aᵀ u_b` of component posterior mean products.
#[derive(Debug, Clone, PartialEq)]
pub struct ZTable {
    size: usize,
    values: Vec<f64>,
}

impl ZTable {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size + b]
    }

    /// `Σ_{a,b} ρ_a ρ_b z^{a,b}`.
    pub fn weighted_sum(&self, rho: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..self.size {
            for b in 0..self.size {
                s += rho[a] * rho[b] * self.get(a, b);
            }
        }
        s
    }
}

fn z_table(means: &[DVector<f64>]) -> ZTable {
    let size = means.len();
    let mut values = vec![0.0; size * size];
    for a in 0..size {
        for b in a..size {
            let z = means[a].dot(&means[b]);
            values[a * size + b] = z;
            values[b * size + a] = z;
        }
    }
    ZTable { size, values }
}

/// z table and responsibilities at observation `y`.
pub fn component_posterior_norms(model: &LinearGMModel, y: &DVector<f64>) -> Result<(ZTable, Responsibilities)> {
    let rho = model.responsibilities(y)?;
    let means = (0..model.components().len())
        .map(|a| model.component_posterior_mean(a, y))
        .collect::<Result<Vec<_>>>()?;
    Ok((z_table(&means), rho))
}

fn check_inputs(model: &LinearGMModel, x: &DVector<f64>, n: &DVector<f64>) -> Result<()> {
    if x.len() != model.x_dim() {
        return Err(Error::DimensionMismatch {
            context: "signal sample",
            expected: model.x_dim(),
            actual: x.len(),
        });
    }
    if n.len() != model.y_dim() {
        return Err(Error::DimensionMismatch {
            context: "noise sample",
            expected: model.y_dim(),
            actual: n.len(),
        });
    }
    Ok(())
}

/// `Ğ(Hx + n) = ‖E{x | y = Hx + n}‖²`.
pub fn breve_g(model: &LinearGMModel, x: &DVector<f64>, n: &DVector<f64>) -> Result<f64> {
    check_inputs(model, x, n)?;
    let y = model.transfer() * x + n;
    Ok(model.mmse_estimate(&y)?.norm_squared())
}

/// Per-sample intermediates of the gradient, kept explicitly for inspection
/// and for the reference implementations.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// `w_a = y - u_y^{(a)}`.
    pub innovations: Vec<DVector<f64>>,
    /// `R_a = C⁻¹ w (x - u_x)ᵀ + C⁻¹ (I - w wᵀ C⁻¹) H C_xx`.
    pub r: Vec<DMatrix<f64>>,
    /// Component posterior means `u_{x|y}^{(a)}`.
    pub means: Vec<DVector<f64>>,
    pub rho: Vec<f64>,
    pub z: ZTable,
}

impl GradientWorkspace {
    pub fn new(model: &LinearGMModel, x: &DVector<f64>, n: &DVector<f64>) -> Result<Self> {
        check_inputs(model, x, n)?;
        let h = model.transfer();
        let y = h * x + n;
        let rho = model.responsibilities(&y)?.weights;
        let m = model.y_dim();
        let mut innovations = Vec::new();
        let mut r = Vec::new();
        let mut means = Vec::new();
        for (a, c) in model.components().iter().enumerate() {
            let ux = model.x_mixture().component(c.k()).mean();
            let w = &y - c.mean();
            let cinv = c.inverse();
            let r_a = cinv * &w * (x - ux).transpose()
                + cinv * (DMatrix::identity(m, m) - &w * w.transpose() * cinv) * model.h_cov_x(c.k());
            means.push(model.component_posterior_mean(a, &y)?);
            innovations.push(w);
            r.push(r_a);
        }
        let z = z_table(&means);
        Ok(Self {
            x: x.clone(),
            y,
            innovations,
            r,
            means,
            rho,
            z,
        })
    }

    /// `Σ ρ_a ρ_b z^{a,b}`, equal to `Ğ`.
    pub fn breve_g(&self) -> f64 {
        self.z.weighted_sum(&self.rho)
    }

    /// `C^{(a,b)} = C_a⁻¹ w_a u_bᵀ C_xx^{(k)} Hᵀ C_a⁻¹`.
    pub fn c_matrix(&self, model: &LinearGMModel, a: usize, b: usize) -> DMatrix<f64> {
        let c = &model.components()[a];
        let cinv = c.inverse();
        let cxx = model.x_mixture().component(c.k()).covariance();
        cinv * &self.innovations[a] * self.means[b].transpose() * cxx * model.transfer().transpose() * cinv
    }

    /// `D^{(a,b)}`: gradient of `u_bᵀ u_a` through `u_a` with `u_b` held fixed.
    pub fn d_matrix(&self, model: &LinearGMModel, a: usize, b: usize) -> DMatrix<f64> {
        let c = &model.components()[a];
        let cinv = c.inverse();
        let xc = model.x_mixture().component(c.k());
        let cxx = xc.covariance();
        let hc = model.h_cov_x(c.k());
        let cm = self.c_matrix(model, a, b);
        cinv * &self.innovations[a] * self.means[b].transpose() * cxx - (&cm + cm.transpose()) * hc
            + cinv * hc * &self.means[b] * (&self.x - xc.mean()).transpose()
    }
}

/// Reusable buffers for [`stochastic_gradient_with`].
#[derive(Debug, Clone, Default)]
pub struct GradientScratch {
    y: Vec<f64>,
    logs: Vec<f64>,
    rho: Vec<f64>,
    w: Vec<f64>,
    v: Vec<f64>,
    means: Vec<f64>,
    vs: Vec<f64>,
    mean: Vec<f64>,
    e: Vec<f64>,
    f: Vec<f64>,
    q: Vec<f64>,
}

impl GradientScratch {
    fn fit(&mut self, d: usize, m: usize, nc: usize) {
        self.y.resize(m, 0.0);
        self.logs.resize(nc, 0.0);
        self.rho.resize(nc, 0.0);
        self.w.resize(m, 0.0);
        self.v.resize(m, 0.0);
        self.means.resize(nc * d, 0.0);
        self.vs.resize(nc * m, 0.0);
        self.mean.resize(d, 0.0);
        self.e.resize(d, 0.0);
        self.f.resize(d, 0.0);
        self.q.resize(m, 0.0);
    }
}

/// Closed-form `∂Ğ(Hx + n)/∂H` (M×D) with `(x, n)` held fixed.
pub fn stochastic_gradient(model: &LinearGMModel, x: &DVector<f64>, n: &DVector<f64>) -> Result<DMatrix<f64>> {
    let mut scratch = GradientScratch::default();
    stochastic_gradient_with(model, x, n, &mut scratch)
}

pub fn stochastic_gradient_with(
    model: &LinearGMModel,
    x: &DVector<f64>,
    n: &DVector<f64>,
    s: &mut GradientScratch,
) -> Result<DMatrix<f64>> {
    check_inputs(model, x, n)?;
    let (d, m) = (model.x_dim(), model.y_dim());
    let comps = model.components();
    let nc = comps.len();
    s.fit(d, m, nc);
    let x = x.as_slice();

    s.y.copy_from_slice(n.as_slice());
    linalg::gemv_acc(&mut s.y, 1.0, model.transfer(), x);
    model.log_terms(&s.y, &mut s.logs, &mut s.w);
    model.normalize(&s.logs, &mut s.rho, None);

    // Component posterior means u_a and v_a = C_a⁻¹ w_a.
    for (a, c) in comps.iter().enumerate() {
        for i in 0..m {
            s.w[i] = s.y[i] - c.mean()[i];
        }
        let u = &mut s.means[a * d..(a + 1) * d];
        u.copy_from_slice(model.x_mixture().component(c.k()).mean().as_slice());
        linalg::gemv_acc(u, 1.0, c.gain(), &s.w);
        let v = &mut s.vs[a * m..(a + 1) * m];
        v.iter_mut().for_each(|t| *t = 0.0);
        linalg::gemv_acc(v, 1.0, c.inverse(), &s.w);
    }
    s.mean.iter_mut().for_each(|t| *t = 0.0);
    for a in 0..nc {
        let rho = s.rho[a];
        for i in 0..d {
            s.mean[i] += rho * s.means[a * d + i];
        }
    }
    let g = linalg::dot(&s.mean, &s.mean);

    let mut grad = DMatrix::zeros(m, d);
    for (a, c) in comps.iter().enumerate() {
        let rho = s.rho[a];
        if rho == 0.0 {
            continue;
        }
        let xc = model.x_mixture().component(c.k());
        let p = model.h_cov_x(c.k());
        let u = &s.means[a * d..(a + 1) * d];
        let v = &s.vs[a * m..(a + 1) * m];
        let coef = g - linalg::dot(u, &s.mean);

        // e = x - u_x - Pᵀ v
        for i in 0..d {
            s.e[i] = x[i] - xc.mean()[i];
        }
        linalg::gemv_t_acc(&mut s.e, -1.0, p, v);
        // q = Gᵀ ū
        s.q.iter_mut().for_each(|t| *t = 0.0);
        linalg::gemv_t_acc(&mut s.q, 1.0, c.gain(), &s.mean);
        // f = coef·e + C_xx ū - Pᵀ q
        for i in 0..d {
            s.f[i] = coef * s.e[i];
        }
        linalg::gemv_acc(&mut s.f, 1.0, xc.covariance(), &s.mean);
        linalg::gemv_t_acc(&mut s.f, -1.0, p, &s.q);

        let scale = 2.0 * rho;
        linalg::rank_one_acc(&mut grad, scale, v, &s.f);
        linalg::rank_one_acc(&mut grad, scale, &s.q, &s.e);
        let gain = c.gain();
        let sc = scale * coef;
        for j in 0..d {
            for i in 0..m {
                grad[(i, j)] += sc * gain[(j, i)];
            }
        }
    }
    Ok(grad)
}

/// Mean of per-sample stochastic gradients, reduced in a fixed pairwise order.
pub fn batch_gradient(model: &LinearGMModel, draws: &[Draw], execution: Execution) -> Result<DMatrix<f64>> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("batch gradient needs at least one sample".into()));
    }
    let grads = if draws.len() == 1 {
        vec![stochastic_gradient(model, &draws[0].x, &draws[0].n)]
    } else {
        map_indexed(draws.len(), execution, |i| stochastic_gradient(model, &draws[i].x, &draws[i].n))
    };
    let grads = grads.into_iter().collect::<Result<Vec<_>>>()?;
    let sum = pairwise_sum(grads).expect("nonempty");
    Ok(sum / draws.len() as f64)
}

/// Central differences of `Ğ` over every entry of the design parameter,
/// rebuilding the model for each probe. `build` maps the parameter to a model.
pub fn finite_difference_gradient<F>(
    build: F,
    param: &DMatrix<f64>,
    x: &DVector<f64>,
    n: &DVector<f64>,
    relative_step: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<LinearGMModel>,
{
    if !(relative_step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {relative_step}")));
    }
    let mut grad = DMatrix::zeros(param.nrows(), param.ncols());
    let mut probe = param.clone();
    for j in 0..param.ncols() {
        for i in 0..param.nrows() {
            let base = param[(i, j)];
            let h = relative_step * (1.0 + base.abs());
            probe[(i, j)] = base + h;
            let up = breve_g(&build(&probe)?, x, n)?;
            probe[(i, j)] = base - h;
            let down = breve_g(&build(&probe)?, x, n)?;
            probe[(i, j)] = base;
            grad[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Pullback through `H = BF`: `∂/∂F = Bᵀ ∂/∂H`.
pub fn precoder_chain(grad_h: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != grad_h.nrows() {
        return Err(Error::ShapeMismatch {
            context: "precoder chain rule",
            expected_rows: grad_h.nrows(),
            expected_cols: b.ncols(),
            rows: b.nrows(),
            cols: b.ncols(),
        });
    }
    Ok(b.transpose() * grad_h)
}

/// `H = Sᵀ ⊗ I_m` for an `n × r` pilot matrix `S`.
pub fn pilot_transfer(s: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    s.transpose().kronecker(&DMatrix::<f64>::identity(m, m))
}

fn check_pilot_shape(grad_h: &DMatrix<f64>, m: usize, rows: usize, cols: usize) -> Result<()> {
    if grad_h.nrows() != cols * m || grad_h.ncols() != rows * m {
        return Err(Error::ShapeMismatch {
            context: "pilot chain rule",
            expected_rows: cols * m,
            expected_cols: rows * m,
            rows: grad_h.nrows(),
            cols: grad_h.ncols(),
        });
    }
    Ok(())
}

/// Pullback through `H = Sᵀ ⊗ I_m` (S is `rows × cols`) by block traces:
/// `∂/∂S_{ij} = tr(block_{j,i}(∂/∂H))`.
pub fn pilot_chain(grad_h: &DMatrix<f64>, m: usize, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    check_pilot_shape(grad_h, m, rows, cols)?;
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        (0..m).map(|p| grad_h[(j * m + p, i * m + p)]).sum()
    }))
}

/// Commutation matrix `K_{mn}` with `K vec(A) = vec(Aᵀ)` for `A` of size m×n.
pub fn commutation_matrix(m: usize, n: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            k[(j + i * n, i + j * m)] = 1.0;
        }
    }
    k
}

/// Column-major vectorization.
pub fn vec_of(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// The matrix `(I_n ⊗ K_{mr} ⊗ I_m)(I_{rn} ⊗ vec I_m)` mapping `vec(dSᵀ)` to `vec(dH)`.
pub fn pilot_vec_jacobian(m: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    let eye = |k: usize| DMatrix::<f64>::identity(k, k);
    let left = eye(rows).kronecker(&commutation_matrix(m, cols)).kronecker(&eye(m));
    let vec_im = vec_of(&eye(m));
    let right = eye(cols * rows).kronecker(&vec_im);
    left * right
}

/// Same pullback as [`pilot_chain`], through the explicit commutation-matrix Jacobian.
pub fn pilot_chain_commutation(grad_h: &DMatrix<f64>, m: usize, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    check_pilot_shape(grad_h, m, rows, cols)?;
    let jac = pilot_vec_jacobian(m, rows, cols);
    let g = jac.transpose() * vec_of(grad_h);
    // g = vec(∂/∂Sᵀ), Sᵀ is cols × rows
    let grad_st = DMatrix::from_column_slice(cols, rows, g.as_slice());
    Ok(grad_st.transpose())
}

/// Gradient tagged with the structure it was pulled back through.
#[derive(Debug, Clone, PartialEq)]
pub enum StructuredGradient {
    Transfer { grad_h: DMatrix<f64> },
    Precoder { grad_h: DMatrix<f64>, grad_f: DMatrix<f64> },
    Pilot { grad_h: DMatrix<f64>, grad_s: DMatrix<f64> },
}

impl StructuredGradient {
    pub fn tag(&self) -> &'static str {
        match self {
            StructuredGradient::Transfer { .. } => "transfer",
            StructuredGradient::Precoder { .. } => "precoder",
            StructuredGradient::Pilot { .. } => "pilot",
        }
    }

    pub fn grad_h(&self) -> &DMatrix<f64> {
        match self {
            StructuredGradient::Transfer { grad_h }
            | StructuredGradient::Precoder { grad_h, .. }
            | StructuredGradient::Pilot { grad_h, .. } => grad_h,
        }
    }

    /// Gradient with respect to the design parameter of the structure.
    pub fn design(&self) -> &DMatrix<f64> {
        match self {
            StructuredGradient::Transfer { grad_h } => grad_h,
            StructuredGradient::Precoder { grad_f, .. } => grad_f,
            StructuredGradient::Pilot { grad_s, .. } => grad_s,
        }
    }
}
