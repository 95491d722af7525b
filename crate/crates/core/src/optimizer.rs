//! Projected Robbins-Monro ascent of `E{Ğ}` over a constraint set, and a
//! deterministic projected-gradient design that minimizes the LMMSE error.

use std::fmt;

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::estimators::LinearGMModel;
use crate::evaluation::{evaluate_paired, EstimatorKind, EvaluationReport};
use crate::exec::Execution;
use crate::gradients::{batch_gradient, pilot_chain, pilot_transfer, precoder_chain, StructuredGradient};
use crate::mixture::{Draw, GaussianMixture};
use crate::rng::RandomStream;

/// Feasible set for the design parameter and the map from parameter to `H`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Unconstrained,
    /// `PᵀP = I` (or `PPᵀ = I` for wide `P`).
    Orthogonal,
    /// `‖P‖²_F = alpha`.
    FrobeniusPower { alpha: f64 },
    /// `H = B F` with `F` constrained by `inner`.
    FactoredPrecoder { b: DMatrix<f64>, inner: Box<ConstraintSet> },
    /// `H = Sᵀ ⊗ I_m`, `S` is `rows × cols` with `‖S‖²_F = alpha`.
    PilotStructure { m: usize, rows: usize, cols: usize, alpha: f64 },
}

impl ConstraintSet {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintSet::Unconstrained => "unconstrained",
            ConstraintSet::Orthogonal => "orthogonal",
            ConstraintSet::FrobeniusPower { .. } => "frobenius_power",
            ConstraintSet::FactoredPrecoder { .. } => "factored_precoder",
            ConstraintSet::PilotStructure { .. } => "pilot",
        }
    }

    /// Shape of the design parameter for a model with `x_dim` inputs and `y_dim` outputs.
    pub fn parameter_shape(&self, x_dim: usize, y_dim: usize) -> (usize, usize) {
        match self {
            ConstraintSet::FactoredPrecoder { b, .. } => (b.ncols(), x_dim),
            ConstraintSet::PilotStructure { rows, cols, .. } => (*rows, *cols),
            _ => (y_dim, x_dim),
        }
    }

    pub fn check_parameter(&self, p: &DMatrix<f64>) -> Result<()> {
        let expected = match self {
            ConstraintSet::FactoredPrecoder { b, .. } => Some((b.ncols(), p.ncols())),
            ConstraintSet::PilotStructure { rows, cols, .. } => Some((*rows, *cols)),
            _ => None,
        };
        if let Some((r, c)) = expected {
            if p.nrows() != r || p.ncols() != c {
                return Err(Error::ShapeMismatch {
                    context: "design parameter",
                    expected_rows: r,
                    expected_cols: c,
                    rows: p.nrows(),
                    cols: p.ncols(),
                });
            }
        }
        Ok(())
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_parameter(w)?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cannot project a matrix with non-finite entries".into()));
        }
        match self {
            ConstraintSet::Unconstrained => Ok(w.clone()),
            ConstraintSet::Orthogonal => project_orthogonal(w),
            ConstraintSet::FrobeniusPower { alpha } | ConstraintSet::PilotStructure { alpha, .. } => {
                project_frobenius(w, *alpha)
            }
            ConstraintSet::FactoredPrecoder { inner, .. } => inner.project(w),
        }
    }

    /// Distance of `p` from satisfying the constraint (zero when feasible).
    pub fn residual(&self, p: &DMatrix<f64>) -> f64 {
        match self {
            ConstraintSet::Unconstrained => 0.0,
            ConstraintSet::Orthogonal => {
                let g = if p.nrows() >= p.ncols() {
                    p.transpose() * p
                } else {
                    p * p.transpose()
                };
                (g - DMatrix::identity(p.nrows().min(p.ncols()), p.nrows().min(p.ncols()))).norm()
            }
            ConstraintSet::FrobeniusPower { alpha } | ConstraintSet::PilotStructure { alpha, .. } => {
                (p.norm_squared() - alpha).abs() / alpha
            }
            ConstraintSet::FactoredPrecoder { inner, .. } => inner.residual(p),
        }
    }

    /// Transfer matrix `H` induced by the design parameter.
    pub fn transfer(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_parameter(p)?;
        Ok(match self {
            ConstraintSet::FactoredPrecoder { b, .. } => b * p,
            ConstraintSet::PilotStructure { m, .. } => pilot_transfer(p, *m),
            _ => p.clone(),
        })
    }

    /// Pulls `∂/∂H` back to the design parameter.
    pub fn pull_back(&self, grad_h: DMatrix<f64>) -> Result<StructuredGradient> {
        Ok(match self {
            ConstraintSet::FactoredPrecoder { b, .. } => {
                let grad_f = precoder_chain(&grad_h, b)?;
                StructuredGradient::Precoder { grad_h, grad_f }
            }
            ConstraintSet::PilotStructure { m, rows, cols, .. } => {
                let grad_s = pilot_chain(&grad_h, *m, *rows, *cols)?;
                StructuredGradient::Pilot { grad_h, grad_s }
            }
            _ => StructuredGradient::Transfer { grad_h },
        })
    }
}

/// Nearest (semi-)orthogonal matrix `U Vᵀ` from the thin SVD `W = U D Vᵀ`.
pub fn project_orthogonal(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = SVD::new(w.clone(), true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::InvalidArgument("singular value decomposition failed".into())),
    };
    Ok(u * vt)
}

/// `sqrt(alpha / ‖W‖²_F) · W`.
pub fn project_frobenius(w: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("power budget must be positive, got {alpha}")));
    }
    let norm2 = w.norm_squared();
    if norm2 == 0.0 {
        return Err(Error::ZeroProjection);
    }
    Ok(w * (alpha / norm2).sqrt())
}

/// `ε_r = ε₀ / (1 + r / τ)`; `τ = ∞` gives a constant step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub eps0: f64,
    pub tau: f64,
}

impl StepSchedule {
    pub fn step(&self, iteration: usize) -> f64 {
        self.eps0 / (1.0 + iteration as f64 / self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps0 must be positive, got {}", self.eps0)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Largest constraint residual accepted for a starting point.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-10;

/// Stop after `patience` consecutive iterations with `‖P_{r+1} - P_r‖_F < tolerance`,
/// or after `max_iterations`. With `evaluate_every > 0` the MMSE of the
/// current iterate is estimated by Monte Carlo every that many iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub patience: usize,
    pub evaluate_every: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iterations: 50_000,
            patience: 1,
            evaluate_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    MaxIterations,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Tolerance => "tolerance",
            StopReason::MaxIterations => "max_iterations",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub step: f64,
    pub grad_norm: f64,
    /// Constraint residual of the unprojected point `P_r + ε_r ∇`.
    pub constraint_residual: f64,
    /// `‖P_{r+1} - P_r‖_F`.
    pub change: f64,
    /// The projected iterate `P_{r+1}`.
    pub iterate: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizerTrace {
    pub initial: DMatrix<f64>,
    pub records: Vec<TraceRecord>,
    /// `(r, report)` for Monte Carlo MMSE evaluations of `P_r`.
    pub evaluations: Vec<(usize, EvaluationReport)>,
    pub stop_reason: StopReason,
}

impl OptimizerTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Final design parameter (the start when no iteration ran).
    pub fn design(&self) -> &DMatrix<f64> {
        self.records.last().map_or(&self.initial, |r| &r.iterate)
    }
}

/// Signal and noise priors plus the structure of the design.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub xmix: GaussianMixture,
    pub nmix: GaussianMixture,
    pub constraint: ConstraintSet,
}

impl DesignProblem {
    pub fn model(&self, design: &DMatrix<f64>) -> Result<LinearGMModel> {
        LinearGMModel::new(self.constraint.transfer(design)?, &self.xmix, &self.nmix)
    }
}

/// Options of the stochastic ascent besides step and stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    /// Samples averaged per gradient estimate.
    pub batch: usize,
    pub seed: u64,
    pub execution: Execution,
    /// Sample count and seed of the periodic evaluations.
    pub eval_samples: usize,
    pub eval_seed: u64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            batch: 1,
            seed: 0,
            execution: Execution::default(),
            eval_samples: 100_000,
            eval_seed: 0,
        }
    }
}

/// Projected stochastic gradient ascent `P ← Π(P + ε_r ∇̂)` on `E{Ğ}`.
/// Iteration `r` draws its batch from `RandomStream::new(seed, r)`.
pub fn robbins_monro(
    problem: &DesignProblem,
    initial: &DMatrix<f64>,
    schedule: StepSchedule,
    stopping: StoppingRule,
    options: AscentOptions,
) -> Result<OptimizerTrace> {
    schedule.validate()?;
    if options.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let constraint = &problem.constraint;
    constraint.check_parameter(initial)?;
    let residual = constraint.residual(initial);
    if !(residual <= FEASIBILITY_TOLERANCE) {
        return Err(Error::Infeasible { residual });
    }
    let mut design = initial.clone();
    let mut records = Vec::new();
    let mut evaluations = Vec::new();
    let mut quiet = 0usize;
    let mut stop_reason = StopReason::MaxIterations;
    for r in 0..stopping.max_iterations {
        let model = problem.model(&design)?;
        if stopping.evaluate_every > 0 && r % stopping.evaluate_every == 0 {
            let report = evaluate_paired(
                &model,
                &[EstimatorKind::Mmse],
                options.eval_samples,
                options.eval_seed,
                options.execution,
            )?;
            evaluations.push((r, report.into_iter().next().expect("one report")));
        }
        let mut rng = RandomStream::new(options.seed, r as u64);
        let draws: Vec<Draw> = (0..options.batch)
            .map(|_| Draw::sample(&problem.xmix, &problem.nmix, &mut rng))
            .collect();
        let grad_h = batch_gradient(&model, &draws, options.execution)?;
        let grad = constraint.pull_back(grad_h)?;
        let g = grad.design();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration: r });
        }
        let step = schedule.step(r);
        let w = &design + g * step;
        let next = constraint.project(&w)?;
        let change = (&next - &design).norm();
        records.push(TraceRecord {
            iteration: r,
            step,
            grad_norm: g.norm(),
            constraint_residual: constraint.residual(&w),
            change,
            iterate: next.clone(),
        });
        design = next;
        if change < stopping.tolerance {
            quiet += 1;
            if quiet >= stopping.patience.max(1) {
                stop_reason = StopReason::Tolerance;
                break;
            }
        } else {
            quiet = 0;
        }
    }
    Ok(OptimizerTrace {
        initial: initial.clone(),
        records,
        evaluations,
        stop_reason,
    })
}

fn check_square(context: &'static str, a: &DMatrix<f64>, n: usize) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::ShapeMismatch {
            context,
            expected_rows: n,
            expected_cols: n,
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

/// `tr(C_x - C_x Hᵀ (H C_x Hᵀ + C_n)⁻¹ H C_x)`.
pub fn lmmse_mse(h: &DMatrix<f64>, cx: &DMatrix<f64>, cn: &DMatrix<f64>) -> Result<f64> {
    check_square("signal covariance", cx, h.ncols())?;
    check_square("noise covariance", cn, h.nrows())?;
    let hc = h * cx;
    let a = &hc * h.transpose() + cn;
    let chol = a.cholesky().ok_or(Error::SingularCovariance)?;
    let s = chol.solve(&hc);
    Ok(cx.trace() - (hc.transpose() * s).trace())
}

/// `∂/∂H` of [`lmmse_mse`]: `-2 A⁻¹ H C_x² + 2 A⁻¹ H C_x² Hᵀ A⁻¹ H C_x`.
pub fn lmmse_mse_gradient(h: &DMatrix<f64>, cx: &DMatrix<f64>, cn: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square("signal covariance", cx, h.ncols())?;
    check_square("noise covariance", cn, h.nrows())?;
    let hc = h * cx;
    let a = &hc * h.transpose() + cn;
    let chol = a.cholesky().ok_or(Error::SingularCovariance)?;
    let ainv_hc = chol.solve(&hc);
    let ainv_hc2 = &ainv_hc * cx;
    let m = &hc * hc.transpose();
    Ok((chol.solve(&(m * &ainv_hc)) - ainv_hc2) * 2.0)
}

/// Settings of [`lmmse_design`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmseDesignOptions {
    /// Random starting points tried besides the supplied one.
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for LmmseDesignOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iterations: 500,
            seed: 0,
        }
    }
}

/// Result of [`lmmse_design`].
#[derive(Debug, Clone)]
pub struct LmmseDesign {
    pub design: DMatrix<f64>,
    pub mse: f64,
    /// LMMSE error after each accepted step of the winning start (first entry
    /// is the projected start).
    pub history: Vec<f64>,
    /// Index of the winning start: 0 is the supplied one, `i + 1` random start `i`.
    pub start: usize,
}

/// Projected gradient descent with backtracking on the LMMSE error, using the
/// overall covariances of the mixtures. Keeps the best result over the
/// supplied start and `restarts` random starts.
pub fn lmmse_design(
    constraint: &ConstraintSet,
    cx: &DMatrix<f64>,
    cn: &DMatrix<f64>,
    initial: &DMatrix<f64>,
    options: LmmseDesignOptions,
) -> Result<LmmseDesign> {
    let mse = |p: &DMatrix<f64>| -> Result<f64> { lmmse_mse(&constraint.transfer(p)?, cx, cn) };
    let descend = |start: DMatrix<f64>, index: usize| -> Result<LmmseDesign> {
        let mut p = constraint.project(&start)?;
        let mut f = mse(&p)?;
        let mut history = vec![f];
        let mut step = 1.0;
        for _ in 0..options.max_iterations {
            let grad_h = lmmse_mse_gradient(&constraint.transfer(&p)?, cx, cn)?;
            let g = constraint.pull_back(grad_h)?.design().clone();
            let gnorm = g.norm();
            if gnorm == 0.0 || !gnorm.is_finite() {
                break;
            }
            let mut accepted = None;
            let mut s = step * (1.0 + p.norm()) / gnorm;
            for _ in 0..60 {
                if let Ok(cand) = constraint.project(&(&p - &g * s)) {
                    if let Ok(fc) = mse(&cand) {
                        if fc < f {
                            accepted = Some((cand, fc));
                            break;
                        }
                    }
                }
                s *= 0.5;
            }
            let Some((cand, fc)) = accepted else { break };
            let gain = f - fc;
            p = cand;
            f = fc;
            history.push(f);
            step = (step * 2.0).min(1.0);
            if gain <= 1e-13 * f.abs() {
                break;
            }
        }
        Ok(LmmseDesign {
            design: p,
            mse: f,
            history,
            start: index,
        })
    };
    let mut best = descend(initial.clone(), 0)?;
    for i in 0..options.restarts {
        let mut rng = RandomStream::new(options.seed, i as u64);
        let mut start = DMatrix::zeros(initial.nrows(), initial.ncols());
        rng.fill_standard_normal(start.as_mut_slice());
        if let Ok(candidate) = descend(start, i + 1) {
            if candidate.mse < best.mse {
                best = candidate;
            }
        }
    }
    Ok(best)
}
