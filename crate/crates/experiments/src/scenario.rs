//! Sweep execution: one grid point at a time, in grid order.

use gmdesign_core::{
    derive_seed, evaluate_paired, lmmse_design, robbins_monro, AscentOptions, ConstraintSet, DesignProblem,
    Draw, EstimatorKind, EvaluationReport, Execution, GaussianMixture, LinearGMModel, LmmseDesignOptions,
    OptimizerTrace, RandomStream, StepSchedule, StoppingRule,
};
use nalgebra::DMatrix;

use crate::config::{Scenario, SweepVariable};
use crate::error::{ExperimentError, Result};

/// Seed offsets per purpose; the grid index is added to the base.
const EVAL_SEED_INDEX: u64 = 0;
const OPTIMIZER_SEED_BASE: u64 = 1_000_000;
const LMMSE_SEED_BASE: u64 = 2_000_000;
const SAMPLE_SEED_BASE: u64 = 3_000_000;
const SELECT_SEED_BASE: u64 = 4_000_000;

pub const RM_MMSE: &str = "rm_mmse";
pub const IDENTITY_MMSE: &str = "identity_mmse";
pub const IDENTITY_LMMSE: &str = "identity_lmmse";
pub const LMMSE_LMMSE: &str = "lmmse_lmmse";

/// How a sweep value turns into a model parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleKind {
    /// Angle in radians of a 2-D rotation.
    Rotation,
    /// Factor applied to every noise covariance so that `tr C_xx / tr C_nn` hits the SNR.
    NoiseScale,
    /// Pilot power `α = SNR · tr C_nn`.
    PilotPower,
    /// `a = 10^(dB/10)` in `H = a I`.
    Amplitude,
}

impl ScaleKind {
    pub fn of(scenario: &Scenario) -> Self {
        match scenario.config.sweep.variable {
            SweepVariable::RotationAngle => ScaleKind::Rotation,
            SweepVariable::ScaleDb => ScaleKind::Amplitude,
            SweepVariable::SnrDb => match scenario.constraint {
                ConstraintSet::PilotStructure { .. } => ScaleKind::PilotPower,
                _ => ScaleKind::NoiseScale,
            },
        }
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Noise covariance factor `a` with `tr C_xx / tr C_nn(a) = SNR`, where
/// `C_nn(a)` keeps the noise means and scales the component covariances.
pub fn noise_scale_for_snr(xmix: &GaussianMixture, nmix: &GaussianMixture, snr_db: f64) -> Result<f64> {
    let snr = db_to_linear(snr_db);
    let tr_x = xmix.moments().1.trace();
    let (_, cov_n) = nmix.moments();
    let within: f64 = nmix.components().iter().map(|c| c.weight() * c.covariance().trace()).sum();
    let spread = cov_n.trace() - within;
    if !(tr_x > 0.0) || !(within > 0.0) {
        return Err(ExperimentError::Validation {
            field: "sweep".into(),
            message: "SNR scaling needs positive signal and noise traces".into(),
        });
    }
    let a = (tr_x / snr - spread) / within;
    if !(a > 0.0 && a.is_finite()) {
        return Err(ExperimentError::Validation {
            field: "sweep.grid".into(),
            message: format!("SNR {snr_db} dB is unreachable: the noise mean spread alone exceeds tr C_xx / SNR"),
        });
    }
    Ok(a)
}

/// Pilot power `α = SNR · tr C_nn`.
pub fn pilot_power_for_snr(nmix: &GaussianMixture, snr_db: f64) -> Result<f64> {
    let tr_n = nmix.moments().1.trace();
    if !(tr_n > 0.0) {
        return Err(ExperimentError::Validation {
            field: "noise_mixture".into(),
            message: "noise covariance trace must be positive".into(),
        });
    }
    Ok(db_to_linear(snr_db) * tr_n)
}

/// Maps a sweep value to the model parameter of the scenario.
pub fn snr_to_scale(scenario: &Scenario, value: f64) -> Result<f64> {
    match ScaleKind::of(scenario) {
        ScaleKind::Rotation => Ok(value),
        ScaleKind::Amplitude => Ok(db_to_linear(value)),
        ScaleKind::NoiseScale => noise_scale_for_snr(&scenario.xmix, &scenario.nmix, value),
        ScaleKind::PilotPower => pilot_power_for_snr(&scenario.nmix, value),
    }
}

/// Overrides from the command line.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub execution: Execution,
    pub eval_samples: Option<usize>,
    pub max_iterations: Option<usize>,
    /// Skip the design optimization (the `eval` command).
    pub evaluate_only: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            execution: Execution::default(),
            eval_samples: None,
            max_iterations: None,
            evaluate_only: false,
        }
    }
}

/// One CSV row: a design/receiver combination evaluated at a grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub estimator: String,
    /// The sweep value (SNR or scale in dB, or the angle in radians).
    pub sweep_value: f64,
    pub report: EvaluationReport,
}

/// Scatter sample of an observation with its latent noise component.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub sweep_value: f64,
    pub index: usize,
    pub y: Vec<f64>,
    pub noise_component: usize,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub index: usize,
    pub value: f64,
    /// Model parameter the value mapped to.
    pub scale: f64,
    pub rows: Vec<ResultRow>,
    /// Named design matrices used at this point.
    pub designs: Vec<(String, DMatrix<f64>)>,
    pub trace: Option<OptimizerTrace>,
    pub samples: Vec<SampleRow>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub points: Vec<PointResult>,
}

impl SweepResult {
    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.points.iter().flat_map(|p| p.rows.iter())
    }

    /// NMSE series of one estimator label in grid order.
    pub fn series(&self, estimator: &str) -> Vec<&ResultRow> {
        self.rows().filter(|r| r.estimator == estimator).collect()
    }
}

/// Runs the whole sweep and collects the results.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<SweepResult> {
    let mut result = SweepResult::default();
    run_scenario_with(scenario, options, |p| {
        result.points.push(p.clone());
        Ok(())
    })?;
    Ok(result)
}

/// Runs the sweep, handing every finished grid point to `sink` before the
/// next one starts.
pub fn run_scenario_with<F>(scenario: &Scenario, options: &RunOptions, mut sink: F) -> Result<()>
where
    F: FnMut(&PointResult) -> Result<()>,
{
    let mut previous: Option<DMatrix<f64>> = None;
    for (index, &value) in scenario.grid.iter().enumerate() {
        let point = run_point(scenario, options, index, value, previous.as_ref())?;
        if let Some(t) = &point.trace {
            previous = Some(t.design().clone());
        }
        sink(&point)?;
    }
    Ok(())
}

fn eval_samples(scenario: &Scenario, options: &RunOptions) -> usize {
    options.eval_samples.unwrap_or(scenario.config.evaluation.samples)
}

fn eval_seed(scenario: &Scenario) -> u64 {
    derive_seed(scenario.config.seed, EVAL_SEED_INDEX)
}

fn label_rows(scenario: &Scenario, value: f64, labels: &[&str], reports: Vec<EvaluationReport>) -> Vec<ResultRow> {
    labels
        .iter()
        .zip(reports)
        .map(|(l, report)| ResultRow {
            scenario: scenario.config.scenario.name().to_string(),
            estimator: l.to_string(),
            sweep_value: value,
            report,
        })
        .collect()
}

fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Start of the design search: the identity (or its projection onto the constraint).
pub fn canonical_design(constraint: &ConstraintSet, x_dim: usize, y_dim: usize) -> gmdesign_core::Result<DMatrix<f64>> {
    let (r, c) = constraint.parameter_shape(x_dim, y_dim);
    constraint.project(&DMatrix::identity(r, c))
}

fn run_point(
    scenario: &Scenario,
    options: &RunOptions,
    index: usize,
    value: f64,
    previous: Option<&DMatrix<f64>>,
) -> Result<PointResult> {
    let scale = snr_to_scale(scenario, value)?;
    let at_point = |source| ExperimentError::Point { index, value, source };
    let samples = eval_samples(scenario, options);
    let seed = eval_seed(scenario);
    let kind_labels: Vec<&str> = scenario.estimators.iter().map(|k| k.name()).collect();
    let mut point = PointResult {
        index,
        value,
        scale,
        rows: Vec::new(),
        designs: Vec::new(),
        trace: None,
        samples: Vec::new(),
    };
    match ScaleKind::of(scenario) {
        ScaleKind::Rotation => {
            let r = rotation(scale);
            let h = match &scenario.constraint {
                ConstraintSet::FactoredPrecoder { b, .. } => b * &r,
                _ => r.clone(),
            };
            let model = LinearGMModel::new(h, &scenario.xmix, &scenario.nmix).map_err(at_point)?;
            let reports = evaluate_paired(&model, &scenario.estimators, samples, seed, options.execution).map_err(at_point)?;
            point.rows = label_rows(scenario, value, &kind_labels, reports);
            point.designs.push(("rotation".into(), r));
        }
        ScaleKind::Amplitude => {
            let d = scenario.xmix.dim();
            let h = DMatrix::identity(d, d) * scale;
            let model = LinearGMModel::new(h.clone(), &scenario.xmix, &scenario.nmix).map_err(at_point)?;
            let reports = evaluate_paired(&model, &scenario.estimators, samples, seed, options.execution).map_err(at_point)?;
            point.rows = label_rows(scenario, value, &kind_labels, reports);
            point.samples = scatter_samples(scenario, index, value, &h);
            point.designs.push(("transfer".into(), h));
        }
        ScaleKind::NoiseScale | ScaleKind::PilotPower => {
            design_point(scenario, options, &mut point, previous).map_err(at_point)?;
        }
    }
    Ok(point)
}

fn scatter_samples(scenario: &Scenario, index: usize, value: f64, h: &DMatrix<f64>) -> Vec<SampleRow> {
    let count = scenario.config.samples_per_point;
    let mut rng = RandomStream::new(derive_seed(scenario.config.seed, SAMPLE_SEED_BASE + index as u64), 0);
    (0..count)
        .map(|i| {
            let draw = Draw::sample(&scenario.xmix, &scenario.nmix, &mut rng);
            SampleRow {
                sweep_value: value,
                index: i,
                y: draw.observation(h).iter().copied().collect(),
                noise_component: draw.l,
            }
        })
        .collect()
}

fn design_point(
    scenario: &Scenario,
    options: &RunOptions,
    point: &mut PointResult,
    previous: Option<&DMatrix<f64>>,
) -> gmdesign_core::Result<()> {
    let cfg = &scenario.config;
    let (nmix, constraint) = match (&scenario.constraint, ScaleKind::of(scenario)) {
        (ConstraintSet::PilotStructure { m, rows, cols, .. }, ScaleKind::PilotPower) => (
            scenario.nmix.clone(),
            ConstraintSet::PilotStructure {
                m: *m,
                rows: *rows,
                cols: *cols,
                alpha: point.scale,
            },
        ),
        (c, _) => (scenario.nmix.with_scaled_covariances(point.scale)?, c.clone()),
    };
    let problem = DesignProblem {
        xmix: scenario.xmix.clone(),
        nmix,
        constraint,
    };
    let identity = canonical_design(&problem.constraint, problem.xmix.dim(), problem.nmix.dim())?;
    let identity_model = problem.model(&identity)?;
    let samples = eval_samples(scenario, options);
    let seed = eval_seed(scenario);
    let index = point.index as u64;

    if options.evaluate_only {
        let reports = evaluate_paired(
            &identity_model,
            &[EstimatorKind::Mmse, EstimatorKind::Lmmse],
            samples,
            seed,
            options.execution,
        )?;
        point.rows = label_rows(scenario, point.value, &[IDENTITY_MMSE, IDENTITY_LMMSE], reports);
        point.designs.push(("identity".into(), identity));
        return Ok(());
    }

    let o = &cfg.optimizer;
    let (_, cx) = problem.xmix.moments();
    let (_, cn) = problem.nmix.moments();
    let lmmse = lmmse_design(
        &problem.constraint,
        &cx,
        &cn,
        &identity,
        LmmseDesignOptions {
            restarts: o.lmmse_restarts,
            seed: derive_seed(cfg.seed, LMMSE_SEED_BASE + index),
            ..LmmseDesignOptions::default()
        },
    )?;
    let lmmse_model = problem.model(&lmmse.design)?;

    let schedule = StepSchedule { eps0: o.eps0, tau: o.tau };
    let stopping = StoppingRule {
        tolerance: o.tolerance,
        max_iterations: options.max_iterations.unwrap_or(o.max_iterations),
        patience: o.patience,
        evaluate_every: 0,
    };
    let ascent = AscentOptions {
        batch: o.batch,
        seed: derive_seed(cfg.seed, OPTIMIZER_SEED_BASE + index),
        execution: options.execution,
        ..AscentOptions::default()
    };
    let warm = match previous {
        Some(p) if o.warm_start => problem.constraint.project(p).ok(),
        _ => None,
    };
    let first = match warm {
        Some(start) => robbins_monro(&problem, &start, schedule, stopping, ascent)
            .or_else(|_| robbins_monro(&problem, &identity, schedule, stopping, ascent))?,
        None => robbins_monro(&problem, &identity, schedule, stopping, ascent)?,
    };
    let trace = if o.lmmse_start {
        let second = robbins_monro(&problem, &lmmse.design, schedule, stopping, ascent)?;
        // Pick on draws independent of the reported evaluation.
        let select_seed = derive_seed(cfg.seed, SELECT_SEED_BASE + index);
        let score = |t: &OptimizerTrace| -> gmdesign_core::Result<f64> {
            let model = problem.model(t.design())?;
            let r = evaluate_paired(&model, &[EstimatorKind::Mmse], o.selection_samples, select_seed, options.execution)?;
            Ok(r[0].mmse)
        };
        if score(&second)? < score(&first)? { second } else { first }
    } else {
        first
    };
    let rm_model = problem.model(trace.design())?;

    let mut reports = Vec::new();
    reports.extend(evaluate_paired(&rm_model, &[EstimatorKind::Mmse], samples, seed, options.execution)?);
    reports.extend(evaluate_paired(&identity_model, &[EstimatorKind::Mmse], samples, seed, options.execution)?);
    reports.extend(evaluate_paired(&lmmse_model, &[EstimatorKind::Lmmse], samples, seed, options.execution)?);
    point.rows = label_rows(scenario, point.value, &[RM_MMSE, IDENTITY_MMSE, LMMSE_LMMSE], reports);
    point.designs.push(("rm".into(), trace.design().clone()));
    point.designs.push(("identity".into(), identity));
    point.designs.push(("lmmse".into(), lmmse.design));
    point.trace = Some(trace);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{builtin, ScenarioId};

    #[test]
    fn fig4_zero_db_balances_traces() {
        let s = builtin(ScenarioId::Fig4).unwrap().validate().unwrap();
        let a = snr_to_scale(&s, 0.0).unwrap();
        let tr_x = s.xmix.moments().1.trace();
        assert!((tr_x - 200.2).abs() < 1e-9);
        let tr_n = s.nmix.with_scaled_covariances(a).unwrap().moments().1.trace();
        assert!((tr_n - tr_x).abs() < 1e-9 * tr_x);
        assert!((a - 200.2 / 1.1).abs() < 1e-9);
    }

    #[test]
    fn fig5_pilot_power() {
        let s = builtin(ScenarioId::Fig5).unwrap().validate().unwrap();
        assert!((snr_to_scale(&s, 10.0).unwrap() - 1020.0).abs() < 1e-9);
    }

    #[test]
    fn fig6_identity() {
        let s = builtin(ScenarioId::Fig6).unwrap().validate().unwrap();
        assert_eq!(snr_to_scale(&s, 0.0).unwrap(), 1.0);
        assert!((snr_to_scale(&s, 10.0).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_snr_is_an_error() {
        let s = builtin(ScenarioId::Fig5).unwrap().validate().unwrap();
        // Noise means alone carry trace 100 against a signal trace of 4.
        assert!(noise_scale_for_snr(&s.xmix, &s.nmix, 0.0).is_err());
    }

    #[test]
    fn canonical_pilot_has_full_power() {
        let c = ConstraintSet::PilotStructure { m: 2, rows: 2, cols: 2, alpha: 8.0 };
        let s = canonical_design(&c, 4, 4).unwrap();
        assert!((s - DMatrix::identity(2, 2) * 2.0).amax() < 1e-12);
    }
}
