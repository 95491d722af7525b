//! JSON scenario configuration, validation, and the built-in figure scenarios.

use std::fmt;
use std::path::{Path, PathBuf};

use gmdesign_core::{ConstraintSet, EstimatorKind, GaussianComponent, GaussianMixture};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Custom,
}

impl ScenarioId {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::Fig3 => "fig3",
            ScenarioId::Fig4 => "fig4",
            ScenarioId::Fig5 => "fig5",
            ScenarioId::Fig6 => "fig6",
            ScenarioId::Fig7 => "fig7",
            ScenarioId::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::Fig3, Self::Fig4, Self::Fig5, Self::Fig6, Self::Fig7, Self::Custom]
            .into_iter()
            .find(|s| s.name() == name)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major nested arrays.
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Unconstrained,
    Orthogonal,
    FrobeniusPower { alpha: f64 },
    Precoder { b: Vec<Vec<f64>>, inner: Box<ConstraintSpec> },
    Pilot { m: usize, rows: usize, cols: usize, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// `H = B R(θ)` for a 2-D rotation `R(θ)`; no optimization.
    RotationAngle,
    /// SNR in dB; fixes the noise scale (or the pilot power) and optimizes the design.
    SnrDb,
    /// `H = a I` with `a = 10^(dB/10)`; no optimization.
    ScaleDb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Values(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl GridSpec {
    /// Grid points; a range includes `stop` when it lies on the lattice.
    pub fn points(&self) -> Vec<f64> {
        match self {
            GridSpec::Values(v) => v.clone(),
            GridSpec::Range { start, stop, step } => {
                if !(*step > 0.0) || stop < start {
                    return Vec::new();
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..count).map(|i| start + i as f64 * step).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub eps0: f64,
    pub tau: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub patience: usize,
    pub batch: usize,
    pub warm_start: bool,
    /// Also run the ascent from the LMMSE-optimal design and keep the better result.
    pub lmmse_start: bool,
    pub lmmse_restarts: usize,
    /// Monte Carlo samples used to pick between ascent results.
    pub selection_samples: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            eps0: 1e-3,
            tau: 200.0,
            tolerance: 1e-4,
            max_iterations: 20_000,
            patience: 20,
            batch: 1,
            warm_start: true,
            lmmse_start: true,
            lmmse_restarts: 20,
            selection_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSpec {
    pub samples: usize,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self { samples: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub scenario: ScenarioId,
    pub x_mixture: MixtureSpec,
    pub noise_mixture: MixtureSpec,
    #[serde(default = "default_constraint")]
    pub constraint: ConstraintSpec,
    pub sweep: SweepSpec,
    /// Estimators reported on rotation and scale sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<String>>,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub seed: u64,
    /// Observations emitted per grid point as scatter samples (0 disables).
    #[serde(default)]
    pub samples_per_point: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_constraint() -> ConstraintSpec {
    ConstraintSpec::Unconstrained
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

fn matrix_from_rows(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(invalid(field, "matrix must be nonempty"));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(invalid(field, "matrix rows have different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(field, "matrix has non-finite entries"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl MixtureSpec {
    pub fn build(&self, field: &str) -> Result<GaussianMixture> {
        if self.components.is_empty() {
            return Err(invalid(field, "mixture has no components"));
        }
        let mut comps = Vec::new();
        for (i, c) in self.components.iter().enumerate() {
            let name = format!("{field}.components[{i}]");
            let cov = matrix_from_rows(&format!("{name}.covariance"), &c.covariance)?;
            let comp = GaussianComponent::new(c.weight, DVector::from_vec(c.mean.clone()), cov)
                .map_err(|e| invalid(&name, e.to_string()))?;
            comps.push(comp);
        }
        GaussianMixture::new(comps).map_err(|e| invalid(field, e.to_string()))
    }

    pub fn from_mixture(mix: &GaussianMixture) -> Self {
        Self {
            components: mix
                .components()
                .iter()
                .map(|c| ComponentSpec {
                    weight: c.weight(),
                    mean: c.mean().iter().copied().collect(),
                    covariance: matrix_to_rows(c.covariance()),
                })
                .collect(),
        }
    }
}

impl ConstraintSpec {
    pub fn build(&self, field: &str) -> Result<ConstraintSet> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(invalid(format!("{field}.{name}"), format!("must be positive, got {v}")))
            }
        };
        Ok(match self {
            ConstraintSpec::Unconstrained => ConstraintSet::Unconstrained,
            ConstraintSpec::Orthogonal => ConstraintSet::Orthogonal,
            ConstraintSpec::FrobeniusPower { alpha } => ConstraintSet::FrobeniusPower {
                alpha: positive("alpha", *alpha)?,
            },
            ConstraintSpec::Precoder { b, inner } => ConstraintSet::FactoredPrecoder {
                b: matrix_from_rows(&format!("{field}.b"), b)?,
                inner: Box::new(inner.build(&format!("{field}.inner"))?),
            },
            ConstraintSpec::Pilot { m, rows, cols, alpha } => {
                if *m == 0 || *rows == 0 || *cols == 0 {
                    return Err(invalid(field, "pilot dimensions must be positive"));
                }
                ConstraintSet::PilotStructure {
                    m: *m,
                    rows: *rows,
                    cols: *cols,
                    alpha: positive("alpha", *alpha)?,
                }
            }
        })
    }
}

/// Validated configuration with constructed model objects.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub xmix: GaussianMixture,
    pub nmix: GaussianMixture,
    pub constraint: ConstraintSet,
    pub grid: Vec<f64>,
    pub estimators: Vec<EstimatorKind>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Checks every field and builds the model objects.
    pub fn validate(&self) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let xmix = self.x_mixture.build("x_mixture")?;
        let nmix = self.noise_mixture.build("noise_mixture")?;
        let constraint = self.constraint.build("constraint")?;
        let grid = self.sweep.grid.points();
        if grid.is_empty() {
            return Err(invalid("sweep.grid", "grid is empty"));
        }
        if grid.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep.grid", "grid has non-finite values"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sweep.grid", "grid must be strictly increasing"));
        }
        let (d, m) = (xmix.dim(), nmix.dim());
        match self.sweep.variable {
            SweepVariable::RotationAngle => {
                if d != 2 {
                    return Err(invalid("x_mixture", "rotation sweeps need a 2-D signal"));
                }
                let b_rows = match &constraint {
                    ConstraintSet::FactoredPrecoder { b, .. } => {
                        if b.ncols() != 2 {
                            return Err(invalid("constraint.b", "precoder channel must have 2 columns"));
                        }
                        b.nrows()
                    }
                    ConstraintSet::Orthogonal | ConstraintSet::Unconstrained => 2,
                    _ => return Err(invalid("constraint", "rotation sweeps need an orthogonal design")),
                };
                if b_rows != m {
                    return Err(invalid("noise_mixture", format!("dimension {m} does not match transfer rows {b_rows}")));
                }
            }
            SweepVariable::ScaleDb => {
                if d != m {
                    return Err(invalid("noise_mixture", format!("scale sweeps need equal dimensions, got {d} and {m}")));
                }
            }
            SweepVariable::SnrDb => match &constraint {
                ConstraintSet::PilotStructure { m: pm, rows, cols, .. } => {
                    if d != rows * pm || m != cols * pm {
                        return Err(invalid(
                            "constraint",
                            format!("pilot shape implies signal dim {} and noise dim {}, got {d} and {m}", rows * pm, cols * pm),
                        ));
                    }
                }
                ConstraintSet::FactoredPrecoder { b, .. } => {
                    if b.nrows() != m {
                        return Err(invalid("constraint.b", format!("expected {m} rows, got {}", b.nrows())));
                    }
                }
                ConstraintSet::Unconstrained => {
                    return Err(invalid("constraint", "SNR sweeps need a constrained design"));
                }
                _ => {}
            },
        }
        let estimators = self.estimator_kinds()?;
        let o = &self.optimizer;
        if !(o.eps0 > 0.0 && o.eps0.is_finite()) {
            return Err(invalid("optimizer.eps0", "must be positive"));
        }
        if !(o.tau > 0.0) {
            return Err(invalid("optimizer.tau", "must be positive"));
        }
        if !(o.tolerance >= 0.0) {
            return Err(invalid("optimizer.tolerance", "must be nonnegative"));
        }
        if o.selection_samples == 0 {
            return Err(invalid("optimizer.selection_samples", "must be at least 1"));
        }
        if o.batch == 0 {
            return Err(invalid("optimizer.batch", "must be at least 1"));
        }
        if self.evaluation.samples == 0 {
            return Err(invalid("evaluation.samples", "must be at least 1"));
        }
        Ok(Scenario {
            config: self.clone(),
            xmix,
            nmix,
            constraint,
            grid,
            estimators,
        })
    }

    fn estimator_kinds(&self) -> Result<Vec<EstimatorKind>> {
        match (self.sweep.variable, &self.estimators) {
            (SweepVariable::SnrDb, Some(_)) => Err(invalid(
                "estimators",
                "SNR sweeps report fixed design/receiver pairs; remove this field",
            )),
            (SweepVariable::SnrDb, None) => Ok(Vec::new()),
            (SweepVariable::RotationAngle, None) => Ok(vec![EstimatorKind::Mmse]),
            (SweepVariable::ScaleDb, None) => Ok(vec![EstimatorKind::Mmse, EstimatorKind::Lmmse, EstimatorKind::Genie]),
            (_, Some(names)) => {
                if names.is_empty() {
                    return Err(invalid("estimators", "list is empty"));
                }
                let mut kinds = Vec::new();
                for n in names {
                    let k: EstimatorKind = n.parse().map_err(|_| invalid("estimators", format!("unknown estimator {n:?}")))?;
                    if kinds.contains(&k) {
                        return Err(invalid("estimators", format!("duplicate estimator {n:?}")));
                    }
                    kinds.push(k);
                }
                Ok(kinds)
            }
        }
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioConfig::from_json(&text)?.validate()
}

fn diag(values: &[f64]) -> Vec<Vec<f64>> {
    (0..values.len())
        .map(|i| (0..values.len()).map(|j| if i == j { values[i] } else { 0.0 }).collect())
        .collect()
}

fn component(weight: f64, mean: &[f64], cov: Vec<Vec<f64>>) -> ComponentSpec {
    ComponentSpec {
        weight,
        mean: mean.to_vec(),
        covariance: cov,
    }
}

fn fig6_family(scenario: ScenarioId, grid: GridSpec, samples_per_point: usize) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        scenario,
        x_mixture: MixtureSpec {
            components: vec![component(1.0, &[0.0, 0.0], diag(&[1.0, 1.0]))],
        },
        noise_mixture: MixtureSpec {
            components: vec![
                component(0.5, &[5.0, 5.0], diag(&[0.5, 0.5])),
                component(0.5, &[-5.0, -5.0], diag(&[0.5, 0.5])),
            ],
        },
        constraint: ConstraintSpec::Unconstrained,
        sweep: SweepSpec {
            variable: SweepVariable::ScaleDb,
            grid,
        },
        estimators: None,
        optimizer: OptimizerSpec::default(),
        evaluation: EvaluationSpec::default(),
        seed: 1,
        samples_per_point,
        output_dir: None,
    }
}

/// Built-in configuration for a named figure.
pub fn builtin(id: ScenarioId) -> Option<ScenarioConfig> {
    Some(match id {
        ScenarioId::Fig3 => {
            let mix = MixtureSpec {
                components: vec![
                    component(0.5, &[2.0, 0.0], diag(&[1.0, 1.0])),
                    component(0.5, &[-2.0, 0.0], diag(&[1.0, 1.0])),
                ],
            };
            let grid = (0..64).map(|k| k as f64 * std::f64::consts::TAU / 64.0).collect();
            ScenarioConfig {
                schema_version: SCHEMA_VERSION,
                scenario: id,
                x_mixture: mix.clone(),
                noise_mixture: mix,
                constraint: ConstraintSpec::Orthogonal,
                sweep: SweepSpec {
                    variable: SweepVariable::RotationAngle,
                    grid: GridSpec::Values(grid),
                },
                estimators: None,
                optimizer: OptimizerSpec::default(),
                evaluation: EvaluationSpec { samples: 100_000 },
                seed: 1,
                samples_per_point: 0,
                output_dir: None,
            }
        }
        ScenarioId::Fig4 => ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            scenario: id,
            x_mixture: MixtureSpec {
                components: [[-10.0, 10.0], [10.0, -10.0], [10.0, 10.0], [-10.0, -10.0]]
                    .iter()
                    .map(|m| component(0.25, m, diag(&[0.1, 0.1])))
                    .collect(),
            },
            noise_mixture: MixtureSpec {
                components: vec![component(1.0, &[0.0, 0.0], diag(&[1.0, 0.1]))],
            },
            constraint: ConstraintSpec::Precoder {
                b: diag(&[1.0, 1.0]),
                inner: Box::new(ConstraintSpec::Orthogonal),
            },
            sweep: SweepSpec {
                variable: SweepVariable::SnrDb,
                grid: GridSpec::Range {
                    start: -10.0,
                    stop: 20.0,
                    step: 2.5,
                },
            },
            estimators: None,
            optimizer: OptimizerSpec::default(),
            evaluation: EvaluationSpec::default(),
            seed: 1,
            samples_per_point: 0,
            output_dir: None,
        },
        ScenarioId::Fig5 => ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            scenario: id,
            x_mixture: MixtureSpec {
                components: vec![component(1.0, &[0.0; 4], diag(&[1.0; 4]))],
            },
            noise_mixture: MixtureSpec {
                components: vec![
                    component(0.5, &[5.0; 4], diag(&[0.5; 4])),
                    component(0.5, &[-5.0; 4], diag(&[0.5; 4])),
                ],
            },
            constraint: ConstraintSpec::Pilot {
                m: 2,
                rows: 2,
                cols: 2,
                alpha: 1.0,
            },
            sweep: SweepSpec {
                variable: SweepVariable::SnrDb,
                grid: GridSpec::Range {
                    start: -15.0,
                    stop: 15.0,
                    step: 2.5,
                },
            },
            estimators: None,
            optimizer: OptimizerSpec {
                eps0: 1.0,
                ..OptimizerSpec::default()
            },
            evaluation: EvaluationSpec::default(),
            seed: 1,
            samples_per_point: 0,
            output_dir: None,
        },
        ScenarioId::Fig6 => fig6_family(
            id,
            GridSpec::Range {
                start: 0.0,
                stop: 20.0,
                step: 0.25,
            },
            0,
        ),
        ScenarioId::Fig7 => fig6_family(id, GridSpec::Values(vec![3.45, 7.6]), 400),
        ScenarioId::Custom => return None,
    })
}
