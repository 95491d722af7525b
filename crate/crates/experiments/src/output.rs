//! Result files: CSV tables, config echo, provenance, matrices, SVG charts.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use gmdesign_core::matrix_io::format_matrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Scenario;
use crate::error::{ExperimentError, Result};
use crate::scenario::{PointResult, ResultRow, SampleRow, SweepResult};
use crate::svg::{line_chart, scatter_chart, Series};

pub const RESULTS_HEADER: [&str; 8] = ["scenario", "estimator", "snr_db", "nmse", "mmse", "stderr", "n_samples", "seed"];
pub const SAMPLES_HEADER: [&str; 5] = ["a_db", "sample", "y1", "y2", "noise_component"];

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    tool: &'a str,
    version: &'a str,
    scenario: &'a str,
    seed: u64,
    config_sha256: String,
    grid_points: usize,
}

pub fn config_hash(config_json: &str) -> String {
    Sha256::digest(config_json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn result_record(row: &ResultRow) -> [String; 8] {
    [
        row.scenario.clone(),
        row.estimator.clone(),
        row.sweep_value.to_string(),
        row.report.nmse.to_string(),
        row.report.mmse.to_string(),
        row.report.stderr.to_string(),
        row.report.samples.to_string(),
        row.report.seed.to_string(),
    ]
}

fn sample_record(s: &SampleRow) -> Vec<String> {
    let mut r = vec![s.sweep_value.to_string(), s.index.to_string()];
    r.extend(s.y.iter().map(|v| v.to_string()));
    r.push(s.noise_component.to_string());
    r
}

/// Writes results incrementally: each grid point is flushed as it arrives.
pub struct OutputWriter {
    dir: PathBuf,
    results: csv::Writer<File>,
    samples: Option<csv::Writer<File>>,
    traces: Option<csv::Writer<File>>,
    collected: SweepResult,
}

impl OutputWriter {
    pub fn create(dir: &Path, scenario: &Scenario) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        let echo = scenario.config.to_json();
        write_file(&dir.join("config-echo.json"), echo.as_bytes())?;
        let provenance = Provenance {
            tool: "gm-design",
            version: env!("CARGO_PKG_VERSION"),
            scenario: scenario.config.scenario.name(),
            seed: scenario.config.seed,
            config_sha256: config_hash(&echo),
            grid_points: scenario.grid.len(),
        };
        let text = serde_json::to_string_pretty(&provenance).expect("provenance serializes") + "\n";
        write_file(&dir.join("provenance.json"), text.as_bytes())?;

        let mut results = csv_writer(&dir.join("results.csv"))?;
        write_row(&mut results, &dir.join("results.csv"), RESULTS_HEADER)?;
        let samples = if scenario.config.samples_per_point > 0 {
            let path = dir.join("samples.csv");
            let mut w = csv_writer(&path)?;
            let mut header: Vec<String> = SAMPLES_HEADER[..2].iter().map(|s| s.to_string()).collect();
            header.extend((1..=scenario.nmix.dim()).map(|i| format!("y{i}")));
            header.push(SAMPLES_HEADER[4].into());
            write_row(&mut w, &path, header)?;
            Some(w)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            results,
            samples,
            traces: None,
            collected: SweepResult::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_point(&mut self, point: &PointResult) -> Result<()> {
        let path = self.dir.join("results.csv");
        for row in &point.rows {
            write_row(&mut self.results, &path, result_record(row))?;
        }
        self.results.flush().map_err(|e| ExperimentError::io(&path, e))?;

        if let Some(w) = &mut self.samples {
            let path = self.dir.join("samples.csv");
            for s in &point.samples {
                write_row(w, &path, sample_record(s))?;
            }
            w.flush().map_err(|e| ExperimentError::io(&path, e))?;
        }

        let matrices = self.dir.join("matrices");
        fs::create_dir_all(&matrices).map_err(|e| ExperimentError::io(&matrices, e))?;
        for (name, m) in &point.designs {
            let path = matrices.join(format!("{name}_{:03}.txt", point.index));
            write_file(&path, format_matrix(m).as_bytes())?;
        }

        if let Some(trace) = &point.trace {
            let path = self.dir.join("traces.csv");
            if self.traces.is_none() {
                let mut w = csv_writer(&path)?;
                write_row(&mut w, &path, ["point", "iteration", "step", "grad_norm", "constraint_residual", "change"])?;
                self.traces = Some(w);
            }
            let w = self.traces.as_mut().expect("trace writer exists");
            for r in &trace.records {
                write_row(
                    w,
                    &path,
                    [
                        point.index.to_string(),
                        r.iteration.to_string(),
                        r.step.to_string(),
                        r.grad_norm.to_string(),
                        r.constraint_residual.to_string(),
                        r.change.to_string(),
                    ],
                )?;
            }
            w.flush().map_err(|e| ExperimentError::io(&path, e))?;
        }

        let mut kept = point.clone();
        kept.trace = None;
        self.collected.points.push(kept);
        Ok(())
    }

    /// Writes the charts once every point is in.
    pub fn finish(self, scenario: &Scenario) -> Result<SweepResult> {
        let x_label = match scenario.config.sweep.variable {
            crate::config::SweepVariable::RotationAngle => "rotation angle [rad]",
            crate::config::SweepVariable::SnrDb => "SNR [dB]",
            crate::config::SweepVariable::ScaleDb => "a [dB]",
        };
        let series = nmse_series(&self.collected);
        let title = format!("{}: NMSE", scenario.config.scenario);
        write_file(&self.dir.join("nmse.svg"), line_chart(&title, x_label, "NMSE [dB]", &series).as_bytes())?;
        if scenario.config.samples_per_point > 0 && scenario.nmix.dim() == 2 {
            let panels: Vec<(String, Vec<(f64, f64, usize)>)> = self
                .collected
                .points
                .iter()
                .map(|p| {
                    let pts = p.samples.iter().map(|s| (s.y[0], s.y[1], s.noise_component)).collect();
                    (format!("a = {} dB", p.value), pts)
                })
                .collect();
            write_file(&self.dir.join("samples.svg"), scatter_chart("sampled observations", &panels).as_bytes())?;
        }
        Ok(self.collected)
    }
}

/// One `(sweep value, 10 log10 NMSE)` polyline per estimator label, in first-seen order.
pub fn nmse_series(result: &SweepResult) -> Vec<Series> {
    let mut series: Vec<Series> = Vec::new();
    for row in result.rows() {
        let y = 10.0 * row.report.nmse.log10();
        match series.iter_mut().find(|s| s.label == row.estimator) {
            Some(s) => s.points.push((row.sweep_value, y)),
            None => series.push(Series {
                label: row.estimator.clone(),
                points: vec![(row.sweep_value, y)],
            }),
        }
    }
    series
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(file))
}

fn write_row<I, T>(w: &mut csv::Writer<File>, path: &Path, record: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(record).map_err(|source| ExperimentError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    f.write_all(bytes).map_err(|e| ExperimentError::io(path, e))
}
