//! Run artifacts: density CSVs, KL and moment tables, and the JSON report.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.cfg                      effective configuration
//! report.json                     RunReport
//! t<time>/kl.csv                  L,metric,variables,value,floor_mass
//! t<time>/moments.csv             variable,source,mean,variance,skewness,kurtosis
//! t<time>/<vars>_truth.csv        axis columns, density
//! t<time>/<vars>_recovered.csv
//! t<time>/<vars>_recovered.json   grid, integral, t, members, bandwidth
//! ```

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use cgpdf::filter::FilterDiagnostics;
use cgpdf::{DensityField, GridSpec, Moments};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Prepared};
use crate::error::{HarnessError, Result, StageExt};
use crate::pipeline::{RunResult, TruthFields};

pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.cfg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub config_file: String,
    pub seed: u64,
    pub truth_seed: u64,
    pub members: usize,
    pub mc_particles: usize,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub variables: String,
    pub metric: String,
    pub value: f64,
    pub floor_mass: f64,
    pub gate: Option<f64>,
    pub pass: Option<bool>,
    pub extrapolated_gate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub variable: String,
    pub recovered: Moments,
    pub truth: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFiles {
    pub variables: String,
    pub truth_csv: String,
    pub recovered_csv: String,
    pub metadata: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotReport {
    pub t: f64,
    pub bandwidth: Vec<f64>,
    pub bandwidth_fallback: bool,
    pub kl: Vec<KlRow>,
    pub moments: Vec<MomentRow>,
    pub kl_csv: String,
    pub moments_csv: String,
    pub densities: Vec<DensityFiles>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub provenance: Provenance,
    pub grid_policy: String,
    pub filter: FilterDiagnostics,
    pub snapshots: Vec<SnapshotReport>,
    /// `None` when the config sets no gates.
    pub gates_passed: Option<bool>,
}

#[derive(Serialize)]
struct FieldMetadata<'a> {
    grid: &'a GridSpec,
    integral: f64,
    t: f64,
    members: usize,
    bandwidth: &'a [f64],
    warnings: &'a [String],
}

impl RunReport {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Every file path in the report, relative to the output directory.
    pub fn referenced_files(&self) -> Vec<&str> {
        let mut files = vec![self.provenance.config_file.as_str()];
        for s in &self.snapshots {
            files.push(&s.kl_csv);
            files.push(&s.moments_csv);
            for d in &s.densities {
                files.extend([d.truth_csv.as_str(), d.recovered_csv.as_str(), d.metadata.as_str()]);
            }
        }
        files
    }

    /// Checks that every referenced file exists and that the stored config
    /// hashes to the recorded value.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for f in self.referenced_files() {
            if !dir.join(f).is_file() {
                return Err(HarnessError::Config(format!("report references missing file {f}")));
            }
        }
        let stored = ExperimentConfig::load(&dir.join(&self.provenance.config_file).to_string_lossy())?;
        if stored.hash() != self.provenance.config_hash {
            return Err(HarnessError::Config("stored config does not match the recorded hash".into()));
        }
        Ok(())
    }
}

pub fn provenance(p: &Prepared, members: usize, seed: u64) -> Provenance {
    Provenance {
        config_hash: p.config.hash(),
        config_file: CONFIG_FILE.into(),
        seed,
        truth_seed: p.config.truth_seed(),
        members,
        mc_particles: p.config.mc_particles,
        code_version: env!("CARGO_PKG_VERSION").into(),
    }
}

pub fn grid_policy(p: &Prepared) -> String {
    let g = &p.config.grid;
    match g.mode {
        crate::config::GridMode::Auto => format!(
            "auto: truth mean ± {}σ per axis, {} points (1D), {}×{} points (2D)",
            g.width, g.points_1d, g.points_2d, g.points_2d
        ),
        crate::config::GridMode::Explicit => "explicit per-variable ranges from the config".into(),
    }
}

/// Directory name of a snapshot.
pub fn snapshot_dir(t: f64) -> String {
    format!("t{t:.4}")
}

/// CSV cell, quoted when it contains a comma.
pub(crate) fn csv_cell(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(HarnessError::io(path))
}

fn write_field(path: &Path, field: &DensityField) -> Result<()> {
    let file = File::create(path).map_err(HarnessError::io(path))?;
    let mut w = BufWriter::new(file);
    field.write_csv(&mut w).stage("density output")?;
    w.flush().map_err(HarnessError::io(path))
}

/// Writes the text form of the config that produced a run.
pub fn write_config(p: &Prepared, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    write_text(&out.join(CONFIG_FILE), &p.config.to_toml_string()?)
}

/// Writes every artifact of a run into `out` and returns the report.
pub fn write_run(p: &Prepared, truth: &[TruthFields], run: &RunResult, out: &Path) -> Result<RunReport> {
    write_config(p, out)?;
    let extrapolated = p.config.gates.as_ref().is_some_and(|g| g.extrapolated);
    let mut snapshots = Vec::with_capacity(run.snapshots.len());
    for (snap, tf) in run.snapshots.iter().zip(truth) {
        let dir_name = snapshot_dir(snap.t);
        let dir = out.join(&dir_name);
        fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;

        let mut kl = Vec::new();
        let mut kl_csv = String::from("L,metric,variables,value,floor_mass\n");
        let mut densities = Vec::new();
        let mut warnings = Vec::new();
        for (m, truth_field) in snap.marginals.iter().zip(&tf.fields) {
            let label = m.marginal.label();
            let _ = writeln!(
                kl_csv,
                "{},{},{},{:.8e},{:.8e}",
                run.members,
                m.metric(),
                csv_cell(&label),
                m.kl.value,
                m.kl.floor_mass
            );
            kl.push(KlRow {
                variables: label.clone(),
                metric: m.metric().into(),
                value: m.kl.value,
                floor_mass: m.kl.floor_mass,
                gate: m.gate,
                pass: m.passes(),
                extrapolated_gate: extrapolated && m.gate.is_some(),
            });
            for w in truth_field.warnings.iter().chain(&m.recovered.warnings) {
                warnings.push(format!("{label}: {w}"));
            }
            if (m.recovered.integral - 1.0).abs() > 1e-3 {
                warnings.push(format!("{label}: recovered density integrates to {:.6}", m.recovered.integral));
            }

            let stem = m.marginal.names.join("-");
            let files = DensityFiles {
                variables: label,
                truth_csv: format!("{dir_name}/{stem}_truth.csv"),
                recovered_csv: format!("{dir_name}/{stem}_recovered.csv"),
                metadata: format!("{dir_name}/{stem}_recovered.json"),
            };
            write_field(&out.join(&files.truth_csv), truth_field)?;
            write_field(&out.join(&files.recovered_csv), &m.recovered)?;
            let meta = FieldMetadata {
                grid: &m.recovered.grid,
                integral: m.recovered.integral,
                t: snap.t,
                members: run.members,
                bandwidth: &snap.bandwidth,
                warnings: &m.recovered.warnings,
            };
            let meta = serde_json::to_string_pretty(&meta).expect("metadata serializes");
            write_text(&out.join(&files.metadata), &meta)?;
            densities.push(files);
        }

        let mut moments = Vec::new();
        let mut moments_csv = String::from("variable,source,mean,variance,skewness,kurtosis\n");
        for ((name, rec), tru) in p.names.iter().zip(&snap.moments).zip(&tf.moments) {
            for (source, mo) in [("recovered", rec), ("truth", tru)] {
                let _ = writeln!(
                    moments_csv,
                    "{name},{source},{:.8e},{:.8e},{:.8e},{:.8e}",
                    mo.mean, mo.variance, mo.skewness, mo.kurtosis
                );
            }
            moments.push(MomentRow { variable: name.clone(), recovered: *rec, truth: *tru });
        }

        let kl_path = format!("{dir_name}/kl.csv");
        let moments_path = format!("{dir_name}/moments.csv");
        write_text(&out.join(&kl_path), &kl_csv)?;
        write_text(&out.join(&moments_path), &moments_csv)?;
        snapshots.push(SnapshotReport {
            t: snap.t,
            bandwidth: snap.bandwidth.clone(),
            bandwidth_fallback: snap.bandwidth_fallback,
            kl,
            moments,
            kl_csv: kl_path,
            moments_csv: moments_path,
            densities,
            warnings,
        });
    }

    let gated: Vec<bool> = snapshots.iter().flat_map(|s| s.kl.iter().filter_map(|k| k.pass)).collect();
    let report = RunReport {
        name: p.config.name.clone(),
        provenance: provenance(p, run.members, run.seed),
        grid_policy: grid_policy(p),
        filter: run.diagnostics,
        snapshots,
        gates_passed: if gated.is_empty() { None } else { Some(gated.iter().all(|&b| b)) },
    };
    let json = serde_json::to_string_pretty(&report).expect("reports serialize");
    write_text(&out.join(REPORT_FILE), &json)?;
    Ok(report)
}
