//! Offline telemetry analysis: velocity-binned error statistics, the g-g
//! point cloud, and model-error bins, all emitted as CSV for external
//! plotting.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::sim::TelemetryRow;

/// Velocity bin width [m/s].
pub const BIN_WIDTH: f64 = 2.0;

/// Statistics of one velocity bin.
#[derive(Debug, Clone, Copy)]
pub struct VelocityBin {
    /// Lower edge of the bin [m/s].
    pub v_lo: f64,
    pub count: usize,
    pub mean_e_y: f64,
    pub std_e_y: f64,
    pub max_abs_e_y: f64,
    pub mean_e_psi: f64,
    pub max_abs_e_psi: f64,
}

/// Model-error statistics of one velocity bin (NaN rows skipped).
#[derive(Debug, Clone, Copy)]
pub struct ModelErrorBin {
    pub v_lo: f64,
    pub count: usize,
    pub mean_abs: f64,
    pub max_abs: f64,
}

/// Full analysis output.
#[derive(Debug, Clone, Default)]
pub struct AnalysisBundle {
    pub error_bins: Vec<VelocityBin>,
    pub model_error_bins: Vec<ModelErrorBin>,
    /// (a_x_cmd, a_y, v_x) triples.
    pub gg: Vec<(f64, f64, f64)>,
    pub max_abs_a_y: f64,
}

fn bin_edge(v: f64) -> i64 {
    (v / BIN_WIDTH).floor() as i64
}

/// Bins telemetry rows by longitudinal speed. Empty input yields an empty
/// bundle.
pub fn analyze(rows: &[TelemetryRow]) -> AnalysisBundle {
    let mut bundle = AnalysisBundle::default();
    if rows.is_empty() {
        return bundle;
    }

    let mut errs: BTreeMap<i64, Vec<&TelemetryRow>> = BTreeMap::new();
    for r in rows {
        errs.entry(bin_edge(r.v_x)).or_default().push(r);
        bundle.gg.push((r.a_x_cmd, r.a_y, r.v_x));
        bundle.max_abs_a_y = bundle.max_abs_a_y.max(r.a_y.abs());
    }

    for (edge, bin_rows) in &errs {
        let n = bin_rows.len();
        let mean_e_y = bin_rows.iter().map(|r| r.e_y).sum::<f64>() / n as f64;
        let var =
            bin_rows.iter().map(|r| (r.e_y - mean_e_y).powi(2)).sum::<f64>() / n as f64;
        let mean_e_psi = bin_rows.iter().map(|r| r.e_psi).sum::<f64>() / n as f64;
        bundle.error_bins.push(VelocityBin {
            v_lo: *edge as f64 * BIN_WIDTH,
            count: n,
            mean_e_y,
            std_e_y: var.sqrt(),
            max_abs_e_y: bin_rows.iter().fold(0.0f64, |m, r| m.max(r.e_y.abs())),
            mean_e_psi,
            max_abs_e_psi: bin_rows.iter().fold(0.0f64, |m, r| m.max(r.e_psi.abs())),
        });

        let model: Vec<f64> = bin_rows
            .iter()
            .map(|r| r.model_error_1step)
            .filter(|v| v.is_finite())
            .collect();
        if !model.is_empty() {
            bundle.model_error_bins.push(ModelErrorBin {
                v_lo: *edge as f64 * BIN_WIDTH,
                count: model.len(),
                mean_abs: model.iter().map(|v| v.abs()).sum::<f64>() / model.len() as f64,
                max_abs: model.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            });
        }
    }
    bundle
}

/// Writes the bundle as three CSV files into `dir`; returns their paths.
pub fn write_bundle<P: AsRef<Path>>(
    dir: P,
    bundle: &AnalysisBundle,
) -> std::io::Result<(PathBuf, PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let errors_path = dir.join("errors_vs_velocity.csv");
    let mut w = BufWriter::new(fs::File::create(&errors_path)?);
    writeln!(w, "v_lo,count,mean_e_y,std_e_y,max_abs_e_y,mean_e_psi,max_abs_e_psi")?;
    for b in &bundle.error_bins {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            b.v_lo, b.count, b.mean_e_y, b.std_e_y, b.max_abs_e_y, b.mean_e_psi, b.max_abs_e_psi
        )?;
    }

    let model_path = dir.join("model_error_vs_velocity.csv");
    let mut w = BufWriter::new(fs::File::create(&model_path)?);
    writeln!(w, "v_lo,count,mean_abs,max_abs")?;
    for b in &bundle.model_error_bins {
        writeln!(w, "{},{},{},{}", b.v_lo, b.count, b.mean_abs, b.max_abs)?;
    }

    let gg_path = dir.join("gg.csv");
    let mut w = BufWriter::new(fs::File::create(&gg_path)?);
    writeln!(w, "a_x,a_y,v_x")?;
    for (ax, ay, vx) in &bundle.gg {
        writeln!(w, "{ax},{ay},{vx}")?;
    }

    Ok((errors_path, model_path, gg_path))
}
