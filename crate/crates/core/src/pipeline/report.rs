//! Writes a [`ReportBundle`] to disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::{PipelineError, ReportBundle, Stage};
use crate::circuit::PhaseLabel;

fn io_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::new(Stage::Report, e.to_string())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, PipelineError> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(io_err)
}

pub fn write_accuracy(bundle: &ReportBundle, path: &Path) -> Result<(), PipelineError> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "circuit", "mean", "std", "trials"]).map_err(io_err)?;
    for r in &bundle.accuracy {
        w.write_record([r.method.clone(), r.circuit.clone(), r.mean.to_string(), r.std.to_string(), r.trials.to_string()])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_embedding(bundle: &ReportBundle, path: &Path) -> Result<(), PipelineError> {
    let mut w = csv_writer(path)?;
    w.write_record(["customer_id", "pc1", "pc2", "true_label", "predicted_label"]).map_err(io_err)?;
    for r in &bundle.embedding {
        w.write_record([
            r.customer_id.clone(),
            r.pc1.to_string(),
            r.pc2.to_string(),
            r.true_label.map(|l| l.as_str().to_string()).unwrap_or_default(),
            r.predicted.as_str().to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn provenance_text(bundle: &ReportBundle) -> String {
    let p = &bundle.provenance;
    let mut s = String::new();
    let _ = writeln!(s, "version = {}", p.version);
    let _ = writeln!(s, "config_sha256 = {}", p.config_sha256);
    let _ = writeln!(s, "master_seed = {}", p.master_seed);
    let _ = writeln!(s, "trials = {}", bundle.trials.len());
    let _ = writeln!(s, "imputed_cells = {}", p.imputed_cells);
    let _ = writeln!(s, "dropped_columns = {}", p.dropped_columns);
    let _ = writeln!(s, "--- config ---");
    s.push_str(&p.config_text);
    if !p.config_text.ends_with('\n') {
        s.push('\n');
    }
    s
}

/// Master seed recorded by [`provenance_text`].
pub fn seed_from_provenance(text: &str) -> Option<u64> {
    text.lines().find_map(|l| l.strip_prefix("master_seed = ")).and_then(|v| v.trim().parse().ok())
}

/// Extracts the configuration text embedded by [`provenance_text`].
pub fn config_from_provenance(text: &str) -> Option<&str> {
    text.split_once("--- config ---\n").map(|(_, c)| c)
}

const COLOURS: [&str; 7] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d"];

fn marker(label: Option<PhaseLabel>, x: f64, y: f64) -> String {
    let Some(l) = label else {
        return format!(r##"<circle cx="{x:.3}" cy="{y:.3}" r="3" fill="none" stroke="#555"/>"##);
    };
    let c = COLOURS[l.index()];
    match l.index() {
        0 => format!(r#"<circle cx="{x:.3}" cy="{y:.3}" r="3.5" fill="{c}"/>"#),
        1 => format!(r#"<rect x="{:.3}" y="{:.3}" width="7" height="7" fill="{c}"/>"#, x - 3.5, y - 3.5),
        2 => format!(r#"<polygon points="{x:.3},{:.3} {:.3},{:.3} {:.3},{:.3}" fill="{c}"/>"#, y - 4.0, x - 4.0, y + 3.5, x + 4.0, y + 3.5),
        3 => format!(r#"<polygon points="{x:.3},{:.3} {:.3},{y:.3} {x:.3},{:.3} {:.3},{y:.3}" fill="{c}"/>"#, y - 4.5, x + 4.5, y + 4.5, x - 4.5),
        4 => format!(
            r#"<path d="M{:.3},{:.3}L{:.3},{:.3}M{:.3},{:.3}L{:.3},{:.3}" stroke="{c}" stroke-width="2"/>"#,
            x - 3.5, y - 3.5, x + 3.5, y + 3.5, x - 3.5, y + 3.5, x + 3.5, y - 3.5
        ),
        5 => format!(
            r#"<path d="M{:.3},{y:.3}L{:.3},{y:.3}M{x:.3},{:.3}L{x:.3},{:.3}" stroke="{c}" stroke-width="2"/>"#,
            x - 4.0, x + 4.0, y - 4.0, y + 4.0
        ),
        _ => format!(r#"<circle cx="{x:.3}" cy="{y:.3}" r="3.5" fill="none" stroke="{c}" stroke-width="2"/>"#),
    }
}

/// Scatter of the first two principal components, one marker per true label.
pub fn embedding_svg(bundle: &ReportBundle) -> String {
    let (w, h, pad) = (480.0, 480.0, 40.0);
    let xs: Vec<f64> = bundle.embedding.iter().map(|r| r.pc1).collect();
    let ys: Vec<f64> = bundle.embedding.iter().map(|r| r.pc2).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || hi - lo < 1e-12 {
            (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r##"<text x="{}" y="{}" font-size="12" text-anchor="middle">PC1</text>"##, w / 2.0, h - 10.0);
    let _ = writeln!(s, r##"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">PC2</text>"##, h / 2.0, h / 2.0);
    for r in &bundle.embedding {
        let px = pad + (r.pc1 - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = h - pad - (r.pc2 - y0) / (y1 - y0) * (h - 2.0 * pad);
        let _ = writeln!(s, "{}", marker(r.true_label, px, py));
    }
    let mut present: Vec<PhaseLabel> = bundle.embedding.iter().filter_map(|r| r.true_label).collect();
    present.sort();
    present.dedup();
    for (i, l) in present.iter().enumerate() {
        let y = 16.0 + 16.0 * i as f64;
        let _ = writeln!(s, "{}", marker(Some(*l), w - 60.0, y));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">{}</text>"#, w - 48.0, y + 4.0, l);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `accuracy.csv`, `embedding.csv`, `entropy.txt`, `provenance.txt`
/// and `embedding.svg` into `dir`, creating it if needed.
pub fn emit_reports(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let files: Vec<PathBuf> =
        ["accuracy.csv", "embedding.csv", "entropy.txt", "provenance.txt", "embedding.svg"].iter().map(|f| dir.join(f)).collect();
    write_accuracy(bundle, &files[0])?;
    write_embedding(bundle, &files[1])?;
    std::fs::write(&files[2], bundle.entropy.to_text()).map_err(io_err)?;
    std::fs::write(&files[3], provenance_text(bundle)).map_err(io_err)?;
    std::fs::write(&files[4], embedding_svg(bundle)).map_err(io_err)?;
    Ok(files)
}
