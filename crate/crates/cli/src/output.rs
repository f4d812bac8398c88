//! Result files: CSV tables, the JSON summary and the SVG plot.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use robust_moo::adaptive::{CycleRecord, RunResult, RunStatus};
use robust_moo::problem::{MixedPoint, ProblemSpec};

use crate::config::RunConfig;

/// Shortest decimal that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

fn design_header(spec: &ProblemSpec) -> Vec<String> {
    let d = &spec.design;
    d.continuous.iter().map(|v| v.name.clone()).chain(d.categorical.iter().map(|v| v.name.clone())).collect()
}

fn design_fields(spec: &ProblemSpec, d: &MixedPoint) -> Vec<String> {
    let labels = spec.design.categorical.iter().zip(&d.cat).map(|(v, &l)| v.levels[l].clone());
    d.con.iter().map(|&x| num(x)).chain(labels).collect()
}

fn objective_header(prefix: &str, m: usize) -> Vec<String> {
    (1..=m).map(|k| format!("{prefix}{k}")).collect()
}

fn write_csv(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Objectives then design values, one row per front point.
pub fn write_front(path: &Path, spec: &ProblemSpec, result: &RunResult) -> anyhow::Result<()> {
    let m = spec.n_objectives;
    let header = objective_header("f", m).into_iter().chain(design_header(spec)).collect();
    let rows = result
        .pareto_front
        .iter()
        .zip(&result.pareto_set)
        .map(|(f, d)| f.iter().map(|&v| num(v)).chain(design_fields(spec, d)).collect())
        .collect();
    write_csv(path, header, rows)
}

/// Design values, then inner-surrogate quantiles and relative errors.
pub fn write_set(path: &Path, spec: &ProblemSpec, result: &RunResult) -> anyhow::Result<()> {
    let m = spec.n_objectives;
    let header = design_header(spec)
        .into_iter()
        .chain(objective_header("q", m))
        .chain(objective_header("eta", m))
        .collect();
    let rows = result
        .pareto_set
        .iter()
        .enumerate()
        .map(|(i, d)| {
            design_fields(spec, d)
                .into_iter()
                .chain(result.inner_quantiles[i].iter().map(|&v| num(v)))
                .chain(result.eta[i].iter().map(|&v| num(v)))
                .collect()
        })
        .collect();
    write_csv(path, header, rows)
}

pub fn write_history(path: &Path, m: usize, history: &[CycleRecord]) -> anyhow::Result<()> {
    let mut header = vec!["cycle".to_string(), "generations".into(), "threshold".into()];
    header.extend(objective_header("worst_eta", m));
    header.extend(objective_header("max_eta", m));
    header.extend(
        ["front_size", "outliers", "ed_size", "evaluations", "outer_size", "outer_eta", "enrichment", "converged"]
            .map(String::from),
    );
    let opt = |v: Option<String>| v.unwrap_or_default();
    let rows = history
        .iter()
        .map(|h| {
            let mut r = vec![h.cycle.to_string(), h.generations.to_string(), num(h.threshold)];
            r.extend(h.worst_eta.iter().map(|&v| num(v)));
            r.extend(h.max_eta.iter().map(|&v| num(v)));
            r.extend([
                h.front_size.to_string(),
                h.outliers.to_string(),
                h.ed_size.to_string(),
                h.evaluations.to_string(),
                opt(h.outer_size.map(|v| v.to_string())),
                opt(h.outer_eta.map(num)),
                h.enrichment.len().to_string(),
                h.converged.to_string(),
            ]);
            r
        })
        .collect();
    write_csv(path, header, rows)
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub problem: &'a str,
    pub status: RunStatus,
    pub converged: bool,
    pub seed: u64,
    pub target: f64,
    pub cycles: usize,
    pub evaluations: u64,
    pub n_samples: usize,
    pub front_size: usize,
    pub delta_hv: Option<f64>,
    pub delta_hv_prime: Option<f64>,
    pub reference: Option<String>,
    pub elapsed_seconds: f64,
    pub config: &'a RunConfig,
}

pub fn write_summary(path: &Path, summary: &Summary) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(summary)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
}

/// Scatter of the first two objectives, with the reference front drawn as a
/// line when given.
pub fn front_svg(front: &[Vec<f64>], reference: Option<&[Vec<f64>]>, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 60.0;
    let all: Vec<&Vec<f64>> = front.iter().chain(reference.unwrap_or(&[])).filter(|p| p.len() >= 2).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#, W / 2.0);
    for (v, x, y, anchor) in [
        (x0, PAD, H - PAD + 18.0, "start"),
        (x1, W - PAD, H - PAD + 18.0, "end"),
        (y0, PAD - 6.0, H - PAD, "end"),
        (y1, PAD - 6.0, PAD + 10.0, "end"),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{v:.4}</text>"#
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">q1</text>"#, W / 2.0, H - 20.0);
    let _ = writeln!(s, r#"<text x="20" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">q2</text>"#, H / 2.0);
    if let Some(reference) = reference {
        let mut pts: Vec<&Vec<f64>> = reference.iter().collect();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1]))).collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#999999" stroke-width="1.5"/>"##, path.join(" "));
    }
    for p in front.iter().filter(|p| p.len() >= 2) {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##, sx(p[0]), sy(p[1]));
    }
    s.push_str("</svg>\n");
    s
}
