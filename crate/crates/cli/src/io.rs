//! Output directory handling and the file formats: hash-stamped CSV, JSON
//! envelopes, the snapshot container, SVG polylines and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plate_core::integrator::Trajectory;
use serde::Serialize;
use thiserror::Error;

use crate::config::{sha256_hex, Certificates};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("output directory {0} exists and is not empty (use --overwrite)")]
    Exists(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

/// 17 significant digits, fixed exponent form.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::U(n) => n.to_string(),
            Cell::S(s) => s.replace([',', '\n'], ";"),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::U(n as u64)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::U(n)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::S(String::new()), Cell::F)
    }
}

/// First line `# config_hash=<hex>`, then the header, then one row per record.
pub fn render_csv(hash: &str, header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut out = format!("# config_hash={hash}\n{}\n", header.join(","));
    for row in rows {
        let line: Vec<String> = row.iter().map(Cell::render).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: &'a str,
    kind: &'a str,
    data: &'a T,
}

pub fn render_json<T: Serialize>(hash: &str, kind: &str, data: &T) -> Result<String, OutputError> {
    let mut s = serde_json::to_string_pretty(&Envelope { config_hash: hash, kind, data })?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct SnapshotContainer<'a> {
    layout: &'static str,
    mx: usize,
    ny: usize,
    dim: usize,
    times: Vec<f64>,
    u: Vec<&'a [f64]>,
    v: Vec<&'a [f64]>,
}

pub fn render_snapshots(hash: &str, traj: &Trajectory) -> Result<String, OutputError> {
    let c = SnapshotContainer {
        layout: "coefficient i = (m-1)*ny + k multiplies sin(m x) P_k(y/l)",
        mx: traj.meta.mx,
        ny: traj.meta.ny,
        dim: traj.meta.mx * traj.meta.ny,
        times: traj.times(),
        u: traj.snapshots.iter().map(|s| s.u.as_slice()).collect(),
        v: traj.snapshots.iter().map(|s| s.v.as_slice()).collect(),
    };
    render_json(hash, "snapshots", &c)
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal SVG line chart; non-finite (or non-positive on a log axis) points are dropped.
pub fn render_svg(hash: &str, plot: &Plot) -> String {
    let (w, h, pad) = (720.0, 440.0, 60.0);
    let tf = |y: f64| if plot.log_y { y.log10() } else { y };
    let keep = |x: f64, y: f64| x.is_finite() && y.is_finite() && (!plot.log_y || y > 0.0);
    let pts: Vec<(f64, f64)> = plot
        .series
        .iter()
        .flat_map(|s| s.xs.iter().zip(&s.ys).filter(|(x, y)| keep(**x, **y)).map(|(x, y)| (*x, tf(*y))))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut out = String::new();
    let _ = writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">");
    let _ = writeln!(out, "<!-- config_hash={hash} -->");
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">{}</text>", w / 2.0, plot.title);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>", w / 2.0, h - 15.0, plot.x_label);
    let ylab = if plot.log_y { format!("log10 {}", plot.y_label) } else { plot.y_label.clone() };
    let _ = writeln!(
        out,
        "<text x=\"15\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 15 {})\">{ylab}</text>",
        h / 2.0,
        h / 2.0
    );
    for (v, anchor, x, y) in [
        (x0, "start", pad, h - pad + 16.0),
        (x1, "end", w - pad, h - pad + 16.0),
        (y0, "end", pad - 4.0, h - pad),
        (y1, "end", pad - 4.0, pad + 10.0),
    ] {
        let _ = writeln!(out, "<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\" font-size=\"11\">{v:.4e}</text>");
    }
    for (k, s) in plot.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = s
            .xs
            .iter()
            .zip(&s.ys)
            .filter(|(x, y)| keep(**x, **y))
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(tf(*y))))
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>",
            coords.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            w - pad - 150.0,
            pad + 18.0 + 16.0 * k as f64,
            s.label
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_origin: String,
    pub config_hash: String,
    pub output_dir: String,
    pub seed: u64,
    pub threads: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub certificates: Certificates,
    pub verdict: Option<String>,
    pub files: Vec<FileRecord>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Collects every output of a run; files are written in call order by one owner.
pub struct OutputDir {
    pub path: PathBuf,
    pub hash: String,
    pub files: Vec<FileRecord>,
}

impl OutputDir {
    pub fn create(path: &Path, hash: &str, overwrite: bool) -> Result<Self, OutputError> {
        if path.exists() {
            let non_empty = fs::read_dir(path).map_err(io_err(path))?.next().is_some();
            if non_empty && !overwrite {
                return Err(OutputError::Exists(path.to_path_buf()));
            }
        }
        fs::create_dir_all(path).map_err(io_err(path))?;
        Ok(OutputDir { path: path.to_path_buf(), hash: hash.to_string(), files: Vec::new() })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, OutputError> {
        let p = self.path.join(name);
        fs::write(&p, text).map_err(io_err(&p))?;
        self.files.push(FileRecord { name: name.to_string(), sha256: sha256_hex(text.as_bytes()), bytes: text.len() });
        Ok(p)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<PathBuf, OutputError> {
        let text = render_csv(&self.hash, header, rows);
        self.write_text(name, &text)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, kind: &str, data: &T) -> Result<PathBuf, OutputError> {
        let text = render_json(&self.hash, kind, data)?;
        self.write_text(name, &text)
    }

    pub fn svg(&mut self, name: &str, plot: &Plot) -> Result<PathBuf, OutputError> {
        let text = render_svg(&self.hash, plot);
        self.write_text(name, &text)
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<PathBuf, OutputError> {
        manifest.files = self.files;
        let p = self.path.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&p, text).map_err(io_err(&p))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.5), "-2.5000000000000000e0");
        for x in [std::f64::consts::PI, 1e-300, -7.123456789012345e200] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn csv_starts_with_hash_then_header() {
        let s = render_csv("abc", &["t", "n", "note"], &[vec![Cell::F(1.0), Cell::U(3), Cell::S("a,b".into())]]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines, ["# config_hash=abc", "t,n,note", "1.0000000000000000e0,3,a;b"]);
    }

    #[test]
    fn json_envelope_is_stable() {
        let a = render_json("h", "k", &vec![1.5, 2.0]).unwrap();
        assert_eq!(a, render_json("h", "k", &vec![1.5, 2.0]).unwrap());
        assert!(a.starts_with("{\n  \"config_hash\": \"h\""));
    }

    #[test]
    fn svg_drops_bad_points() {
        let plot = Plot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y: true,
            series: vec![Series { label: "s".into(), xs: vec![0.0, 1.0, 2.0], ys: vec![1.0, 0.0, f64::NAN] }],
        };
        let svg = render_svg("h", &plot);
        assert!(svg.contains("config_hash=h"));
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 1);
    }

    #[test]
    fn existing_output_needs_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        assert!(matches!(OutputDir::create(dir.path(), "h", false), Err(OutputError::Exists(_))));
        assert!(OutputDir::create(dir.path(), "h", true).is_ok());
    }
}
