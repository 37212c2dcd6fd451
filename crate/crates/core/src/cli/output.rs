use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First 12 hex digits of the SHA-256 of the config file bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(12);
    for b in &digest[..6] {
        write!(hex, "{b:02x}").expect("writing to a String");
    }
    hex
}

/// Writes artifacts into one directory, stamping every CSV with the
/// provenance comment line.
#[derive(Debug, Clone)]
pub struct ArtifactWriter {
    dir: PathBuf,
    provenance: String,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::config(dir.display().to_string(), format!("output directory is not writable: {e}")))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            provenance: format!("# chaining-lab v{VERSION} config={config_hash} seed={seed}"),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut buf = Vec::new();
        buf.extend_from_slice(self.provenance.as_bytes());
        buf.push(b'\n');
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                if row.len() != header.len() {
                    return Err(Error::invalid(format!("{name}: row width {} != header width {}", row.len(), header.len())));
                }
                w.write_record(row)?;
            }
            w.flush()?;
        }
        self.write(name, &buf)
    }

    /// Pretty JSON; non-finite floats become null.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn text(&self, name: &str, body: &str) -> Result<PathBuf> {
        self.write(name, body.as_bytes())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

/// Shortest round-trip decimal, so repeated runs print identical bytes.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// A single polyline plot with labelled axes.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD / 1.5);
    let _ = writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    if !finite.is_empty() {
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &finite {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        let sx = if xmax > xmin { (x1 - x0) / (xmax - xmin) } else { 0.0 };
        let sy = if ymax > ymin { (y0 - y1) / (ymax - ymin) } else { 0.0 };
        let screen: Vec<(f64, f64)> = finite
            .iter()
            .map(|&(x, y)| (x0 + (x - xmin) * sx, y0 - (y - ymin) * sy))
            .collect();
        let path: Vec<String> = screen.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
        for (x, y) in &screen {
            let _ = writeln!(svg, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"steelblue\"/>");
        }
        for (v, y) in [(ymin, y0), (ymax, y1)] {
            let _ = writeln!(svg, "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\" font-size=\"10\">{v:.3}</text>", x0 - 4.0);
        }
        for (v, x) in [(xmin, x0), (xmax, x1)] {
            let _ = writeln!(svg, "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{v:.2}</text>", y0 + 14.0);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
