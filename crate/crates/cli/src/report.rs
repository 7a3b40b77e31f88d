//! Sensitivity CSVs and side-by-side SVG heatmaps.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use surrogate_core::Tensor;

use crate::error::{CliError, CliResult};

/// Rows are inputs, columns outputs; undefined columns are left empty.
pub fn write_matrix_csv(
    path: &Path,
    row_labels: &[&str],
    col_labels: &[String],
    values: &Tensor<f64>,
    defined: &[bool],
) -> CliResult<()> {
    let io = |e: csv::Error| CliError::io(path)(e.into());
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path).map_err(CliError::io(path))?));
    w.write_field("input").map_err(io)?;
    for c in col_labels {
        w.write_field(c).map_err(io)?;
    }
    w.write_record(None::<&[u8]>).map_err(io)?;
    for (r, label) in row_labels.iter().enumerate() {
        w.write_field(label).map_err(io)?;
        for (c, &ok) in defined.iter().enumerate() {
            if ok {
                w.write_field(values.get(r, c).to_string()).map_err(io)?;
            } else {
                w.write_field("").map_err(io)?;
            }
        }
        w.write_record(None::<&[u8]>).map_err(io)?;
    }
    w.flush().map_err(CliError::io(path))
}

/// Reads a file written by [`write_matrix_csv`]: `(row labels, values,
/// defined)`. A column is defined when every cell in it is non-empty.
pub fn read_matrix_csv(path: &Path) -> CliResult<(Vec<String>, Tensor<f64>, Vec<bool>)> {
    if !path.is_file() {
        return Err(CliError::Missing(format!(
            "{} not found; run `surrogate sensitivity` first",
            path.display()
        )));
    }
    let bad = |msg: String| CliError::Integrity(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path)(e.into()))?;
    let cols = reader.headers().map_err(|e| bad(e.to_string()))?.len() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut defined = vec![true; cols];
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        labels.push(rec[0].to_string());
        for (c, field) in rec.iter().skip(1).enumerate() {
            if field.is_empty() {
                defined[c] = false;
                data.push(0.0);
            } else {
                data.push(field.parse().map_err(|_| bad(format!("not a number: {field:?}")))?);
            }
        }
    }
    let values = Tensor::matrix(labels.len(), cols, data)?;
    Ok((labels, values, defined))
}

/// A viridis-like ramp sampled at five stops.
fn color(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

const UNDEFINED_FILL: &str = "#bdbdbd";

pub struct Panel<'a> {
    pub title: &'a str,
    /// inputs × groups
    pub values: &'a Tensor<f64>,
    pub defined: &'a [bool],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Two heatmaps side by side on one color scale. Undefined columns are gray;
/// a matrix without spread renders in a single color.
pub fn heatmap_pair_svg(title: &str, rows: &[&str], cols: &[String], left: &Panel, right: &Panel) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in [left, right] {
        for r in 0..rows.len() {
            for c in (0..cols.len()).filter(|&c| p.defined[c]) {
                let v = p.values.get(r, c);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let span = if hi > lo { hi - lo } else { 0.0 };

    let cell = if cols.len() > 40 { 10.0 } else { 22.0 };
    let label_w = 70.0;
    let top = 50.0;
    let panel_w = cols.len() as f64 * cell;
    let gap = 40.0;
    let width = label_w + 2.0 * panel_w + gap + 20.0;
    let height = top + rows.len() as f64 * cell + 50.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{label_w}" y="16" font-size="13">{}</text>"#, escape(title));
    for (k, panel) in [left, right].into_iter().enumerate() {
        let x0 = label_w + k as f64 * (panel_w + gap);
        let _ = writeln!(
            s,
            r#"<g class="panel" data-title="{0}"><text x="{x0}" y="{1}">{0}</text>"#,
            escape(panel.title),
            top - 8.0
        );
        for (r, row) in rows.iter().enumerate() {
            for (c, col) in cols.iter().enumerate() {
                let (fill, value) = if panel.defined[c] {
                    let v = panel.values.get(r, c);
                    let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
                    (color(t), format!("{v:.4e}"))
                } else {
                    (UNDEFINED_FILL.to_string(), "undefined".to_string())
                };
                let _ = writeln!(
                    s,
                    r#"<rect class="cell" x="{}" y="{}" width="{cell}" height="{cell}" fill="{fill}"><title>{} / {}: {value}</title></rect>"#,
                    x0 + c as f64 * cell,
                    top + r as f64 * cell,
                    escape(row),
                    escape(col)
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
    for (r, row) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            label_w - 6.0,
            top + (r as f64 + 0.7) * cell,
            escape(row)
        );
    }
    let legend_y = top + rows.len() as f64 * cell + 25.0;
    let (lo_txt, hi_txt) = if lo.is_finite() {
        (format!("{lo:.3e}"), format!("{hi:.3e}"))
    } else {
        ("n/a".to_string(), "n/a".to_string())
    };
    let _ = writeln!(
        s,
        r#"<text x="{label_w}" y="{legend_y}">scale: {lo_txt} (dark) to {hi_txt} (light); gray = undefined</text>"#
    );
    s.push_str("</svg>\n");
    s
}
