//! Report emission: CSV tables plus hand-rolled SVG box plots and heat
//! maps, all byte-deterministic for a given input.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::BoxStats;
use crate::Result;

/// A budget grid of box statistics, e.g. sim budget x real-label budget.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ErrorMap {
    /// What the rows enumerate ("sim images", "unlabeled real images", ...).
    pub row_label: String,
    pub col_label: String,
    pub row_budgets: Vec<usize>,
    pub col_budgets: Vec<usize>,
    /// `cells[row][col]`; NaN stats mean no result.
    pub cells: Vec<Vec<BoxStats>>,
}

impl ErrorMap {
    fn csv(&self, field: impl Fn(&BoxStats) -> f64) -> String {
        let mut out = String::new();
        out.push_str(&self.row_label.replace(',', ";"));
        for c in &self.col_budgets {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (ri, r) in self.row_budgets.iter().enumerate() {
            let _ = write!(out, "{r}");
            for cell in &self.cells[ri] {
                let _ = write!(out, ",{}", field(cell));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct Report {
    /// Scalar metric rows for metrics.csv.
    pub metrics: Vec<(String, f64)>,
    pub error_maps: Vec<(String, ErrorMap)>,
    /// Named groups of labeled box stats, one SVG box plot each.
    pub boxplots: Vec<(String, Vec<(String, BoxStats)>)>,
    /// Resolved configuration echoed into manifest.json.
    pub manifest: serde_json::Value,
}

// ---------------------------------------------------------------------------
// SVG helpers

fn fmt(v: f64) -> String {
    // fixed precision keeps the SVG byte-stable without float noise
    format!("{v:.3}")
}

fn svg_header(w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

fn svg_boxplot(title: &str, groups: &[(String, BoxStats)]) -> String {
    let (w, h) = (80.0 + groups.len() as f64 * 70.0, 320.0);
    let (top, bottom, left) = (40.0, 280.0, 60.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, s) in groups {
        if s.is_nan() {
            continue;
        }
        lo = lo.min(s.q1).min(s.outliers.iter().copied().fold(s.q1, f64::min));
        hi = hi.max(s.q3).max(s.outliers.iter().copied().fold(s.q3, f64::max));
    }
    if !lo.is_finite() || hi <= lo {
        lo = 0.0;
        hi = 1.0;
    }
    let y = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);
    let mut s = svg_header(w, h);
    let _ = write!(
        s,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        fmt(w / 2.0),
        title
    );
    // axis with min/max labels
    let _ = write!(
        s,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{}</text>\n",
        fmt(left - 4.0),
        fmt(bottom + 4.0),
        fmt(lo),
        fmt(left - 4.0),
        fmt(top + 4.0),
        fmt(hi),
    );
    for (i, (label, st)) in groups.iter().enumerate() {
        let cx = left + 40.0 + i as f64 * 70.0;
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            fmt(cx),
            fmt(bottom + 18.0),
            label
        );
        if st.is_nan() {
            let _ = write!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">NaN</text>\n",
                fmt(cx),
                fmt((top + bottom) / 2.0)
            );
            continue;
        }
        let iqr = st.q3 - st.q1;
        let whisk_lo = st.q1 - super::OUTLIER_W * iqr;
        let whisk_hi = st.q3 + super::OUTLIER_W * iqr;
        let box_w = 40.0;
        let _ = write!(
            s,
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"black\"/>\n\
             <rect x=\"{}\" y=\"{}\" width=\"{box_w}\" height=\"{}\" fill=\"lightsteelblue\" \
             stroke=\"black\"/>\n\
             <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"2\"/>\n",
            fmt(y(whisk_hi.min(hi))),
            fmt(y(whisk_lo.max(lo))),
            fmt(cx - box_w / 2.0),
            fmt(y(st.q3)),
            fmt((y(st.q1) - y(st.q3)).max(0.5)),
            fmt(cx - box_w / 2.0),
            fmt(y(st.median)),
            fmt(cx + box_w / 2.0),
            fmt(y(st.median)),
        );
        for o in &st.outliers {
            let _ = write!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">x</text>\n",
                fmt(cx),
                fmt(y(*o) + 3.0)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn heat_color(t: f64) -> String {
    // blue (low) -> red (high)
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    format!("rgb({r},60,{b})")
}

fn svg_heatmap(title: &str, map: &ErrorMap) -> String {
    let cell = 56.0;
    let (left, top) = (90.0, 60.0);
    let w = left + map.col_budgets.len() as f64 * cell + 20.0;
    let h = top + map.row_budgets.len() as f64 * cell + 40.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in &map.cells {
        for c in row {
            if !c.is_nan() {
                lo = lo.min(c.median);
                hi = hi.max(c.median);
            }
        }
    }
    if !lo.is_finite() || hi <= lo {
        lo = 0.0;
        hi = 1.0;
    }
    let mut s = svg_header(w, h);
    let _ = write!(
        s,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
         <text x=\"{}\" y=\"40\" text-anchor=\"middle\" font-size=\"11\">{} →</text>\n\
         <text x=\"16\" y=\"{}\" font-size=\"11\" transform=\"rotate(-90 16 {})\" \
         text-anchor=\"middle\">{} →</text>\n",
        fmt(w / 2.0),
        title,
        fmt(left + map.col_budgets.len() as f64 * cell / 2.0),
        map.col_label,
        fmt(top + map.row_budgets.len() as f64 * cell / 2.0),
        fmt(top + map.row_budgets.len() as f64 * cell / 2.0),
        map.row_label,
    );
    for (ci, c) in map.col_budgets.iter().enumerate() {
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>\n",
            fmt(left + (ci as f64 + 0.5) * cell),
            fmt(top - 6.0),
            c
        );
    }
    for (ri, r) in map.row_budgets.iter().enumerate() {
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{}</text>\n",
            fmt(left - 6.0),
            fmt(top + (ri as f64 + 0.6) * cell),
            r
        );
        for (ci, st) in map.cells[ri].iter().enumerate() {
            let x = left + ci as f64 * cell;
            let y = top + ri as f64 * cell;
            let (fill, text) = if st.is_nan() {
                ("rgb(200,200,200)".to_string(), "NaN".to_string())
            } else {
                (
                    heat_color((st.median - lo) / (hi - lo)),
                    format!("{:.1}", st.median),
                )
            };
            let _ = write!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" \
                 stroke=\"white\"/>\n\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" \
                 fill=\"white\">{text}</text>\n",
                fmt(x),
                fmt(y),
                fmt(x + cell / 2.0),
                fmt(y + cell / 2.0 + 4.0),
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------------------
// emission

/// Write metrics.csv, errormap_*.csv, boxplot_*.svg, heatmap_*.svg and
/// manifest.json under `dir`, creating it as needed. Returns the paths in
/// a fixed order.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let put = |name: String, contents: String| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    };

    let mut metrics = String::from("metric,value\n");
    for (name, value) in &report.metrics {
        let _ = writeln!(metrics, "{},{}", name.replace(',', ";"), value);
    }
    written.push(put("metrics.csv".to_string(), metrics)?);

    for (name, map) in &report.error_maps {
        written.push(put(format!("errormap_{name}.csv"), map.csv(|s| s.median))?);
        written.push(put(format!("errormap_{name}_q3.csv"), map.csv(|s| s.q3))?);
        written.push(put(format!("heatmap_{name}.svg"), svg_heatmap(name, map))?);
    }
    for (name, groups) in &report.boxplots {
        written.push(put(format!("boxplot_{name}.svg"), svg_boxplot(name, groups))?);
    }

    let mut manifest = serde_json::to_string_pretty(&report.manifest)?;
    manifest.push('\n');
    written.push(put("manifest.json".to_string(), manifest)?);
    Ok(written)
}
