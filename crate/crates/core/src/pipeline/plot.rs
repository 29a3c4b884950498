//! SVG figures rendered from the CSV files of a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

const SIZE: (u32, u32) = (800, 500);
const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A CSV file as named columns; cells that are not numbers read as NaN.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
    text: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut text = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_err)?;
            rows.push(rec.iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect());
            text.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { header, rows, text })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn pairs(&self, x: usize, y: usize) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r[x], r[y])).collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn draw_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Io(std::io::Error::other(format!("{e:?}")))
}

/// Line plot; with `log_y` the axis shows powers of ten and nonpositive
/// values are dropped.
pub fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> Result<()> {
    let map = |y: f64| if log_y { y.log10() } else { y };
    let cleaned: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|&(x, y)| (x, map(y)))
                .collect()
        })
        .collect();
    let all = cleaned.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Ok(());
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = if y1 > y0 {
        0.05 * (y1 - y0)
    } else {
        0.5 * y0.abs().max(1.0)
    };
    let (y0, y1) = (y0 - pad, y1 + pad);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    let y_fmt = |v: &f64| if log_y { format!("1e{v:.1}") } else { format!("{v:.3e}") };
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .y_label_formatter(&y_fmt)
        .draw()
        .map_err(draw_err)?;
    for (k, (s, pts)) in series.iter().zip(cleaned).enumerate() {
        let color = COLORS[k % COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(draw_err)?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Renders every figure that the CSV files in `dir` allow into `dir/plots`.
/// Returns the number of files written.
pub fn render_run(dir: &Path) -> Result<usize> {
    let out = dir.join("plots");
    fs::create_dir_all(&out)?;
    let mut written = 0;
    let mut emit = |name: &str, title: &str, x: &str, y: &str, series: Vec<Series>, log_y: bool| -> Result<()> {
        line_plot(&out.join(name), title, x, y, &series, log_y)?;
        written += 1;
        Ok(())
    };

    let sv = dir.join("singular_values.csv");
    if sv.exists() {
        let t = Table::read(&sv)?;
        let pts = t.pairs(0, 1);
        emit(
            "singular_values.svg",
            "Singular values",
            "index",
            "sigma",
            vec![series("sigma", pts)],
            true,
        )?;
    }

    let sweep = dir.join("sweep.csv");
    if sweep.exists() {
        let t = Table::read(&sweep)?;
        let (out_c, r_c, status_c) = (t.col("output"), t.col("r"), t.col("status"));
        let (mor_c, best_c) = (t.col("max_mor_error"), t.col("max_best_error"));
        if let (Some(oc), Some(rc), Some(sc), Some(mc), Some(bc)) = (out_c, r_c, status_c, mor_c, best_c) {
            let mut by_output: BTreeMap<String, (Vec<(f64, f64)>, Vec<(f64, f64)>)> = BTreeMap::new();
            for (row, text) in t.rows.iter().zip(&t.text) {
                if text[sc] != "ok" {
                    continue;
                }
                let entry = by_output.entry(text[oc].clone()).or_default();
                entry.0.push((row[rc], row[mc]));
                entry.1.push((row[rc], row[bc]));
            }
            for (name, (mor, best)) in by_output {
                emit(
                    &format!("max_error_{name}.svg"),
                    &format!("Maximum L2 error, {name}"),
                    "r",
                    "max error",
                    vec![series("MOR", mor), series("best approximation", best)],
                    true,
                )?;
            }
        }
    }

    let mut names: Vec<String> = fs::read_dir(dir)?
        .flatten()
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    for name in &names {
        if let Some(stem) = name.strip_prefix("errors_").and_then(|s| s.strip_suffix("_mor.csv")) {
            let best = dir.join(format!("errors_{stem}_best_approx.csv"));
            let mut list = vec![series("MOR", Table::read(&dir.join(name))?.pairs(0, 1))];
            if best.exists() {
                list.push(series("best approximation", Table::read(&best)?.pairs(0, 1)));
            }
            emit(
                &format!("errors_{stem}.svg"),
                &format!("L2 error, {stem}"),
                "t",
                "error",
                list,
                true,
            )?;
        } else if let Some(stem) = name.strip_prefix("statistics_").and_then(|s| s.strip_suffix(".csv")) {
            let t = Table::read(&dir.join(name))?;
            for (stat, title) in [("mean", "Expected value"), ("std", "Standard deviation")] {
                let list: Vec<Series> = t
                    .header
                    .iter()
                    .enumerate()
                    .filter_map(|(j, h)| {
                        let label = if h == stat {
                            "FOM"
                        } else {
                            h.strip_suffix(&format!("_{stat}"))?
                        };
                        let label = match label {
                            "fom" => "FOM",
                            "mor" => "ROM",
                            "best" => "best approximation",
                            other => other,
                        };
                        Some(series(label, t.pairs(0, j)))
                    })
                    .collect();
                emit(
                    &format!("statistics_{stem}_{stat}.svg"),
                    &format!("{title}, {stem}"),
                    "t",
                    stat,
                    list,
                    false,
                )?;
            }
        }
    }
    Ok(written)
}

fn series(label: &str, points: Vec<(f64, f64)>) -> Series {
    Series {
        label: label.to_string(),
        points,
    }
}
