//! Table CSVs and SVG overlays.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ddrci::polytope::{enumerate_vertices, Polytope, VertexOptions};

use crate::{CliError, SolutionFile, SynthMode};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn label(f: &SolutionFile) -> String {
    match (f.mode, f.samples) {
        (SynthMode::Model, _) => "model-based".into(),
        (SynthMode::Data, Some(t)) => format!("T={t}"),
        (SynthMode::Data, None) => "data".into(),
    }
}

fn column_order(files: &[(PathBuf, SolutionFile)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..files.len()).collect();
    idx.sort_by_key(|&i| {
        let f = &files[i].1;
        match f.mode {
            SynthMode::Data => (0, f.samples.unwrap_or(usize::MAX)),
            SynthMode::Model => (1, 0),
        }
    });
    idx
}

/// Volume and objective per solution, one column each, data runs by
/// increasing `T` and the model-based run last.
pub fn table_csv(files: &[(PathBuf, SolutionFile)]) -> String {
    let order = column_order(files);
    let mut out = String::from("quantity");
    for &i in &order {
        let _ = write!(out, ",{}", label(&files[i].1));
    }
    out.push_str("\nvolume");
    for &i in &order {
        match files[i].1.solution.volume {
            Some(v) => {
                let _ = write!(out, ",{v:.6}");
            }
            None => out.push(','),
        }
    }
    out.push_str("\nd_X");
    for &i in &order {
        let _ = write!(out, ",{:.6}", files[i].1.solution.objective);
    }
    out.push('\n');
    out
}

/// `(x1, x2)` columns of a trace CSV.
pub fn read_trace_xy(path: &Path) -> Result<Vec<[f64; 2]>, CliError> {
    let err = |e: String| CliError::Input(format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(format!("no `{name}` column")))
    };
    let (c1, c2) = (col("x1")?, col("x2")?);
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let parse = |c: usize| rec[c].trim().parse::<f64>().map_err(|e| err(e.to_string()));
        pts.push([parse(c1)?, parse(c2)?]);
    }
    Ok(pts)
}

fn ordered_polygon(p: &Polytope<f64>) -> Result<Vec<[f64; 2]>, CliError> {
    let vs = enumerate_vertices(p, &VertexOptions::default()).map_err(|e| CliError::Input(e.to_string()))?;
    let mut pts: Vec<[f64; 2]> = vs.iter().map(|v| [v[0], v[1]]).collect();
    let k = pts.len().max(1) as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / k;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / k;
    pts.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.total_cmp(&tb)
    });
    Ok(pts)
}

fn points_attr(pts: &[[f64; 2]]) -> String {
    pts.iter()
        .map(|p| format!("{:.6},{:.6}", p[0], -p[1]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Planar overlay of `X`, every `S(q)` and the traces; `None` when the sets
/// are not two-dimensional.
pub fn sets_svg(
    x_set: Option<&Polytope<f64>>,
    files: &[(PathBuf, SolutionFile)],
    traces: &[Vec<[f64; 2]>],
) -> Result<Option<String>, CliError> {
    if x_set.is_some_and(|x| x.dim() != 2) || files.iter().any(|(_, f)| f.solution.facets.cols() != 2) {
        return Ok(None);
    }
    let x_poly = x_set.map(ordered_polygon).transpose()?;
    let order = column_order(files);
    let mut sets = Vec::new();
    for &i in &order {
        let f = &files[i].1;
        let p = f.solution.set().map_err(|e| CliError::Input(e.to_string()))?;
        sets.push((label(f), ordered_polygon(&p)?));
    }
    let frame: Vec<[f64; 2]> = match &x_poly {
        Some(x) => x.clone(),
        None => sets.iter().flat_map(|(_, p)| p.iter().copied()).collect(),
    };
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &frame {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if !(lo[0].is_finite() && hi[0] > lo[0] && hi[1] > lo[1]) {
        lo = [-1.0, -1.0];
        hi = [1.0, 1.0];
    }
    let pad = 0.05 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let (w, h) = (hi[0] - lo[0] + 2.0 * pad, hi[1] - lo[1] + 2.0 * pad);
    let stroke = w.max(h) / 400.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.6} {:.6} {:.6} {:.6}" width="600" height="{:.0}">"#,
        lo[0] - pad,
        -hi[1] - pad,
        w,
        h,
        600.0 * h / w
    );
    if let Some(x) = &x_poly {
        let _ = writeln!(
            svg,
            r##"  <polygon points="{}" fill="#eeeeee" stroke="#555555" stroke-width="{stroke:.6}"><title>X</title></polygon>"##,
            points_attr(x)
        );
    }
    for (k, (name, poly)) in sets.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"  <polygon points="{}" fill="none" stroke="{c}" stroke-width="{stroke:.6}"><title>{name}</title></polygon>"#,
            points_attr(poly)
        );
    }
    for tr in traces {
        let _ = writeln!(
            svg,
            r##"  <polyline points="{}" fill="none" stroke="#333333" stroke-opacity="0.5" stroke-width="{:.6}"/>"##,
            points_attr(tr),
            stroke / 2.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(Some(svg))
}
