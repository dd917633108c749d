//! SVG heatmaps of label or scalar grids.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::SweepResult;
use crate::error::{Error, Result};
use crate::meanfield::Phase;

const CELL: f64 = 24.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_TOP: f64 = 16.0;
const MARGIN_BOTTOM: f64 = 48.0;
const LEGEND: f64 = 150.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Cells {
    Labels(Vec<Phase>),
    Values(Vec<f64>),
}

/// Grid with `x_values` across and `y_values` upward; cells are row-major by y.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    pub cells: Cells,
    pub x_label: String,
    pub y_label: String,
    /// Straight overlay `y = slope·x + intercept` in data units.
    pub line: Option<(f64, f64)>,
}

impl Heatmap {
    /// Kx across, κ₁ upward, with the boundary `κ₁ = 2Kx − λ` drawn over the cells.
    pub fn from_sweep(res: &SweepResult, lambda: f64) -> Self {
        let (nk1, nkx) = (res.k1_values.len(), res.kx_values.len());
        let mut labels = Vec::with_capacity(nk1 * nkx);
        for ik1 in 0..nk1 {
            for ikx in 0..nkx {
                labels.push(res.at(ik1, ikx).label.phase);
            }
        }
        Heatmap {
            x_values: res.kx_values.clone(),
            y_values: res.k1_values.clone(),
            cells: Cells::Labels(labels),
            x_label: "Kx".into(),
            y_label: "kappa1".into(),
            line: Some((2.0, -lambda)),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.x_values.len() * self.y_values.len();
        let len = match &self.cells {
            Cells::Labels(v) => v.len(),
            Cells::Values(v) => v.len(),
        };
        if n == 0 {
            return Err(Error::InsufficientData("heatmap grid is empty".into()));
        }
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
        Ok(())
    }

    /// Pixel position of a data point; cell centres sit on the grid values.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let ny = self.y_values.len();
        let frac = |v: f64, vals: &[f64]| {
            if vals.len() < 2 {
                return 0.0;
            }
            (v - vals[0]) / (vals[vals.len() - 1] - vals[0]) * (vals.len() - 1) as f64
        };
        let px = MARGIN_LEFT + CELL * (0.5 + frac(x, &self.x_values));
        let py = MARGIN_TOP + CELL * ny as f64 - CELL * (0.5 + frac(y, &self.y_values));
        (px, py)
    }

    /// Endpoints of the overlay clipped to the plotted x range, in pixels.
    pub fn line_pixels(&self) -> Option<[(f64, f64); 2]> {
        let (slope, intercept) = self.line?;
        let (x0, x1) = (self.x_values[0], self.x_values[self.x_values.len() - 1]);
        Some([
            self.to_pixel(x0, slope * x0 + intercept),
            self.to_pixel(x1, slope * x1 + intercept),
        ])
    }
}

fn phase_color(p: Phase) -> &'static str {
    match p {
        Phase::ChiralDamping => "#4c72b0",
        Phase::TravelingWave => "#dd8452",
        Phase::Uniform => "#55a868",
        Phase::Undetermined => "#bbbbbb",
    }
}

fn gray(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let c = (255.0 * (1.0 - t)).round() as u8;
    format!("#{c:02x}{c:02x}{c:02x}")
}

fn short(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

pub fn render_svg(map: &Heatmap) -> Result<String> {
    map.check()?;
    let (nx, ny) = (map.x_values.len(), map.y_values.len());
    let width = MARGIN_LEFT + CELL * nx as f64 + LEGEND;
    let height = MARGIN_TOP + CELL * ny as f64 + MARGIN_BOTTOM;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let (lo, hi) = match &map.cells {
        Cells::Values(v) => {
            let finite = v.iter().copied().filter(|x| x.is_finite());
            (finite.clone().fold(f64::INFINITY, f64::min), finite.fold(f64::NEG_INFINITY, f64::max))
        }
        Cells::Labels(_) => (0.0, 0.0),
    };
    for iy in 0..ny {
        for ix in 0..nx {
            let fill = match &map.cells {
                Cells::Labels(l) => phase_color(l[iy * nx + ix]).to_string(),
                Cells::Values(v) => gray(v[iy * nx + ix], lo, hi),
            };
            let x = MARGIN_LEFT + CELL * ix as f64;
            let y = MARGIN_TOP + CELL * (ny - 1 - iy) as f64;
            let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"/>"#);
        }
    }
    let base = MARGIN_TOP + CELL * ny as f64;
    for (ix, &v) in map.x_values.iter().enumerate() {
        let x = MARGIN_LEFT + CELL * (ix as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, base + 14.0, short(v));
    }
    for (iy, &v) in map.y_values.iter().enumerate() {
        let y = base - CELL * (iy as f64 + 0.5) + 3.0;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, MARGIN_LEFT - 4.0, short(v));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + CELL * nx as f64 / 2.0,
        base + 34.0,
        map.x_label
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        MARGIN_TOP + CELL * ny as f64 / 2.0,
        MARGIN_TOP + CELL * ny as f64 / 2.0,
        map.y_label
    );
    if let Some([(x0, y0), (x1, y1)]) = map.line_pixels() {
        let _ = writeln!(
            s,
            r#"<clipPath id="grid"><rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{}" height="{}"/></clipPath>"#,
            CELL * nx as f64,
            CELL * ny as f64
        );
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="black" stroke-width="2" clip-path="url(#grid)"/>"#
        );
    }
    let lx = MARGIN_LEFT + CELL * nx as f64 + 12.0;
    match &map.cells {
        Cells::Labels(_) => {
            for (i, p) in [Phase::ChiralDamping, Phase::TravelingWave, Phase::Uniform, Phase::Undetermined]
                .into_iter()
                .enumerate()
            {
                let y = MARGIN_TOP + 16.0 * i as f64;
                let _ = writeln!(s, r#"<rect x="{lx}" y="{y}" width="10" height="10" fill="{}"/>"#, phase_color(p));
                let _ = writeln!(s, r#"<text x="{}" y="{}">{p}</text>"#, lx + 14.0, y + 9.0);
            }
        }
        Cells::Values(_) => {
            let _ = writeln!(s, r#"<text x="{lx}" y="{}">white {} .. black {}</text>"#, MARGIN_TOP + 9.0, short(lo), short(hi));
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_heatmap(map: &Heatmap, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(map)?)?;
    Ok(())
}
