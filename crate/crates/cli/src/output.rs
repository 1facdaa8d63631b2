//! CSV, JSON and SVG writers. Floats are written in their shortest
//! round-trip form, so parsing a file and writing it again reproduces it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:e}"),
            Cell::Text(s) => s.clone(),
        }
    }

    #[cfg(test)]
    fn parse(field: &str) -> Cell {
        if let Ok(v) = field.parse::<i64>() {
            Cell::Int(v)
        } else if let Ok(v) = field.parse::<f64>() {
            Cell::Float(v)
        } else {
            Cell::Text(field.to_string())
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    #[cfg(test)]
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(Cell::parse).collect()))
            .collect::<Result<_>>()?;
        Ok(Table { header, rows })
    }
}

/// Output directory with helpers that report every file written.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
        Ok(path)
    }

    pub fn csv(&self, name: &str, table: &Table) -> Result<PathBuf> {
        self.write(name, &table.to_csv()?)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn svg(&self, name: &str, contents: &str) -> Result<PathBuf> {
        self.write(name, contents)
    }
}

/// Fixed color scale: log10 of the value over [1e-6, 2].
pub const SCALE_MIN: f64 = 1e-6;
pub const SCALE_MAX: f64 = 2.0;

const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Position of `v` on the color scale in [0, 1]; zero and negative values
/// map to the bottom.
pub fn scale_position(v: f64) -> f64 {
    if !(v > 0.0) {
        return 0.0;
    }
    let (lo, hi) = (SCALE_MIN.log10(), SCALE_MAX.log10());
    ((v.log10() - lo) / (hi - lo)).clamp(0.0, 1.0)
}

fn color(s: f64) -> String {
    let x = s * (VIRIDIS.len() - 1) as f64;
    let k = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - k as f64;
    let c: Vec<u8> = (0..3)
        .map(|i| (VIRIDIS[k][i] + f * (VIRIDIS[k + 1][i] - VIRIDIS[k][i])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// One disc per site at its lattice position, colored by `values`.
pub fn heatmap_svg(positions: &[[f64; 2]], values: &[f64], title: &str, overlay_radius: Option<f64>) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 30.0;
    const BAR: f64 = 60.0;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in positions {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        ymin = ymin.min(p[1]);
        ymax = ymax.max(p[1]);
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1.0);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let (cx, cy) = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
    let to_px = |p: [f64; 2]| (SIZE / 2.0 + (p[0] - cx) * scale, SIZE / 2.0 - (p[1] - cy) * scale);
    let radius = (0.45 * scale).clamp(1.0, 20.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        SIZE + BAR,
        SIZE,
        SIZE + BAR,
        SIZE
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" font-size="13" font-family="sans-serif">{title}</text>"#, MARGIN);
    for (p, &v) in positions.iter().zip(values) {
        let (x, y) = to_px(*p);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{radius:.2}" fill="{}"/>"#, color(scale_position(v)));
    }
    if let Some(r) = overlay_radius {
        let (x, y) = to_px([cx, cy]);
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="none" stroke="red" stroke-width="1.5"/>"#,
            r * scale
        );
    }
    let steps = 40;
    let (bx, top, height) = (SIZE + 10.0, MARGIN, SIZE - 2.0 * MARGIN);
    for k in 0..steps {
        let frac = (k as f64 + 0.5) / steps as f64;
        let y = top + height * (1.0 - (k + 1) as f64 / steps as f64);
        let _ = writeln!(
            s,
            r#"<rect x="{bx}" y="{y:.2}" width="14" height="{:.2}" fill="{}"/>"#,
            height / steps as f64 + 0.5,
            color(frac)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif">2</text>"#, bx + 17.0, top + 8.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif">1e-6</text>"#,
        bx + 17.0,
        top + height
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips() {
        let mut t = Table::new(["site_index", "time_s", "value", "bound_kind"]);
        for (k, v) in [0.1, 1.0 / 3.0, 2.5e-300, 0.0, 1e22].into_iter().enumerate() {
            t.push(vec![k.into(), (k as f64 * 1e-7).into(), v.into(), "eq9".into()]);
        }
        let text = t.to_csv().unwrap();
        let back = Table::from_csv(&text).unwrap();
        assert_eq!(back.to_csv().unwrap(), text);
        assert_eq!(back.rows[1][2], Cell::Float(1.0 / 3.0));
    }

    #[test]
    fn color_scale_is_fixed() {
        assert_eq!(scale_position(0.0), 0.0);
        assert_eq!(scale_position(1e-9), 0.0);
        assert_eq!(scale_position(1e-6), 0.0);
        assert_eq!(scale_position(2.0), 1.0);
        assert_eq!(scale_position(10.0), 1.0);
        assert!(scale_position(1e-3) > 0.4 && scale_position(1e-3) < 0.6);
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
    }

    #[test]
    fn heatmap_has_one_disc_per_site() {
        let pos = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.8]];
        let svg = heatmap_svg(&pos, &[0.0, 1e-3, 2.0], "t", Some(1.0));
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
