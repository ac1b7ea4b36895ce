//! Minimal raster plots: RD curves and per-frame GOP bars.
//!
//! Plots carry no text; the numbers they show are always written next to
//! them as JSON or CSV.

use std::path::Path;

use lvc_autodiff::Tensor;

use super::bdrate::RdCurve;
use super::gop::GopReport;
use crate::error::Result;
use crate::video_io::write_image;

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.1, 0.1],
    [0.1, 0.3, 0.85],
    [0.1, 0.6, 0.2],
    [0.9, 0.55, 0.0],
    [0.5, 0.2, 0.7],
    [0.3, 0.3, 0.3],
];

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pixels: Vec<[f64; 3]>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            pixels: vec![[1.0; 3]; width * height],
        }
    }

    pub fn set(&mut self, x: i64, y: i64, color: [f64; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = color;
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [f64; 3]) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            self.set((x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64, color);
        }
    }

    pub fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: [f64; 3]) {
        let (xa, xb) = (x0.min(x1).round() as i64, x0.max(x1).round() as i64);
        let (ya, yb) = (y0.min(y1).round() as i64, y0.max(y1).round() as i64);
        for y in ya..=yb {
            for x in xa..=xb {
                self.set(x, y, color);
            }
        }
    }

    pub fn marker(&mut self, (x, y): (f64, f64), color: [f64; 3]) {
        self.rect(x - 2.0, y - 2.0, x + 2.0, y + 2.0, color);
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn([1, 3, self.height, self.width], |[_, c, i, j]| self.get(j, i)[c])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_image(&self.to_tensor(), path)
    }
}

/// Maps data coordinates into a plotting frame with a margin.
struct Axes {
    x: (f64, f64),
    y: (f64, f64),
    origin: (f64, f64),
    size: (f64, f64),
}

impl Axes {
    fn new(canvas: &Canvas, x: (f64, f64), y: (f64, f64), margin: f64) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            let span = (hi - lo).abs().max(1e-9);
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        Axes {
            x: pad(x),
            y: pad(y),
            origin: (margin, canvas.height as f64 - margin),
            size: (canvas.width as f64 - 2.0 * margin, canvas.height as f64 - 2.0 * margin),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.origin.0 + (x - self.x.0) / (self.x.1 - self.x.0) * self.size.0,
            self.origin.1 - (y - self.y.0) / (self.y.1 - self.y.0) * self.size.1,
        )
    }

    fn draw_frame(&self, c: &mut Canvas) {
        let black = [0.0; 3];
        let (ox, oy) = self.origin;
        c.line((ox, oy), (ox + self.size.0, oy), black);
        c.line((ox, oy), (ox, oy - self.size.1), black);
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            c.line((ox + t * self.size.0, oy), (ox + t * self.size.0, oy + 4.0), black);
            c.line((ox, oy - t * self.size.1), (ox - 4.0, oy - t * self.size.1), black);
        }
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// PSNR against rate, one colour per curve in palette order.
pub fn plot_rd(curves: &[RdCurve], path: &Path) -> Result<()> {
    let mut c = Canvas::new(480, 360);
    let xs = extent(curves.iter().flat_map(|k| k.points.iter().map(|p| p.0)));
    let ys = extent(curves.iter().flat_map(|k| k.points.iter().map(|p| p.1)));
    let axes = Axes::new(&c, xs, ys, 30.0);
    axes.draw_frame(&mut c);
    for (k, curve) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|&(r, q)| axes.map(r, q)).collect();
        for w in pts.windows(2) {
            c.line(w[0], w[1], color);
        }
        for &p in &pts {
            c.marker(p, color);
        }
    }
    c.save(path)
}

/// Rate bars per frame (top half, I-frames red) and PSNR markers (bottom half).
pub fn plot_gop(report: &GopReport, path: &Path) -> Result<()> {
    let n = report.rows.len().max(1);
    let (w, h) = (60 + 40 * n, 400);
    let mut c = Canvas::new(w, h);
    let max_rate = report.rows.iter().map(|r| r.mbit_per_s).fold(0.0, f64::max).max(1e-12);
    let top = Axes {
        x: (0.0, n as f64),
        y: (0.0, max_rate * 1.05),
        origin: (30.0, 190.0),
        size: ((w - 60) as f64, 170.0),
    };
    top.draw_frame(&mut c);
    for (i, r) in report.rows.iter().enumerate() {
        let color = if r.label.starts_with('I') { PALETTE[0] } else { PALETTE[1] };
        let (x0, y0) = top.map(i as f64 + 0.15, 0.0);
        let (x1, y1) = top.map(i as f64 + 0.85, r.mbit_per_s);
        c.rect(x0, y0, x1, y1, color);
    }
    let ys = extent(report.rows.iter().map(|r| r.psnr));
    let bottom = Axes {
        x: (0.0, n as f64),
        y: (ys.0 - 0.5, ys.1 + 0.5),
        origin: (30.0, 380.0),
        size: ((w - 60) as f64, 160.0),
    };
    bottom.draw_frame(&mut c);
    let pts: Vec<(f64, f64)> = report.rows.iter().enumerate().map(|(i, r)| bottom.map(i as f64 + 0.5, r.psnr)).collect();
    for wnd in pts.windows(2) {
        c.line(wnd[0], wnd[1], PALETTE[2]);
    }
    for &p in &pts {
        c.marker(p, PALETTE[2]);
    }
    c.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::gop::GopRow;

    #[test]
    fn rd_plot_marks_points() {
        let curves = vec![
            RdCurve::new("a", vec![(0.1, 30.0), (0.2, 33.0), (0.4, 36.0)]).unwrap(),
            RdCurve::new("b", vec![(0.12, 30.5), (0.25, 33.2), (0.5, 36.4)]).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rd.png");
        plot_rd(&curves, &path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }

    #[test]
    fn gop_plot_draws_bars() {
        let row = |label: &str, r: f64| GopRow {
            label: label.into(),
            bits: r * 1e6 / 30.0,
            mbit_per_s: r,
            psnr: 35.0 + r,
        };
        let rep = GopReport {
            fps: 30.0,
            rows: vec![row("I0", 8.9), row("B1", 0.5), row("P2", 1.9)],
            avg: row("Avg", 3.77),
            psnr_variance: 0.0,
        };
        let dir = tempfile::tempdir().unwrap();
        plot_gop(&rep, &dir.path().join("gop.png")).unwrap();
    }

    #[test]
    fn canvas_lines_are_continuous() {
        let mut c = Canvas::new(20, 20);
        c.line((0.0, 0.0), (19.0, 7.0), [0.0; 3]);
        for x in 0..20 {
            assert!((0..20).any(|y| c.get(x, y) == [0.0; 3]), "gap at column {x}");
        }
    }
}
