//! Partition images in binary PPM (`P6`).
//!
//! Byte layout: the ASCII header `P6\n<width> <height>\n255\n`, then
//! `width * height` RGB triples, one byte per channel, rows from the top
//! (largest `y`) down and pixels from left to right. Every lattice node
//! covers a `SCALE x SCALE` block.

use std::fs;
use std::path::Path;

use segsolve::{Grid, NodalReport, State};

use crate::error::CliError;

pub const SCALE: usize = 4;
/// Inside nodes where every density vanishes.
pub const BACKGROUND: [u8; 3] = [255, 255, 255];
/// Nodes outside the domain.
pub const OUTSIDE: [u8; 3] = [128, 128, 128];
pub const INK: [u8; 3] = [0, 0, 0];
/// Base colors by density; each has a distinct set of nonzero channels.
pub const PALETTE: [[u8; 3]; 6] = [
    [230, 0, 0],
    [0, 160, 0],
    [0, 0, 230],
    [220, 200, 0],
    [200, 0, 200],
    [0, 190, 190],
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Image { width, height, rgb: fill.repeat(width * height) }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = 3 * (y * self.width + x);
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let o = 3 * (y as usize * self.width + x as usize);
            self.rgb[o..o + 3].copy_from_slice(&c);
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Option<Image> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
        }
        if fields[0] != "P6" || fields[3] != "255" {
            return None;
        }
        let (width, height) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
        let rgb = bytes.get(pos + 1..)?.to_vec();
        (rgb.len() == 3 * width * height).then_some(Image { width, height, rgb })
    }

    /// Density whose palette color matches the pixel's nonzero channels.
    pub fn label_of(&self, x: usize, y: usize) -> Option<usize> {
        let px = self.pixel(x, y);
        PALETTE.iter().position(|c| {
            c.iter().zip(&px).all(|(a, b)| (*a == 0) == (*b == 0))
        })
        .filter(|_| px != BACKGROUND && px != OUTSIDE && px != INK)
    }
}

/// Label color scaled by the density's relative intensity, interfaces in
/// black, multiple points as crosses.
pub fn render_image(grid: &Grid, s: &State, report: Option<&NodalReport>) -> Image {
    let (w, h) = (grid.nx() * SCALE, grid.ny() * SCALE);
    let mut img = Image::new(w, h, OUTSIDE);
    let peaks: Vec<f64> = s.fields().iter().map(|f| f.sup_norm().max(f64::MIN_POSITIVE)).collect();
    for q in 0..grid.len() {
        let (i, j) = grid.ij(q);
        let color = if !grid.is_inside(q) {
            OUTSIDE
        } else {
            let best = (0..s.k()).max_by(|&a, &b| s.value(a, q).total_cmp(&s.value(b, q))).unwrap();
            let v = s.value(best, q);
            if v > 0.0 {
                let t = 0.35 + 0.65 * (v / peaks[best]).min(1.0);
                PALETTE[best % PALETTE.len()].map(|c| ((c as f64) * t).round().max(1.0).min(c as f64) as u8)
            } else {
                BACKGROUND
            }
        };
        let (x0, y0) = (i * SCALE, (grid.ny() - 1 - j) * SCALE);
        for dy in 0..SCALE {
            for dx in 0..SCALE {
                img.put((x0 + dx) as i64, (y0 + dy) as i64, color);
            }
        }
    }
    if let Some(rep) = report {
        let o = grid.origin();
        let to_px = |p: [f64; 2]| -> (f64, f64) {
            let fx = (p[0] - o[0]) / grid.h();
            let fy = (p[1] - o[1]) / grid.h();
            ((fx + 0.5) * SCALE as f64, (grid.ny() as f64 - 0.5 - fy) * SCALE as f64)
        };
        for l in &rep.interfaces {
            for seg in l.points.windows(2) {
                let (a, b) = (to_px(seg[0]), to_px(seg[1]));
                let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
                for t in 0..=steps {
                    let f = t as f64 / steps as f64;
                    img.put((a.0 + f * (b.0 - a.0)).floor() as i64, (a.1 + f * (b.1 - a.1)).floor() as i64, INK);
                }
            }
        }
        for mp in &rep.multiple_points {
            let (cx, cy) = to_px(mp.location);
            let (cx, cy) = (cx.floor() as i64, cy.floor() as i64);
            for d in -3..=3 {
                img.put(cx + d, cy, INK);
                img.put(cx, cy + d, INK);
            }
        }
    }
    img
}

pub fn render_partition(grid: &Grid, s: &State, report: Option<&NodalReport>, path: &Path) -> Result<(), CliError> {
    fs::write(path, render_image(grid, s, report).to_ppm()).map_err(|e| CliError::io(path, e))
}
