//! Coarse pixel frames produced by the simulator.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{BBox, ElementState};

pub const GRID_WIDTH: u32 = 90;
pub const GRID_HEIGHT: u32 = 160;
pub const CURSOR_COLOR: u32 = 0x000000;

/// Half-open cell rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl CellRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u32 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (u32, u32) {
        ((self.x0 + self.x1 - 1) / 2, (self.y0 + self.y1 - 1) / 2)
    }
}

/// Maps a normalized box onto cells of a `width × height` grid. Every valid
/// box covers at least one cell.
pub fn cell_rect(bbox: &BBox, width: u32, height: u32) -> CellRect {
    let span = |a: f64, b: f64, n: u32| {
        let lo = ((a * n as f64).round() as u32).min(n - 1);
        let hi = ((b * n as f64).round() as u32).clamp(lo + 1, n);
        (lo, hi)
    };
    let (x0, x1) = span(bbox.x0, bbox.x1, width);
    let (y0, y1) = span(bbox.y0, bbox.y1, height);
    CellRect { x0, y0, x1, y1 }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelGrid {
    pub width: u32,
    pub height: u32,
    /// Row-major 24-bit colors.
    pub cells: Vec<u32>,
    pub tick: u64,
}

impl PixelGrid {
    pub fn new(width: u32, height: u32, fill: u32, tick: u64) -> Self {
        PixelGrid {
            width,
            height,
            cells: vec![fill & 0xFF_FFFF; (width * height) as usize],
            tick,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.cells[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, color: u32) {
        let w = self.width;
        self.cells[(y * w + x) as usize] = color & 0xFF_FFFF;
    }

    pub fn fill_rect(&mut self, r: CellRect, color: u32) {
        for y in r.y0..r.y1.min(self.height) {
            for x in r.x0..r.x1.min(self.width) {
                self.set(x, y, color);
            }
        }
    }

    pub fn rect_of(&self, bbox: &BBox) -> CellRect {
        cell_rect(bbox, self.width, self.height)
    }

    pub fn full_rect(&self) -> CellRect {
        CellRect {
            x0: 0,
            y0: 0,
            x1: self.width,
            y1: self.height,
        }
    }

    pub fn contains_rect(&self, r: &CellRect) -> bool {
        r.x0 < r.x1 && r.y0 < r.y1 && r.x1 <= self.width && r.y1 <= self.height
    }

    /// Rows as base-64 of packed big-endian RGB triples.
    pub fn to_b64_rows(&self) -> Vec<String> {
        self.cells
            .chunks(self.width as usize)
            .map(|row| {
                let bytes: Vec<u8> = row
                    .iter()
                    .flat_map(|c| [(c >> 16) as u8, (c >> 8) as u8, *c as u8])
                    .collect();
                B64.encode(bytes)
            })
            .collect()
    }

    pub fn from_b64_rows(width: u32, rows: &[String], tick: u64) -> Result<Self, String> {
        let mut cells = Vec::with_capacity(width as usize * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let bytes = B64.decode(row).map_err(|e| format!("row {i}: {e}"))?;
            if bytes.len() != width as usize * 3 {
                return Err(format!("row {i}: expected {} bytes, got {}", width * 3, bytes.len()));
            }
            cells.extend(
                bytes
                    .chunks(3)
                    .map(|b| (b[0] as u32) << 16 | (b[1] as u32) << 8 | b[2] as u32),
            );
        }
        Ok(PixelGrid {
            width,
            height: rows.len() as u32,
            cells,
            tick,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct GridWire {
    width: u32,
    height: u32,
    tick: u64,
    rows: Vec<String>,
}

impl Serialize for PixelGrid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GridWire {
            width: self.width,
            height: self.height,
            tick: self.tick,
            rows: self.to_b64_rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PixelGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = GridWire::deserialize(d)?;
        let g = PixelGrid::from_b64_rows(w.width, &w.rows, w.tick).map_err(serde::de::Error::custom)?;
        if g.height != w.height {
            return Err(serde::de::Error::custom("row count does not match height"));
        }
        Ok(g)
    }
}

pub(crate) fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Paint color of an element: a pure function of `(id, text, state)`. Never
/// equal to the cursor color.
pub fn paint_color(id: u32, text: &str, state: ElementState) -> u32 {
    let mut h = fnv1a(text.as_bytes(), 0x5157_4f52);
    h = mix(h ^ (id as u64) << 32 ^ state.index() as u64);
    0x20_2020 | (h as u32 & 0xDF_DFDF)
}

pub fn background_color(app_id: &str, screen: &str) -> u32 {
    let h = mix(fnv1a(app_id.as_bytes(), 1) ^ fnv1a(screen.as_bytes(), 2));
    0x20_2020 | (h as u32 & 0xDF_DFDF)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_box_covers_a_cell() {
        let b = BBox::new(0.999, 0.999, 1.0, 1.0).unwrap();
        let r = cell_rect(&b, GRID_WIDTH, GRID_HEIGHT);
        assert!(r.area() >= 1);
        assert!(r.x1 <= GRID_WIDTH && r.y1 <= GRID_HEIGHT);
        let b = BBox::new(0.1, 0.1, 0.2, 0.2).unwrap();
        assert_eq!(
            cell_rect(&b, 90, 160),
            CellRect { x0: 9, y0: 16, x1: 18, y1: 32 }
        );
    }

    #[test]
    fn b64_rows_round_trip() {
        let mut g = PixelGrid::new(5, 3, 0x123456, 7);
        g.set(4, 2, 0xABCDEF);
        let rows = g.to_b64_rows();
        assert_eq!(rows.len(), 3);
        let back = PixelGrid::from_b64_rows(5, &rows, 7).unwrap();
        assert_eq!(back, g);
        let json = serde_json::to_string(&g).unwrap();
        let back: PixelGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn paint_depends_on_state() {
        let a = paint_color(3, "Safe search", ElementState::Checked);
        let b = paint_color(3, "Safe search", ElementState::Unchecked);
        assert_ne!(a, b);
        assert_ne!(a, CURSOR_COLOR);
        assert_eq!(a, paint_color(3, "Safe search", ElementState::Checked));
    }
}
