//! Deterministic rasterization of static and satellite map views over a POI
//! fixture. Identical inputs yield byte-identical PNG output, which is what
//! the replay and golden tests key on.

use serde::{Deserialize, Serialize};

use super::{MapError, Poi};
use crate::geo::GeoPoint;
use crate::images::ImageData;

pub const MIN_ZOOM: i64 = 3;
pub const MAX_ZOOM: i64 = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Static,
    Satellite,
}

/// A rendered map tile plus the viewport parameters that produced it.
#[derive(Debug, Clone)]
pub struct MapImage {
    pub data: ImageData,
    pub center: GeoPoint,
    pub zoom: i64,
    pub kind: MapKind,
}

struct Canvas {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Canvas {
    fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            pixels.extend_from_slice(&fill);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let idx = ((y as u32 * self.width + x as u32) * 3) as usize;
        self.pixels[idx..idx + 3].copy_from_slice(&color);
    }

    fn disc(&mut self, cx: i64, cy: i64, radius: i64, color: [u8; 3]) {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= radius * radius {
                    self.put(cx + dx, cy + dy, color);
                }
            }
        }
    }
}

/// Web-Mercator pixel position of a point at the given zoom level.
fn mercator_px(point: GeoPoint, zoom: i64) -> (f64, f64) {
    let world = 256.0 * (1u64 << zoom) as f64;
    let x = (point.lon() + 180.0) / 360.0 * world;
    let lat = point.lat().clamp(-85.0511, 85.0511).to_radians();
    let y = (1.0 - ((lat.tan() + 1.0 / lat.cos()).ln() / std::f64::consts::PI)) / 2.0 * world;
    (x, y)
}

/// Renders the fixture POIs visible in the viewport as labeled markers over
/// a plain (static) or hatched (satellite) background.
pub fn render_simulated_map(
    pois: &[Poi],
    center: GeoPoint,
    zoom: i64,
    kind: MapKind,
    width: u32,
    height: u32,
) -> Result<MapImage, MapError> {
    if !(MIN_ZOOM..=MAX_ZOOM).contains(&zoom) {
        return Err(MapError::ZoomOutOfRange(zoom));
    }
    let (background, hatch, label) = match kind {
        MapKind::Static => ([244u8, 243, 236], None, [30u8, 30, 30]),
        MapKind::Satellite => ([34u8, 58, 42], Some([24u8, 44, 32]), [235u8, 235, 235]),
    };
    let mut canvas = Canvas::new(width, height, background);

    match kind {
        MapKind::Static => {
            // Light reference grid every 64 px.
            let grid = [224u8, 222, 212];
            for y in (0..height as i64).step_by(64) {
                for x in 0..width as i64 {
                    canvas.put(x, y, grid);
                }
            }
            for x in (0..width as i64).step_by(64) {
                for y in 0..height as i64 {
                    canvas.put(x, y, grid);
                }
            }
        }
        MapKind::Satellite => {
            let hatch = hatch.unwrap();
            for y in 0..height as i64 {
                for x in 0..width as i64 {
                    if (x + y) % 16 == 0 {
                        canvas.put(x, y, hatch);
                    }
                }
            }
        }
    }

    let (cx, cy) = mercator_px(center, zoom);
    let half_w = width as f64 / 2.0;
    let half_h = height as f64 / 2.0;

    // Center crosshair.
    let cross = [48u8, 72, 210];
    for d in -6i64..=6 {
        canvas.put(half_w as i64 + d, half_h as i64, cross);
        canvas.put(half_w as i64, half_h as i64 + d, cross);
    }

    let marker = [224u8, 42, 42];
    let outline = [90u8, 16, 16];
    for poi in pois {
        let (px, py) = mercator_px(poi.location(), zoom);
        let sx = px - cx + half_w;
        let sy = py - cy + half_h;
        if sx < -8.0 || sy < -8.0 || sx > width as f64 + 8.0 || sy > height as f64 + 8.0 {
            continue;
        }
        let (sx, sy) = (sx.round() as i64, sy.round() as i64);
        canvas.disc(sx, sy, 5, outline);
        canvas.disc(sx, sy, 4, marker);
        draw_label(&mut canvas, sx + 7, sy - 2, &poi.id, label);
    }

    Ok(MapImage {
        data: ImageData::from_rgb_pixels(width, height, canvas.pixels),
        center,
        zoom,
        kind,
    })
}

/// True when the POI would be drawn inside a `width`×`height` viewport
/// centered on `center` at `zoom`. Mirrors the culling in the renderer.
pub fn poi_in_viewport(poi: &Poi, center: GeoPoint, zoom: i64, width: u32, height: u32) -> bool {
    let (cx, cy) = mercator_px(center, zoom);
    let (px, py) = mercator_px(poi.location(), zoom);
    let sx = px - cx + width as f64 / 2.0;
    let sy = py - cy + height as f64 / 2.0;
    (0.0..width as f64).contains(&sx) && (0.0..height as f64).contains(&sy)
}

// 3x5 glyphs for marker labels; row-major bits, MSB = leftmost column.
const GLYPH_ROWS: usize = 5;
fn glyph(ch: char) -> Option<[u8; GLYPH_ROWS]> {
    let ch = ch.to_ascii_uppercase();
    Some(match ch {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'C' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'F' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'G' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'H' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'J' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'K' => [0b101, 0b110, 0b100, 0b110, 0b101],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'M' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'N' => [0b101, 0b111, 0b111, 0b111, 0b101],
        'O' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'Q' => [0b010, 0b101, 0b101, 0b011, 0b001],
        'R' => [0b110, 0b101, 0b110, 0b110, 0b101],
        'S' => [0b011, 0b100, 0b010, 0b001, 0b110],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'V' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'W' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'X' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'Y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'Z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '_' => [0b000, 0b000, 0b000, 0b000, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => return None,
    })
}

fn draw_label(canvas: &mut Canvas, x: i64, y: i64, text: &str, color: [u8; 3]) {
    let mut cursor = x;
    for ch in text.chars().take(12) {
        let Some(rows) = glyph(ch) else {
            cursor += 4;
            continue;
        };
        for (row, bits) in rows.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    canvas.put(cursor + col as i64, y + row as i64, color);
                }
            }
        }
        cursor += 4;
    }
}
