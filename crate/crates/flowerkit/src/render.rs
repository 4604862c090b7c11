//! Deterministic raster output: fields as binary PPM images, optionally
//! overlaid with displacement arrows.
//!
//! Pixel row `r` and column `c` show node `(r, c)` of a 2D field (matrix
//! orientation: axis 0 runs down, axis 1 across). A 1D field renders as a
//! single row of cells. Values are mapped linearly from the frame's
//! `[min, max]` onto [`COLORMAP`]; a constant frame maps to the middle entry.

use flowerkit_core::grid::Field;

pub type Rgb = [u8; 3];

const fn colormap_entry(i: usize) -> Rgb {
    if i < 128 {
        let v = ((i * 255 + 63) / 127) as u8;
        [v, v, 255]
    } else {
        let v = (((255 - i) * 255 + 63) / 127) as u8;
        [255, v, v]
    }
}

const fn build_colormap() -> [Rgb; 256] {
    let mut t = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        t[i] = colormap_entry(i);
        i += 1;
    }
    t
}

/// Blue (low) to white (middle) to red (high), piecewise linear in each
/// channel. The table is listed in `docs/colormap.txt`.
pub const COLORMAP: [Rgb; 256] = build_colormap();

/// Colour for non-finite values.
pub const INVALID: Rgb = [0, 0, 0];
/// Colour of overlay arrows.
pub const ARROW: Rgb = [0, 0, 0];

/// The colormap as text, one `index r g b` line per entry.
pub fn colormap_text() -> String {
    COLORMAP
        .iter()
        .enumerate()
        .map(|(i, [r, g, b])| format!("{i} {r} {g} {b}\n"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn filled(width: usize, height: usize, c: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![c; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Rgb {
        self.pixels[row * self.width + col]
    }

    pub fn put(&mut self, row: i64, col: i64, c: Rgb) {
        if (0..self.height as i64).contains(&row) && (0..self.width as i64).contains(&col) {
            self.pixels[row as usize * self.width + col as usize] = c;
        }
    }

    /// Binary PPM (`P6`) bytes.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    /// 1-px segment between two pixel positions (Bresenham).
    pub fn line(&mut self, (r0, c0): (i64, i64), (r1, c1): (i64, i64), c: Rgb) {
        let (dr, dc) = ((r1 - r0).abs(), -(c1 - c0).abs());
        let (sr, sc) = ((r1 - r0).signum(), (c1 - c0).signum());
        let (mut r, mut col, mut err) = (r0, c0, dr + dc);
        loop {
            self.put(r, col, c);
            if r == r1 && col == c1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dc {
                err += dc;
                r += sr;
            }
            if e2 <= dr {
                err += dr;
                col += sc;
            }
        }
    }
}

/// Colormap index of `x` on `[lo, hi]`.
pub fn color_index(x: f64, lo: f64, hi: f64) -> usize {
    if hi <= lo {
        return 128;
    }
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0 + 0.5).floor() as usize
}

fn grid_dims(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [n] => Some((1, n)),
        [a, b] => Some((a, b)),
        _ => None,
    }
}

/// Renders `channel` of a 1D or 2D field with `scale` pixels per cell.
/// Returns `None` for other dimensions or a missing channel.
pub fn render_field<T: flowerkit_core::Scalar>(f: &Field<T>, channel: usize, scale: usize) -> Option<Image> {
    if channel >= f.channels() || scale == 0 {
        return None;
    }
    let (rows, cols) = grid_dims(f.geom().shape())?;
    let vals: Vec<f64> = f.channel(channel).iter().map(|v| v.f64()).collect();
    let finite = vals.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let mut img = Image::filled(cols * scale, rows * scale, INVALID);
    for r in 0..rows {
        for c in 0..cols {
            let v = vals[r * cols + c];
            let color = if v.is_finite() { COLORMAP[color_index(v, lo, hi)] } else { INVALID };
            for dr in 0..scale {
                for dc in 0..scale {
                    img.pixels[(r * scale + dr) * img.width + c * scale + dc] = color;
                }
            }
        }
    }
    Some(img)
}

/// Draws one arrow per `stride` cells from the cell centre along `disp`
/// (`[d, N]`, physical units), lengthened by `gain`.
pub fn overlay_arrows(
    img: &mut Image,
    geom: &flowerkit_core::grid::Geometry,
    disp: &[f64],
    stride: usize,
    scale: usize,
    gain: f64,
) {
    let Some((rows, cols)) = grid_dims(geom.shape()) else {
        return;
    };
    let n = geom.len();
    let d = geom.dim();
    let stride = stride.max(1);
    let half = stride / 2;
    let px = |cells: f64| (cells * scale as f64 * gain).round() as i64;
    for r in (half..rows).step_by(stride) {
        for c in (half..cols).step_by(stride) {
            let node = r * cols + c;
            let (dr, dc) = if d == 1 {
                (0.0, disp[node] / geom.spacing(0))
            } else {
                (disp[node] / geom.spacing(0), disp[n + node] / geom.spacing(1))
            };
            let r0 = (r * scale + scale / 2) as i64;
            let c0 = (c * scale + scale / 2) as i64;
            img.line((r0, c0), (r0 + px(dr), c0 + px(dc)), ARROW);
        }
    }
}
