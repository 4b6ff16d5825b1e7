//! A minimal RGB raster with the few primitives the figures need.

use std::io::Write;

use occrisk::Point;

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<Rgb>,
}

fn blend(a: Rgb, b: Rgb, alpha: f64) -> Rgb {
    let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * alpha).round() as u8;
    [mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])]
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        if x < self.width && y < self.height {
            self.pixels[y * self.width + x] = c;
        }
    }

    pub fn blend(&mut self, x: usize, y: usize, c: Rgb, alpha: f64) {
        self.paint(x as i64, y as i64, c, alpha);
    }

    fn paint(&mut self, x: i64, y: i64, c: Rgb, alpha: f64) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = y as usize * self.width + x as usize;
        self.pixels[i] = if alpha >= 1.0 {
            c
        } else {
            blend(self.pixels[i], c, alpha)
        };
    }

    /// Even-odd scanline fill sampled at pixel centres.
    pub fn fill_polygon(&mut self, poly: &[Point], c: Rgb, alpha: f64) {
        if poly.len() < 3 {
            return;
        }
        let y_min = poly
            .iter()
            .map(|p| p.y)
            .fold(f64::INFINITY, f64::min)
            .floor()
            .max(0.0) as i64;
        let y_max = poly
            .iter()
            .map(|p| p.y)
            .fold(f64::NEG_INFINITY, f64::max)
            .ceil()
            .min(self.height as f64) as i64;
        let mut xs = Vec::new();
        for y in y_min..y_max {
            let yc = y as f64 + 0.5;
            xs.clear();
            for i in 0..poly.len() {
                let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
                if (a.y <= yc) != (b.y <= yc) {
                    xs.push(a.x + (yc - a.y) / (b.y - a.y) * (b.x - a.x));
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                let x0 = (pair[0] - 0.5).ceil().max(0.0) as i64;
                let x1 = (pair[1] - 0.5).floor().min(self.width as f64 - 1.0) as i64;
                for x in x0..=x1 {
                    self.paint(x, y, c, alpha);
                }
            }
        }
    }

    /// Segment of the given pixel width with square caps.
    pub fn thick_line(&mut self, a: Point, b: Point, width: f64, c: Rgb, alpha: f64) {
        let d = b - a;
        let len = d.norm();
        if len == 0.0 {
            return;
        }
        let n = Point::new(-d.y, d.x) * (0.5 * width.max(1.0) / len);
        let t = d * (0.5 / len);
        self.fill_polygon(&[a - t + n, b + t + n, b + t - n, a - t - n], c, alpha);
    }

    pub fn polygon_outline(&mut self, poly: &[Point], c: Rgb) {
        for i in 0..poly.len() {
            self.thick_line(poly[i], poly[(i + 1) % poly.len()], 1.0, c, 1.0);
        }
    }

    /// 8x8 bitmap text with its top-left corner at `(x, y)`.
    pub fn text(&mut self, x: i64, y: i64, s: &str, c: Rgb) {
        for (k, ch) in s.chars().enumerate() {
            let glyph = font8x8::legacy::BASIC_LEGACY
                .get(ch as usize)
                .copied()
                .unwrap_or([0; 8]);
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    if bits >> col & 1 == 1 {
                        self.paint(x + 8 * k as i64 + col, y + row as i64, c, 1.0);
                    }
                }
            }
        }
    }

    pub fn write_png(&self, w: impl Write) -> Result<(), png::EncodingError> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        let data: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        writer.write_image_data(&data)?;
        writer.finish()
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>, png::EncodingError> {
        let mut buf = Vec::new();
        self.write_png(&mut buf)?;
        Ok(buf)
    }
}
