//! RGB8 image buffers, binary PPM I/O and bilinear resampling.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB, 8 bits per sample, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl ImageBuffer {
    /// Black image. Panics on a zero dimension.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(
            width >= 1 && height >= 1,
            "image dimensions must be at least 1"
        );
        ImageBuffer {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut img = ImageBuffer::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("image dimensions must be at least 1".into()));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::Config(format!(
                "{width}x{height} RGB image needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        assert!(
            x < self.width && y < self.height,
            "pixel ({x}, {y}) out of bounds"
        );
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Per-channel mean sample value.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sum = [0u64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as u64;
            }
        }
        let n = (self.width as u64 * self.height as u64) as f64;
        sum.map(|s| s as f64 / n)
    }

    /// Copy the `w x h` region at (`x`, `y`); parts outside the image are black.
    pub fn crop_padded(&self, x: i64, y: i64, w: u32, h: u32) -> ImageBuffer {
        let mut out = ImageBuffer::new(w, h);
        for oy in 0..h as i64 {
            let sy = y + oy;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            let x_lo = x.max(0);
            let x_hi = (x + w as i64).min(self.width as i64);
            if x_lo >= x_hi {
                continue;
            }
            let n = (x_hi - x_lo) as usize * 3;
            let src = (sy as usize * self.width as usize + x_lo as usize) * 3;
            let dst = (oy as usize * w as usize + (x_lo - x) as usize) * 3;
            out.data[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
        }
        out
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = [0u32; 3];
        if !bytes.starts_with(b"P6") {
            return Err(Error::parse(1, "not a binary PPM (missing P6 magic)"));
        }
        pos += 2;
        for (k, name) in ["width", "height", "maxval"].iter().enumerate() {
            // whitespace and comments between header fields
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or_default();
            fields[k] = text
                .parse()
                .map_err(|_| Error::parse(1, format!("invalid PPM {name}")))?;
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::parse(
                1,
                "PPM header must end in a single whitespace byte",
            ));
        }
        pos += 1;
        let [w, h, maxval] = fields;
        if maxval != 255 {
            return Err(Error::parse(1, format!("unsupported PPM maxval {maxval}")));
        }
        if w == 0 || h == 0 {
            return Err(Error::parse(1, "PPM dimensions must be at least 1"));
        }
        let expected = w as usize * h as usize * 3;
        let body = &bytes[pos..];
        if body.len() != expected {
            return Err(Error::parse(
                1,
                format!(
                    "PPM body has {} bytes, {w}x{h} needs {expected}",
                    body.len()
                ),
            ));
        }
        ImageBuffer::from_raw(w, h, body.to_vec())
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ImageBuffer::from_ppm(&bytes).map_err(|e| e.at_path(path))
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

const FRAC_BITS: u32 = 8;
const ONE: u32 = 1 << FRAC_BITS;

/// Source taps for one output coordinate.
#[derive(Clone, Copy, PartialEq)]
struct Tap {
    i0: usize,
    i1: usize,
    w: u32,
    inside: bool,
}

fn taps(n_out: u32, n_src: u32, a: f64, b: f64) -> Vec<Tap> {
    (0..n_out)
        .map(|u| {
            let x = a * (u as f64 + 0.5) + b;
            if !(x >= 0.0 && x < n_src as f64) {
                return Tap {
                    i0: 0,
                    i1: 0,
                    w: 0,
                    inside: false,
                };
            }
            // pixel centres sit at i + 0.5
            let p = x - 0.5;
            let f = p.floor();
            let (i0, w) = if f < 0.0 {
                (0, 0)
            } else {
                (f as usize, ((p - f) * ONE as f64).round() as u32)
            };
            let i1 = (i0 + 1).min(n_src as usize - 1);
            Tap {
                i0,
                i1,
                w,
                inside: true,
            }
        })
        .collect()
}

/// Bilinear resampling under an axis-aligned affine map.
///
/// Output pixel centre (`u + 0.5`, `v + 0.5`) samples the source at
/// (`ax (u + 0.5) + bx`, `ay (v + 0.5) + by`). Positions outside the source
/// are black; inside, samples clamp to the edge.
pub fn resample_affine(
    src: &ImageBuffer,
    out_w: u32,
    out_h: u32,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
) -> ImageBuffer {
    let mut out = ImageBuffer::new(out_w, out_h);
    let cols = taps(out_w, src.width, ax, bx);
    let rows = taps(out_h, src.height, ay, by);
    let Some(first) = cols.iter().position(|t| t.inside) else {
        return out;
    };
    let last = cols.iter().rposition(|t| t.inside).unwrap();
    let (lo, hi) = (cols[first].i0, cols[last].i1);

    let sw = src.width as usize;
    let ow = out_w as usize;
    // vertically blended source row, scaled by ONE
    let mut blended = vec![0u32; sw * 3];
    let mut cached: Option<Tap> = None;
    for (v, row) in rows.iter().enumerate() {
        if !row.inside {
            continue;
        }
        if cached != Some(*row) {
            let top = &src.data[row.i0 * sw * 3..(row.i0 + 1) * sw * 3];
            let bot = &src.data[row.i1 * sw * 3..(row.i1 + 1) * sw * 3];
            let (wt, wb) = (ONE - row.w, row.w);
            for k in lo * 3..(hi + 1) * 3 {
                blended[k] = top[k] as u32 * wt + bot[k] as u32 * wb;
            }
            cached = Some(*row);
        }
        let dst = &mut out.data[v * ow * 3..(v + 1) * ow * 3];
        for (u, col) in cols.iter().enumerate().take(last + 1).skip(first) {
            if !col.inside {
                continue;
            }
            let (wl, wr) = (ONE - col.w, col.w);
            for c in 0..3 {
                let s = blended[col.i0 * 3 + c] * wl + blended[col.i1 * 3 + c] * wr;
                dst[u * 3 + c] = ((s + (1 << (2 * FRAC_BITS - 1))) >> (2 * FRAC_BITS)) as u8;
            }
        }
    }
    out
}

/// Resize the whole image to `w x h`.
pub fn resize_bilinear(src: &ImageBuffer, w: u32, h: u32) -> ImageBuffer {
    resample_affine(
        src,
        w,
        h,
        (src.width as f64 / w as f64, 0.0),
        (src.height as f64 / h as f64, 0.0),
    )
}
