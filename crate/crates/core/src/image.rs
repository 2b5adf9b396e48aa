//! 8-bit RGB images, PPM/PNG import, padding and tiling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image8 {
    pub fn new(width: usize, height: usize) -> Self {
        Image8 {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "{}x{} RGB image needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image8 { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Image8::new(width, height);
        for px in img.data.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of the `h×w` region at (`row`, `col`).
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Image8> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::Image(format!(
                "crop {h}x{w} at ({row},{col}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Image8::new(w, h);
        for r in 0..h {
            let src = ((row + r) * self.width + col) * 3;
            out.data[r * w * 3..(r + 1) * w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        Ok(out)
    }

    /// Writes `src` into this image with its top-left corner at (`row`, `col`).
    pub fn paste(&mut self, src: &Image8, row: usize, col: usize) {
        for r in 0..src.height {
            let dst = ((row + r) * self.width + col) * 3;
            self.data[dst..dst + src.width * 3].copy_from_slice(&src.data[r * src.width * 3..(r + 1) * src.width * 3]);
        }
    }

    /// Pads right and bottom to multiples of `multiple` by edge replication.
    pub fn pad_to_multiple(&self, multiple: usize) -> Image8 {
        let h = self.height.div_ceil(multiple) * multiple;
        let w = self.width.div_ceil(multiple) * multiple;
        let mut out = Image8::new(w, h);
        for r in 0..h {
            let sr = r.min(self.height - 1);
            for c in 0..w {
                out.set(r, c, self.get(sr, c.min(self.width - 1)));
            }
        }
        out
    }

    /// Reads binary PPM (P6, maxval 255) or PNG, chosen by magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Image8> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Image(msg) => Error::Image(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Image8> {
        if bytes.starts_with(b"P6") {
            read_ppm(bytes)
        } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
            read_png(bytes)
        } else {
            Err(Error::Image("unsupported format (expected P6 PPM or PNG)".into()))
        }
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(f), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
        writer
            .write_image_data(&self.data)
            .map_err(|e| Error::Image(e.to_string()))
    }
}

fn read_ppm(bytes: &[u8]) -> Result<Image8> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed PPM header".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Image(format!("PPM maxval {maxval} unsupported (need 255)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Image("empty PPM".into()));
    }
    // exactly one whitespace byte before the raster
    pos += 1;
    let need = width * height * 3;
    let data = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Image("truncated PPM raster".into()))?;
    Image8::from_raw(width, height, data.to_vec())
}

fn read_png(bytes: &[u8]) -> Result<Image8> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| Error::Image(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = w * h;
    let data = match info.color_type {
        png::ColorType::Rgb => buf[..px * 3].to_vec(),
        png::ColorType::Rgba => buf[..px * 4]
            .chunks(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf[..px].iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf[..px * 2].chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::Image("unexpanded palette PNG".into())),
    };
    Image8::from_raw(w, h, data)
}

/// Placement of one patch inside the source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Raster-ordered tiles of at most `size×size`.
pub fn tiles(width: usize, height: usize, size: usize) -> Vec<Tile> {
    let mut out = Vec::new();
    for row in (0..height).step_by(size) {
        for col in (0..width).step_by(size) {
            out.push(Tile {
                row,
                col,
                height: size.min(height - row),
                width: size.min(width - col),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image8 {
        let data = (0..w * h * 3).map(|i| (i * 7 % 251) as u8).collect();
        Image8::from_raw(w, h, data).unwrap()
    }

    #[test]
    fn ppm_round_trip() {
        let img = ramp(5, 3);
        assert_eq!(Image8::decode(&img.to_ppm()).unwrap(), img);
    }

    #[test]
    fn ppm_comments_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = Image8::decode(&bytes).unwrap();
        assert_eq!(img.get(0, 1), [4, 5, 6]);
    }

    #[test]
    fn truncated_ppm_is_rejected() {
        let mut bytes = ramp(4, 4).to_ppm();
        bytes.truncate(bytes.len() - 1);
        assert!(Image8::decode(&bytes).is_err());
    }

    #[test]
    fn padding_replicates_edges() {
        let img = ramp(3, 2);
        let p = img.pad_to_multiple(4);
        assert_eq!((p.width(), p.height()), (4, 4));
        assert_eq!(p.get(3, 3), img.get(1, 2));
        assert_eq!(p.crop(0, 0, 2, 3).unwrap(), img);
    }

    #[test]
    fn tiles_cover_image() {
        let t = tiles(10, 7, 4);
        assert_eq!(t.len(), 6);
        let area: usize = t.iter().map(|t| t.width * t.height).sum();
        assert_eq!(area, 70);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = ramp(6, 5);
        img.save_png(&path).unwrap();
        assert_eq!(Image8::load(&path).unwrap(), img);
    }
}
