//! Dense float images, binary masks and their PNG / PFM encodings.
//!
//! PNG output is 8-bit with no gamma chunk. PFM is the 32-bit float
//! little-endian variant (scale `-1.0`), rows stored bottom-to-top.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// H×W×3 interleaved RGB, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Single-channel H×W float plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// H×W binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x3 image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Gray plane replicated into three channels.
    pub fn from_gray(plane: &Plane) -> Self {
        let data = plane.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            width: plane.width,
            height: plane.height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        write_png(path.as_ref(), self.width, self.height, png::ColorType::Rgb, &bytes)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let (w, h, rgb) = read_png_rgb(path.as_ref())?;
        Ok(Image {
            width: w,
            height: h,
            data: rgb.into_iter().map(|b| b as f64 / 255.0).collect(),
        })
    }

    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_pfm(path.as_ref(), self.width, self.height, 3, &self.data)
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Image> {
        let (w, h, c, data) = read_pfm(path.as_ref())?;
        if c != 3 {
            return Err(Error::DimensionMismatch(format!("expected a 3-channel PFM, got {c}")));
        }
        Ok(Image { width: w, height: h, data })
    }
}

impl Plane {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} plane needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// `value >= threshold`.
    pub fn threshold(&self, threshold: f64) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v >= threshold).collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        write_png(path.as_ref(), self.width, self.height, png::ColorType::Grayscale, &bytes)
    }

    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_pfm(path.as_ref(), self.width, self.height, 1, &self.data)
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Plane> {
        let (w, h, c, data) = read_pfm(path.as_ref())?;
        if c != 1 {
            return Err(Error::DimensionMismatch(format!("expected a 1-channel PFM, got {c}")));
        }
        Ok(Plane { width: w, height: h, data })
    }
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_png(path.as_ref(), self.width, self.height, png::ColorType::Grayscale, &bytes)
    }

    /// Any nonzero pixel (in any channel) is set.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Mask> {
        let (w, h, rgb) = read_png_rgb(path.as_ref())?;
        Ok(Mask {
            width: w,
            height: h,
            data: rgb.chunks(3).map(|p| p.iter().any(|&b| b > 127)).collect(),
        })
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(bytes)?;
    writer.finish()?;
    Ok(())
}

/// Decodes any 8/16-bit PNG into packed 8-bit RGB.
fn read_png_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf.to_vec(),
        png::ColorType::Rgba => buf.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => {
            return Err(Error::invalid(format!("{}: indexed PNG was not expanded", path.display())))
        }
    };
    Ok((w, h, rgb))
}

/// Writes `channels`-interleaved, top-to-bottom `data` as PFM.
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f64]) -> Result<()> {
    assert!(channels == 1 || channels == 3);
    assert_eq!(data.len(), width * height * channels);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let io = |e| Error::io(path, e);
    write!(w, "{tag}\n{width} {height}\n-1.0\n").map_err(io)?;
    let row_len = width * channels;
    for row in (0..height).rev() {
        for &v in &data[row * row_len..(row + 1) * row_len] {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Returns `(width, height, channels, data)` with rows top-to-bottom.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut header = Vec::new();
    // Three whitespace-terminated header lines.
    for _ in 0..3 {
        let mut line = String::new();
        r.read_line(&mut line).map_err(io)?;
        header.push(line.trim().to_string());
    }
    let perr = |line: usize, message: &str| Error::Parse {
        line,
        message: format!("{}: {message}", path.display()),
    };
    let channels = match header[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(perr(1, "bad PFM magic")),
    };
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| perr(2, "bad dimensions")))
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(perr(2, "bad dimensions"));
    }
    let (width, height) = (dims[0], dims[1]);
    let scale: f64 = header[2].parse().map_err(|_| perr(3, "bad scale"))?;
    let little = scale < 0.0;
    let n = width * height * channels;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw).map_err(io)?;
    let row_len = width * channels;
    let mut data = vec![0.0; n];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let file_row = i / row_len;
        let col = i % row_len;
        data[(height - 1 - file_row) * row_len + col] = v as f64;
    }
    Ok((width, height, channels, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| (i as f32 * 0.173) as f64).collect();
        let img = Image::from_data(4, 3, data).unwrap();
        let p = dir.path().join("a.pfm");
        img.save_pfm(&p).unwrap();
        assert_eq!(Image::load_pfm(&p).unwrap(), img);

        let plane = Plane::from_data(2, 3, vec![0.0, 0.5, 0.25, 1.0, -2.0, 3.5]).unwrap();
        let p = dir.path().join("b.pfm");
        plane.save_pfm(&p).unwrap();
        assert_eq!(Plane::load_pfm(&p).unwrap(), plane);
        assert!(Image::load_pfm(&p).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::filled(3, 2, 0.0);
        img.set_pixel(1, 1, [1.0, 0.5, 0.0]);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(back.pixel(1, 1), [1.0, 128.0 / 255.0, 0.0]);

        let mut m = Mask::empty(5, 4);
        m.data[7] = true;
        let p = dir.path().join("m.png");
        m.save_png(&p).unwrap();
        assert_eq!(Mask::load_png(&p).unwrap(), m);
    }
}
