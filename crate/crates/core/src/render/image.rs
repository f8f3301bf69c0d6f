use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Floating-point RGB image in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageF {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[inline]
pub fn to_byte(c: f64) -> u8 {
    (255.0 * c.clamp(0.0, 1.0)).round() as u8
}

impl ImageF {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: &[[f64; 3]]) -> Self {
        Self { width, height, data: pixels.iter().flatten().copied().collect() }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage { width: self.width, height: self.height, data: self.data.iter().map(|&c| to_byte(c)).collect() }
    }
}

impl RgbImage {
    pub fn to_float(&self) -> ImageF {
        ImageF { width: self.width, height: self.height, data: self.data.iter().map(|&b| b as f64 / 255.0).collect() }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.data)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let (w, h, ct, data) = read_png(path)?;
        let data = match ct {
            png::ColorType::Rgb => data,
            png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
            other => {
                return Err(Error::Png { path: path.into(), message: format!("unsupported color type {other:?}") })
            }
        };
        Ok(Self { width: w, height: h, data })
    }
}

/// Writes an 8-bit PNG.
pub fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Png { path: path.into(), message: e.to_string() };
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

/// Reads an 8-bit PNG, returning `(width, height, color type, bytes)`.
pub fn read_png(path: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.into())
        } else {
            Error::io(path, e)
        }
    })?;
    let png_err = |m: String| Error::Png { path: path.into(), message: m };
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(format!("expected 8-bit samples, got {:?}", info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}

/// Peak signal-to-noise ratio in dB over `[0, 1]` channels; `+inf` for
/// identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    psnr_f(&a.to_float(), &b.to_float())
}

pub fn psnr_f(a: &ImageF, b: &ImageF) -> Result<f64> {
    if a.width != b.width || a.height != b.height || a.data.len() != b.data.len() {
        return Err(Error::DimensionMismatch(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse = mse(&a.data, &b.data);
    Ok(psnr_from_mse(mse))
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR formatted for command output: `inf` for identical images.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: u8) -> RgbImage {
        RgbImage { width: 4, height: 3, data: vec![v; 36] }
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&flat(7), &flat(7)).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&flat(0), &flat(255)).unwrap(), 0.0);
        let a = ImageF::new(4, 4);
        let b = ImageF { data: vec![0.5; 48], ..a.clone() };
        assert!((psnr_f(&a, &b).unwrap() - 6.020_599_913_279_624).abs() < 1e-12);
        assert_eq!(format_psnr(psnr_f(&a, &b).unwrap()), "6.02");
        assert_eq!(format_psnr(f64::INFINITY), "inf");
    }

    #[test]
    fn psnr_dimension_mismatch() {
        let a = RgbImage { width: 2, height: 2, data: vec![0; 12] };
        assert!(psnr(&a, &flat(0)).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage { width: 3, height: 2, data: (0..18).map(|i| (i * 13) as u8).collect() };
        let p = dir.path().join("x.png");
        img.write_png(&p).unwrap();
        assert_eq!(RgbImage::read_png(&p).unwrap(), img);
    }
}
