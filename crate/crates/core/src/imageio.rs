//! PNG and PFM file IO for renders, masks and ground-truth views.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: png: {message}")]
    Png { path: String, message: String },
    #[error("{path}: pfm: {message}")]
    Pfm { path: String, message: String },
    #[error("buffer of {len} values does not fit {width}x{height}x{channels}")]
    Shape { width: usize, height: usize, channels: usize, len: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io { path: path.display().to_string(), source }
}

fn png_err<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> ImageError + '_ {
    move |e| ImageError::Png { path: path.display().to_string(), message: e.to_string() }
}

fn check_shape(width: usize, height: usize, channels: usize, len: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 || width * height * channels != len {
        return Err(ImageError::Shape { width, height, channels, len });
    }
    Ok(())
}

/// Quantizes [0,1] to 8 bits with round-half-up; out-of-range values clamp.
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<(), ImageError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err(path))?;
    writer.write_image_data(data).map_err(png_err(path))?;
    writer.finish().map_err(png_err(path))
}

/// Writes a row-major, top-row-first RGB buffer in [0,1].
pub fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<(), ImageError> {
    check_shape(width, height, 3, rgb.len())?;
    let bytes: Vec<u8> = rgb.iter().map(|&v| quantize(v as f64)).collect();
    write_png(path, width, height, png::ColorType::Rgb, &bytes)
}

/// Writes a mask as 8-bit gray: 255 on, 0 off.
pub fn write_png_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<(), ImageError> {
    check_shape(width, height, 1, mask.len())?;
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_png(path, width, height, png::ColorType::Grayscale, &bytes)
}

/// An 8-bit RGB image decoded to [0,1] floats.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

/// Reads any 8/16-bit PNG and converts it to RGB; alpha is dropped.
pub fn read_png_rgb(path: &Path) -> Result<RgbImage, ImageError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(png_err(path))?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err(path)("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err(path))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_err(path)("unexpanded palette")),
    };
    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let row = &buf[y * info.line_size..][..width * channels];
        for px in row.chunks_exact(channels) {
            let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
            pixels.extend(rgb.iter().map(|&b| b as f32 / 255.0));
        }
    }
    Ok(RgbImage { width, height, pixels })
}

/// Writes a single-channel little-endian PFM. `values` is top-row-first; the
/// file stores rows bottom-to-top as the format requires.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<(), ImageError> {
    check_shape(width, height, 1, values.len())?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write!(w, "Pf\n{width} {height}\n-1.0\n").map_err(io_err(path))?;
    for y in (0..height).rev() {
        for v in &values[y * width..(y + 1) * width] {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads a single-channel PFM of either endianness, returning top-row-first values.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>), ImageError> {
    let bad = |m: &str| ImageError::Pfm { path: path.display().to_string(), message: m.to_string() };
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(io_err(path))? == 0 {
            return Err(bad("truncated header"));
        }
        header.push(line.clone());
        tokens.extend(line.split_whitespace().map(str::to_string));
    }
    if tokens.len() != 4 || tokens[0] != "Pf" {
        return Err(bad("expected a single-channel Pf header"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 || scale == 0.0 {
        return Err(bad("degenerate header"));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(io_err(path))?;
    if data.len() != width * height * 4 {
        return Err(bad("payload size does not match header"));
    }
    let mut values = vec![0.0f32; width * height];
    for (i, b) in data.chunks_exact(4).enumerate() {
        let bytes = [b[0], b[1], b[2], b[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(bytes) } else { f32::from_be_bytes(bytes) };
        let (row, col) = (i / width, i % width);
        values[(height - 1 - row) * width + col] = v;
    }
    Ok((width, height, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
        assert_eq!(quantize(f64::NAN), 0);
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let (w, h) = (5, 3);
        let rgb: Vec<f32> = (0..w * h * 3).map(|i| ((i * 17) % 256) as f32 / 255.0).collect();
        write_png_rgb(&p, w, h, &rgb).unwrap();
        let img = read_png_rgb(&p).unwrap();
        assert_eq!((img.width, img.height), (w, h));
        assert_eq!(img.pixels, rgb);
    }

    #[test]
    fn mask_png_reads_back_as_gray() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        write_png_mask(&p, 2, 1, &[true, false]).unwrap();
        let img = read_png_rgb(&p).unwrap();
        assert_eq!(img.pixels, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pfm_round_trip_and_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let vals = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        write_pfm(&p, 3, 2, &vals).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"Pf\n3 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        // First stored row is the bottom image row.
        assert_eq!(f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap()), 4.0);
        assert_eq!(read_pfm(&p).unwrap(), (3, 2, vals.to_vec()));
    }

    #[test]
    fn shape_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_png_rgb(&dir.path().join("x.png"), 2, 2, &[0.0; 11]), Err(ImageError::Shape { .. })));
        assert!(matches!(write_pfm(&dir.path().join("x.pfm"), 0, 2, &[]), Err(ImageError::Shape { .. })));
        std::fs::write(dir.path().join("bad.pfm"), b"PF\n1 1\n-1\n\0\0\0\0").unwrap();
        assert!(read_pfm(&dir.path().join("bad.pfm")).is_err());
        assert!(matches!(read_png_rgb(&dir.path().join("missing.png")), Err(ImageError::Io { .. })));
    }
}
