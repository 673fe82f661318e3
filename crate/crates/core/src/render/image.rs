//! 8-bit RGB and paletted label PNGs.
//!
//! Label palette, by index:
//!
//! | index | class        | color           |
//! |-------|--------------|-----------------|
//! | 0     | lane marking | (255, 255, 255) |
//! | 1     | curb         | (244, 35, 232)  |
//! | 2     | manhole      | (250, 170, 30)  |
//! | 3     | road         | (128, 64, 128)  |
//! | 4     | background   | (0, 0, 0)       |
//! | 5-255 | dynamic      | (0, 0, 142)     |

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

pub const PALETTE: [[u8; 3]; 5] = [
    [255, 255, 255],
    [244, 35, 232],
    [250, 170, 30],
    [128, 64, 128],
    [0, 0, 0],
];

const DYNAMIC_COLOR: [u8; 3] = [0, 0, 142];

pub fn class_color(label: u8) -> [u8; 3] {
    PALETTE.get(label as usize).copied().unwrap_or(DYNAMIC_COLOR)
}

/// `[0, 1]` to 8 bits, rounding to nearest.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, width: usize, height: usize, data: &[u8], paletted: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut enc = png::Encoder::new(&mut w, width as u32, height as u32);
    enc.set_depth(png::BitDepth::Eight);
    if paletted {
        enc.set_color(png::ColorType::Indexed);
        let mut palette = Vec::with_capacity(3 * 256);
        for i in 0..=255u8 {
            palette.extend_from_slice(&class_color(i));
        }
        enc.set_palette(palette);
    } else {
        enc.set_color(png::ColorType::Rgb);
    }
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(e) => Error::io(path, e),
        other => Error::parse(path, other.to_string()),
    };
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(data).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::shape(format!("{} bytes for a {width}x{height} RGB image", rgb.len())));
    }
    write_png(path, width, height, rgb, false)
}

pub fn write_label_png(path: &Path, width: usize, height: usize, labels: &[u8]) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::shape(format!("{} labels for a {width}x{height} image", labels.len())));
    }
    write_png(path, width, height, labels, true)
}

fn read_png(path: &Path, expect: png::ColorType) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::parse(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::parse(path, e.to_string()))?;
    if info.color_type != expect || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::parse(
            path,
            format!("expected 8-bit {expect:?}, found {:?} {:?}", info.bit_depth, info.color_type),
        ));
    }
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = if expect == png::ColorType::Rgb { 3 } else { 1 };
    // Drop any row padding; 8-bit rows are tightly packed but be explicit.
    let stride = info.line_size;
    let mut out = Vec::with_capacity(w * h * channels);
    for row in buf.chunks(stride).take(h) {
        out.extend_from_slice(&row[..w * channels]);
    }
    Ok((w, h, out))
}

pub fn read_rgb_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_png(path, png::ColorType::Rgb)
}

/// Reads palette indices back as labels.
pub fn read_label_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_png(path, png::ColorType::Indexed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let data: Vec<u8> = (0..3 * 5 * 4).map(|i| (i * 7 % 256) as u8).collect();
        write_rgb_png(&path, 5, 4, &data).unwrap();
        assert_eq!(read_rgb_png(&path).unwrap(), (5, 4, data));
    }

    #[test]
    fn label_roundtrip_keeps_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.png");
        let labels = vec![0, 1, 2, 3, 4, 5, 200, 3, 3];
        write_label_png(&path, 3, 3, &labels).unwrap();
        assert_eq!(read_label_png(&path).unwrap(), (3, 3, labels));
        assert!(read_rgb_png(&path).is_err());
    }

    #[test]
    fn palette_and_quantization() {
        assert_eq!(class_color(3), [128, 64, 128]);
        assert_eq!(class_color(9), [0, 0, 142]);
        assert_eq!(to_u8(1.5), 255);
        assert_eq!(to_u8(-0.1), 0);
        assert_eq!(to_u8(0.5), 128);
    }
}
