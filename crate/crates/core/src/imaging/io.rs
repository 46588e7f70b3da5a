//! PNG and binary PPM/PGM raster I/O, 8 bits per sample on disk.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use super::{DepthMap, Image};
use crate::{Error, Result};

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_bytes(image: &Image) -> Vec<u8> {
    image.data().iter().map(|&v| quantize(v)).collect()
}

/// Rounds every intensity to the nearest 8-bit level.
pub fn quantized(image: &Image) -> Image {
    image.map(|v| quantize(v) as f64 / 255.0)
}

fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
    Image::from_vec(
        height,
        width,
        channels,
        bytes.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "ppm" || e == "pgm" || e == "pnm"
    )
}

/// Reads an 8-bit image; the format follows the file extension (`.ppm`,
/// `.pgm`, `.pnm` as binary PNM, anything else through the PNG decoder).
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if is_pnm(path) {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        return decode_pnm(&bytes);
    }
    let dynimg = image::open(path)?;
    let gray = matches!(
        dynimg.color(),
        image::ColorType::L8
            | image::ColorType::L16
            | image::ColorType::La8
            | image::ColorType::La16
    );
    if gray {
        let g = dynimg.to_luma8();
        from_bytes(g.height() as usize, g.width() as usize, 1, g.as_raw())
    } else {
        let rgb = dynimg.to_rgb8();
        from_bytes(rgb.height() as usize, rgb.width() as usize, 3, rgb.as_raw())
    }
}

/// Writes an image; `.ppm`/`.pgm`/`.pnm` produce binary P6/P5, other
/// extensions PNG.
pub fn write_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    if is_pnm(path) {
        let bytes = encode_pnm(image);
        return fs::write(path, bytes).map_err(|e| Error::io(path, e));
    }
    let (h, w, ch) = image.dims();
    let raw = to_bytes(image);
    if ch == 1 {
        GrayImage::from_raw(w as u32, h as u32, raw)
            .expect("buffer sized from dims")
            .save_with_format(path, ImageFormat::Png)?;
    } else {
        RgbImage::from_raw(w as u32, h as u32, raw)
            .expect("buffer sized from dims")
            .save_with_format(path, ImageFormat::Png)?;
    }
    Ok(())
}

pub fn write_depth(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    write_image(&depth.as_image(), path)
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let img = read_image(path)?;
    let img = if img.channels() == 1 {
        img
    } else {
        img.luminance()
    };
    DepthMap::from_vec(img.height(), img.width(), img.into_data())
}

pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let (h, w, ch) = image.dims();
    let magic = if ch == 1 { "P5" } else { "P6" };
    let mut out = Vec::with_capacity(h * w * ch + 20);
    write!(out, "{}\n{} {}\n255\n", magic, w, h).expect("write to Vec");
    out.extend(to_bytes(image));
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::invalid("truncated PNM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::invalid(format!("unsupported PNM magic {}", other))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::invalid(format!("bad PNM header field {:?}", s)))
    };
    let width = parse(&fields[1])?;
    let height = parse(&fields[2])?;
    let maxval = parse(&fields[3])?;
    if maxval != 255 {
        return Err(Error::invalid(format!(
            "only 8-bit PNM supported, maxval {}",
            maxval
        )));
    }
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(Error::invalid("truncated PNM raster"));
    }
    from_bytes(height, width, channels, &bytes[pos..pos + need])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(ch: usize) -> Image {
        quantized(
            &Image::from_fn(7, 5, ch, |y, x, c| ((y * 5 + x) * 3 + c) as f64 / 120.0).unwrap(),
        )
    }

    #[test]
    fn png_round_trip_is_exact_on_quantized_data() {
        let dir = tempfile::tempdir().unwrap();
        for ch in [1, 3] {
            let img = sample(ch);
            let p = dir.path().join(format!("a{}.png", ch));
            write_image(&img, &p).unwrap();
            assert_eq!(read_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn pnm_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = sample(3);
        let p = dir.path().join("a.ppm");
        write_image(&rgb, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n5 7\n255\n"));
        assert_eq!(read_image(&p).unwrap(), rgb);

        let depth = DepthMap::from_vec(2, 2, vec![0.0, 1.0, 0.2, 0.6]).unwrap();
        let q = dir.path().join("d.pgm");
        write_depth(&depth, &q).unwrap();
        assert!(fs::read(&q).unwrap().starts_with(b"P5\n"));
        let back = read_depth(&q).unwrap();
        for (a, b) in back.data().iter().zip(depth.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pnm_header_comments_are_skipped() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }
}
