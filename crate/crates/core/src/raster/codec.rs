//! Binary PGM (P5) / PPM (P6) read and write, plus 8-bit PNG decoding.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use super::RasterImage;
use crate::error::{Error, Result};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Reads an image file, choosing the decoder from its magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_image(&bytes)
}

/// Decodes an in-memory PGM, PPM or PNG file.
pub fn read_image(bytes: &[u8]) -> Result<RasterImage> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pnm(bytes, 1)
    } else if bytes.starts_with(b"P6") {
        decode_pnm(bytes, 3)
    } else {
        Err(Error::UnsupportedFormat(
            "expected binary PGM (P5), binary PPM (P6) or PNG".into(),
        ))
    }
}

/// Writes P5 for gray images and P6 for RGB, maxval 255.
pub fn save_image(path: impl AsRef<Path>, img: &RasterImage) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_image(&mut w, img)
        .and_then(|_| w.flush().map_err(Error::from))
        .map_err(|e| match e {
            Error::Stream(source) => Error::io(path, source),
            other => other,
        })
}

pub fn write_image<W: Write>(w: &mut W, img: &RasterImage) -> Result<()> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    write!(w, "{magic}\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// `round(v * 255)` on a clamped intensity.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Malformed {
        what: "image header",
        msg: msg.into(),
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<i64> {
        self.skip_space_and_comments();
        let start = self.pos;
        if self.bytes.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(format!("missing or invalid {field}")))
    }
}

fn decode_pnm(bytes: &[u8], channels: usize) -> Result<RasterImage> {
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width <= 0 || height <= 0 {
        return Err(malformed(format!("non-positive dimensions {width}x{height}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::UnsupportedFormat(format!(
            "maxval {maxval} (only 8-bit samples are supported)"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing separator after maxval"));
    }
    let start = cur.pos + 1;
    let (width, height) = (width as usize, height as usize);
    let len = width * height * channels;
    let raster = bytes
        .get(start..start + len)
        .ok_or_else(|| malformed(format!("expected {len} sample bytes")))?;
    let scale = maxval as f64;
    let data = raster.iter().map(|&b| (b as f64 / scale).min(1.0)).collect();
    RasterImage::new(width, height, channels, data)
}

fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    let png_err = |e: png::DecodingError| Error::UnsupportedFormat(format!("png: {e}"));
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.interlaced {
        return Err(Error::UnsupportedFormat("interlaced png".into()));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "png bit depth {:?}",
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat(format!("png color type {other:?}")));
        }
    };
    let buf_len = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat("png too large".into()))?;
    let mut buf = vec![0u8; buf_len];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let row_len = width * channels;
    let mut data = Vec::with_capacity(row_len * height);
    for row in buf.chunks(frame.line_size).take(height) {
        data.extend(row[..row_len].iter().map(|&b| b as f64 / 255.0));
    }
    RasterImage::new(width, height, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_p5() {
        let img = read_image(b"P5\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 1, 1));
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn reads_p6() {
        let img = read_image(b"P6 1 1 255\n\xff\x00\x00").unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = read_image(b"P5\n# made by hand\n1 1\n# depth\n255\n\x80").unwrap();
        assert!((img.data()[0] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(read_image(b"P5\n0 1\n255\n").is_err());
        assert!(read_image(b"P5\n1 -3\n255\n\x00").is_err());
        assert!(read_image(b"P5\n2 2\n255\n\x00").is_err());
        assert!(read_image(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(read_image(b"P2\n1 1\n255\n0").is_err());
        assert!(read_image(b"").is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_image("/nonexistent/x.pgm").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.pgm"));
    }

    #[test]
    fn writes_exact_bytes() {
        let img = RasterImage::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let mut out = Vec::new();
        write_image(&mut out, &img).unwrap();
        assert_eq!(out, b"P5\n2 1\n255\n\x00\xff");
    }

    fn encode_png(w: u32, h: u32, color: png::ColorType, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().unwrap();
            writer.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn reads_png_gray_and_rgb() {
        let gray = encode_png(2, 1, png::ColorType::Grayscale, &[0, 255]);
        let img = read_image(&gray).unwrap();
        assert_eq!((img.channels(), img.data()), (1, &[0.0, 1.0][..]));

        let rgb = encode_png(1, 2, png::ColorType::Rgb, &[255, 0, 0, 0, 0, 255]);
        let img = read_image(&rgb).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_png_alpha() {
        let rgba = encode_png(1, 1, png::ColorType::Rgba, &[1, 2, 3, 4]);
        assert!(matches!(
            read_image(&rgba),
            Err(Error::UnsupportedFormat(_))
        ));
    }
}
