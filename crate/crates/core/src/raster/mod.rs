//! Floating point raster images and the resampling primitives shared by
//! every later stage.
//!
//! Intensities live in `[0, 1]` as `f64`. Eight-bit values only appear at
//! file boundaries (see [`codec`]).

pub mod codec;

pub use codec::{load_image, read_image, save_image, write_image};

use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// A row-major image with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    /// Builds an image, checking the dimensions against the buffer and
    /// clamping every intensity into `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite intensity {v}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            data,
        })
    }

    /// A single-channel image filled with `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, 1, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Copies one channel out as a dense plane.
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        assert!(c < self.channels, "channel {c} out of range");
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Reassembles an image from per-channel planes.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let n = width * height;
        let mut data = vec![0.0; n * channels];
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: plane.len(),
                });
            }
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// A signed, unclamped single-channel plane holding filter responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FilteredPlane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "plane dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(FilteredPlane {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear resample without clamping the values.
    pub fn resize_bilinear(&self, out_w: usize, out_h: usize) -> Result<FilteredPlane> {
        check_target(out_w, out_h)?;
        let data = resample(&self.data, self.width, self.height, 1, out_w, out_h);
        FilteredPlane::new(out_w, out_h, data)
    }
}

impl TryFrom<&RasterImage> for FilteredPlane {
    type Error = Error;

    /// Only single-channel images convert directly; use [`to_grayscale`] first.
    fn try_from(img: &RasterImage) -> Result<Self> {
        if img.channels != 1 {
            return Err(Error::invalid(format!(
                "expected a 1-channel image, got {} channels",
                img.channels
            )));
        }
        FilteredPlane::new(img.width, img.height, img.data.clone())
    }
}

/// Converts RGB to luma with BT.601 weights; gray images are returned as is.
pub fn to_grayscale(img: &RasterImage) -> RasterImage {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
        .collect();
    RasterImage::new(img.width, img.height, 1, data).expect("grayscale conversion keeps dimensions")
}

fn check_target(out_w: usize, out_h: usize) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    Ok(())
}

/// Half-pixel-center bilinear resize; output intensities stay in `[0, 1]`.
pub fn resize_bilinear(img: &RasterImage, out_w: usize, out_h: usize) -> Result<RasterImage> {
    check_target(out_w, out_h)?;
    let data = resample(&img.data, img.width, img.height, img.channels, out_w, out_h);
    RasterImage::new(out_w, out_h, img.channels, data)
}

/// Width after scaling `width x height` to `target_h` rows with the aspect
/// ratio preserved.
pub fn aspect_width(width: usize, height: usize, target_h: usize) -> usize {
    let w = (width as f64 * target_h as f64 / height as f64).round() as usize;
    w.max(1)
}

/// Rescales to `target_h` rows keeping the aspect ratio.
pub fn normalize_height(img: &RasterImage, target_h: usize) -> Result<RasterImage> {
    if target_h == 0 {
        return Err(Error::invalid("target height must be at least 1"));
    }
    let out_w = aspect_width(img.width, img.height, target_h);
    resize_bilinear(img, out_w, target_h)
}

/// Source sample positions for one axis: `(lower index, upper index, weight
/// of upper)`.
fn axis_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    let last = (src_len - 1) as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

fn resample(
    src: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    if w == out_w && h == out_h {
        return src.to_vec();
    }
    let xs = axis_taps(w, out_w);
    let ys = axis_taps(h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h * channels);
    for &(y0, y1, fy) in &ys {
        let row0 = &src[y0 * w * channels..(y0 + 1) * w * channels];
        let row1 = &src[y1 * w * channels..(y1 + 1) * w * channels];
        for &(x0, x1, fx) in &xs {
            for c in 0..channels {
                let a = row0[x0 * channels + c];
                let b = row0[x1 * channels + c];
                let p = row1[x0 * channels + c];
                let q = row1[x1 * channels + c];
                let top = a + (b - a) * fx;
                let bottom = p + (q - p) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    out
}
