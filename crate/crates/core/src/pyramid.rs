//! Gaussian reduction pyramid (Burt–Adelson REDUCE with the 5-tap binomial).

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Upper bound on pyramid depth, counting the base.
pub const MAX_LEVELS: usize = 6;

/// Default recursion floor on level height.
pub const DEFAULT_MIN_HEIGHT: usize = 30;

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Levels ordered from the base (index 0, largest) upwards.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPyramid {
    levels: Vec<RasterImage>,
}

impl GaussianPyramid {
    pub fn levels(&self) -> &[RasterImage] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> Option<&RasterImage> {
        self.levels.get(k)
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &RasterImage {
        &self.levels[0]
    }

    /// Drops levels beyond `count` (keeps at least the base).
    pub fn truncate(&mut self, count: usize) {
        self.levels.truncate(count.max(1));
    }

    pub fn into_levels(self) -> Vec<RasterImage> {
        self.levels
    }
}

fn reduced_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// Smooth with [1,4,6,4,1]/16 along rows then columns (replicated border)
/// and keep the even-indexed samples.
pub fn reduce(img: &RasterImage) -> Result<RasterImage> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if w < 2 || h < 2 {
        return Err(Error::invalid(format!(
            "reduce needs at least a 2x2 image, got {w}x{h}"
        )));
    }
    let (ow, oh) = (reduced_len(w), reduced_len(h));
    let src = img.data();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    // Horizontal pass only at the even columns that survive subsampling.
    let mut rows = vec![0.0; ow * h * ch];
    for y in 0..h {
        for ox in 0..ow {
            let x = (2 * ox) as isize;
            for c in 0..ch {
                let mut acc = 0.0;
                for (t, wt) in BINOMIAL.iter().enumerate() {
                    let sx = clamp(x + t as isize - 2, w);
                    acc += wt * src[(y * w + sx) * ch + c];
                }
                rows[(y * ow + ox) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; ow * oh * ch];
    for oy in 0..oh {
        let y = (2 * oy) as isize;
        for (t, wt) in BINOMIAL.iter().enumerate() {
            let sy = clamp(y + t as isize - 2, h);
            let src_row = &rows[sy * ow * ch..(sy + 1) * ow * ch];
            let dst_row = &mut out[oy * ow * ch..(oy + 1) * ow * ch];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += wt * s;
            }
        }
    }
    RasterImage::new(ow, oh, ch, out)
}

/// Builds up to `max_levels` levels (base included), stopping early once the
/// next level would be shorter than `min_height`.
pub fn build_pyramid(
    img: &RasterImage,
    max_levels: usize,
    min_height: usize,
) -> Result<GaussianPyramid> {
    if !(1..=MAX_LEVELS).contains(&max_levels) {
        return Err(Error::invalid(format!(
            "max_levels must be in [1, {MAX_LEVELS}], got {max_levels}"
        )));
    }
    if min_height < 2 {
        return Err(Error::invalid(format!(
            "min_height must be at least 2, got {min_height}"
        )));
    }
    let mut levels = vec![img.clone()];
    while levels.len() < max_levels {
        let top = levels.last().expect("pyramid has a base");
        if top.width() < 2 || top.height() < 2 || reduced_len(top.height()) < min_height {
            break;
        }
        let next = reduce(top)?;
        levels.push(next);
    }
    Ok(GaussianPyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_survives_reduce() {
        let img = RasterImage::filled(8, 8, 0.625).unwrap();
        let out = reduce(&img).unwrap();
        assert_eq!((out.width(), out.height()), (4, 4));
        assert!(out.data().iter().all(|v| (v - 0.625).abs() < 1e-12));
    }

    #[test]
    fn odd_sizes_ceil_halve() {
        let out = reduce(&RasterImage::filled(7, 7, 0.0).unwrap()).unwrap();
        assert_eq!((out.width(), out.height()), (4, 4));
        let out = reduce(&RasterImage::filled(2, 5, 0.0).unwrap()).unwrap();
        assert_eq!((out.width(), out.height()), (1, 3));
    }

    #[test]
    fn reduce_rejects_tiny() {
        assert!(reduce(&RasterImage::filled(1, 4, 0.0).unwrap()).is_err());
        assert!(reduce(&RasterImage::filled(4, 1, 0.0).unwrap()).is_err());
    }

    #[test]
    fn impulse_response_at_center() {
        let mut data = vec![0.0; 81];
        data[4 * 9 + 4] = 1.0;
        let img = RasterImage::new(9, 9, 1, data).unwrap();
        let out = reduce(&img).unwrap();
        assert!((out.get(2, 2, 0) - 36.0 / 256.0).abs() < 1e-15);
        // (x=1 or 3) sits two source pixels away from the impulse: 1/16 * 6/16
        assert!((out.get(1, 2, 0) - 6.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn pyramid_level_counts() {
        let img = RasterImage::filled(512, 64, 0.5).unwrap();
        let heights = |p: &GaussianPyramid| p.levels().iter().map(|l| l.height()).collect::<Vec<_>>();
        let full = build_pyramid(&img, 6, 2).unwrap();
        assert_eq!(heights(&full), vec![64, 32, 16, 8, 4, 2]);
        let floored = build_pyramid(&img, 6, DEFAULT_MIN_HEIGHT).unwrap();
        assert_eq!(heights(&floored), vec![64, 32]);
        let single = build_pyramid(&img, 1, 2).unwrap();
        assert_eq!(single.level_count(), 1);
        assert_eq!(single.base(), &img);
    }

    #[test]
    fn pyramid_preconditions() {
        let img = RasterImage::filled(8, 8, 0.5).unwrap();
        assert!(build_pyramid(&img, 0, 2).is_err());
        assert!(build_pyramid(&img, 7, 2).is_err());
        assert!(build_pyramid(&img, 3, 1).is_err());
        let tiny = RasterImage::filled(1, 1, 0.5).unwrap();
        assert_eq!(build_pyramid(&tiny, 6, 2).unwrap().level_count(), 1);
    }
}
