//! The fixed six-kernel filter bank and 2-D correlation.

mod features;

pub use features::{
    featurize_level, featurize_pyramid, FeatureMode, FeatureSequence, FrameMeta, FSEQ_MAGIC,
};

use crate::error::{Error, Result};
use crate::raster::{to_grayscale, FilteredPlane, RasterImage};

/// Planes produced by [`apply_bank`] for a bank of `n` kernels: the gray
/// image plus one response per kernel.
pub const fn planes_for(kernels: usize) -> usize {
    kernels + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    name: String,
    rows: usize,
    cols: usize,
    coeffs: Vec<f64>,
}

impl Kernel {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, coeffs: Vec<f64>) -> Result<Self> {
        if rows.is_multiple_of(2) || cols.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "kernel dimensions must be odd, got {rows}x{cols}"
            )));
        }
        if coeffs.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: coeffs.len(),
            });
        }
        Ok(Kernel {
            name: name.into(),
            rows,
            cols,
            coeffs,
        })
    }

    fn fixed(name: &str, rows: usize, cols: usize, coeffs: Vec<f64>) -> Self {
        Self::new(name, rows, cols, coeffs).expect("built-in kernel is well formed")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.coeffs[r * self.cols + c]
    }

    pub fn transpose(&self, name: impl Into<String>) -> Kernel {
        let coeffs = (0..self.cols)
            .flat_map(|c| (0..self.rows).map(move |r| (r, c)))
            .map(|(r, c)| self.at(r, c))
            .collect();
        Kernel::fixed(&name.into(), self.cols, self.rows, coeffs)
    }

    pub fn sum(&self) -> f64 {
        self.coeffs.iter().sum()
    }
}

/// Kernels applied in a fixed order to every pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    kernels: Vec<Kernel>,
}

impl FilterBank {
    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Planes per level produced by [`apply_bank`].
    pub fn plane_count(&self) -> usize {
        planes_for(self.kernels.len())
    }
}

impl Default for FilterBank {
    fn default() -> Self {
        default_bank()
    }
}

/// laplacian, sobel_x, sobel_y, small_blur, large_blur, sharpen.
pub fn default_bank() -> FilterBank {
    let laplacian = Kernel::fixed(
        "laplacian",
        3,
        3,
        vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0],
    );
    let sobel_x = Kernel::fixed(
        "sobel_x",
        3,
        3,
        vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0],
    );
    let sobel_y = sobel_x.transpose("sobel_y");
    let small_blur = Kernel::fixed("small_blur", 3, 3, vec![1.0 / 9.0; 9]);
    let large_blur = Kernel::fixed("large_blur", 5, 5, vec![1.0 / 25.0; 25]);
    let sharpen = Kernel::fixed(
        "sharpen",
        3,
        3,
        vec![0.0, -1.0, 0.0, -1.0, 5.0, -1.0, 0.0, -1.0, 0.0],
    );
    FilterBank {
        kernels: vec![laplacian, sobel_x, sobel_y, small_blur, large_blur, sharpen],
    }
}

/// Cross-correlation (the kernel is not flipped) with replicated borders.
/// The output has the input's dimensions.
pub fn convolve2d(plane: &FilteredPlane, k: &Kernel) -> Result<FilteredPlane> {
    if k.rows.is_multiple_of(2) || k.cols.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel dimensions must be odd, got {}x{}",
            k.rows, k.cols
        )));
    }
    let (w, h) = (plane.width(), plane.height());
    let (ry, rx) = ((k.rows / 2) as isize, (k.cols / 2) as isize);
    let src = plane.data();
    // Column lookup table for the replicated border, shared by every row.
    let col_index: Vec<Vec<usize>> = (0..w as isize)
        .map(|x| {
            (-rx..=rx)
                .map(|dx| (x + dx).clamp(0, w as isize - 1) as usize)
                .collect()
        })
        .collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        let dst = &mut out[y as usize * w..(y as usize + 1) * w];
        for (kr, dy) in (-ry..=ry).enumerate() {
            let sy = (y + dy).clamp(0, h as isize - 1) as usize;
            let row = &src[sy * w..(sy + 1) * w];
            let weights = &k.coeffs[kr * k.cols..(kr + 1) * k.cols];
            for (x, d) in dst.iter_mut().enumerate() {
                let cols = &col_index[x];
                let mut acc = 0.0;
                for (wt, &sx) in weights.iter().zip(cols) {
                    acc += wt * row[sx];
                }
                *d += acc;
            }
        }
    }
    FilteredPlane::new(w, h, out)
}

/// Grayscale plane followed by one response plane per kernel.
pub fn apply_bank(img: &RasterImage, bank: &FilterBank) -> Result<Vec<FilteredPlane>> {
    let gray = FilteredPlane::try_from(&to_grayscale(img))?;
    let mut planes = Vec::with_capacity(bank.plane_count());
    for k in &bank.kernels {
        planes.push(convolve2d(&gray, k)?);
    }
    planes.insert(0, gray);
    Ok(planes)
}
