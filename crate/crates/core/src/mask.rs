//! Dense binary masks with run-length file encoding.
//!
//! Masks are stored row-major in 64-bit blocks; files carry them as
//! alternating run lengths starting with a zero-run (uncompressed
//! COCO-style counts).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions must be at least 1x1, got {height}x{width}")]
    ZeroDimension { height: u32, width: u32 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("mask data has {got} pixels, expected {expected}")]
    DataLength { got: usize, expected: usize },
    #[error("run lengths sum to {got} pixels, expected {expected}")]
    RunLengthSum { got: u64, expected: u64 },
}

/// A dense H×W binary mask (1 = object, 0 = background).
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: u32,
    width: u32,
    // Row-major bits packed LSB-first; bits past height*width stay zero.
    blocks: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("ones", &self.count_ones())
            .finish()
    }
}

impl BinaryMask {
    /// All-zero mask of the given dimensions.
    pub fn zeros(height: u32, width: u32) -> Result<Self, MaskError> {
        if height == 0 || width == 0 {
            return Err(MaskError::ZeroDimension { height, width });
        }
        let pixels = height as usize * width as usize;
        Ok(Self {
            height,
            width,
            blocks: vec![0; pixels.div_ceil(64)],
        })
    }

    /// Build from row-major pixel values; any nonzero byte is an object pixel.
    pub fn from_pixels(height: u32, width: u32, pixels: &[u8]) -> Result<Self, MaskError> {
        let mut mask = Self::zeros(height, width)?;
        let expected = height as usize * width as usize;
        if pixels.len() != expected {
            return Err(MaskError::DataLength {
                got: pixels.len(),
                expected,
            });
        }
        for (i, &p) in pixels.iter().enumerate() {
            if p != 0 {
                mask.blocks[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(mask)
    }

    /// Build by evaluating a predicate at every (row, col).
    pub fn from_fn(
        height: u32,
        width: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, MaskError> {
        let mut mask = Self::zeros(height, width)?;
        for r in 0..height {
            for c in 0..width {
                if f(r, c) {
                    mask.set(r, c, true);
                }
            }
        }
        Ok(mask)
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height as usize * self.width as usize
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    fn check_dims(&self, other: &Self) -> Result<(), MaskError> {
        if !self.same_dims(other) {
            return Err(MaskError::DimensionMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        debug_assert!(row < self.height && col < self.width);
        let i = row as usize * self.width as usize + col as usize;
        self.blocks[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        assert!(row < self.height && col < self.width, "pixel out of bounds");
        let i = row as usize * self.width as usize + col as usize;
        if value {
            self.blocks[i / 64] |= 1 << (i % 64);
        } else {
            self.blocks[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.blocks.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    /// Number of pixels set in both masks.
    pub fn intersection_count(&self, other: &Self) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    /// Number of pixels set in either mask.
    pub fn union_count(&self, other: &Self) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum())
    }

    /// Pixels set here but not in `other`.
    pub fn difference_count(&self, other: &Self) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a & !b).count_ones() as u64)
            .sum())
    }

    pub fn or_assign(&mut self, other: &Self) -> Result<(), MaskError> {
        self.check_dims(other)?;
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a |= b;
        }
        Ok(())
    }

    /// Row-major pixel iterator (true = object).
    pub fn pixels(&self) -> impl Iterator<Item = bool> + '_ {
        let n = self.pixel_count();
        (0..n).map(move |i| self.blocks[i / 64] >> (i % 64) & 1 == 1)
    }

    /// Alternating run lengths, starting with a zero-run (possibly 0).
    pub fn to_run_lengths(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for bit in self.pixels() {
            if bit == current {
                len += 1;
            } else {
                runs.push(len);
                current = bit;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    /// Decode alternating run lengths (zero-run first). Run values may be
    /// zero; the total must cover exactly height*width pixels.
    pub fn from_run_lengths(height: u32, width: u32, runs: &[u64]) -> Result<Self, MaskError> {
        let mut mask = Self::zeros(height, width)?;
        let expected = height as u64 * width as u64;
        let total: u64 = runs.iter().sum();
        if total != expected {
            return Err(MaskError::RunLengthSum {
                got: total,
                expected,
            });
        }
        let mut i = 0usize;
        let mut value = false;
        for &run in runs {
            if value {
                for _ in 0..run {
                    mask.blocks[i / 64] |= 1 << (i % 64);
                    i += 1;
                }
            } else {
                i += run as usize;
            }
            value = !value;
        }
        Ok(mask)
    }
}

/// Intersection over union; 0 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    let inter = a.intersection_count(b)?;
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Pixelwise OR of all masks; an empty list yields an all-zero mask.
pub fn union_of(
    height: u32,
    width: u32,
    masks: &[BinaryMask],
) -> Result<BinaryMask, MaskError> {
    let mut out = BinaryMask::zeros(height, width)?;
    for m in masks {
        out.or_assign(m)?;
    }
    Ok(out)
}
