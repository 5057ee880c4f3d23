//! Binary rasters and the area arithmetic shared by tissue filtering,
//! ground-truth resampling and the phantom fixtures.

use crate::error::{invalid, Result};

/// A row-major binary raster where `true` marks a positive pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRaster {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryRaster {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("raster dimensions must be at least 1x1"));
        }
        if bits.len() != width * height {
            return Err(invalid(format!(
                "raster of {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Positive area, in slide pixels, inside the half-open slide rectangle
    /// `[x0, x1) x [y0, y1)` when every raster pixel stands for a
    /// `scale x scale` block of slide pixels. Pixels outside the raster count
    /// as negative.
    pub fn positive_area(&self, scale: u64, x0: u64, y0: u64, x1: u64, y1: u64) -> u64 {
        if x1 <= x0 || y1 <= y0 || scale == 0 {
            return 0;
        }
        let col_lo = (x0 / scale) as usize;
        let col_hi = (x1.div_ceil(scale) as usize).min(self.width);
        let row_lo = (y0 / scale) as usize;
        let row_hi = (y1.div_ceil(scale) as usize).min(self.height);
        if col_lo >= col_hi || row_lo >= row_hi {
            return 0;
        }
        let span = |i: usize, lo: u64, hi: u64| -> u64 {
            let a = (i as u64 * scale).max(lo);
            let b = ((i as u64 + 1) * scale).min(hi);
            b.saturating_sub(a)
        };
        let mut area = 0u64;
        for row in row_lo..row_hi {
            let oy = span(row, y0, y1);
            if oy == 0 {
                continue;
            }
            let line = &self.bits[row * self.width..(row + 1) * self.width];
            let mut ox_sum = 0u64;
            for (col, &bit) in line.iter().enumerate().take(col_hi).skip(col_lo) {
                if bit {
                    ox_sum += span(col, x0, x1);
                }
            }
            area += ox_sum * oy;
        }
        area
    }
}

/// Overlap length of two half-open integer intervals.
#[inline]
pub fn interval_overlap(a0: u64, a1: u64, b0: u64, b1: u64) -> u64 {
    a1.min(b1).saturating_sub(a0.max(b0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_area_counts_partial_pixels() {
        // 2x2 raster at scale 4, only the top-left pixel set.
        let r = BinaryRaster::new(2, 2, vec![true, false, false, false]).unwrap();
        assert_eq!(r.positive_area(4, 0, 0, 8, 8), 16);
        assert_eq!(r.positive_area(4, 2, 2, 6, 6), 4);
        assert_eq!(r.positive_area(4, 4, 4, 8, 8), 0);
        // beyond the raster is negative
        assert_eq!(r.positive_area(4, 0, 0, 100, 100), 16);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(BinaryRaster::new(0, 3, vec![]).is_err());
        assert!(BinaryRaster::new(2, 2, vec![true; 3]).is_err());
    }

    #[test]
    fn positive_area_matches_pixel_count() {
        let bits: Vec<bool> = (0..35).map(|i| (i * 7) % 3 == 0).collect();
        let r = BinaryRaster::new(7, 5, bits).unwrap();
        for &(x0, y0, x1, y1) in &[(0u64, 0u64, 21u64, 15u64), (1, 2, 17, 11), (5, 5, 6, 6)] {
            let mut naive = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let (cx, cy) = ((x / 3) as usize, (y / 3) as usize);
                    if cx < 7 && cy < 5 && r.get(cx, cy) {
                        naive += 1;
                    }
                }
            }
            assert_eq!(r.positive_area(3, x0, y0, x1, y1), naive);
        }
    }
}
