//! Binary masks and their COCO-style uncompressed run-length encoding.
//!
//! Runs are taken in column-major order (pixel `(row, col)` sits at
//! index `row + height * col`) and the first count is always the number of
//! leading zeros, which may be 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("run lengths sum to {actual}, expected {expected} ({height}x{width})")]
    SizeMismatch {
        expected: u64,
        actual: u64,
        height: u32,
        width: u32,
    },
}

/// Dense binary mask stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    cells: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            cells: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> bool {
        self.cells[(row * self.width + col) as usize]
    }

    #[inline]
    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        self.cells[(row * self.width + col) as usize] = value;
    }

    pub fn count(&self) -> u64 {
        self.cells.iter().filter(|c| **c).count() as u64
    }

    /// Sets every cell with `row0 <= row <= row1`, `col0 <= col <= col1`,
    /// clipped to the mask.
    pub fn fill_inclusive(&mut self, col0: i64, row0: i64, col1: i64, row1: i64) {
        let c0 = col0.max(0);
        let r0 = row0.max(0);
        let c1 = col1.min(self.width as i64 - 1);
        let r1 = row1.min(self.height as i64 - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                self.set(r as u32, c as u32, true);
            }
        }
    }

    pub fn encode(&self) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for col in 0..self.width {
            for row in 0..self.height {
                let v = self.get(row, col);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Rle {
            height: self.height,
            width: self.width,
            counts,
        }
    }
}

/// Uncompressed run-length encoding; serializes as `{"size": [h, w], "counts": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RleWire", into = "RleWire")]
pub struct Rle {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct RleWire {
    size: [u32; 2],
    counts: Vec<u32>,
}

impl TryFrom<RleWire> for Rle {
    type Error = MaskError;

    fn try_from(w: RleWire) -> Result<Self, Self::Error> {
        let rle = Rle {
            height: w.size[0],
            width: w.size[1],
            counts: w.counts,
        };
        rle.validate()?;
        Ok(rle)
    }
}

impl From<Rle> for RleWire {
    fn from(r: Rle) -> Self {
        RleWire {
            size: [r.height, r.width],
            counts: r.counts,
        }
    }
}

impl Rle {
    pub fn empty(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            counts: vec![height * width],
        }
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        let expected = self.height as u64 * self.width as u64;
        let actual: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if expected != actual {
            return Err(MaskError::SizeMismatch {
                expected,
                actual,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<BinaryMask, MaskError> {
        self.validate()?;
        let mut mask = BinaryMask::new(self.width, self.height);
        let h = self.height as u64;
        let mut idx = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            if i % 2 == 1 {
                for k in idx..idx + c as u64 {
                    mask.set((k % h) as u32, (k / h) as u32, true);
                }
            }
            idx += c as u64;
        }
        Ok(mask)
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }
}

/// Tight bounds of all set cells, half-open: a single cell at
/// `(row 5, col 7)` yields `(7, 5, 8, 6)`.
pub fn mask_to_bbox(rle: &Rle) -> Result<BBox, MaskError> {
    rle.validate()?;
    let h = rle.height as u64;
    let (mut c_min, mut c_max) = (u64::MAX, 0u64);
    let (mut r_min, mut r_max) = (u64::MAX, 0u64);
    let mut idx = 0u64;
    for (i, &c) in rle.counts.iter().enumerate() {
        let c = c as u64;
        if i % 2 == 1 && c > 0 {
            let (start, end) = (idx, idx + c - 1);
            let (col_s, col_e) = (start / h, end / h);
            c_min = c_min.min(col_s);
            c_max = c_max.max(col_e);
            if col_s == col_e {
                r_min = r_min.min(start % h);
                r_max = r_max.max(end % h);
            } else {
                // a run wrapping a column boundary touches the first and last row
                r_min = 0;
                r_max = h - 1;
            }
        }
        idx += c;
    }
    if c_min == u64::MAX {
        return Err(MaskError::EmptyMask);
    }
    Ok(BBox::new(
        c_min as f64,
        r_min as f64,
        (c_max + 1) as f64,
        (r_max + 1) as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_bbox(mask: &BinaryMask) -> Option<BBox> {
        let mut found: Option<(u32, u32, u32, u32)> = None;
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                if mask.get(r, c) {
                    found = Some(match found {
                        None => (c, r, c, r),
                        Some((a, b, x, y)) => (a.min(c), b.min(r), x.max(c), y.max(r)),
                    });
                }
            }
        }
        found.map(|(a, b, x, y)| BBox::new(a as f64, b as f64, (x + 1) as f64, (y + 1) as f64))
    }

    #[test]
    fn unit_cell() {
        let mut m = BinaryMask::new(12, 10);
        m.set(5, 7, true);
        assert_eq!(mask_to_bbox(&m.encode()).unwrap(), BBox::new(7.0, 5.0, 8.0, 6.0));
    }

    #[test]
    fn full_frame() {
        let mut m = BinaryMask::new(10, 10);
        m.fill_inclusive(0, 0, 9, 9);
        let rle = m.encode();
        assert_eq!(rle.counts, vec![0, 100]);
        assert_eq!(mask_to_bbox(&rle).unwrap(), BBox::new(0.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn l_shape() {
        let mut m = BinaryMask::new(10, 10);
        for r in 2..=4 {
            m.set(r, 3, true);
        }
        for c in 3..=6 {
            m.set(4, c, true);
        }
        let expected = brute_bbox(&m).unwrap();
        assert_eq!(expected, BBox::new(3.0, 2.0, 7.0, 5.0));
        assert_eq!(mask_to_bbox(&m.encode()).unwrap(), expected);
    }

    #[test]
    fn empty_mask_is_signaled() {
        let rle = Rle::empty(4, 5);
        assert_eq!(mask_to_bbox(&rle), Err(MaskError::EmptyMask));
        assert!(rle.is_empty());
    }

    #[test]
    fn inclusive_fill_area() {
        let mut m = BinaryMask::new(40, 40);
        m.fill_inclusive(10, 10, 20, 20);
        assert_eq!(m.encode().area(), 121);
    }

    #[test]
    fn size_mismatch_rejected() {
        let bad: Result<Rle, _> = serde_json::from_str(r#"{"size":[2,2],"counts":[1,1]}"#);
        assert!(bad.is_err());
        let ok: Rle = serde_json::from_str(r#"{"size":[2,2],"counts":[1,2,1]}"#).unwrap();
        assert_eq!(ok.area(), 2);
    }

    proptest! {
        #[test]
        fn encode_decode_and_bbox_agree(
            w in 1u32..12, h in 1u32..12,
            bits in proptest::collection::vec(any::<bool>(), 144)
        ) {
            let mut m = BinaryMask::new(w, h);
            for r in 0..h { for c in 0..w { m.set(r, c, bits[(r * 12 + c) as usize]); } }
            let rle = m.encode();
            prop_assert_eq!(rle.decode().unwrap(), m.clone());
            prop_assert_eq!(rle.area(), m.count());
            match brute_bbox(&m) {
                Some(b) => prop_assert_eq!(mask_to_bbox(&rle).unwrap(), b),
                None => prop_assert_eq!(mask_to_bbox(&rle), Err(MaskError::EmptyMask)),
            }
        }
    }
}
