//! Palette-based "vision" shared by the mock services: objects are solid
//! rectangles (or blobs) of exact palette colors.

use std::collections::{HashMap, VecDeque};

use image::RgbImage;

use super::fixtures::Palette;
use crate::geometry::BBox;
use crate::mask::{BinaryMask, Rle};

/// A 4-connected region of one palette color.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub entry: usize,
    pub bbox: BBox,
    pub pixels: Vec<(u32, u32)>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn to_rle(&self, width: u32, height: u32) -> Rle {
        let mut m = BinaryMask::new(width, height);
        for &(x, y) in &self.pixels {
            m.set(y, x, true);
        }
        m.encode()
    }
}

/// All palette-colored components, ordered by (top, left).
pub fn components(img: &RgbImage, palette: &Palette) -> Vec<Component> {
    let lookup: HashMap<[u8; 3], usize> = palette.entries.iter().enumerate().map(|(i, e)| (e.color, i)).collect();
    let (w, h) = img.dimensions();
    let mut seen = vec![false; (w * h) as usize];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            if seen[idx] {
                continue;
            }
            seen[idx] = true;
            let color = img.get_pixel(x, y).0;
            let Some(&entry) = lookup.get(&color) else {
                continue;
            };
            let mut pixels = Vec::new();
            let mut queue = VecDeque::from([(x, y)]);
            let (mut x0, mut y0, mut x1, mut y1) = (x, y, x, y);
            while let Some((cx, cy)) = queue.pop_front() {
                pixels.push((cx, cy));
                x0 = x0.min(cx);
                y0 = y0.min(cy);
                x1 = x1.max(cx);
                y1 = y1.max(cy);
                let mut push = |nx: u32, ny: u32| {
                    let ni = (ny * w + nx) as usize;
                    if !seen[ni] && img.get_pixel(nx, ny).0 == color {
                        seen[ni] = true;
                        queue.push_back((nx, ny));
                    }
                };
                if cx > 0 {
                    push(cx - 1, cy);
                }
                if cx + 1 < w {
                    push(cx + 1, cy);
                }
                if cy > 0 {
                    push(cx, cy - 1);
                }
                if cy + 1 < h {
                    push(cx, cy + 1);
                }
            }
            out.push(Component {
                entry,
                bbox: BBox::new(x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0),
                pixels,
            });
        }
    }
    // Row-major scan already yields (top, left) order.
    out
}

/// Most frequent palette entry among pixels of `region` (pixel-aligned,
/// clamped). Ties go to the lower palette index.
pub fn dominant_entry(img: &RgbImage, palette: &Palette, region: &BBox) -> Option<usize> {
    let r = region.round_out().clamp_to(img.width(), img.height());
    if !r.is_valid() {
        return None;
    }
    let lookup: HashMap<[u8; 3], usize> = palette.entries.iter().enumerate().map(|(i, e)| (e.color, i)).collect();
    let mut counts = vec![0usize; palette.entries.len()];
    for y in r.y_min as u32..r.y_max as u32 {
        for x in r.x_min as u32..r.x_max as u32 {
            if let Some(&i) = lookup.get(&img.get_pixel(x, y).0) {
                counts[i] += 1;
            }
        }
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return None;
    }
    counts.iter().position(|&c| c == best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::fixtures::PaletteEntry;
    use image::Rgb;

    fn palette() -> Palette {
        Palette {
            entries: vec![
                PaletteEntry::new([255, 0, 0], "apple", "red round apple"),
                PaletteEntry::new([0, 0, 255], "cup", "blue ceramic cup"),
            ],
        }
    }

    #[test]
    fn finds_rectangles_in_scan_order() {
        let mut img = RgbImage::from_pixel(20, 10, Rgb([30, 30, 30]));
        for y in 5..8 {
            for x in 2..6 {
                img.put_pixel(x, y, Rgb([255, 0, 0]));
            }
        }
        for y in 1..4 {
            for x in 10..12 {
                img.put_pixel(x, y, Rgb([0, 0, 255]));
            }
        }
        let c = components(&img, &palette());
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].entry, 1);
        assert_eq!(c[0].bbox, BBox::new(10.0, 1.0, 12.0, 4.0));
        assert_eq!(c[1].bbox, BBox::new(2.0, 5.0, 6.0, 8.0));
        assert_eq!(c[1].area(), 12);
        let rle = c[1].to_rle(20, 10);
        assert_eq!(crate::mask::mask_to_bbox(&rle).unwrap(), c[1].bbox);
        assert_eq!(dominant_entry(&img, &palette(), &BBox::new(0.0, 0.0, 8.0, 10.0)), Some(0));
        assert_eq!(dominant_entry(&img, &palette(), &BBox::new(14.0, 0.0, 20.0, 10.0)), None);
    }
}
