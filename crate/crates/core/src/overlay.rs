//! PNG overlays: tinted masks, box outlines and 8x8 bitmap labels.

use font8x8::UnicodeFonts;
use image::{Rgb, RgbImage};

use crate::geometry::BBox;
use crate::grounding::GroundingResult;
use crate::mask::Rle;
use crate::track_store::FrameSnapshot;

pub struct Annotation<'a> {
    pub bbox: Option<BBox>,
    pub mask: Option<&'a Rle>,
    pub label: String,
    pub color: [u8; 3],
}

/// Stable, well-separated color for an id.
pub fn color_for(id: u64) -> [u8; 3] {
    let h = id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    [(h >> 56) as u8 | 0x40, (h >> 40) as u8 | 0x40, (h >> 24) as u8 | 0x40]
}

fn blend(p: &mut Rgb<u8>, c: [u8; 3], alpha: f32) {
    for k in 0..3 {
        p.0[k] = (p.0[k] as f32 * (1.0 - alpha) + c[k] as f32 * alpha).round() as u8;
    }
}

fn outline(img: &mut RgbImage, b: &BBox, c: [u8; 3]) {
    let r = b.round_out().clamp_to(img.width(), img.height());
    if !r.is_valid() {
        return;
    }
    let (x0, y0, x1, y1) = (r.x_min as u32, r.y_min as u32, r.x_max as u32 - 1, r.y_max as u32 - 1);
    for x in x0..=x1 {
        img.put_pixel(x, y0, Rgb(c));
        img.put_pixel(x, y1, Rgb(c));
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, Rgb(c));
        img.put_pixel(x1, y, Rgb(c));
    }
}

/// Draws `text` with its top-left corner at (x, y) on a dark backing strip.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, c: [u8; 3]) {
    for (i, ch) in text.chars().enumerate() {
        let glyph = font8x8::BASIC_FONTS.get(ch).or_else(|| font8x8::BASIC_FONTS.get('?'));
        let Some(glyph) = glyph else { continue };
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                let px = x + i as i64 * 8 + col;
                let py = y + row as i64;
                if px < 0 || py < 0 || px >= img.width() as i64 || py >= img.height() as i64 {
                    continue;
                }
                let on = bits & (1 << col) != 0;
                let p = img.get_pixel_mut(px as u32, py as u32);
                if on {
                    *p = Rgb(c);
                } else {
                    blend(p, [0, 0, 0], 0.6);
                }
            }
        }
    }
}

pub fn render(base: &RgbImage, annotations: &[Annotation<'_>]) -> RgbImage {
    let mut img = base.clone();
    for a in annotations {
        if let Some(m) = a.mask.and_then(|m| m.decode().ok()) {
            if m.width() == img.width() && m.height() == img.height() {
                for y in 0..m.height() {
                    for x in 0..m.width() {
                        if m.get(y, x) {
                            blend(img.get_pixel_mut(x, y), a.color, 0.45);
                        }
                    }
                }
            }
        }
    }
    for a in annotations {
        if let Some(b) = &a.bbox {
            outline(&mut img, b, a.color);
            let y = if b.y_min >= 9.0 { b.y_min as i64 - 9 } else { b.y_min as i64 + 1 };
            draw_text(&mut img, b.x_min as i64, y, &a.label, a.color);
        }
    }
    img
}

pub fn render_grounding(base: &RgbImage, grounding: &GroundingResult) -> RgbImage {
    let ann: Vec<Annotation<'_>> = grounding
        .assignments
        .iter()
        .map(|a| Annotation {
            bbox: Some(a.detection.bbox),
            mask: None,
            label: format!("{} {:.2}", a.object_name, a.detection.confidence),
            color: color_for(a.instance as u64),
        })
        .collect();
    render(base, &ann)
}

pub fn render_snapshot(base: &RgbImage, snapshot: &FrameSnapshot) -> RgbImage {
    let ann: Vec<Annotation<'_>> = snapshot
        .tracks
        .iter()
        .map(|t| Annotation {
            bbox: t.bbox,
            mask: Some(&t.mask_rle),
            label: format!("#{} {}", t.id, t.object_name.as_deref().unwrap_or("?")),
            color: color_for(t.id),
        })
        .collect();
    render(base, &ann)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_outline_and_label() {
        let base = RgbImage::from_pixel(64, 48, Rgb([0, 0, 0]));
        let b = BBox::new(10.0, 20.0, 40.0, 40.0);
        let img = render(
            &base,
            &[Annotation {
                bbox: Some(b),
                mask: None,
                label: "cup".into(),
                color: [255, 255, 0],
            }],
        );
        assert_eq!(img.get_pixel(10, 20).0, [255, 255, 0]);
        assert_eq!(img.get_pixel(39, 39).0, [255, 255, 0]);
        assert_eq!(img.get_pixel(25, 30).0, [0, 0, 0]);
        // Some glyph pixels above the box.
        let lit = (11..19).flat_map(|y| (10..34).map(move |x| (x, y))).filter(|&(x, y)| img.get_pixel(x, y).0 == [255, 255, 0]).count();
        assert!(lit > 10);
        assert_ne!(color_for(1), color_for(2));
    }
}
