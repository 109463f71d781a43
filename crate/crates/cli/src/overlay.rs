//! Detection overlay: one circle per record on top of the input image,
//! radius growing with the detected scale, color showing the band, the
//! single most significant record in red.

use image::{Rgb, RgbImage};
use oddspot_core::detect::{Band, DetectionRecord};

pub const WEAK: [u8; 3] = [255, 255, 255];
pub const MILD: [u8; 3] = [0, 255, 255];
pub const STRONG: [u8; 3] = [0, 255, 0];
pub const VERY_STRONG: [u8; 3] = [255, 165, 0];
pub const GLOBAL_MIN: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: i64,
    pub cy: i64,
    pub radius: i64,
    pub color: [u8; 3],
}

fn band_color(band: Band) -> [u8; 3] {
    match band {
        Band::Weak => WEAK,
        Band::Mild => MILD,
        Band::Strong => STRONG,
        Band::VeryStrong => VERY_STRONG,
    }
}

/// One circle per record, centered on the record's level-0 cell, radius
/// 4 * 2^scale. The record with the lowest NFA is drawn red; ties go to
/// the first record in list order.
pub fn plan_circles(records: &[DetectionRecord]) -> Vec<Circle> {
    let reddest = records
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.log10_nfa
                .partial_cmp(&b.log10_nfa)
                .unwrap()
                .then(ia.cmp(ib))
        })
        .map(|(i, _)| i);
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let half_cell = (1i64 << r.scale) / 2;
            Circle {
                cx: r.x as i64 + half_cell,
                cy: r.y as i64 + half_cell,
                radius: 4 << r.scale,
                color: if Some(i) == reddest {
                    GLOBAL_MIN
                } else {
                    band_color(r.band)
                },
            }
        })
        .collect()
}

/// Rasterizes circles onto the image as rings roughly one pixel thick.
pub fn draw_circles(img: &mut RgbImage, circles: &[Circle]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for c in circles {
        for y in (c.cy - c.radius - 1).max(0)..=(c.cy + c.radius + 1).min(h - 1) {
            for x in (c.cx - c.radius - 1).max(0)..=(c.cx + c.radius + 1).min(w - 1) {
                let dx = (x - c.cx) as f64;
                let dy = (y - c.cy) as f64;
                if ((dx * dx + dy * dy).sqrt() - c.radius as f64).abs() <= 0.6 {
                    img.put_pixel(x as u32, y as u32, Rgb(c.color));
                }
            }
        }
    }
}
