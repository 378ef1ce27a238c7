//! Overlay rendering.

use matseg_core::{LabelMap, Micrograph, PromptOrigin, PromptPoint};

const ALPHA: f32 = 0.5;

/// Fixed colour for a label: a 256-entry palette indexed by a hash of the
/// label, so the same label always gets the same colour.
pub fn palette(label: u32) -> [u8; 3] {
    let mut h = label.wrapping_mul(0x9E37_79B9);
    h ^= h >> 15;
    h = h.wrapping_mul(0x85EB_CA6B);
    h ^= h >> 13;
    let i = (h & 0xFF) as u8;
    // spread the hue around the wheel, keep colours saturated and bright
    let hue = i as f32 / 256.0 * 6.0;
    let sector = hue as u32;
    let f = hue - sector as f32;
    let (hi, lo) = (255.0f32, 60.0f32);
    let up = lo + (hi - lo) * f;
    let down = hi - (hi - lo) * f;
    let [r, g, b] = match sector {
        0 => [hi, up, lo],
        1 => [down, hi, lo],
        2 => [lo, hi, up],
        3 => [lo, down, hi],
        4 => [up, lo, hi],
        _ => [hi, lo, down],
    };
    [r as u8, g as u8, b as u8]
}

fn source_rgb(img: &Micrograph) -> Vec<u8> {
    if img.channels() == 3 {
        img.pixels().to_vec()
    } else {
        img.pixels().iter().flat_map(|&p| [p, p, p]).collect()
    }
}

/// Labels alpha-blended over the source; label 0 is left untouched.
pub fn label_overlay(img: &Micrograph, labels: &LabelMap) -> Vec<u8> {
    let mut rgb = source_rgb(img);
    for (i, &l) in labels.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let c = palette(l);
        for k in 0..3 {
            let px = &mut rgb[3 * i + k];
            *px = (*px as f32 * (1.0 - ALPHA) + c[k] as f32 * ALPHA + 0.5) as u8;
        }
    }
    rgb
}

pub fn origin_color(origin: PromptOrigin) -> [u8; 3] {
    match origin {
        PromptOrigin::Centroid => [230, 40, 40],
        PromptOrigin::Grid => [40, 200, 60],
        PromptOrigin::Edge => [40, 110, 240],
    }
}

/// Prompt points drawn as 3x3 squares in their origin colour.
pub fn prompt_overlay(img: &Micrograph, points: &[PromptPoint]) -> Vec<u8> {
    let mut rgb = source_rgb(img);
    let (w, h) = (img.width() as i64, img.height() as i64);
    for p in points {
        let c = origin_color(p.origin);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (x, y) = (p.x as i64 + dx, p.y as i64 + dy);
                if x >= 0 && y >= 0 && x < w && y < h {
                    let i = 3 * (y * w + x) as usize;
                    rgb[i..i + 3].copy_from_slice(&c);
                }
            }
        }
    }
    rgb
}
