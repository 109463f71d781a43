//! Synthetic fixtures with recorded ground truth: a periodic texture with
//! one contrasting block, a textured background with a saturated dot, and
//! plain Gaussian noise.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::args::SynthKind;
use crate::Failure;

const TILE: usize = 16;
const BLOCK: usize = 8;
const DOT_RADIUS: usize = 3;
/// Keeps anomalies clear of every scale's excluded border band.
const PLACEMENT_MARGIN: usize = 24;
/// Ground-truth boxes extend this far beyond the anomaly's pixels: records
/// from coarse pyramid levels snap to 2^scale cells (up to 7 pixels at the
/// default four scales), and the pyramid blur plus disk kernels can push a
/// component's minimum into the adjacent coarse cell (8 more), so detections
/// caused by the anomaly can land up to one coarse cell outside its extent.
const BOX_PAD: usize = 16;

/// Standard deviation of the additive sensor-style noise, in gray levels.
const NOISE_SIGMA: f64 = 2.0;

fn box_json(x: usize, y: usize, w: usize, h: usize) -> Value {
    json!({"h": h as u64, "w": w as u64, "x": x as u64, "y": y as u64})
}

fn padded_box(x: usize, y: usize, w: usize, h: usize, size: usize) -> Value {
    let x0 = x.saturating_sub(BOX_PAD);
    let y0 = y.saturating_sub(BOX_PAD);
    let x1 = (x + w + BOX_PAD).min(size);
    let y1 = (y + h + BOX_PAD).min(size);
    box_json(x0, y0, x1 - x0, y1 - y0)
}

/// The tile-periodic base texture of `periodic_block`.
fn texture(x: usize, y: usize, c: usize) -> f64 {
    let fx = (x % TILE) as f64 / TILE as f64;
    let fy = (y % TILE) as f64 / TILE as f64;
    let (amp, phase) = [(55.0, 0.0), (45.0, 1.3), (50.0, 2.6)][c];
    128.0 + amp * (std::f64::consts::TAU * fx + phase).sin()
        * (std::f64::consts::TAU * fy).cos()
}

/// The milder texture behind `color_dot`.
fn dot_background(x: usize, y: usize, c: usize) -> f64 {
    let fx = (x % TILE) as f64 / TILE as f64;
    let fy = (y % TILE) as f64 / TILE as f64;
    let base = [110.0, 140.0, 120.0][c];
    base + 20.0 * (std::f64::consts::TAU * fx).sin() * (std::f64::consts::TAU * fy).cos()
}

fn finish(mut planes: Vec<f64>, size: usize, rng: &mut ChaCha8Rng, sigma: f64) -> RgbImage {
    let mut img = RgbImage::new(size as u32, size as u32);
    for v in &mut planes {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    for y in 0..size {
        for x in 0..size {
            let i = 3 * (y * size + x);
            let px = [
                planes[i].round().clamp(0.0, 255.0) as u8,
                planes[i + 1].round().clamp(0.0, 255.0) as u8,
                planes[i + 2].round().clamp(0.0, 255.0) as u8,
            ];
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

/// Builds the fixture image and its ground-truth document.
pub fn generate(kind: SynthKind, seed: u64, size: usize) -> Result<(RgbImage, Value), Failure> {
    let min_size = match kind {
        SynthKind::Noise => 32,
        _ => 2 * PLACEMENT_MARGIN + 2 * BLOCK,
    };
    if size < min_size {
        return Err(Failure::flags(format!(
            "size {size} too small for kind {}, need at least {min_size}",
            kind.as_str()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planes = vec![0.0f64; size * size * 3];
    let at = |x: usize, y: usize| 3 * (y * size + x);

    let (anomaly, noise_sigma) = match kind {
        SynthKind::PeriodicBlock => {
            let bx = rng.random_range(PLACEMENT_MARGIN..=size - PLACEMENT_MARGIN - BLOCK);
            let by = rng.random_range(PLACEMENT_MARGIN..=size - PLACEMENT_MARGIN - BLOCK);
            for y in 0..size {
                for x in 0..size {
                    let i = at(x, y);
                    let in_block =
                        x >= bx && x < bx + BLOCK && y >= by && y < by + BLOCK;
                    for c in 0..3 {
                        let v = texture(x, y, c);
                        planes[i + c] = if in_block { 255.0 - v } else { v };
                    }
                }
            }
            (Some((bx, by, BLOCK, BLOCK)), NOISE_SIGMA)
        }
        SynthKind::ColorDot => {
            let span = DOT_RADIUS + 1;
            let cx = rng.random_range(PLACEMENT_MARGIN..=size - PLACEMENT_MARGIN - span);
            let cy = rng.random_range(PLACEMENT_MARGIN..=size - PLACEMENT_MARGIN - span);
            for y in 0..size {
                for x in 0..size {
                    let i = at(x, y);
                    let dx = x as f64 - cx as f64;
                    let dy = y as f64 - cy as f64;
                    let on_dot = dx * dx + dy * dy <= (DOT_RADIUS as f64).powi(2);
                    for c in 0..3 {
                        planes[i + c] = if on_dot {
                            [220.0, 40.0, 40.0][c]
                        } else {
                            dot_background(x, y, c)
                        };
                    }
                }
            }
            let extent = 2 * DOT_RADIUS + 1;
            (
                Some((cx - DOT_RADIUS, cy - DOT_RADIUS, extent, extent)),
                NOISE_SIGMA,
            )
        }
        SynthKind::Noise => {
            for v in &mut planes {
                *v = 128.0;
            }
            (None, 20.0)
        }
    };

    let img = finish(planes, size, &mut rng, noise_sigma);
    let (anomaly_json, box_value) = match anomaly {
        Some((x, y, w, h)) => (box_json(x, y, w, h), padded_box(x, y, w, h, size)),
        None => (Value::Null, Value::Null),
    };
    let truth = json!({
        "anomaly": anomaly_json,
        "box": box_value,
        "kind": kind.as_str(),
        "schema": 1,
        "seed": seed,
        "size": size as u64,
    });
    Ok((img, truth))
}
