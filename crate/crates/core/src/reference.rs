//! Slow, independent reference implementations used to validate the fast
//! paths. Nothing here shares algorithms or constants with the production
//! code: erfc comes from a Taylor series and a continued fraction instead of
//! rational minimax polynomials, and the image routines are direct
//! definition-following loops.

use crate::image::{DiskKernel, MultiChannelImage};
use crate::residual::ResidualParams;

/// erfc via Maclaurin series for |x| < 2 and the classical continued
/// fraction sqrt(pi) e^{x^2} erfc(x) = 1/(x+ (1/2)/(x+ 1/(x+ (3/2)/(x+ ...))))
/// for larger arguments. Good to ~1e-13 relative over |x| <= 8.
pub fn erfc_oracle(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_oracle(-x);
    }
    if x < 2.0 {
        // erf(x) = 2/sqrt(pi) * sum_n (-1)^n x^(2n+1) / (n! (2n+1))
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x2 / n;
            let contrib = term / (2.0 * n + 1.0);
            sum += contrib;
            if contrib.abs() < 1e-18 * sum.abs().max(1e-30) {
                break;
            }
        }
        return 1.0 - sum * 2.0 / std::f64::consts::PI.sqrt();
    }
    // modified Lentz on b0 = x, a_i = i/2, b_i = x
    let tiny = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for i in 1..200 {
        let a = i as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

// Mirror reflection computed from the definition each time (fold the index
// back until it lands in range), deliberately not sharing the production
// lookup-table code.
fn reflect(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n as isize {
            i = 2 * (n as isize - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Residual computed exactly as defined, one patch at a time: enumerate
/// every admissible candidate on the stride grid, sort all of them by
/// (distance, scan order), take n, reconstruct with exponential weights,
/// average the reconstructions per pixel with an explicit counter image,
/// subtract the input. Quadratic in image area.
pub fn compute_residual_naive(img: &MultiChannelImage, p: &ResidualParams) -> MultiChannelImage {
    let (w, h, nc) = (img.width(), img.height(), img.channels());
    let side = p.patch_side;
    let patch_dist = |ax: usize, ay: usize, bx: usize, by: usize| -> f64 {
        let mut d = 0.0;
        for c in 0..nc {
            for py in 0..side {
                for px in 0..side {
                    let t = img.get(ax + px, ay + py, c) - img.get(bx + px, by + py, c);
                    d += t * t;
                }
            }
        }
        d
    };
    let mut sum = MultiChannelImage::new(w, h, nc).unwrap();
    let mut count = vec![0u32; w * h];
    for qy in 0..=h - side {
        for qx in 0..=w - side {
            // all admissible candidates, scan order
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            let mut cy = 0;
            while cy + side <= h {
                let mut cx = 0;
                while cx + side <= w {
                    let dx = cx.abs_diff(qx);
                    let dy = cy.abs_diff(qy);
                    if dx.max(dy) >= side {
                        cands.push((patch_dist(qx, qy, cx, cy), cy, cx));
                    }
                    cx += p.search_stride;
                }
                cy += p.search_stride;
            }
            cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cands.truncate(p.n_neighbors);
            assert!(cands.len() == p.n_neighbors, "fixture too small for oracle");
            let mut weights: Vec<f64> = cands
                .iter()
                .map(|&(d, _, _)| (-d / (p.h * p.h)).exp())
                .collect();
            let z: f64 = weights.iter().sum();
            if z == 0.0 {
                weights.iter_mut().for_each(|v| *v = 1.0 / cands.len() as f64);
            } else {
                weights.iter_mut().for_each(|v| *v /= z);
            }
            for py in 0..side {
                for px in 0..side {
                    count[(qy + py) * w + qx + px] += 1;
                    for c in 0..nc {
                        let mut rec = 0.0;
                        for (&(_, cy, cx), &wt) in cands.iter().zip(&weights) {
                            rec += wt * img.get(cx + px, cy + py, c);
                        }
                        let cur = sum.get(qx + px, qy + py, c);
                        sum.set(qx + px, qy + py, c, cur + rec);
                    }
                }
            }
        }
    }
    let mut out = MultiChannelImage::new(w, h, nc).unwrap();
    for c in 0..nc {
        for y in 0..h {
            for x in 0..w {
                let u_hat = sum.get(x, y, c) / count[y * w + x] as f64;
                out.set(x, y, c, u_hat - img.get(x, y, c));
            }
        }
    }
    out
}

/// Direct per-pixel sliding-window convolution, the definition with no
/// index precomputation or skipping.
pub fn convolve_disk_oracle(img: &MultiChannelImage, k: &DiskKernel) -> MultiChannelImage {
    let (w, h) = (img.width(), img.height());
    let r = k.radius() as isize;
    let mut out = MultiChannelImage::new(w, h, img.channels()).unwrap();
    for c in 0..img.channels() {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let wgt = k.weight((dx + r) as usize, (dy + r) as usize);
                        let sx = reflect(x + dx, w);
                        let sy = reflect(y + dy, h);
                        acc += wgt * img.get(sx, sy, c);
                    }
                }
                out.set(x as usize, y as usize, c, acc);
            }
        }
    }
    out
}
