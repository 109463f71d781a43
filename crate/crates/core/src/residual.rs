//! Self-similarity residual: every patch is matched against the most
//! similar patches elsewhere in the image (outside an exclusion zone so an
//! anomaly cannot explain itself), reconstructed as a weighted average of
//! its matches, and the per-pixel average of all covering reconstructions
//! is subtracted from the input.

use crate::image::MultiChannelImage;
use crate::Error;

/// Patch geometry, indexed by its top-left corner. Patches always span all
/// channels of the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub top_left: (usize, usize),
    pub side: usize,
    pub channels: usize,
}

impl PatchSpec {
    pub fn new(x: usize, y: usize, side: usize, channels: usize) -> Self {
        Self {
            top_left: (x, y),
            side,
            channels,
        }
    }

    fn validate(&self, img: &MultiChannelImage) -> Result<(), Error> {
        let (x, y) = self.top_left;
        if self.side == 0
            || x + self.side > img.width()
            || y + self.side > img.height()
            || self.channels != img.channels()
        {
            return Err(Error::InvalidParameter(format!(
                "patch {}x{} at ({x},{y}) with {} channels does not fit a {}x{}x{} image",
                self.side,
                self.side,
                self.channels,
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        Ok(())
    }
}

/// One scored neighbor: candidate top-left position and squared L2 patch
/// distance summed over all channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMatch {
    pub position: (usize, usize),
    pub distance: f64,
}

/// Parameters of the residual stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualParams {
    pub patch_side: usize,
    pub n_neighbors: usize,
    /// Similarity bandwidth: match weights are exp(-distance / h^2).
    pub h: f64,
    /// Step of the candidate grid. Queries are always dense; a stride > 1
    /// thins only the candidate positions (a documented approximation for
    /// large images).
    pub search_stride: usize,
}

impl ResidualParams {
    pub fn validate(&self) -> Result<(), Error> {
        if self.patch_side < 2 {
            return Err(Error::InvalidParameter(format!(
                "patch_side must be >= 2, got {}",
                self.patch_side
            )));
        }
        if self.n_neighbors < 1 {
            return Err(Error::InvalidParameter("n_neighbors must be >= 1".into()));
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "h must be > 0, got {}",
                self.h
            )));
        }
        if self.search_stride < 1 {
            return Err(Error::InvalidParameter("search_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// A candidate patch is admissible for a query iff the two patches do not
/// intersect, i.e. the top-left corners are at Chebyshev distance >= side.
#[inline]
pub fn is_admissible(query: (usize, usize), candidate: (usize, usize), side: usize) -> bool {
    let dx = candidate.0.abs_diff(query.0);
    let dy = candidate.1.abs_diff(query.1);
    dx.max(dy) >= side
}

// ---------------------------------------------------------------------------
// top-n selection
//
// Every query keeps its n best candidates in a fixed-size max-heap keyed by
// (distance, candidate scan index). Candidates arrive in scan order (row
// major, smallest y then x), so rejecting d >= current-root ties realizes
// the "ties broken by scan order" contract: an equal-distance late arrival
// never displaces an earlier one.

#[inline]
fn heap_entry_gt(d1: f64, p1: u32, d2: f64, p2: u32) -> bool {
    d1 > d2 || (d1 == d2 && p1 > p2)
}

/// Replaces the root of an n-slot max-heap with (d, p) and restores the
/// heap order. Caller has already checked d < root distance.
#[inline]
fn heap_replace_root(dist: &mut [f64], pos: &mut [u32], d: f64, p: u32) {
    let n = dist.len();
    let mut i = 0;
    loop {
        let l = 2 * i + 1;
        if l >= n {
            break;
        }
        let r = l + 1;
        let child = if r < n && heap_entry_gt(dist[r], pos[r], dist[l], pos[l]) {
            r
        } else {
            l
        };
        if heap_entry_gt(dist[child], pos[child], d, p) {
            dist[i] = dist[child];
            pos[i] = pos[child];
            i = child;
        } else {
            break;
        }
    }
    dist[i] = d;
    pos[i] = p;
}

/// Best matches for every dense query position: per-query blocks of n
/// (distance, flat candidate index) pairs, sorted by (distance, index).
struct Selection {
    n: usize,
    qw: usize,
    qh: usize,
    dist: Vec<f64>,
    pos: Vec<u32>,
}

impl Selection {
    /// Sorts each block and verifies every query found n candidates.
    fn finalize(&mut self, side: usize) -> Result<(), Error> {
        let mut order: Vec<usize> = Vec::with_capacity(self.n);
        let mut dtmp = vec![0.0; self.n];
        let mut ptmp = vec![0u32; self.n];
        for q in 0..self.qw * self.qh {
            let block = q * self.n;
            let dslice = &mut self.dist[block..block + self.n];
            let pslice = &mut self.pos[block..block + self.n];
            let short = dslice.iter().filter(|d| !d.is_finite()).count();
            if short > 0 {
                let (qx, qy) = (q % self.qw, q / self.qw);
                return Err(Error::NotEnoughCandidates(format!(
                    "query at ({qx},{qy}) with side {side}: found {} admissible candidates, need {}",
                    self.n - short,
                    self.n
                )));
            }
            order.clear();
            order.extend(0..self.n);
            order.sort_by(|&a, &b| {
                dslice[a]
                    .partial_cmp(&dslice[b])
                    .expect("finite distances")
                    .then(pslice[a].cmp(&pslice[b]))
            });
            for (k, &src) in order.iter().enumerate() {
                // negative values are sliding-window rounding dust
                dtmp[k] = dslice[src].max(0.0);
                ptmp[k] = pslice[src];
            }
            dslice.copy_from_slice(&dtmp);
            pslice.copy_from_slice(&ptmp);
        }
        Ok(())
    }
}

/// Exhaustive selection via per-offset sliding box sums (candidate stride 1
/// only). For each relative displacement the per-pixel squared differences
/// are box-summed over the patch window, giving every query's distance to
/// the candidate at that displacement in O(1) per query.
fn select_by_offsets(
    img: &MultiChannelImage,
    side: usize,
    n: usize,
) -> Result<Selection, Error> {
    let (w, h, nc) = (img.width(), img.height(), img.channels());
    let (qw, qh) = (w - side + 1, h - side + 1);
    let nq = qw * qh;
    let mut sel = Selection {
        n,
        qw,
        qh,
        dist: vec![f64::INFINITY; nq * n],
        pos: vec![u32::MAX; nq * n],
    };
    let planes: Vec<&[f64]> = (0..nc).map(|c| img.channel(c)).collect();
    let mut drow = vec![0.0; w];
    let mut sring = vec![0.0; side * qw];
    let mut colacc = vec![0.0; qw];
    let side_i = side as isize;

    for dy in -(qh as isize - 1)..=(qh as isize - 1) {
        for dx in -(qw as isize - 1)..=(qw as isize - 1) {
            if dx.abs().max(dy.abs()) < side_i {
                continue;
            }
            let qx0 = (-dx).max(0) as usize;
            let qx1 = ((qw as isize - 1).min(qw as isize - 1 - dx)) as usize;
            let qy0 = (-dy).max(0) as usize;
            let qy1 = ((qh as isize - 1).min(qh as isize - 1 - dy)) as usize;
            let ncols = qx1 - qx0 + 1;
            let rowlen = ncols + side - 1;
            colacc[..ncols].fill(0.0);

            for py in qy0..=qy1 + side - 1 {
                // squared channel-summed differences along pixel row py
                let a0 = py * w + qx0;
                let b0 = ((py as isize + dy) as usize) * w + (qx0 as isize + dx) as usize;
                {
                    let d = &mut drow[..rowlen];
                    let pa = &planes[0][a0..a0 + rowlen];
                    let pb = &planes[0][b0..b0 + rowlen];
                    for i in 0..rowlen {
                        let t = pa[i] - pb[i];
                        d[i] = t * t;
                    }
                    for plane_pair in planes.iter().skip(1) {
                        let pa = &plane_pair[a0..a0 + rowlen];
                        let pb = &plane_pair[b0..b0 + rowlen];
                        for i in 0..rowlen {
                            let t = pa[i] - pb[i];
                            d[i] += t * t;
                        }
                    }
                }
                // horizontal box sums of width `side`, written into the ring
                // slot for this row; the column accumulator tracks the
                // vertical window of the last `side` rows
                let slot = ((py - qy0) % side) * qw;
                let srow = &mut sring[slot..slot + ncols];
                if py - qy0 >= side {
                    for (acc, old) in colacc[..ncols].iter_mut().zip(srow.iter()) {
                        *acc -= *old;
                    }
                }
                let mut s = 0.0;
                for &v in &drow[..side] {
                    s += v;
                }
                srow[0] = s;
                for i in 1..ncols {
                    s += drow[i + side - 1] - drow[i - 1];
                    srow[i] = s;
                }
                for (acc, new) in colacc[..ncols].iter_mut().zip(srow.iter()) {
                    *acc += *new;
                }

                if py >= qy0 + side - 1 {
                    let qy = py - (side - 1);
                    let qbase = (qy * qw + qx0) * n;
                    let cy = (qy as isize + dy) as usize;
                    let cx0 = (qx0 as isize + dx) as usize;
                    let prow = (cy * w + cx0) as u32;
                    for i in 0..ncols {
                        let d = colacc[i];
                        let block = qbase + i * n;
                        if d < sel.dist[block] {
                            heap_replace_root(
                                &mut sel.dist[block..block + n],
                                &mut sel.pos[block..block + n],
                                d,
                                prow + i as u32,
                            );
                        }
                    }
                }
            }
        }
    }
    sel.finalize(side)?;
    Ok(sel)
}

/// Direct scan of the stride grid for one query, with per-row early abort
/// against the current n-th best distance. Used by `nearest_neighbors` and
/// by the stride > 1 path of `compute_residual`.
fn scan_query(
    planes: &[&[f64]],
    w: usize,
    h: usize,
    side: usize,
    stride: usize,
    (qx, qy): (usize, usize),
    dist: &mut [f64],
    pos: &mut [u32],
) {
    let mut cy = 0;
    while cy + side <= h {
        let dyabs = cy.abs_diff(qy);
        let mut cx = 0;
        while cx + side <= w {
            if dyabs.max(cx.abs_diff(qx)) >= side {
                let bound = dist[0];
                let mut acc = 0.0;
                'dist: for plane in planes {
                    for py in 0..side {
                        let a = &plane[(qy + py) * w + qx..][..side];
                        let b = &plane[(cy + py) * w + cx..][..side];
                        for i in 0..side {
                            let t = a[i] - b[i];
                            acc += t * t;
                        }
                        if acc >= bound {
                            acc = f64::INFINITY;
                            break 'dist;
                        }
                    }
                }
                if acc < bound {
                    heap_replace_root(dist, pos, acc, (cy * w + cx) as u32);
                }
            }
            cx += stride;
        }
        cy += stride;
    }
}

/// Selection over all dense queries using the direct scan (any stride).
fn select_by_scan(
    img: &MultiChannelImage,
    side: usize,
    n: usize,
    stride: usize,
) -> Result<Selection, Error> {
    let (w, h) = (img.width(), img.height());
    let (qw, qh) = (w - side + 1, h - side + 1);
    let nq = qw * qh;
    let mut sel = Selection {
        n,
        qw,
        qh,
        dist: vec![f64::INFINITY; nq * n],
        pos: vec![u32::MAX; nq * n],
    };
    let planes: Vec<&[f64]> = (0..img.channels()).map(|c| img.channel(c)).collect();
    for qy in 0..qh {
        for qx in 0..qw {
            let block = (qy * qw + qx) * n;
            scan_query(
                &planes,
                w,
                h,
                side,
                stride,
                (qx, qy),
                &mut sel.dist[block..block + n],
                &mut sel.pos[block..block + n],
            );
        }
    }
    sel.finalize(side)?;
    Ok(sel)
}

fn check_patch_stage_input(
    img: &MultiChannelImage,
    params: &ResidualParams,
) -> Result<(), Error> {
    params.validate()?;
    if img.width() < params.patch_side || img.height() < params.patch_side {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} image cannot host side-{} patches",
            img.width(),
            img.height(),
            params.patch_side
        )));
    }
    if img.width() * img.height() > u32::MAX as usize {
        return Err(Error::InvalidParameter(
            "image has more than 2^32 pixels".into(),
        ));
    }
    Ok(())
}

/// The n admissible candidates most similar to the query patch, smallest
/// squared L2 distance first, ties broken by scan order. Candidates are
/// enumerated on the `search_stride` grid over the whole image.
pub fn nearest_neighbors(
    img: &MultiChannelImage,
    query: &PatchSpec,
    params: &ResidualParams,
) -> Result<Vec<PatchMatch>, Error> {
    check_patch_stage_input(img, params)?;
    query.validate(img)?;
    if query.side != params.patch_side {
        return Err(Error::InvalidParameter(format!(
            "query side {} does not match params.patch_side {}",
            query.side, params.patch_side
        )));
    }
    let n = params.n_neighbors;
    let mut dist = vec![f64::INFINITY; n];
    let mut pos = vec![u32::MAX; n];
    let planes: Vec<&[f64]> = (0..img.channels()).map(|c| img.channel(c)).collect();
    scan_query(
        &planes,
        img.width(),
        img.height(),
        query.side,
        params.search_stride,
        query.top_left,
        &mut dist,
        &mut pos,
    );
    let found = dist.iter().filter(|d| d.is_finite()).count();
    if found < n {
        return Err(Error::NotEnoughCandidates(format!(
            "query at ({},{}) with side {}: found {found} admissible candidates on the stride-{} grid, need {n}",
            query.top_left.0, query.top_left.1, query.side, params.search_stride
        )));
    }
    let w = img.width();
    let mut matches: Vec<PatchMatch> = dist
        .iter()
        .zip(&pos)
        .map(|(&d, &p)| PatchMatch {
            position: (p as usize % w, p as usize / w),
            distance: d,
        })
        .collect();
    matches.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .expect("finite")
            .then((a.position.1, a.position.0).cmp(&(b.position.1, b.position.0)))
    });
    Ok(matches)
}

/// Weights exp(-d_i / h^2) for a match list, normalized to sum to 1. Falls
/// back to uniform weights when every exponential underflows to zero.
fn match_weights(matches: &[PatchMatch], h: f64) -> Vec<f64> {
    let h2 = h * h;
    let mut weights: Vec<f64> = matches.iter().map(|m| (-m.distance / h2).exp()).collect();
    let z: f64 = weights.iter().sum();
    if z == 0.0 {
        let u = 1.0 / matches.len() as f64;
        weights.fill(u);
    } else {
        for w in &mut weights {
            *w /= z;
        }
    }
    weights
}

/// Weighted average of the match patches: (1/Z) * sum_i exp(-d_i/h^2) P_i.
/// Returns the patch planar (channel-major), length side*side*channels.
pub fn reconstruct_patch(
    query: &PatchSpec,
    matches: &[PatchMatch],
    img: &MultiChannelImage,
    h: f64,
) -> Result<Vec<f64>, Error> {
    query.validate(img)?;
    if matches.is_empty() {
        return Err(Error::InvalidParameter("match list is empty".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("h must be > 0, got {h}")));
    }
    let side = query.side;
    let w = img.width();
    let weights = match_weights(matches, h);
    let mut out = vec![0.0; side * side * img.channels()];
    for (m, &coef) in matches.iter().zip(&weights) {
        let (mx, my) = m.position;
        if mx + side > img.width() || my + side > img.height() {
            return Err(Error::InvalidParameter(format!(
                "match at ({mx},{my}) does not fit the image"
            )));
        }
        for c in 0..img.channels() {
            let plane = img.channel(c);
            for py in 0..side {
                let src = &plane[(my + py) * w + mx..][..side];
                let dst = &mut out[(c * side + py) * side..][..side];
                for i in 0..side {
                    dst[i] += coef * src[i];
                }
            }
        }
    }
    Ok(out)
}

/// Number of dense side-length patches covering coordinate v on an axis of
/// length len (closed form; equals side for interior coordinates).
#[inline]
pub(crate) fn coverage_count(v: usize, len: usize, side: usize) -> usize {
    let lo = v.saturating_sub(side - 1);
    let hi = v.min(len - side);
    hi - lo + 1
}

/// Full residual r(u) = u_hat - u: every dense query patch is
/// reconstructed from its n best admissible matches, each pixel's estimate
/// is the plain average of all covering reconstructions.
pub fn compute_residual(
    img: &MultiChannelImage,
    params: &ResidualParams,
) -> Result<MultiChannelImage, Error> {
    check_patch_stage_input(img, params)?;
    let side = params.patch_side;
    let (w, h, nc) = (img.width(), img.height(), img.channels());
    let sel = if params.search_stride == 1 {
        select_by_offsets(img, side, params.n_neighbors)?
    } else {
        select_by_scan(img, side, params.n_neighbors, params.search_stride)?
    };

    let h2 = params.h * params.h;
    let n = params.n_neighbors;
    let mut acc = vec![0.0f64; w * h * nc];
    let mut weights = vec![0.0f64; n];
    let planes: Vec<&[f64]> = (0..nc).map(|c| img.channel(c)).collect();
    for qy in 0..sel.qh {
        for qx in 0..sel.qw {
            let q = qy * sel.qw + qx;
            let block = q * n;
            let dists = &sel.dist[block..block + n];
            let mut z = 0.0;
            for (wgt, &d) in weights.iter_mut().zip(dists) {
                *wgt = (-d / h2).exp();
                z += *wgt;
            }
            if z == 0.0 {
                weights.fill(1.0 / n as f64);
            } else {
                for wgt in &mut weights {
                    *wgt /= z;
                }
            }
            for (i, &coef) in weights.iter().enumerate() {
                let p = sel.pos[block + i] as usize;
                let (mx, my) = (p % w, p / w);
                for (c, plane) in planes.iter().enumerate() {
                    let plane_base = c * w * h;
                    for py in 0..side {
                        let src = &plane[(my + py) * w + mx..][..side];
                        let dst = &mut acc[plane_base + (qy + py) * w + qx..][..side];
                        for k in 0..side {
                            dst[k] += coef * src[k];
                        }
                    }
                }
            }
        }
    }

    // divide by per-pixel coverage and subtract the input
    let mut covx = vec![0.0f64; w];
    for (x, cov) in covx.iter_mut().enumerate() {
        *cov = coverage_count(x, w, side) as f64;
    }
    let mut out = vec![0.0f64; w * h * nc];
    for c in 0..nc {
        let plane = planes[c];
        for y in 0..h {
            let cy = coverage_count(y, h, side) as f64;
            let row_base = (c * h + y) * w;
            for x in 0..w {
                let u_hat = acc[row_base + x] / (covx[x] * cy);
                out[row_base + x] = u_hat - plane[y * w + x];
            }
        }
    }
    MultiChannelImage::from_planar(w, h, nc, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    fn lcg_image(w: usize, h: usize, c: usize, seed: u64) -> MultiChannelImage {
        let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        let mut data = Vec::with_capacity(w * h * c);
        for _ in 0..w * h * c {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            data.push((state >> 11) as f64 / (1u64 << 53) as f64);
        }
        MultiChannelImage::from_planar(w, h, c, data).unwrap()
    }

    fn tiled_image(w: usize, h: usize, c: usize, tile: usize, seed: u64) -> MultiChannelImage {
        let base = lcg_image(tile, tile, c, seed);
        let mut out = MultiChannelImage::new(w, h, c).unwrap();
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(x, y, ci, base.get(x % tile, y % tile, ci));
                }
            }
        }
        out
    }

    fn params(side: usize, n: usize) -> ResidualParams {
        ResidualParams {
            patch_side: side,
            n_neighbors: n,
            h: 10.0,
            search_stride: 1,
        }
    }

    #[test]
    fn admissibility_is_chebyshev_at_least_side() {
        assert!(!is_admissible((10, 10), (10, 10), 4));
        assert!(!is_admissible((10, 10), (13, 13), 4));
        assert!(is_admissible((10, 10), (14, 10), 4)); // touching, not intersecting
        assert!(is_admissible((10, 10), (10, 14), 4));
        assert!(is_admissible((10, 10), (6, 10), 4));
        assert!(!is_admissible((10, 10), (7, 12), 4));
    }

    #[test]
    fn tiled_image_matches_are_exact_repeats_in_scan_order() {
        // 4x4 tile everywhere: every offset that is a multiple of 4 in both
        // axes is an exact copy, so the first n admissible exact copies in
        // scan order win
        let img = tiled_image(24, 12, 1, 4, 9);
        let found = nearest_neighbors(&img, &PatchSpec::new(0, 0, 4, 1), &params(4, 5)).unwrap();
        let positions: Vec<(usize, usize)> = found.iter().map(|m| m.position).collect();
        assert_eq!(positions, vec![(4, 0), (8, 0), (12, 0), (16, 0), (20, 0)]);
        assert!(found.iter().all(|m| m.distance == 0.0));
    }

    #[test]
    fn touching_duplicate_at_offset_side_is_admissible() {
        // columns repeat with period `side`, so the patch at (side, 0) is an
        // exact duplicate touching the query without overlap
        let mut img = MultiChannelImage::new(16, 6, 1).unwrap();
        for y in 0..6 {
            for x in 0..16 {
                img.set(x, y, 0, ((x % 4) * 7 + y) as f64);
            }
        }
        let found = nearest_neighbors(&img, &PatchSpec::new(0, 0, 4, 1), &params(4, 1)).unwrap();
        assert_eq!(found[0].position, (4, 0));
        assert_eq!(found[0].distance, 0.0);
    }

    #[test]
    fn constant_image_ties_resolve_to_scan_order() {
        let img = MultiChannelImage::from_planar(14, 12, 1, vec![3.0; 14 * 12]).unwrap();
        let found = nearest_neighbors(&img, &PatchSpec::new(5, 4, 3, 1), &params(3, 4)).unwrap();
        // admissible = Chebyshev >= 3 from (5,4); scan order: y=0 row first,
        // x from 0: (0,0), (1,0), (2,0) = |dx|>=3... x=3,4,5,6,7,8 are at
        // Chebyshev 4 in y, all admissible; so first four are x=0..3 at y=0
        let positions: Vec<(usize, usize)> = found.iter().map(|m| m.position).collect();
        assert_eq!(positions, vec![(0, 0), (1, 0), (2, 0), (3, 0)]);
        assert!(found.iter().all(|m| m.distance == 0.0));
    }

    #[test]
    fn shortfall_is_reported_with_counts() {
        let img = lcg_image(8, 8, 1, 1);
        let err = nearest_neighbors(&img, &PatchSpec::new(0, 0, 4, 1), &params(4, 16))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("found 9"), "message: {msg}");
        assert!(msg.contains("need 16"), "message: {msg}");
    }

    #[test]
    fn exclusion_soundness_on_random_queries() {
        let img = lcg_image(20, 17, 2, 42);
        let p = params(3, 6);
        for seed in 0..40u64 {
            let qx = (seed.wrapping_mul(2654435761) % 18) as usize;
            let qy = (seed.wrapping_mul(40503) % 15) as usize;
            let found =
                nearest_neighbors(&img, &PatchSpec::new(qx, qy, 3, 2), &p).unwrap();
            assert_eq!(found.len(), 6);
            for m in found {
                assert!(
                    is_admissible((qx, qy), m.position, 3),
                    "query ({qx},{qy}) match {:?}",
                    m.position
                );
            }
        }
    }

    #[test]
    fn reconstruct_single_identical_match_is_that_patch() {
        let img = lcg_image(12, 12, 2, 5);
        let query = PatchSpec::new(1, 1, 3, 2);
        let matches = [PatchMatch {
            position: (7, 6),
            distance: 0.0,
        }];
        let got = reconstruct_patch(&query, &matches, &img, 10.0).unwrap();
        for c in 0..2 {
            for py in 0..3 {
                for px in 0..3 {
                    assert_eq!(got[(c * 3 + py) * 3 + px], img.get(7 + px, 6 + py, c));
                }
            }
        }
    }

    #[test]
    fn reconstruct_equal_distances_average_evenly() {
        let img = lcg_image(16, 8, 1, 6);
        let query = PatchSpec::new(0, 0, 2, 1);
        let matches = [
            PatchMatch {
                position: (6, 2),
                distance: 3.5,
            },
            PatchMatch {
                position: (11, 4),
                distance: 3.5,
            },
        ];
        let got = reconstruct_patch(&query, &matches, &img, 2.0).unwrap();
        for py in 0..2 {
            for px in 0..2 {
                let want = 0.5 * (img.get(6 + px, 2 + py, 0) + img.get(11 + px, 4 + py, 0));
                assert!((got[py * 2 + px] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reconstruct_weights_follow_the_exponential() {
        // single-sample patches (side 1), distances 0 and h^2: weights are
        // (1, 1/e) normalized
        let img = MultiChannelImage::from_planar(
            6,
            1,
            1,
            vec![0.0, 0.0, 10.0, 0.0, 20.0, 0.0],
        )
        .unwrap();
        let h = 3.0;
        let matches = [
            PatchMatch {
                position: (2, 0),
                distance: 0.0,
            },
            PatchMatch {
                position: (4, 0),
                distance: h * h,
            },
        ];
        let got =
            reconstruct_patch(&PatchSpec::new(0, 0, 1, 1), &matches, &img, h).unwrap();
        let e = (-1.0f64).exp();
        let want = (10.0 + e * 20.0) / (1.0 + e);
        assert!((got[0] - want).abs() < 1e-14, "got {} want {want}", got[0]);
    }

    #[test]
    fn reconstruct_weights_sum_to_one() {
        // all matches read the same patch: any normalized weighting must
        // return that patch to within normalization rounding
        let img = tiled_image(20, 8, 1, 4, 8);
        let query = PatchSpec::new(0, 0, 4, 1);
        let matches: Vec<PatchMatch> = [(8usize, 4usize), (12, 0), (16, 4)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| PatchMatch {
                position: (x, y),
                distance: i as f64 * 7.0,
            })
            .collect();
        let got = reconstruct_patch(&query, &matches, &img, 5.0).unwrap();
        for py in 0..4 {
            for px in 0..4 {
                let want = img.get(8 + px, 4 + py, 0);
                assert!((got[py * 4 + px] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruct_underflow_falls_back_to_uniform() {
        let img = lcg_image(16, 4, 1, 3);
        let query = PatchSpec::new(0, 0, 2, 1);
        let matches = [
            PatchMatch {
                position: (5, 0),
                distance: 1.0,
            },
            PatchMatch {
                position: (9, 1),
                distance: 2.0,
            },
        ];
        // h so small that exp(-d/h^2) underflows for every match
        let got = reconstruct_patch(&query, &matches, &img, 1e-200).unwrap();
        for py in 0..2 {
            for px in 0..2 {
                let want = 0.5 * (img.get(5 + px, 0 + py, 0) + img.get(9 + px, 1 + py, 0));
                assert!((got[py * 2 + px] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coverage_counts_match_brute_force() {
        for (len, side) in [(12, 3), (10, 4), (7, 2), (9, 8)] {
            for v in 0..len {
                let brute = (0..=len - side)
                    .filter(|&q| q <= v && v < q + side)
                    .count();
                assert_eq!(coverage_count(v, len, side), brute, "len {len} side {side} v {v}");
            }
        }
    }

    #[test]
    fn constant_image_residual_is_exactly_zero() {
        let img = MultiChannelImage::from_planar(20, 16, 2, vec![7.25; 20 * 16 * 2]).unwrap();
        let r = compute_residual(&img, &params(3, 4)).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn periodic_image_residual_is_negligible() {
        // tile period 8 gives every query at least 63 exact distant copies,
        // so all n = 16 neighbors match exactly
        let img = tiled_image(64, 64, 1, 8, 12);
        let r = compute_residual(
            &img,
            &ResidualParams {
                patch_side: 8,
                n_neighbors: 16,
                h: 10.0,
                search_stride: 1,
            },
        )
        .unwrap();
        let rms = |d: &[f64]| (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        assert!(rms(r.data()) <= 1e-6 * rms(img.data()));
    }

    #[test]
    fn residual_matches_naive_oracle() {
        let img = lcg_image(24, 24, 1, 77);
        let p = params(4, 3);
        let fast = compute_residual(&img, &p).unwrap();
        let slow = reference::compute_residual_naive(&img, &p);
        let max_err = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-10, "max abs err {max_err:e}");
    }

    #[test]
    fn residual_matches_naive_oracle_multichannel() {
        let img = lcg_image(20, 18, 3, 123);
        let p = ResidualParams {
            patch_side: 3,
            n_neighbors: 5,
            h: 4.0,
            search_stride: 1,
        };
        let fast = compute_residual(&img, &p).unwrap();
        let slow = reference::compute_residual_naive(&img, &p);
        let max_err = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-10, "max abs err {max_err:e}");
    }

    #[test]
    fn strided_search_matches_naive_oracle() {
        let img = lcg_image(24, 24, 1, 55);
        let p = ResidualParams {
            patch_side: 4,
            n_neighbors: 3,
            h: 10.0,
            search_stride: 2,
        };
        let fast = compute_residual(&img, &p).unwrap();
        let slow = reference::compute_residual_naive(&img, &p);
        let max_err = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-10, "max abs err {max_err:e}");
    }

    #[test]
    fn residual_is_deterministic() {
        let img = lcg_image(26, 22, 2, 31);
        let p = params(4, 6);
        let a = compute_residual(&img, &p).unwrap();
        let b = compute_residual(&img, &p).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn anomalous_block_concentrates_residual_energy() {
        // periodic texture with one contrasting block: residual energy on
        // the block should dominate the off-block energy
        let mut img = tiled_image(64, 64, 1, 8, 21);
        for y in 24..32 {
            for x in 24..32 {
                img.set(x, y, 0, img.get(x, y, 0) + 3.0);
            }
        }
        let r = compute_residual(
            &img,
            &ResidualParams {
                patch_side: 8,
                n_neighbors: 16,
                h: 10.0,
                search_stride: 1,
            },
        )
        .unwrap();
        let mut on = (0.0, 0usize);
        let mut off = (0.0, 0usize);
        for y in 0..64 {
            for x in 0..64 {
                let v = r.get(x, y, 0).abs();
                if (24..32).contains(&x) && (24..32).contains(&y) {
                    on = (on.0 + v, on.1 + 1);
                } else {
                    off = (off.0 + v, off.1 + 1);
                }
            }
        }
        let mean_on = on.0 / on.1 as f64;
        let mean_off = off.0 / off.1 as f64;
        assert!(
            mean_on >= 10.0 * mean_off,
            "on-block {mean_on}, off-block {mean_off}"
        );
    }

    #[test]
    #[ignore = "timing probe, run explicitly"]
    fn bench_residual_128() {
        let img = lcg_image(128, 128, 3, 99);
        let p = ResidualParams {
            patch_side: 8,
            n_neighbors: 16,
            h: 10.0,
            search_stride: 1,
        };
        let t0 = std::time::Instant::now();
        let r = compute_residual(&img, &p).unwrap();
        println!(
            "residual 128x128x3: {:.3} s (checksum {:e})",
            t0.elapsed().as_secs_f64(),
            r.data().iter().sum::<f64>()
        );
    }
}
