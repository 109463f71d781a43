//! Multichannel image container, disk mean filters, and the dyadic
//! Gaussian pyramid.

use crate::Error;

/// Dense H x W x C grid of f64 samples, stored planar (all of channel 0
/// row-major, then channel 1, ...). Samples are finite by construction:
/// every public constructor rejects NaN and infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl MultiChannelImage {
    /// All-zero image. Every dimension must be at least 1.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self, Error> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        })
    }

    /// Wraps planar channel-major data (index = (c*height + y)*width + x).
    pub fn from_planar(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, Error> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidParameter(format!(
                "data length {} does not match {width}x{height}x{channels} = {}",
                data.len(),
                width * height * channels
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite sample at flat index {pos}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    /// One channel as a row-major slice of length width*height.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.width * self.height;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    /// Full planar buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Applies `f` to every sample in place. The result must stay finite;
    /// this is debug-asserted, matching the container invariant.
    pub fn map_in_place(&mut self, mut f: impl FnMut(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
            debug_assert!(v.is_finite());
        }
    }
}

/// Mirror (reflect without repeating the edge sample) index for a length-n
/// axis: -1 maps to 1, n maps to n-2. Total for any offset.
#[inline]
pub(crate) fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut t = i.rem_euclid(period);
    if t >= n as isize {
        t = period - t;
    }
    t as usize
}

/// Normalized mean filter over a discrete disk: weight > 0 iff the cell
/// center lies within Euclidean distance `radius` of the kernel center,
/// all positive weights equal, summing to 1.
#[derive(Debug, Clone)]
pub struct DiskKernel {
    radius: usize,
    side: usize,
    weights: Vec<f64>,
}

impl DiskKernel {
    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Kernel side length, 2*radius + 1.
    pub fn side(&self) -> usize {
        self.side
    }

    /// Weight at kernel cell (kx, ky), with (radius, radius) the center.
    pub fn weight(&self, kx: usize, ky: usize) -> f64 {
        self.weights[ky * self.side + kx]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Builds the disk mean kernel of the given radius (>= 1).
pub fn disk_kernel(radius: usize) -> Result<DiskKernel, Error> {
    if radius == 0 {
        return Err(Error::InvalidParameter("disk radius must be >= 1".into()));
    }
    let side = 2 * radius + 1;
    let r2 = (radius * radius) as isize;
    let mut inside = vec![false; side * side];
    let mut count = 0usize;
    for ky in 0..side {
        for kx in 0..side {
            let dx = kx as isize - radius as isize;
            let dy = ky as isize - radius as isize;
            if dx * dx + dy * dy <= r2 {
                inside[ky * side + kx] = true;
                count += 1;
            }
        }
    }
    let mut weights = vec![0.0; side * side];
    let w = 1.0 / count as f64;
    for (cell, &m) in weights.iter_mut().zip(&inside) {
        if m {
            *cell = w;
        }
    }
    nudge_sum_to_one(&mut weights, (radius * side + radius) as usize);
    Ok(DiskKernel {
        radius,
        side,
        weights,
    })
}

/// Adjusts the element at `center` so the left-to-right floating-point sum
/// of `weights` lands on 1.0 exactly (a couple of ulps of correction at
/// most). Keeps "weights sum to 1" true as written, not just approximately.
fn nudge_sum_to_one(weights: &mut [f64], center: usize) {
    for _ in 0..8 {
        let s: f64 = weights.iter().sum();
        if s == 1.0 {
            return;
        }
        weights[center] += 1.0 - s;
    }
    debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
}

/// Per-channel 2D convolution with the disk kernel and mirror boundary
/// handling. Output dimensions equal input dimensions.
pub fn convolve_disk(img: &MultiChannelImage, k: &DiskKernel) -> Result<MultiChannelImage, Error> {
    if k.side() > img.width() || k.side() > img.height() {
        return Err(Error::ImageTooSmall(format!(
            "kernel side {} exceeds image {}x{}",
            k.side(),
            img.width(),
            img.height()
        )));
    }
    let (w, h, r) = (img.width(), img.height(), k.radius() as isize);
    // precomputed mirrored indices for x+dx and y+dy, dx,dy in [-r, r]
    let mx: Vec<usize> = (-r..w as isize + r).map(|i| mirror_index(i, w)).collect();
    let my: Vec<usize> = (-r..h as isize + r).map(|i| mirror_index(i, h)).collect();
    let mut out = MultiChannelImage::new(w, h, img.channels())?;
    for c in 0..img.channels() {
        let src = img.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..k.side() {
                    let row = my[y + ky] * w;
                    for kx in 0..k.side() {
                        let wgt = k.weight(kx, ky);
                        if wgt != 0.0 {
                            acc += wgt * src[row + mx[x + kx]];
                        }
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    }
    Ok(out)
}

/// Dyadic pyramid: level 0 is the input, each further level blurs with a
/// sigma = 1.4 Gaussian and keeps every second sample, so level s measures
/// ceil(w / 2^s) x ceil(h / 2^s).
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<MultiChannelImage>,
    /// Set to the originally requested scale count when the 16x16 coarsest
    /// size floor forced fewer levels.
    pub clamped_from: Option<usize>,
}

const PYRAMID_SIGMA: f64 = 1.4;
const PYRAMID_MIN_SIDE: usize = 16;

/// Separable Gaussian taps truncated at 4 sigma, floating-point sum
/// nudged to exactly 1.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).floor() as usize;
    let mut taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|t| (-0.5 * (t as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= s;
    }
    nudge_sum_to_one(&mut taps, radius);
    taps
}

/// Blur one channel along x then y with mirror boundaries.
fn blur_channel(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = taps.len() as isize / 2;
    let mx: Vec<usize> = (-r..w as isize + r).map(|i| mirror_index(i, w)).collect();
    let my: Vec<usize> = (-r..h as isize + r).map(|i| mirror_index(i, h)).collect();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * row[mx[x + t]];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut dst = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * tmp[my[y + t] * w + x];
            }
            dst[y * w + x] = acc;
        }
    }
    dst
}

fn half_size(n: usize) -> usize {
    n.div_ceil(2)
}

/// Blur + decimate one level (keeps even-index samples, which matches the
/// ceil(n/2) size rule for odd n).
fn downsample(img: &MultiChannelImage, taps: &[f64]) -> MultiChannelImage {
    let (w, h) = (img.width(), img.height());
    let (w2, h2) = (half_size(w), half_size(h));
    let mut out = MultiChannelImage::new(w2, h2, img.channels()).expect("valid dims");
    for c in 0..img.channels() {
        let blurred = blur_channel(img.channel(c), w, h, taps);
        let dst = out.channel_mut(c);
        for y in 0..h2 {
            for x in 0..w2 {
                dst[y * w2 + x] = blurred[(2 * y) * w + 2 * x];
            }
        }
    }
    out
}

/// Builds the dyadic pyramid. `n_scales` is clamped so the coarsest level
/// stays at least 16x16; the clamp is reported via `Pyramid::clamped_from`.
pub fn build_pyramid(img: &MultiChannelImage, n_scales: usize) -> Result<Pyramid, Error> {
    if n_scales == 0 {
        return Err(Error::InvalidParameter("n_scales must be >= 1".into()));
    }
    let mut max_levels = 1;
    let (mut w, mut h) = (img.width(), img.height());
    while max_levels < n_scales && half_size(w) >= PYRAMID_MIN_SIDE && half_size(h) >= PYRAMID_MIN_SIDE
    {
        w = half_size(w);
        h = half_size(h);
        max_levels += 1;
    }
    let levels_wanted = n_scales.min(max_levels);
    let taps = gaussian_taps(PYRAMID_SIGMA);
    let mut levels = Vec::with_capacity(levels_wanted);
    levels.push(img.clone());
    for _ in 1..levels_wanted {
        let next = downsample(levels.last().expect("non-empty"), &taps);
        levels.push(next);
    }
    Ok(Pyramid {
        levels,
        clamped_from: (levels_wanted < n_scales).then_some(n_scales),
    })
}
