//! Multiscale a-contrario detection: count the tests, turn normalized
//! responses into NFA maps per (scale, channel, kernel), threshold at
//! epsilon, and group significant pixels into detection records.

use crate::calibrate::{fit_ggd, gaussianize, median, normalize_unit_variance, GgdParams};
use crate::features::{fit_pca, project, sqrt_compress, FeatureMode, PcaBasis, PCA_CHANNELS};
use crate::image::{build_pyramid, convolve_disk, disk_kernel, MultiChannelImage, Pyramid};
use crate::residual::{compute_residual, ResidualParams};
use crate::special::{erfc, inv_phi, inv_phi_from_ln, ln_erfc};
use crate::Error;

/// Everything the detector needs besides the image itself.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionConfig {
    /// A detection is any pixel whose NFA falls at or below this value.
    pub epsilon: f64,
    /// Disk radii, in pixels, of the averaging filters applied at each scale.
    pub kernel_radii: Vec<usize>,
    /// Requested pyramid depth (the 16-pixel side floor may reduce it).
    pub n_scales: usize,
    pub mode: FeatureMode,
    pub residual: ResidualParams,
}

impl DetectionConfig {
    /// Defaults for color images: two disk radii, four scales, 8x8 patches
    /// averaged over 16 neighbors.
    pub fn default_pixels() -> Self {
        DetectionConfig {
            epsilon: 1e-2,
            kernel_radii: vec![1, 2],
            n_scales: 4,
            mode: FeatureMode::Pixels,
            residual: ResidualParams {
                patch_side: 8,
                n_neighbors: 16,
                h: 10.0,
                search_stride: 1,
            },
        }
    }

    /// Defaults for external feature maps: an extra radius and smaller
    /// patches, matching the 5 channels kept after PCA.
    pub fn default_features(input_channels: usize) -> Self {
        DetectionConfig {
            epsilon: 1e-2,
            kernel_radii: vec![1, 2, 3],
            n_scales: 4,
            mode: FeatureMode::ExternalFeatures { input_channels },
            residual: ResidualParams {
                patch_side: 5,
                n_neighbors: 16,
                h: 10.0,
                search_stride: 1,
            },
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.kernel_radii.is_empty() {
            return Err(Error::InvalidParameter("no kernel radii".into()));
        }
        if let Some(&r) = self.kernel_radii.iter().find(|&&r| r == 0) {
            return Err(Error::InvalidParameter(format!(
                "kernel radius must be >= 1, got {r}"
            )));
        }
        if self.n_scales == 0 {
            return Err(Error::InvalidParameter("n_scales must be >= 1".into()));
        }
        self.residual.validate()
    }
}

/// Significance bands, from barely under epsilon down to overwhelming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Band {
    Weak,
    Mild,
    Strong,
    VeryStrong,
}

impl Band {
    /// Band from the base-10 log of the NFA: weak above 1e-3, mild in
    /// (1e-8, 1e-3], strong in (1e-21, 1e-8], very strong at or below 1e-21.
    pub fn from_log10_nfa(log10_nfa: f64) -> Band {
        if log10_nfa <= -21.0 {
            Band::VeryStrong
        } else if log10_nfa <= -8.0 {
            Band::Strong
        } else if log10_nfa <= -3.0 {
            Band::Mild
        } else {
            Band::Weak
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Weak => "weak",
            Band::Mild => "mild",
            Band::Strong => "strong",
            Band::VeryStrong => "very_strong",
        }
    }
}

/// One grouped detection. Coordinates are at the original resolution
/// (top-left pixel of the level-s cell that fired).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub x: usize,
    pub y: usize,
    pub scale: usize,
    pub kernel_radius: usize,
    pub channel: usize,
    /// Raw NFA; underflows to 0 for extreme detections, in which case
    /// `log10_nfa` still carries the value.
    pub nfa: f64,
    pub log10_nfa: f64,
    pub band: Band,
}

/// NFA grid of one (scale, channel, kernel) combination.
#[derive(Debug, Clone)]
pub struct NfaMap {
    pub scale: usize,
    pub channel: usize,
    pub kernel_radius: usize,
    pub width: usize,
    pub height: usize,
    /// Pixels closer than this to the grid border are excluded from
    /// thresholding: mirror padding inflates the filtered variance there.
    pub valid_margin: usize,
    /// Robust sigma the filtered response was divided by.
    pub sigma: f64,
    /// Median subtracted before that division.
    pub median: f64,
    pub nfa: Vec<f64>,
    pub log10_nfa: Vec<f64>,
}

/// All NFA maps of one detection run plus the shared test count.
#[derive(Debug, Clone)]
pub struct NfaMapStack {
    pub maps: Vec<NfaMap>,
    pub n_tests: f64,
}

/// Total number of tests: kernels x channels x total pixel count over all
/// pyramid levels.
pub fn count_tests(config: &DetectionConfig, pyramid: &Pyramid) -> u64 {
    let pixels: u64 = pyramid
        .levels
        .iter()
        .map(|l| (l.width() * l.height()) as u64)
        .sum();
    config.kernel_radii.len() as u64 * pyramid.levels[0].channels() as u64 * pixels
}

/// NFA of one normalized response: f = N * 2 Phi(-|x|), with its base-10
/// logarithm computed in log space so nothing underflows.
pub fn nfa_value(x: f64, n_tests: f64) -> (f64, f64) {
    let z = x.abs() * std::f64::consts::FRAC_1_SQRT_2;
    let raw = n_tests * erfc(z);
    let log10 = (n_tests.ln() + ln_erfc(z)) * std::f64::consts::LOG10_E;
    (raw, log10)
}

/// The threshold tau such that f(x) <= epsilon exactly when |x| >= tau.
pub fn nfa_threshold(epsilon: f64, n_tests: f64) -> f64 {
    let ln_p = epsilon.ln() - std::f64::consts::LN_2 - n_tests.ln();
    if ln_p <= -2.6 {
        -inv_phi_from_ln(ln_p)
    } else {
        -inv_phi(ln_p.exp())
    }
}

/// Per-channel NFA grids (raw and log10) for a normalized image.
pub fn nfa_map(
    normalized: &MultiChannelImage,
    n_tests: f64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, Error> {
    if let Some(bad) = normalized.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-finite response {bad} fed to nfa_map"
        )));
    }
    let mut out = Vec::with_capacity(normalized.channels());
    for c in 0..normalized.channels() {
        let plane = normalized.channel(c);
        let mut raw = Vec::with_capacity(plane.len());
        let mut log10 = Vec::with_capacity(plane.len());
        for &x in plane {
            let (r, l) = nfa_value(x, n_tests);
            raw.push(r);
            log10.push(l);
        }
        out.push((raw, log10));
    }
    Ok(out)
}

/// Groups sub-threshold pixels of every map into 8-connected components and
/// emits one record per component at its minimum-NFA pixel. Components are
/// compared in log10 so ties among underflowed raw zeros still resolve;
/// remaining ties go to the first pixel in scan order. Pixels inside a
/// map's valid margin are ignored. Records come back sorted by
/// (scale, channel, kernel, y, x).
pub fn group_detections(stack: &NfaMapStack, epsilon: f64) -> Vec<DetectionRecord> {
    let mut records = Vec::new();
    for map in &stack.maps {
        let (w, h, m) = (map.width, map.height, map.valid_margin);
        if w <= 2 * m || h <= 2 * m {
            continue;
        }
        let inside =
            |x: usize, y: usize| x >= m && x < w - m && y >= m && y < h - m;
        let mut seen = vec![false; w * h];
        let mut frontier = Vec::new();
        for y in m..h - m {
            for x in m..w - m {
                let start = y * w + x;
                if seen[start] || map.nfa[start] > epsilon {
                    continue;
                }
                // flood one component, tracking its argmin
                let (mut best, mut best_log10) = (start, map.log10_nfa[start]);
                seen[start] = true;
                frontier.push(start);
                while let Some(idx) = frontier.pop() {
                    let (cx, cy) = (idx % w, idx / w);
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                            if nx < 0 || ny < 0 {
                                continue;
                            }
                            let (nx, ny) = (nx as usize, ny as usize);
                            if !inside(nx, ny) {
                                continue;
                            }
                            let nidx = ny * w + nx;
                            if seen[nidx] || map.nfa[nidx] > epsilon {
                                continue;
                            }
                            seen[nidx] = true;
                            frontier.push(nidx);
                            let l = map.log10_nfa[nidx];
                            if l < best_log10 || (l == best_log10 && nidx < best) {
                                best = nidx;
                                best_log10 = l;
                            }
                        }
                    }
                }
                let factor = 1usize << map.scale;
                records.push(DetectionRecord {
                    x: (best % w) * factor,
                    y: (best / w) * factor,
                    scale: map.scale,
                    kernel_radius: map.kernel_radius,
                    channel: map.channel,
                    nfa: map.nfa[best],
                    log10_nfa: best_log10,
                    band: Band::from_log10_nfa(best_log10),
                });
            }
        }
    }
    records.sort_by(|a, b| {
        (a.scale, a.channel, a.kernel_radius, a.y, a.x).cmp(&(
            b.scale,
            b.channel,
            b.kernel_radius,
            b.y,
            b.x,
        ))
    });
    records
}

/// Border width excluded from record extraction. Mirror padding makes the
/// disk average reuse boundary samples, inflating its variance relative to
/// the interior the normalization is calibrated on; past level 0 the
/// pyramid blur widens the affected band by a couple of pixels.
fn valid_margin(scale: usize, kernel_radius: usize) -> usize {
    if scale == 0 {
        kernel_radius
    } else {
        kernel_radius + 2
    }
}

/// Square-root compression and PCA for feature mode; pixels pass through.
/// Returns the working image and the fitted basis when one was used.
pub fn prepare_input(
    input: &MultiChannelImage,
    mode: FeatureMode,
) -> Result<(MultiChannelImage, Option<PcaBasis>), Error> {
    match mode {
        FeatureMode::Pixels => Ok((input.clone(), None)),
        FeatureMode::ExternalFeatures { input_channels } => {
            if input.channels() != input_channels {
                return Err(Error::InvalidParameter(format!(
                    "feature map has {} channels, configuration declares {input_channels}",
                    input.channels()
                )));
            }
            let compressed = sqrt_compress(input);
            let basis = fit_pca(&compressed, PCA_CHANNELS)?;
            let projected = project(&compressed, &basis)?;
            Ok((projected, Some(basis)))
        }
    }
}

/// Wall-clock seconds spent in each pipeline stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub residual_s: f64,
    pub calibrate_s: f64,
    pub pyramid_s: f64,
    pub maps_s: f64,
    pub group_s: f64,
}

/// Runs the full pipeline on an already prepared working image: residual,
/// per-channel GGD calibration, pyramid, disk filtering, normalization,
/// NFA maps, thresholding, grouping.
pub fn detect_prepared(
    working: &MultiChannelImage,
    config: &DetectionConfig,
) -> Result<(Vec<DetectionRecord>, NfaMapStack), Error> {
    detect_prepared_timed(working, config).map(|(records, stack, _, _)| (records, stack))
}

/// `detect_prepared` with stage timings and the fitted per-channel GGD
/// parameters, for front ends that report them.
pub fn detect_prepared_timed(
    working: &MultiChannelImage,
    config: &DetectionConfig,
) -> Result<(Vec<DetectionRecord>, NfaMapStack, Vec<GgdParams>, StageTimings), Error> {
    config.validate()?;
    let mut timings = StageTimings::default();

    let t = std::time::Instant::now();
    let mut residual = compute_residual(working, &config.residual)?;
    timings.residual_s = t.elapsed().as_secs_f64();

    let t = std::time::Instant::now();
    let mut params = Vec::with_capacity(residual.channels());
    for c in 0..residual.channels() {
        let med = median(residual.channel(c));
        for v in residual.channel_mut(c) {
            *v -= med;
        }
        params.push(fit_ggd(residual.channel(c))?);
    }
    let gaussianized = gaussianize(&residual, &params)?;
    timings.calibrate_s = t.elapsed().as_secs_f64();

    let t = std::time::Instant::now();
    let pyramid = build_pyramid(&gaussianized, config.n_scales)?;
    timings.pyramid_s = t.elapsed().as_secs_f64();
    let n_tests = count_tests(config, &pyramid) as f64;

    let t = std::time::Instant::now();
    let mut maps = Vec::new();
    for (scale, level) in pyramid.levels.iter().enumerate() {
        for &radius in &config.kernel_radii {
            let kernel = disk_kernel(radius)?;
            let filtered = convolve_disk(level, &kernel)?;
            let (normalized, stats) = normalize_unit_variance(&filtered)?;
            let grids = nfa_map(&normalized, n_tests)?;
            for (channel, (nfa, log10_nfa)) in grids.into_iter().enumerate() {
                maps.push(NfaMap {
                    scale,
                    channel,
                    kernel_radius: radius,
                    width: level.width(),
                    height: level.height(),
                    valid_margin: valid_margin(scale, radius),
                    sigma: stats.sigma[channel],
                    median: stats.median[channel],
                    nfa,
                    log10_nfa,
                });
            }
        }
    }
    timings.maps_s = t.elapsed().as_secs_f64();

    let t = std::time::Instant::now();
    let stack = NfaMapStack { maps, n_tests };
    let records = group_detections(&stack, config.epsilon);
    timings.group_s = t.elapsed().as_secs_f64();
    Ok((records, stack, params, timings))
}

/// Full detection from a raw input image, including input preparation.
pub fn detect(
    input: &MultiChannelImage,
    config: &DetectionConfig,
) -> Result<(Vec<DetectionRecord>, NfaMapStack), Error> {
    let (working, _) = prepare_input(input, config.mode)?;
    detect_prepared(&working, config)
}
