//! Detection-input preparation: raw color channels pass through untouched,
//! while externally computed feature maps get square-root compression and a
//! per-image PCA down to a handful of channels.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::image::MultiChannelImage;
use crate::Error;

/// Number of channels kept after PCA in feature mode.
pub const PCA_CHANNELS: usize = 5;

/// How the detector's working channels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Use the input's color channels directly.
    Pixels,
    /// Load an external feature map with the given channel count, then
    /// sqrt-compress and project onto `PCA_CHANNELS` principal components.
    ExternalFeatures { input_channels: usize },
}

impl FeatureMode {
    /// Channel count the detection stages will see.
    pub fn working_channels(&self) -> usize {
        match self {
            FeatureMode::Pixels => 3,
            FeatureMode::ExternalFeatures { .. } => PCA_CHANNELS,
        }
    }
}

/// Orthonormal channel-space basis fitted to one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    /// Per-channel mean of the fitted image.
    pub mean: Vec<f64>,
    /// `k` orthonormal rows, each of the input channel dimension.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each component, non-increasing, >= 0.
    pub explained_variance: Vec<f64>,
    /// Set when the covariance rank fell short of `k` and the basis was
    /// padded with an arbitrary orthonormal completion.
    pub rank_deficient: bool,
}

/// Elementwise signed square root: sign(v) * sqrt(|v|). Odd, monotone, and
/// keeps negative feature activations negative instead of clamping them.
pub fn sqrt_compress(features: &MultiChannelImage) -> MultiChannelImage {
    let mut out = features.clone();
    out.map_in_place(|v| v.abs().sqrt().copysign(v));
    out
}

/// Fits a `k`-component PCA basis to the channel covariance of this image's
/// pixel vectors.
///
/// The eigendecomposition always yields a full orthonormal basis, so a
/// rank-deficient covariance still produces `k` orthonormal components; the
/// ones beyond the rank get zero explained variance and the basis is
/// flagged. Component signs follow a fixed convention (the entry of largest
/// magnitude is positive) so repeated fits are bit-identical.
pub fn fit_pca(features: &MultiChannelImage, k: usize) -> Result<PcaBasis, Error> {
    let d = features.channels();
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!(
            "cannot keep {k} components from {d} channels"
        )));
    }
    let n_px = features.width() * features.height();
    let inv_n = 1.0 / n_px as f64;

    let mean: Vec<f64> = (0..d)
        .map(|c| features.channel(c).iter().sum::<f64>() * inv_n)
        .collect();

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for ci in 0..d {
        let pi = features.channel(ci);
        for cj in 0..=ci {
            let pj = features.channel(cj);
            let mut acc = 0.0;
            for (a, b) in pi.iter().zip(pj) {
                acc += (a - mean[ci]) * (b - mean[cj]);
            }
            let v = acc * inv_n;
            cov[(ci, cj)] = v;
            cov[(cj, ci)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let tol = lambda_max * d as f64 * 1e-12;
    let mut components = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    let mut rank_deficient = false;
    for &idx in order.iter().take(k) {
        let lambda = eig.eigenvalues[idx];
        if lambda <= tol {
            rank_deficient = true;
            explained.push(0.0);
        } else {
            explained.push(lambda);
        }
        let mut comp: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let mut best = 0;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[best].abs() {
                best = i;
            }
        }
        if comp[best] < 0.0 {
            for v in &mut comp {
                *v = -*v;
            }
        }
        components.push(comp);
    }

    Ok(PcaBasis {
        mean,
        components,
        explained_variance: explained,
        rank_deficient,
    })
}

/// Projects each pixel vector onto the basis: subtract the mean, then take
/// inner products with the components. Output has one channel per component.
pub fn project(features: &MultiChannelImage, basis: &PcaBasis) -> Result<MultiChannelImage, Error> {
    let d = features.channels();
    if basis.mean.len() != d || basis.components.iter().any(|c| c.len() != d) {
        return Err(Error::InvalidParameter(format!(
            "basis over {} channels applied to a {d}-channel image",
            basis.mean.len()
        )));
    }
    let (w, h) = (features.width(), features.height());
    let k = basis.components.len();
    let mut out = MultiChannelImage::new(w, h, k)?;
    for (j, comp) in basis.components.iter().enumerate() {
        let plane = out.channel_mut(j);
        for (c, (&weight, &m)) in comp.iter().zip(&basis.mean).enumerate() {
            if weight == 0.0 {
                continue;
            }
            for (o, &v) in plane.iter_mut().zip(features.channel(c)) {
                *o += weight * (v - m);
            }
        }
    }
    Ok(out)
}

const FMAP_MAGIC: &[u8; 4] = b"FMAP";
const FMAP_HEADER_LEN: usize = 16;

/// Reads a feature-map file: 16-byte header (magic "FMAP", then width,
/// height, channels as u32 little-endian) followed by little-endian f32
/// samples in planar channel-major order.
pub fn load_feature_map(path: &Path) -> Result<MultiChannelImage, Error> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < FMAP_HEADER_LEN {
        return Err(Error::MalformedFeatureMap(format!(
            "{}: only {} bytes, shorter than the 16-byte header",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[..4] != FMAP_MAGIC {
        return Err(Error::MalformedFeatureMap(format!(
            "{}: bad magic {:?}, expected \"FMAP\"",
            path.display(),
            &bytes[..4]
        )));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (w, h, c) = (field(0) as u64, field(1) as u64, field(2) as u64);
    if w == 0 || h == 0 || c == 0 {
        return Err(Error::MalformedFeatureMap(format!(
            "{}: zero dimension in header ({w} x {h} x {c})",
            path.display()
        )));
    }
    let expected = FMAP_HEADER_LEN as u64 + 4 * w * h * c;
    if bytes.len() as u64 != expected {
        return Err(Error::MalformedFeatureMap(format!(
            "{}: header declares {w} x {h} x {c} so the file should be {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity((w * h * c) as usize);
    for (i, chunk) in bytes[FMAP_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::MalformedFeatureMap(format!(
                "{}: non-finite value {v} at flat index {i} (byte offset {})",
                path.display(),
                FMAP_HEADER_LEN + 4 * i
            )));
        }
        data.push(f64::from(v));
    }
    MultiChannelImage::from_planar(w as usize, h as usize, c as usize, data)
}

/// Writes a feature-map file in the format `load_feature_map` reads.
/// Samples are narrowed to f32.
pub fn write_feature_map(path: &Path, img: &MultiChannelImage) -> Result<(), Error> {
    let mut bytes = Vec::with_capacity(FMAP_HEADER_LEN + 4 * img.data().len());
    bytes.extend_from_slice(FMAP_MAGIC);
    for dim in [img.width(), img.height(), img.channels()] {
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in img.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
