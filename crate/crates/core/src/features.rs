//! RD appearance features on the unit hypersphere.
//!
//! A detection's feature is produced by one 3×3 convolution over the
//! three-channel patch around it, SiLU, global average pooling and L2
//! normalization. Tracks keep a single exponentially averaged feature.

use rand::Rng;

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::formats::NamedArray;
use crate::neural::silu;
use crate::rd_pipeline::RDTensor;
use crate::rng::{self, Purpose};

/// Embedding dimension.
pub const FEATURE_DIM: usize = 64;
/// Side of the square patch cut around a detection.
pub const PATCH: usize = 16;

const DEGENERATE_NORM: f64 = 1e-12;

/// Unit-norm appearance vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec(Vec<f64>);

impl FeatureVec {
    /// L2-normalize `v`; a (near) zero vector maps to the first basis vector.
    pub fn normalized(v: Vec<f64>) -> Self {
        match Self::try_normalized(v) {
            Some(f) => f,
            None => Self::basis(0, FEATURE_DIM),
        }
    }

    fn try_normalized(mut v: Vec<f64>) -> Option<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm >= DEGENERATE_NORM) {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Some(Self(v))
    }

    pub fn basis(index: usize, dim: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// `1 − aᵀb`, in `[0, 2]` for unit vectors.
pub fn cosine_distance(a: &FeatureVec, b: &FeatureVec) -> f64 {
    (1.0 - a.dot(b)).clamp(0.0, 2.0)
}

/// Smallest cosine distance from `det` to a gallery of track features.
/// Tracks store one feature, so the gallery usually has length one.
pub fn min_cosine_distance<'a>(
    det: &FeatureVec,
    gallery: impl IntoIterator<Item = &'a FeatureVec>,
) -> Option<f64> {
    gallery
        .into_iter()
        .map(|g| cosine_distance(det, g))
        .min_by(f64::total_cmp)
}

/// `normalize(α·track + (1−α)·det)`; keeps `track` if the mix vanishes.
pub fn ema_update(track: &FeatureVec, det: &FeatureVec, alpha: f64) -> FeatureVec {
    let raw: Vec<f64> = track
        .0
        .iter()
        .zip(&det.0)
        .map(|(t, d)| alpha * t + (1.0 - alpha) * d)
        .collect();
    FeatureVec::try_normalized(raw).unwrap_or_else(|| track.clone())
}

/// Weights of the single-layer patch embedder: 3×3 conv, 3 → 64 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedWeights {
    /// `[out][in][ky][kx]`, 64 × 3 × 3 × 3.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EmbedWeights {
    const KERNEL_LEN: usize = FEATURE_DIM * 3 * 9;

    /// Seeded random projection with He-uniform scaling.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = rng::stream(seed, u64::MAX >> 8, Purpose::WeightInit);
        let bound = (6.0f64 / 27.0).sqrt();
        let kernel = (0..Self::KERNEL_LEN)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..FEATURE_DIM)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        Self { kernel, bias }
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        vec![
            NamedArray::new("embed.conv.weight", vec![FEATURE_DIM, 3, 3, 3], self.kernel.clone()),
            NamedArray::new("embed.conv.bias", vec![FEATURE_DIM], self.bias.clone()),
        ]
    }

    pub fn from_arrays(arrays: &[NamedArray]) -> Result<Self> {
        let find = |name: &str, len: usize| -> Result<Vec<f64>> {
            let a = arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Shape(format!("missing array {name}")))?;
            if a.data.len() != len {
                return Err(Error::Shape(format!(
                    "{name} has {} values, expected {len}",
                    a.data.len()
                )));
            }
            Ok(a.data.clone())
        };
        Ok(Self {
            kernel: find("embed.conv.weight", Self::KERNEL_LEN)?,
            bias: find("embed.conv.bias", FEATURE_DIM)?,
        })
    }
}

/// Cut the `PATCH × PATCH × 3` window around a bin position, zero padded.
/// The window spans `[c − 8, c + 8)` around the rounded center `c`.
pub fn extract_patch(tensor: &RDTensor, range_bin: f64, doppler_bin: f64) -> Vec<f64> {
    let half = (PATCH / 2) as isize;
    let r0 = range_bin.round() as isize - half;
    let d0 = doppler_bin.round() as isize - half;
    let mut patch = vec![0.0; 3 * PATCH * PATCH];
    for ch in 0..3 {
        for py in 0..PATCH {
            let r = r0 + py as isize;
            if r < 0 || r >= tensor.rows as isize {
                continue;
            }
            for px in 0..PATCH {
                let d = d0 + px as isize;
                if d < 0 || d >= tensor.cols as isize {
                    continue;
                }
                patch[(ch * PATCH + py) * PATCH + px] = tensor.get(ch, r as usize, d as usize);
            }
        }
    }
    patch
}

/// Feature of a raw `3 × PATCH × PATCH` patch.
pub fn embed_raw_patch(patch: &[f64], w: &EmbedWeights) -> FeatureVec {
    debug_assert_eq!(patch.len(), 3 * PATCH * PATCH);
    if patch.iter().all(|&x| x == 0.0) {
        return FeatureVec::basis(0, FEATURE_DIM);
    }
    let n = PATCH as isize;
    let mut pooled = vec![0.0; FEATURE_DIM];
    for (oc, out) in pooled.iter_mut().enumerate() {
        let mut acc = 0.0;
        for y in 0..n {
            for x in 0..n {
                let mut s = w.bias[oc];
                for ic in 0..3 {
                    for ky in 0..3isize {
                        let iy = y + ky - 1;
                        if iy < 0 || iy >= n {
                            continue;
                        }
                        for kx in 0..3isize {
                            let ix = x + kx - 1;
                            if ix < 0 || ix >= n {
                                continue;
                            }
                            let wv = w.kernel[((oc * 3 + ic) * 3 + ky as usize) * 3 + kx as usize];
                            s += wv * patch[(ic * PATCH + iy as usize) * PATCH + ix as usize];
                        }
                    }
                }
                acc += silu(s);
            }
        }
        *out = acc / (PATCH * PATCH) as f64;
    }
    FeatureVec::normalized(pooled)
}

/// Feature of the patch centered at `det`.
pub fn embed_patch(tensor: &RDTensor, det: &Detection, w: &EmbedWeights) -> FeatureVec {
    embed_raw_patch(&extract_patch(tensor, det.range_bin, det.doppler_bin), w)
}
