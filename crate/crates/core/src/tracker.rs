//! Confidence-adaptive Kalman tracking in (range, radial velocity).
//!
//! Per frame the measurement noise is rescaled by the detection
//! confidences, live tracks are predicted, detection/track pairs are gated
//! on squared Mahalanobis distance, scored by a weighted sum of that
//! distance and the cosine distance between appearance features, and
//! assigned with the Hungarian algorithm.

use nalgebra::{Matrix2, Vector2};

use crate::assignment::assign_sparse;
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::features::{cosine_distance, ema_update, FeatureVec};
use crate::rd_pipeline::phys_unchecked;
use crate::signal_sim::RadarParams;

/// Constant-velocity motion and measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub f: Matrix2<f64>,
    pub h: Matrix2<f64>,
    pub q: Matrix2<f64>,
    pub r: Matrix2<f64>,
    pub delta_t: f64,
    pub q_s: f64,
    pub sigma_r: f64,
    pub sigma_v: f64,
}

impl MotionModel {
    pub fn constant_velocity(delta_t: f64, q_s: f64, sigma_r: f64, sigma_v: f64) -> Self {
        let dt = delta_t;
        Self {
            f: Matrix2::new(1.0, dt, 0.0, 1.0),
            h: Matrix2::identity(),
            q: q_s * Matrix2::new(dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt),
            r: Matrix2::new(sigma_r * sigma_r, 0.0, 0.0, sigma_v * sigma_v),
            delta_t,
            q_s,
            sigma_r,
            sigma_v,
        }
    }
}

impl Default for MotionModel {
    /// Δt = 0.2 s, q_s = 0.2 m²/s³, σ_r = 0.6 m, σ_v = 0.2 m/s.
    fn default() -> Self {
        Self::constant_velocity(0.2, 0.2, 0.6, 0.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Deleted => "deleted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    /// `(range m, velocity m/s)`.
    pub state: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub feature: Option<FeatureVec>,
    pub status: TrackStatus,
    pub hits: u32,
    /// Consecutive frames without an associated detection.
    pub misses: u32,
    /// Frames since birth, counting the birth frame.
    pub age: u32,
}

impl Track {
    pub fn new(id: u64, state: Vector2<f64>, cov: Matrix2<f64>, feature: Option<FeatureVec>) -> Self {
        Self {
            id,
            state,
            cov,
            feature,
            status: TrackStatus::Tentative,
            hits: 1,
            misses: 0,
            age: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Weight of the Mahalanobis term in the combined cost.
    pub mu: f64,
    /// EMA weight of the stored track feature.
    pub alpha: f64,
    /// Squared-Mahalanobis gate (χ²₂ 0.99 quantile by default).
    pub gate: f64,
    pub confirm_hits: u32,
    /// Frames a tentative track has to collect `confirm_hits`.
    pub confirm_window: u32,
    pub max_misses: u32,
    pub init_confidence_min: f64,
    /// Bound on the measurement-noise scale factor and its inverse.
    pub cakf_factor_cap: f64,
    /// Scale R by detection confidence; `false` is the fixed-R filter.
    pub adaptive_r: bool,
    /// Add the feature term to the cost; `false` is position-only.
    pub use_features: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            mu: 0.3,
            alpha: 0.7,
            gate: 9.2103,
            confirm_hits: 2,
            confirm_window: 3,
            max_misses: 3,
            init_confidence_min: 0.3,
            cakf_factor_cap: 10.0,
            adaptive_r: true,
            use_features: true,
        }
    }
}

impl TrackerConfig {
    /// Fixed R and position-only association.
    pub fn ablated() -> Self {
        Self {
            adaptive_r: false,
            use_features: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("mu and alpha must lie in [0, 1]".into()));
        }
        if !(self.gate > 0.0) {
            return Err(Error::Config("gate must be positive".into()));
        }
        if !(self.cakf_factor_cap >= 1.0) {
            return Err(Error::Config("cakf_factor_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mapping from one frame's detection confidences to a scale factor on R.
pub trait NoiseScaling {
    fn factor(&self, confidences: &[f64]) -> f64;
}

/// `n / (2·Σc)`: unity at mean confidence 0.5, larger for less confident
/// frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct InverseMeanConfidence;

impl NoiseScaling for InverseMeanConfidence {
    fn factor(&self, confidences: &[f64]) -> f64 {
        let sum: f64 = confidences.iter().sum();
        confidences.len() as f64 / (2.0 * sum)
    }
}

/// `R̂ = F(R, c)` with the factor clamped to `[1/cap, cap]`. An empty
/// confidence list returns R unchanged.
pub fn cakf_scale_with(
    r: &Matrix2<f64>,
    confidences: &[f64],
    cap: f64,
    mapping: &impl NoiseScaling,
) -> Matrix2<f64> {
    if confidences.is_empty() {
        return *r;
    }
    let f = mapping.factor(confidences);
    let f = if f.is_nan() { cap } else { f.clamp(1.0 / cap, cap) };
    r * f
}

pub fn cakf_scale(r: &Matrix2<f64>, confidences: &[f64], cap: f64) -> Matrix2<f64> {
    cakf_scale_with(r, confidences, cap, &InverseMeanConfidence)
}

fn symmetrize(p: &Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}

pub fn kf_predict(track: &Track, m: &MotionModel) -> Track {
    Track {
        state: m.f * track.state,
        cov: symmetrize(&(m.f * track.cov * m.f.transpose() + m.q)),
        ..track.clone()
    }
}

/// Innovation covariance `H·P·Hᵀ + R̂`.
pub fn innovation_cov(track: &Track, m: &MotionModel, r_hat: &Matrix2<f64>) -> Matrix2<f64> {
    m.h * track.cov * m.h.transpose() + r_hat
}

/// Kalman update with a Joseph-form covariance.
pub fn kf_update(
    track: &Track,
    z: &Vector2<f64>,
    m: &MotionModel,
    r_hat: &Matrix2<f64>,
) -> Result<Track> {
    let s = innovation_cov(track, m, r_hat);
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("innovation covariance {s:?}")))?;
    let k = track.cov * m.h.transpose() * s_inv;
    let innovation = z - m.h * track.state;
    let i_kh = Matrix2::identity() - k * m.h;
    let cov = i_kh * track.cov * i_kh.transpose() + k * r_hat * k.transpose();
    Ok(Track {
        state: track.state + k * innovation,
        cov: symmetrize(&cov),
        ..track.clone()
    })
}

/// `(z − x)ᵀ S⁻¹ (z − x)`.
pub fn mahalanobis2(z: &Vector2<f64>, x: &Vector2<f64>, s: &Matrix2<f64>) -> Result<f64> {
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("covariance {s:?}")))?;
    let d = z - x;
    Ok((d.transpose() * s_inv * d)[(0, 0)])
}

/// `μ·d1 + (1 − μ)·d2`.
pub fn combined_cost(d1: f64, d2: f64, mu: f64) -> f64 {
    mu * d1 + (1.0 - mu) * d2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackEvent {
    Born(u64),
    Confirmed(u64),
    Deleted(u64),
}

/// Multi-target tracker state, advanced one frame at a time.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub cfg: TrackerConfig,
    pub motion: MotionModel,
    pub radar: RadarParams,
    tracks: Vec<Track>,
    next_id: u64,
    last_r_hat: Matrix2<f64>,
}

struct Measurement<'a> {
    z: Vector2<f64>,
    det: &'a Detection,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, motion: MotionModel, radar: RadarParams) -> Result<Self> {
        cfg.validate()?;
        let last_r_hat = motion.r;
        Ok(Self {
            cfg,
            motion,
            radar,
            tracks: Vec::new(),
            next_id: 1,
            last_r_hat,
        })
    }

    /// Live tracks ordered by id.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &Track> {
        self.tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
    }

    /// Measurement noise used in the most recent step.
    pub fn last_r_hat(&self) -> Matrix2<f64> {
        self.last_r_hat
    }

    /// Insert an existing track, e.g. to resume from saved state.
    pub fn insert_track(&mut self, track: Track) {
        self.next_id = self.next_id.max(track.id + 1);
        self.tracks.push(track);
        self.tracks.sort_by_key(|t| t.id);
    }

    fn feature_distance(&self, track: &Track, det: &Detection) -> f64 {
        match (&track.feature, &det.feature) {
            (Some(a), Some(b)) => cosine_distance(a, b),
            _ => 1.0,
        }
    }

    /// Advance by one frame of detections.
    pub fn step(&mut self, dets: &[Detection]) -> Result<Vec<TrackEvent>> {
        let mut order: Vec<&Detection> = dets.iter().collect();
        order.sort_by(|a, b| a.canonical_cmp(b));
        let meas: Vec<Measurement> = order
            .iter()
            .map(|d| {
                let (r, v) = phys_unchecked(d.range_bin, d.doppler_bin, &self.radar);
                Measurement {
                    z: Vector2::new(r, v),
                    det: d,
                }
            })
            .collect();

        let r_hat = if self.cfg.adaptive_r {
            let conf: Vec<f64> = meas.iter().map(|m| m.det.confidence).collect();
            cakf_scale(&self.motion.r, &conf, self.cfg.cakf_factor_cap)
        } else {
            self.motion.r
        };
        self.last_r_hat = r_hat;

        for t in self.tracks.iter_mut() {
            *t = kf_predict(t, &self.motion);
        }

        let mut edges = Vec::new();
        for (j, t) in self.tracks.iter().enumerate() {
            let s = innovation_cov(t, &self.motion, &r_hat);
            let s_inv = s
                .try_inverse()
                .ok_or_else(|| Error::Singular(format!("innovation covariance of track {}", t.id)))?;
            let x = self.motion.h * t.state;
            for (i, m) in meas.iter().enumerate() {
                let d = m.z - x;
                let d1 = (d.transpose() * s_inv * d)[(0, 0)];
                if !(d1 <= self.cfg.gate) {
                    continue;
                }
                let cost = if self.cfg.use_features {
                    combined_cost(d1, self.feature_distance(t, m.det), self.cfg.mu)
                } else {
                    d1
                };
                edges.push((j, i, cost));
            }
        }
        let assignment = assign_sparse(self.tracks.len(), meas.len(), &edges);

        let mut events = Vec::new();
        for &(j, i) in &assignment.pairs {
            let m = &meas[i];
            let updated = kf_update(&self.tracks[j], &m.z, &self.motion, &r_hat)?;
            let t = &mut self.tracks[j];
            t.state = updated.state;
            t.cov = updated.cov;
            t.feature = match (&t.feature, &m.det.feature) {
                (Some(tf), Some(df)) => Some(ema_update(tf, df, self.cfg.alpha)),
                (None, Some(df)) => Some(df.clone()),
                (tf, None) => tf.clone(),
            };
            t.hits += 1;
            t.misses = 0;
            t.age += 1;
            if t.status == TrackStatus::Tentative && t.hits >= self.cfg.confirm_hits {
                t.status = TrackStatus::Confirmed;
                events.push(TrackEvent::Confirmed(t.id));
            }
        }
        for &j in &assignment.unmatched_rows {
            let t = &mut self.tracks[j];
            t.misses += 1;
            t.age += 1;
            let expired = t.status == TrackStatus::Tentative && t.age >= self.cfg.confirm_window;
            if expired || t.misses >= self.cfg.max_misses {
                t.status = TrackStatus::Deleted;
                events.push(TrackEvent::Deleted(t.id));
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Deleted);

        let p0 = Matrix2::new(
            self.motion.sigma_r.powi(2),
            0.0,
            0.0,
            self.motion.sigma_v.powi(2),
        );
        for &i in &assignment.unmatched_cols {
            let m = &meas[i];
            if m.det.confidence < self.cfg.init_confidence_min {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let mut t = Track::new(id, m.z, p0, m.det.feature.clone());
            if t.hits >= self.cfg.confirm_hits {
                t.status = TrackStatus::Confirmed;
                events.push(TrackEvent::Born(id));
                events.push(TrackEvent::Confirmed(id));
            } else {
                events.push(TrackEvent::Born(id));
            }
            self.tracks.push(t);
        }
        Ok(events)
    }
}
