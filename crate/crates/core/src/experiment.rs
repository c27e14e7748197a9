//! Reproducible experiment drivers: simulated detection sets, detector
//! comparison at matched false-alarm rate, and the multi-target clutter
//! tracking scenario.

use nalgebra::Vector2;
use rand::Rng;

use crate::classic_detect::{cfar_at_scale, cfar_statistic, dbscan_cluster, CfarConfig};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::formats::TrackRow;
use crate::metrics::{ospa, pd_pfa, OspaParams};
use crate::neural::{decode_detections, forward, input_tensor, DetectionMap, WeightSet};
use crate::rd_pipeline::{
    phys_unchecked, process_frame, processing_gain_db, three_channel, EnergyMap, GroundTruthFrame, RDTensor,
};
use crate::rng::{self, Purpose};
use crate::signal_sim::{gen_measurement_frame, synth_echo, ClutterConfig, RadarParams, ScenarioConfig, TargetState};
use crate::tracker::{MotionModel, Tracker, TrackerConfig};

/// Random point-target frames on a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSetConfig {
    pub size: usize,
    pub frames: usize,
    /// Inclusive range of the target count per frame.
    pub targets: (usize, usize),
    /// Range of the nominal per-target post-integration SNR in dB.
    pub post_snr_db: (f64, f64),
    /// Minimum distance of a target from the grid edge, bins.
    pub margin: f64,
    /// Minimum Chebyshev distance between targets, bins.
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for DetectionSetConfig {
    fn default() -> Self {
        Self {
            size: 64,
            frames: 100,
            targets: (1, 3),
            post_snr_db: (10.0, 15.0),
            margin: 2.0,
            min_separation: 4.0,
            seed: 0,
        }
    }
}

impl DetectionSetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.targets.0 == 0 || self.targets.0 > self.targets.1 {
            return Err(Error::Config("target count range must satisfy 1 <= lo <= hi".into()));
        }
        if !(self.post_snr_db.0 <= self.post_snr_db.1) || !self.post_snr_db.0.is_finite() || !self.post_snr_db.1.is_finite() {
            return Err(Error::Config("post_snr_db must be a finite interval".into()));
        }
        if !(self.margin >= 0.0 && 2.0 * self.margin < self.size as f64) {
            return Err(Error::Config("margin leaves no room for targets".into()));
        }
        Ok(())
    }
}

/// One simulated frame with the detector inputs and its truth.
#[derive(Debug, Clone)]
pub struct DetectionSample {
    pub energy: EnergyMap,
    pub tensor: RDTensor,
    pub truth: GroundTruthFrame,
    pub post_snr_db: f64,
}

/// Frame `index` of the set. Targets have unit amplitude; the noise power
/// puts each at the drawn post-integration SNR.
pub fn detection_sample(cfg: &DetectionSetConfig, index: usize) -> Result<DetectionSample> {
    cfg.validate()?;
    let radar = RadarParams::square(cfg.size)?;
    let mut rng = rng::stream(cfg.seed, index as u64, Purpose::Dataset);
    let k = rng.random_range(cfg.targets.0..=cfg.targets.1);
    let (lo, hi) = cfg.post_snr_db;
    let snr = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let span = (cfg.margin, cfg.size as f64 - cfg.margin);
    let mut bins: Vec<(f64, f64)> = Vec::with_capacity(k);
    let mut attempts = 0;
    while bins.len() < k {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config("cannot place targets with the requested separation".into()));
        }
        let p = (rng.random_range(span.0..span.1), rng.random_range(span.0..span.1));
        if bins
            .iter()
            .all(|q| (p.0 - q.0).abs().max((p.1 - q.1).abs()) >= cfg.min_separation)
        {
            bins.push(p);
        }
    }
    let targets: Vec<TargetState> = bins
        .iter()
        .map(|&(rb, db)| {
            let (r, v) = phys_unchecked(rb, db, &radar);
            TargetState::new(r, v, 1.0)
        })
        .collect();
    let mut scen = ScenarioConfig::new(radar.clone());
    // Summed power of k unit targets is about k, so the configured
    // per-sample SNR is shifted by 10·log10(k).
    scen.snr_db = Some(snr - processing_gain_db(&radar) + 10.0 * (k as f64).log10());
    scen.seed = cfg.seed;
    let raw = synth_echo(&scen, index, &targets)?;
    let rd = process_frame(&raw)?;
    Ok(DetectionSample {
        energy: rd.energy(),
        tensor: three_channel(&rd),
        truth: GroundTruthFrame {
            frame: index,
            entries: bins,
        },
        post_snr_db: snr,
    })
}

pub fn detection_set(cfg: &DetectionSetConfig) -> Result<Vec<DetectionSample>> {
    (0..cfg.frames).map(|i| detection_sample(cfg, i)).collect()
}

/// Pairs for [`crate::neural::train`].
pub fn training_pairs(samples: Vec<DetectionSample>) -> Vec<(RDTensor, GroundTruthFrame)> {
    samples.into_iter().map(|s| (s.tensor, s.truth)).collect()
}

/// DBSCAN radius and density used to merge adjacent CFAR cells.
pub const CLUSTER_EPS: f64 = 1.5;
pub const CLUSTER_MIN_PTS: usize = 1;

/// CA-CFAR cells above `scale` times the design threshold, merged into
/// cluster centroids.
pub fn cfar_detections(energy: &EnergyMap, ratio: &[f64], scale: f64) -> Result<Vec<Detection>> {
    let cells = cfar_at_scale(energy, ratio, scale);
    Ok(dbscan_cluster(&cells, CLUSTER_EPS, CLUSTER_MIN_PTS)?
        .into_iter()
        .map(|c| c.detection)
        .collect())
}

/// Pooled Pd and Pfa of a detector at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub pd: f64,
    pub pfa: f64,
}

/// Pool `pd_pfa` over frames: matched truths over all truths, false alarms
/// over all cells.
pub fn pooled_rates<'a>(
    frames: impl IntoIterator<Item = (&'a GroundTruthFrame, Vec<Detection>)>,
    tol: (f64, f64),
    cells: usize,
) -> (f64, f64) {
    let (mut hits, mut truths, mut fa, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (truth, dets) in frames {
        let r = pd_pfa(&dets, truth, tol, cells);
        hits += r.matches.len();
        truths += truth.entries.len();
        fa += r.false_alarms;
        n += 1;
    }
    let pd = if truths == 0 { 0.0 } else { hits as f64 / truths as f64 };
    let pfa = if n == 0 { 0.0 } else { fa as f64 / (n * cells) as f64 };
    (pd, pfa)
}

/// Smallest threshold in `[lo, hi]` whose Pfa does not exceed `target`, by
/// bisection; `eval` maps a threshold to `(pd, pfa)` with Pfa
/// nonincreasing in the threshold.
pub fn match_pfa(mut eval: impl FnMut(f64) -> Result<(f64, f64)>, lo: f64, hi: f64, target: f64, iters: usize) -> Result<OperatingPoint> {
    let (pd_hi, pfa_hi) = eval(hi)?;
    if pfa_hi > target {
        return Err(Error::Domain(format!("Pfa {pfa_hi} at the highest threshold {hi} exceeds {target}")));
    }
    let mut best = OperatingPoint {
        threshold: hi,
        pd: pd_hi,
        pfa: pfa_hi,
    };
    let (mut a, mut b) = (lo, hi);
    for _ in 0..iters {
        let mid = 0.5 * (a + b);
        let (pd, pfa) = eval(mid)?;
        if pfa <= target {
            b = mid;
            best = OperatingPoint { threshold: mid, pd, pfa };
        } else {
            a = mid;
        }
    }
    Ok(best)
}

/// Detector inputs precomputed once per frame.
pub struct ScoredFrame {
    pub truth: GroundTruthFrame,
    pub energy: EnergyMap,
    pub cfar_ratio: Vec<f64>,
    pub map: DetectionMap,
}

pub fn score_frames(samples: &[DetectionSample], weights: &WeightSet, cfar: &CfarConfig) -> Result<Vec<ScoredFrame>> {
    samples
        .iter()
        .map(|s| {
            let (map, _) = forward(&input_tensor(&s.tensor), weights)?;
            Ok(ScoredFrame {
                truth: s.truth.clone(),
                energy: s.energy.clone(),
                cfar_ratio: cfar_statistic(&s.energy, cfar)?,
                map,
            })
        })
        .collect()
}

/// Both detectors on one evaluation set, each at the threshold that brings
/// its empirical Pfa to at most `target_pfa`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedComparison {
    pub seed: u64,
    pub cfar: OperatingPoint,
    pub neural: OperatingPoint,
}

pub fn compare_at_matched_pfa(frames: &[ScoredFrame], seed: u64, target_pfa: f64, tol: (f64, f64)) -> Result<MatchedComparison> {
    let cells = frames.first().map(|f| f.energy.rows * f.energy.cols).unwrap_or(1);
    // CFAR scale is searched on a log axis.
    let cfar = match_pfa(
        |u| {
            let scale = u.exp();
            let mut per = Vec::with_capacity(frames.len());
            for f in frames {
                per.push((&f.truth, cfar_detections(&f.energy, &f.cfar_ratio, scale)?));
            }
            Ok(pooled_rates(per, tol, cells))
        },
        (1e-2f64).ln(),
        (1e6f64).ln(),
        target_pfa,
        40,
    )?;
    let cfar = OperatingPoint {
        threshold: cfar.threshold.exp(),
        ..cfar
    };
    // Neural confidence threshold is searched in logit space.
    let neural = match_pfa(
        |z| {
            let t = crate::neural::sigmoid(z);
            Ok(pooled_rates(frames.iter().map(|f| (&f.truth, decode_detections(&f.map, t))), tol, cells))
        },
        -30.0,
        30.0,
        target_pfa,
        40,
    )?;
    let neural = OperatingPoint {
        threshold: crate::neural::sigmoid(neural.threshold),
        ..neural
    };
    Ok(MatchedComparison { seed, cfar, neural })
}

/// Parameters of the multi-target clutter scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSetup {
    /// Inclusive range of the target count.
    pub targets: (usize, usize),
    pub frames: usize,
    pub clutter_rate: f64,
    pub clutter_confidence: (f64, f64),
    pub target_confidence: (f64, f64),
    /// Per-component noise of target features.
    pub feature_noise: f64,
    /// Range interval the targets stay inside over the run, m.
    pub range: (f64, f64),
    /// Target speed interval, m/s.
    pub velocity: (f64, f64),
    pub seed: u64,
}

impl Default for TrackingSetup {
    fn default() -> Self {
        Self {
            targets: (7, 10),
            frames: 30,
            clutter_rate: 3000.0,
            clutter_confidence: (0.05, 0.3),
            target_confidence: (0.55, 0.95),
            feature_noise: 0.15,
            range: (10.0, 120.0),
            velocity: (-8.0, 8.0),
            seed: 0,
        }
    }
}

/// Scenario with random constant-velocity targets that stay inside the
/// configured range interval; clutter covers the whole region.
pub fn tracking_scenario(setup: &TrackingSetup) -> Result<ScenarioConfig> {
    let radar = RadarParams::table1();
    let mut rng = rng::stream(setup.seed, 0, Purpose::Scenario);
    let k = rng.random_range(setup.targets.0..=setup.targets.1);
    let duration = setup.frames.saturating_sub(1) as f64 * radar.frame_period_s;
    let mut targets = Vec::with_capacity(k);
    while targets.len() < k {
        let v = rng.random_range(setup.velocity.0..setup.velocity.1);
        let (lo, hi) = (setup.range.0.max(setup.range.0 - v * duration), setup.range.1.min(setup.range.1 - v * duration));
        if hi <= lo {
            continue;
        }
        targets.push(TargetState::new(rng.random_range(lo..hi), v, 1.0));
    }
    let mut cfg = ScenarioConfig::new(radar);
    cfg.targets = targets;
    cfg.frames = setup.frames;
    cfg.seed = setup.seed;
    cfg.clutter = ClutterConfig {
        rate: setup.clutter_rate,
        range: (0.0, 130.0),
        velocity: (-20.0, 20.0),
        clutter_confidence: setup.clutter_confidence,
        target_confidence: setup.target_confidence,
        feature_noise: Some(setup.feature_noise),
        ..ClutterConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Per-frame tracker output and score.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRun {
    pub ospa: Vec<f64>,
    pub rows: Vec<TrackRow>,
}

impl TrackingRun {
    pub fn mean_ospa(&self) -> f64 {
        self.ospa.iter().sum::<f64>() / self.ospa.len().max(1) as f64
    }
}

/// Run the tracker over every frame of `cfg`, scoring confirmed tracks
/// against the truth in `(range, velocity)` with OSPA.
pub fn run_tracking(cfg: &ScenarioConfig, tracker_cfg: TrackerConfig, params: OspaParams) -> Result<TrackingRun> {
    let frames: Result<Vec<Vec<Detection>>> = (0..cfg.frames)
        .map(|f| gen_measurement_frame(cfg, &cfg.targets_at(f), f))
        .collect();
    run_tracking_on(cfg, &frames?, tracker_cfg, params)
}

/// [`run_tracking`] on given detection frames.
pub fn run_tracking_on(cfg: &ScenarioConfig, frames: &[Vec<Detection>], tracker_cfg: TrackerConfig, params: OspaParams) -> Result<TrackingRun> {
    let motion = MotionModel::constant_velocity(cfg.radar.frame_period_s, 0.2, cfg.clutter.sigma_range, cfg.clutter.sigma_velocity);
    let mut tracker = Tracker::new(tracker_cfg, motion, cfg.radar.clone())?;
    let mut out = TrackingRun {
        ospa: Vec::with_capacity(frames.len()),
        rows: Vec::new(),
    };
    for (f, dets) in frames.iter().enumerate() {
        tracker.step(dets)?;
        let est: Vec<[f64; 2]> = tracker.confirmed().map(|t| [t.state[0], t.state[1]]).collect();
        let truth: Vec<[f64; 2]> = cfg.targets_at(f).iter().map(|t| [t.range, t.velocity]).collect();
        out.ospa.push(ospa(&est, &truth, params));
        for t in tracker.tracks() {
            out.rows.push(track_row(f, t.id, t.status.as_str(), &t.state, &t.cov));
        }
    }
    Ok(out)
}

fn track_row(frame: usize, id: u64, status: &str, x: &Vector2<f64>, p: &nalgebra::Matrix2<f64>) -> TrackRow {
    TrackRow {
        frame,
        track_id: id,
        status: status.to_owned(),
        range: x[0],
        velocity: x[1],
        p00: p[(0, 0)],
        p01: p[(0, 1)],
        p11: p[(1, 1)],
    }
}
