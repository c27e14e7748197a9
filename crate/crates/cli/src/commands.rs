//! Pipeline stages. Each stage reads and writes one seed directory:
//!
//! ```text
//! <out>/seed-<n>/scenario.ini     resolved scenario
//! <out>/seed-<n>/truth.csv
//! <out>/seed-<n>/frames/frame_0000.rdm
//! <out>/seed-<n>/detections.csv
//! <out>/seed-<n>/tracks.csv
//! <out>/seed-<n>/metrics.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rdtrack::classic_detect::{ca_cfar, dbscan_cluster, monte_carlo_threshold, threshold_detect, truth_mask, CfarConfig};
use rdtrack::config::{format_scenario, parse_scenario, Document};
use rdtrack::experiment::{detection_set, training_pairs, DetectionSetConfig, CLUSTER_EPS, CLUSTER_MIN_PTS};
use rdtrack::features::{embed_patch, EmbedWeights};
use rdtrack::formats::{
    format_detections, format_metrics, format_tracks, format_truth, parse_detections, parse_tracks, parse_truth,
    read_rdm, read_weights, write_rdm, write_weights, MetricRow, TrackRow,
};
use rdtrack::metrics::{ospa, pd_pfa, OspaParams};
use rdtrack::neural::{decode_detections, forward, input_tensor, train_from, TrainConfig, WeightSet};
use rdtrack::rd_pipeline::{bin_of, phys_of, process_frame, three_channel, GroundTruthFrame, RDMatrix};
use rdtrack::signal_sim::{synth_echo, ScenarioConfig};
use rdtrack::tracker::{MotionModel, Tracker, TrackerConfig};
use rdtrack::{Detection, Error, Result};

use crate::manifest::DetectorKind;

/// Design false-alarm rate of the Monte Carlo threshold.
pub const MC_PFA: f64 = 1e-3;
/// Cells around each truth excluded from the Monte Carlo clutter set.
pub const MC_GUARD: usize = 2;
/// Pd matching box in bins.
pub const PD_TOL: (f64, f64) = (1.0, 1.0);
/// Seed of the fixed random-projection patch embedder.
pub const EMBED_SEED: u64 = 0;

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn frame_path(dir: &Path, f: usize) -> PathBuf {
    dir.join("frames").join(format!("frame_{f:04}.rdm"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_scenario(dir: &Path) -> Result<ScenarioConfig> {
    parse_scenario(&read_text(&dir.join("scenario.ini"))?)
}

fn load_truth(dir: &Path, frames: usize) -> Result<Vec<GroundTruthFrame>> {
    let parsed = parse_truth(&read_text(&dir.join("truth.csv"))?)?;
    Ok((0..frames)
        .map(|f| {
            parsed.iter().find(|g| g.frame == f).cloned().unwrap_or(GroundTruthFrame {
                frame: f,
                entries: Vec::new(),
            })
        })
        .collect())
}

/// Detections grouped per frame; frames without detections are empty.
fn group_by_frame(rows: Vec<(usize, Detection)>, frames: usize) -> Result<Vec<Vec<Detection>>> {
    let mut out = vec![Vec::new(); frames];
    for (f, d) in rows {
        out.get_mut(f)
            .ok_or_else(|| Error::Shape(format!("detection frame {f} beyond the {frames} simulated frames")))?
            .push(d);
    }
    Ok(out)
}

/// Simulate every frame of the scenario in `config` into `<out>/seed-<n>`.
pub fn simulate(config: &Path, out: &Path, seed: Option<u64>, snr_db: Option<f64>) -> Result<PathBuf> {
    let mut cfg = parse_scenario(&read_text(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if snr_db.is_some() {
        cfg.snr_db = snr_db;
    }
    let dir = seed_dir(out, cfg.seed);
    fs::create_dir_all(dir.join("frames"))?;
    fs::write(dir.join("scenario.ini"), format_scenario(&cfg))?;
    let mut truth = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        let targets = cfg.targets_at(f);
        let entries = targets
            .iter()
            .map(|t| bin_of(t.range, t.velocity, &cfg.radar))
            .collect::<Result<Vec<_>>>()?;
        truth.push(GroundTruthFrame { frame: f, entries });
        let rd = process_frame(&synth_echo(&cfg, f, &targets)?)?;
        write_rdm(&rd, frame_path(&dir, f))?;
    }
    fs::write(dir.join("truth.csv"), format_truth(&truth))?;
    Ok(dir)
}

fn cluster(cells: &[Detection]) -> Result<Vec<Detection>> {
    Ok(dbscan_cluster(cells, CLUSTER_EPS, CLUSTER_MIN_PTS)?
        .into_iter()
        .map(|c| c.detection)
        .collect())
}

/// Detections of one RD frame.
pub fn detect_frame(
    rd: &RDMatrix,
    truth: &GroundTruthFrame,
    detector: DetectorKind,
    weights: Option<&WeightSet>,
    conf_threshold: Option<f64>,
) -> Result<Vec<Detection>> {
    let energy = rd.energy();
    let dets = match detector {
        DetectorKind::Cfar => cluster(&ca_cfar(&energy, &CfarConfig::default())?)?,
        DetectorKind::MonteCarlo => {
            let mask = truth_mask(energy.rows, energy.cols, &truth.entries, MC_GUARD);
            let t = monte_carlo_threshold(&energy, &mask, MC_PFA)?;
            cluster(&threshold_detect(&energy, t))?
        }
        DetectorKind::Neural => {
            let w = weights.ok_or_else(|| Error::Config("the neural detector needs --weights".into()))?;
            let (map, _) = forward(&input_tensor(&three_channel(rd)), w)?;
            return Ok(decode_detections(&map, conf_threshold.unwrap_or(0.5)));
        }
    };
    Ok(match conf_threshold {
        Some(t) => dets.into_iter().filter(|d| d.confidence >= t).collect(),
        None => dets,
    })
}

pub fn load_weights(path: &Path) -> Result<WeightSet> {
    WeightSet::from_arrays(read_weights(path)?)
}

pub fn detect(dir: &Path, detector: DetectorKind, weights: Option<&Path>, conf_threshold: Option<f64>) -> Result<PathBuf> {
    let cfg = load_scenario(dir)?;
    let truth = load_truth(dir, cfg.frames)?;
    let w = weights.map(load_weights).transpose()?;
    let mut rows = Vec::new();
    for (f, t) in truth.iter().enumerate() {
        let rd = read_rdm(frame_path(dir, f))?;
        if (rd.rows, rd.cols) != (cfg.radar.samples, cfg.radar.pulses) {
            return Err(Error::Shape(format!(
                "frame {f} is {}×{}, scenario expects {}×{}",
                rd.rows, rd.cols, cfg.radar.samples, cfg.radar.pulses
            )));
        }
        for d in detect_frame(&rd, t, detector, w.as_ref(), conf_threshold)? {
            rows.push((f, d));
        }
    }
    let path = dir.join("detections.csv");
    fs::write(&path, format_detections(&rows))?;
    Ok(path)
}

pub fn tracker_config(fixed_r: bool, position_only: bool) -> TrackerConfig {
    TrackerConfig {
        adaptive_r: !fixed_r,
        use_features: !position_only,
        ..TrackerConfig::default()
    }
}

fn track_rows(tracker: &Tracker, frame: usize) -> impl Iterator<Item = TrackRow> + '_ {
    tracker.tracks().iter().map(move |t| TrackRow {
        frame,
        track_id: t.id,
        status: t.status.as_str().to_owned(),
        range: t.state[0],
        velocity: t.state[1],
        p00: t.cov[(0, 0)],
        p01: t.cov[(0, 1)],
        p11: t.cov[(1, 1)],
    })
}

pub fn track(dir: &Path, fixed_r: bool, position_only: bool) -> Result<PathBuf> {
    let cfg = load_scenario(dir)?;
    let frames = group_by_frame(parse_detections(&read_text(&dir.join("detections.csv"))?)?, cfg.frames)?;
    let tc = tracker_config(fixed_r, position_only);
    let motion = MotionModel::constant_velocity(cfg.radar.frame_period_s, 0.2, cfg.clutter.sigma_range, cfg.clutter.sigma_velocity);
    let mut tracker = Tracker::new(tc.clone(), motion, cfg.radar.clone())?;
    let embed = EmbedWeights::seeded(EMBED_SEED);
    let mut rows = Vec::new();
    for (f, mut dets) in frames.into_iter().enumerate() {
        if tc.use_features && !dets.is_empty() {
            let tensor = three_channel(&read_rdm(frame_path(dir, f))?);
            for d in &mut dets {
                d.feature = Some(embed_patch(&tensor, d, &embed));
            }
        }
        tracker.step(&dets)?;
        rows.extend(track_rows(&tracker, f));
    }
    let path = dir.join("tracks.csv");
    fs::write(&path, format_tracks(&rows))?;
    Ok(path)
}

/// Per-frame Pd/Pfa from `detections.csv` and OSPA from `tracks.csv`,
/// whichever exist.
pub fn eval(dir: &Path) -> Result<PathBuf> {
    let cfg = load_scenario(dir)?;
    let truth = load_truth(dir, cfg.frames)?;
    let cells = cfg.radar.samples * cfg.radar.pulses;
    let det_path = dir.join("detections.csv");
    let dets = if det_path.exists() {
        Some(group_by_frame(parse_detections(&read_text(&det_path)?)?, cfg.frames)?)
    } else {
        None
    };
    let track_path = dir.join("tracks.csv");
    let tracks = if track_path.exists() {
        Some(parse_tracks(&read_text(&track_path)?)?)
    } else {
        None
    };
    if dets.is_none() && tracks.is_none() {
        return Err(Error::Config(format!("{} has neither detections nor tracks", dir.display())));
    }
    let mut rows = Vec::with_capacity(cfg.frames);
    for (f, t) in truth.iter().enumerate() {
        let (pd, pfa) = match &dets {
            Some(d) => {
                let r = pd_pfa(&d[f], t, PD_TOL, cells);
                ((!t.entries.is_empty()).then_some(r.pd), Some(r.pfa))
            }
            None => (None, None),
        };
        let score = match &tracks {
            Some(rows) => {
                let est: Vec<[f64; 2]> = rows
                    .iter()
                    .filter(|r| r.frame == f && r.status == "confirmed")
                    .map(|r| [r.range, r.velocity])
                    .collect();
                let truth_phys = t
                    .entries
                    .iter()
                    .map(|&(rb, db)| phys_of(rb, db, &cfg.radar).map(|(r, v)| [r, v]))
                    .collect::<Result<Vec<_>>>()?;
                Some(ospa(&est, &truth_phys, OspaParams::default()))
            }
            None => None,
        };
        rows.push(MetricRow {
            frame: f,
            pd,
            pfa,
            ospa: score,
        });
    }
    let path = dir.join("metrics.csv");
    fs::write(&path, format_metrics(&rows))?;
    Ok(path)
}

/// Dataset and optimizer settings for `train`, read from optional
/// `[dataset]` and `[train]` sections.
pub fn train_settings(text: Option<&str>, seed: Option<u64>) -> Result<(DetectionSetConfig, TrainConfig)> {
    let mut data = DetectionSetConfig {
        frames: 2000,
        ..DetectionSetConfig::default()
    };
    let mut tc = TrainConfig::default();
    if let Some(text) = text {
        let doc = Document::parse(text)?;
        if let Some(s) = doc.section("dataset") {
            if let Some(v) = s.parse("size")? {
                data.size = v;
            }
            if let Some(v) = s.parse("frames")? {
                data.frames = v;
            }
            if let Some(e) = s.get("targets") {
                let (a, b) = e.pair()?;
                data.targets = (a as usize, b as usize);
            }
            if let Some(e) = s.get("post_snr_db") {
                data.post_snr_db = e.pair()?;
            }
            if let Some(v) = s.parse("seed")? {
                data.seed = v;
            }
        }
        if let Some(s) = doc.section("train") {
            if let Some(v) = s.parse("learning_rate")? {
                tc.learning_rate = v;
            }
            if let Some(v) = s.parse("epochs")? {
                tc.epochs = v;
            }
            if let Some(v) = s.parse("batch_size")? {
                tc.batch_size = v;
            }
            if let Some(v) = s.parse("augment_off_epochs")? {
                tc.augment_off_epochs = v;
            }
            if let Some(e) = s.get("augment_noise_std") {
                tc.augment_noise_std = e.pair()?;
            }
            if let Some(v) = s.parse("lambda1")? {
                tc.lambda1 = v;
            }
            if let Some(v) = s.parse("lambda2")? {
                tc.lambda2 = v;
            }
            if let Some(v) = s.parse("cosine_decay")? {
                tc.cosine_decay = v;
            }
        }
    }
    if let Some(s) = seed {
        tc.seed = s;
        data.seed = data.seed.wrapping_add(s);
    }
    data.validate()?;
    tc.validate()?;
    Ok((data, tc))
}

/// Train on a simulated set; writes `weights.bin` and `loss.csv`.
pub fn train(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<PathBuf> {
    let text = config.map(read_text).transpose()?;
    let (data, tc) = train_settings(text.as_deref(), seed)?;
    let set = training_pairs(detection_set(&data)?);
    let outcome = train_from(&set, &tc, WeightSet::seeded(tc.seed), |_, _| {})?;
    fs::create_dir_all(out)?;
    let path = out.join("weights.bin");
    write_weights(outcome.weights.arrays(), &path)?;
    let mut loss = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_trace.iter().enumerate() {
        loss.push_str(&format!("{e},{l}\n"));
    }
    fs::write(out.join("loss.csv"), loss)?;
    Ok(path)
}
