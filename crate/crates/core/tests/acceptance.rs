//! End-to-end acceptance checks. Each check prints one PASS or FAIL line;
//! the process exits nonzero if any check fails.
//!
//! Run a subset with `cargo test --release --test acceptance -- 1 5 8`.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use rdtrack::assignment::{assign, CostMatrix};
use rdtrack::classic_detect::{cfar_at_scale, cfar_statistic, monte_carlo_threshold, threshold_detect, truth_mask, CfarConfig};
use rdtrack::experiment::{
    compare_at_matched_pfa, detection_set, run_tracking, score_frames, tracking_scenario, training_pairs,
    DetectionSetConfig, TrackingSetup,
};
use rdtrack::formats::{decode_rdm, decode_weights, encode_rdm, encode_weights, read_rdm, read_weights, write_rdm, write_weights, NamedArray};
use rdtrack::metrics::{ospa, OspaParams};
use rdtrack::neural::{grad_check, layer_checks, train, Tensor, TrainConfig, WeightSet};
use rdtrack::rd_pipeline::{coherent_integrate, phys_of, pulse_compress, EnergyMap, GroundTruthFrame, RDMatrix};
use rdtrack::signal_sim::{synth_echo, RadarParams, RawEchoMatrix, ScenarioConfig, TargetState};
use rdtrack::tracker::{cakf_scale, TrackerConfig};

type Outcome = rdtrack::Result<(bool, String)>;

// ---------------------------------------------------------------- 1

fn mean_power(m: &RDMatrix) -> f64 {
    m.total_energy() / m.data.len() as f64
}

/// SNR gain of coherent integration over `pulses` pulses: target-cell SNR
/// after the Doppler DFT divided by the per-pulse SNR after pulse
/// compression. Signal and noise pass through the chain separately.
fn integration_gain_db(pulses: usize) -> rdtrack::Result<f64> {
    let radar = RadarParams::new(77e9, 561.96e6, pulses, 64, 561.96e6, 0.2)?;
    let (rb, db) = (20usize, radar.doppler_center() + 3);
    let (range, velocity) = phys_of(rb as f64, db as f64, &radar)?;
    let scen = ScenarioConfig::new(radar.clone());
    let clean = synth_echo(&scen, 0, &[TargetState::new(range, velocity, 1.0)])?;
    let compressed = pulse_compress(&clean)?;
    let integrated = coherent_integrate(&compressed);

    let mut rng = ChaCha8Rng::seed_from_u64(pulses as u64);
    let sigma = 0.5f64.sqrt();
    let noise = RawEchoMatrix {
        data: (0..radar.samples * pulses)
            .map(|_| {
                let (re, im): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                Complex64::new(sigma * re, sigma * im)
            })
            .collect(),
        params: radar.clone(),
        signal_power: 0.0,
        noise_power: 1.0,
    };
    let noise_compressed = pulse_compress(&noise)?;
    let noise_integrated = coherent_integrate(&noise_compressed);

    let pre_signal = (0..pulses).map(|n| compressed.get(rb, n).norm_sqr()).sum::<f64>() / pulses as f64;
    let pre = pre_signal / mean_power(&noise_compressed);
    let post = integrated.get(rb, db).norm_sqr() / mean_power(&noise_integrated);
    Ok(10.0 * (post / pre).log10())
}

fn integration_gain() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (pulses, expected) in [(512usize, 27.09), (64, 18.06)] {
        let g = integration_gain_db(pulses)?;
        let reference = 10.0 * (pulses as f64).log10();
        ok &= (g - expected).abs() <= 0.5 && (reference - expected).abs() < 0.005;
        parts.push(format!("L={pulses}: {g:.3} dB (expected {expected} ± 0.5)"));
    }
    Ok((ok, parts.join(", ")))
}

// ---------------------------------------------------------------- 2

fn half_confidence_equivalence() -> Outcome {
    let mut cfg = tracking_scenario(&TrackingSetup {
        clutter_rate: 40.0,
        seed: 21,
        ..TrackingSetup::default()
    })?;
    cfg.clutter.clutter_confidence = (0.5, 0.5);
    cfg.clutter.target_confidence = (0.5, 0.5);
    let fixed = TrackerConfig {
        adaptive_r: false,
        ..TrackerConfig::default()
    };
    let a = run_tracking(&cfg, TrackerConfig::default(), OspaParams::default())?;
    let b = run_tracking(&cfg, fixed, OspaParams::default())?;
    if a.rows.len() != b.rows.len() || a.rows.is_empty() {
        return Ok((false, format!("track row counts differ: {} vs {}", a.rows.len(), b.rows.len())));
    }
    let mut worst: f64 = 0.0;
    let mut same_ids = true;
    for (x, y) in a.rows.iter().zip(&b.rows) {
        same_ids &= x.frame == y.frame && x.track_id == y.track_id && x.status == y.status;
        for (u, v) in [(x.range, y.range), (x.velocity, y.velocity), (x.p00, y.p00), (x.p01, y.p01), (x.p11, y.p11)] {
            worst = worst.max((u - v).abs());
        }
    }
    Ok((
        same_ids && worst <= 1e-12,
        format!("{} track rows over {} frames, max state/covariance difference {worst:e}", a.rows.len(), cfg.frames),
    ))
}

// ---------------------------------------------------------------- 3

fn scaling_table() -> Outcome {
    let r = Matrix2::new(0.36, 0.01, 0.01, 0.04);
    let cases: [(&[f64], f64); 3] = [(&[1.0, 1.0, 1.0], 0.5), (&[0.5; 5], 1.0), (&[0.25, 0.25], 2.0)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (conf, factor) in cases {
        let got = cakf_scale(&r, conf, 10.0);
        ok &= got == r * factor;
        parts.push(format!("{conf:?} -> x{}", got[(0, 0)] / r[(0, 0)]));
    }
    Ok((ok, parts.join(", ")))
}

// ---------------------------------------------------------------- 4

/// Minimum over injections of the smaller side into the larger.
fn brute_force_assignment(m: &[Vec<f64>]) -> f64 {
    let (rows, cols) = (m.len(), m[0].len());
    let at = |i: usize, j: usize| if rows <= cols { m[i][j] } else { m[j][i] };
    let (small, large) = (rows.min(cols), rows.max(cols));
    fn go(i: usize, small: usize, large: usize, used: &mut [bool], acc: f64, best: &mut f64, at: &dyn Fn(usize, usize) -> f64) {
        if i == small {
            *best = best.min(acc);
            return;
        }
        for j in 0..large {
            if !used[j] {
                used[j] = true;
                go(i + 1, small, large, used, acc + at(i, j), best, at);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, small, large, &mut vec![false; large], 0.0, &mut best, &at);
    best
}

fn assignment_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (r, c) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let m: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.random_range(0..1000) as f64).collect()).collect();
        let a = assign(&CostMatrix::from_rows(&m));
        let recomputed: f64 = a.pairs.iter().map(|&(i, j)| m[i][j]).sum();
        if a.pairs.len() != r.min(c) || a.cost != brute_force_assignment(&m) || recomputed != a.cost {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("1000 integer matrices up to 7x7, {mismatches} mismatches")))
}

// ---------------------------------------------------------------- 5

fn brute_force_ospa(x: &[[f64; 2]], y: &[[f64; 2]], c: f64, p: f64) -> f64 {
    let (x, y) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    if y.is_empty() {
        return 0.0;
    }
    let d = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt().min(c).powf(p);
    fn go(i: usize, x: &[[f64; 2]], y: &[[f64; 2]], used: &mut [bool], acc: f64, best: &mut f64, d: &dyn Fn(&[f64; 2], &[f64; 2]) -> f64) {
        if i == x.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, x, y, used, acc + d(&x[i], &y[j]), best, d);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, x, y, &mut vec![false; y.len()], 0.0, &mut best, &d);
    ((best + c.powf(p) * (y.len() - x.len()) as f64) / y.len() as f64).powf(1.0 / p)
}

fn ospa_oracle() -> Outcome {
    let params = OspaParams { c: 5.0, p: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let set = |rng: &mut ChaCha8Rng| -> Vec<[f64; 2]> {
            let n = rng.random_range(0..=5);
            (0..n).map(|_| [rng.random_range(0.0..12.0), rng.random_range(0.0..12.0)]).collect()
        };
        let (x, y) = (set(&mut rng), set(&mut rng));
        worst = worst.max((ospa(&x, &y, params) - brute_force_ospa(&x, &y, 5.0, 1.0)).abs());
    }
    let empty: Vec<[f64; 2]> = Vec::new();
    let single = ospa(&empty, &[[3.0, 4.0]], params);
    Ok((
        worst <= 1e-9 && single == 5.0,
        format!("500 set pairs, max |ospa - brute force| {worst:e}; empty vs singleton {single}"),
    ))
}

// ---------------------------------------------------------------- 6

fn gradient_checks() -> Outcome {
    let layers = layer_checks(3, 1e-5);
    let (layer_name, layer_worst) = layers.iter().fold(("", 0.0f64), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let input = Tensor::from_vec(3, 32, 32, (0..3 * 32 * 32).map(|_| rng.random_range(0.0..1.0)).collect());
    let truth = GroundTruthFrame {
        frame: 0,
        entries: vec![(5.3, 17.8), (20.1, 2.6), (29.0, 30.5)],
    };
    let report = grad_check(&WeightSet::seeded(7), &input, &truth, 1e-5, 10, 8)?;
    let (net_name, net_worst) = report.worst().cloned().unwrap_or_default();
    Ok((
        layer_worst < 1e-6 && report.max_rel_error < 1e-6,
        format!(
            "{} layers, worst {layer_name} {layer_worst:.2e}; network {} entries, worst {net_name} {net_worst:.2e}",
            layers.len(),
            report.checked
        ),
    ))
}

// ---------------------------------------------------------------- 7

fn exponential_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EnergyMap {
    let data = (0..rows * cols).map(|_| Exp1.sample(rng)).collect();
    EnergyMap::new(rows, cols, data).expect("consistent shape")
}

fn threshold_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut wrong = 0;
    for _ in 0..200 {
        let (rows, cols) = (rng.random_range(16..=64), rng.random_range(16..=64));
        let map = exponential_map(&mut rng, rows, cols);
        let mut sorted = map.data.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted.windows(2).all(|w| w[0] < w[1]), "energies must be distinct");
        let truth: Vec<(f64, f64)> = (0..rng.random_range(0..4))
            .map(|_| (rng.random_range(0.0..rows as f64), rng.random_range(0.0..cols as f64)))
            .collect();
        let mask = truth_mask(rows, cols, &truth, 2);
        let pfa = rng.random_range(1e-3..0.2);
        let thr = monte_carlo_threshold(&map, &mask, pfa)?;
        let clutter = mask.iter().filter(|&&m| !m).count();
        let fired = threshold_detect(&map, thr)
            .iter()
            .filter(|d| !mask[d.range_bin as usize * cols + d.doppler_bin as usize])
            .count();
        if fired != (pfa * clutter as f64).floor() as usize {
            wrong += 1;
        }
    }

    let cfg = CfarConfig::default();
    let (mut fired, mut cells) = (0usize, 0usize);
    for _ in 0..10 {
        let map = exponential_map(&mut rng, 1000, 1000);
        let ratio = cfar_statistic(&map, &cfg)?;
        fired += cfar_at_scale(&map, &ratio, 1.0).len();
        cells += map.data.len();
    }
    let pfa = fired as f64 / cells as f64;
    let rel = (pfa - cfg.pfa_design).abs() / cfg.pfa_design;
    Ok((
        wrong == 0 && rel <= 0.25,
        format!(
            "Monte Carlo count exact on {}/200 maps; CA-CFAR Pfa {pfa:.4e} over {cells} cells ({:+.1}% of design)",
            200 - wrong,
            100.0 * (pfa / cfg.pfa_design - 1.0)
        ),
    ))
}

// ---------------------------------------------------------------- 8

const TRAIN_FRAMES: usize = 16000;
const TRAIN_SEED: u64 = 1000;
const EVAL_FRAMES: usize = 200;
const EVAL_SEEDS: u64 = 5;

fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.003,
        epochs: 6,
        batch_size: 4,
        augment_noise_std: (0.0, 0.1),
        seed: 1,
        ..TrainConfig::default()
    }
}

fn detector_ordering() -> Outcome {
    let train_set = detection_set(&DetectionSetConfig {
        frames: TRAIN_FRAMES,
        seed: TRAIN_SEED,
        targets: (3, 8),
        ..DetectionSetConfig::default()
    })?;
    let weights = train(&training_pairs(train_set), &train_config())?.weights;
    let (mut cfar, mut neural) = (Vec::new(), Vec::new());
    let mut pfa_worst: f64 = 0.0;
    for s in 0..EVAL_SEEDS {
        let set = detection_set(&DetectionSetConfig {
            frames: EVAL_FRAMES,
            seed: 2000 + s,
            ..DetectionSetConfig::default()
        })?;
        let scored = score_frames(&set, &weights, &CfarConfig::default())?;
        let c = compare_at_matched_pfa(&scored, s, 1e-3, (1.0, 1.0))?;
        pfa_worst = pfa_worst.max((c.cfar.pfa / 1e-3 - 1.0).abs()).max((c.neural.pfa / 1e-3 - 1.0).abs());
        cfar.push(c.cfar.pd);
        neural.push(c.neural.pd);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (pc, pn) = (mean(&cfar), mean(&neural));
    Ok((
        pn >= pc,
        format!(
            "mean Pd over {EVAL_SEEDS} seeds at Pfa 1e-3 (worst deviation {:.1}%): neural {pn:.3}, CA-CFAR {pc:.3}; per seed neural {neural:.3?} CA-CFAR {cfar:.3?}",
            100.0 * pfa_worst
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn mean_ospa_pair(setup: &TrackingSetup, seeds: u64) -> rdtrack::Result<(f64, f64)> {
    let (mut full, mut ablated) = (0.0, 0.0);
    for seed in 0..seeds {
        let cfg = tracking_scenario(&TrackingSetup { seed, ..setup.clone() })?;
        full += run_tracking(&cfg, TrackerConfig::default(), OspaParams::default())?.mean_ospa();
        ablated += run_tracking(&cfg, TrackerConfig::ablated(), OspaParams::default())?.mean_ospa();
    }
    Ok((full / seeds as f64, ablated / seeds as f64))
}

fn tracking_ablation() -> Outcome {
    let seeds = 20;
    let (full, ablated) = mean_ospa_pair(&TrackingSetup::default(), seeds)?;
    Ok((
        full <= ablated,
        format!("mean OSPA over {seeds} seeds: full {full:.3}, ablated {ablated:.3}"),
    ))
}

// ---------------------------------------------------------------- 10

fn random_f64(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..8) {
        0 => f64::from_bits(rng.random::<u64>() & !(0x7ff << 52) | (rng.random_range(1..0x7ff) << 52)),
        1 => -0.0,
        2 => f64::MIN_POSITIVE / 3.0,
        _ => rng.random_range(-1e6..1e6),
    }
}

fn persistence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dir = tempfile::tempdir()?;
    let mut bad = 0;
    for i in 0..100 {
        let (rows, cols) = (rng.random_range(1..40), rng.random_range(1..40));
        let rd = RDMatrix::from_fn(rows, cols, |_, _| Complex64::new(random_f64(&mut rng), random_f64(&mut rng)));
        let bits = |m: &RDMatrix| m.data.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect::<Vec<_>>();
        let path = dir.path().join(format!("m{i}.rdm"));
        write_rdm(&rd, &path)?;
        let from_file = read_rdm(&path)?;
        let from_bytes = decode_rdm(&encode_rdm(&rd)?).map_err(rdtrack::Error::from)?;
        if (from_file.rows, from_file.cols) != (rows, cols) || bits(&from_file) != bits(&rd) || bits(&from_bytes) != bits(&rd) {
            bad += 1;
        }

        let arrays: Vec<NamedArray> = (0..rng.random_range(1..6))
            .map(|k| {
                let dims: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(1..6)).collect();
                let n = dims.iter().product();
                NamedArray::new(format!("layer{k}.w"), dims, (0..n).map(|_| random_f64(&mut rng)).collect())
            })
            .collect();
        let path = dir.path().join(format!("w{i}.bin"));
        write_weights(&arrays, &path)?;
        let back = read_weights(&path)?;
        let again = decode_weights(&encode_weights(&arrays)?).map_err(rdtrack::Error::from)?;
        let same = |a: &[NamedArray], b: &[NamedArray]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.name == y.name
                        && x.dims == y.dims
                        && x.data.iter().map(|v| v.to_bits()).eq(y.data.iter().map(|v| v.to_bits()))
                })
        };
        if !same(&arrays, &back) || !same(&arrays, &again) {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("100 RDM files and 100 weight files, {bad} mismatches")))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("coherent integration gain", integration_gain),
        ("adaptive R at confidence 0.5 equals fixed R", half_confidence_equivalence),
        ("noise scaling factors", scaling_table),
        ("assignment optimality", assignment_optimality),
        ("OSPA against enumeration", ospa_oracle),
        ("gradient verification", gradient_checks),
        ("threshold exactness and CA-CFAR Pfa", threshold_exactness),
        ("neural vs CA-CFAR at matched Pfa", detector_ordering),
        ("tracking ablation", tracking_ablation),
        ("file round trips", persistence),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "{} {n:>2} {name}: {detail} [{:.1} s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
