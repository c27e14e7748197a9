//! Train the neural detector on simulated frames and compare it with
//! CA-CFAR at matched false-alarm rate.
//!
//! Usage: detector_study [train_frames] [epochs] [eval_frames] [eval_seeds] [batch]

use std::time::Instant;

use rdtrack::classic_detect::CfarConfig;
use rdtrack::experiment::{compare_at_matched_pfa, detection_set, score_frames, training_pairs, DetectionSetConfig};
use rdtrack::neural::{train_from, TrainConfig, WeightSet};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn env(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> rdtrack::Result<()> {
    let (n_train, epochs, n_eval, seeds) = (arg(1, 16000), arg(2, 6), arg(3, 200), arg(4, 5));
    let t0 = Instant::now();
    let train_set = detection_set(&DetectionSetConfig {
        frames: n_train,
        seed: 1000,
        post_snr_db: (10.0, env("TRAIN_SNR_HI", 15.0)),
        targets: (env("TRAIN_K_LO", 3.0) as usize, env("TRAIN_K_HI", 8.0) as usize),
        ..DetectionSetConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs,
        learning_rate: env("LR", 0.003),
        cosine_decay: env("COSINE", 1.0) > 0.0,
        augment_noise_std: (0.0, env("AUG_HI", 0.1)),
        batch_size: arg(5, 4),
        augment_off_epochs: epochs.min(3),
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train_from(&training_pairs(train_set), &cfg, WeightSet::seeded(cfg.seed), |e, l| {
        eprintln!("epoch {e} loss {l:.4} ({:.0} s)", t0.elapsed().as_secs_f64())
    })?;
    if let Ok(path) = std::env::var("SAVE_WEIGHTS") {
        rdtrack::formats::write_weights(out.weights.arrays(), path)?;
    }
    diagnose(&out.weights)?;
    for s in 0..seeds as u64 {
        let set = detection_set(&DetectionSetConfig {
            frames: n_eval,
            seed: 2000 + s,
            ..DetectionSetConfig::default()
        })?;
        let scored = score_frames(&set, &out.weights, &CfarConfig::default())?;
        for tol in [1.0, 2.0, 4.0] {
        let c = compare_at_matched_pfa(&scored, s, 1e-3, (tol, tol))?;
        println!("tol {tol}");
        println!(
            "seed {s}: cfar pd {:.3} pfa {:.2e} (x{:.3})  neural pd {:.3} pfa {:.2e} (t {:.4})",
            c.cfar.pd, c.cfar.pfa, c.cfar.threshold, c.neural.pd, c.neural.pfa, c.neural.threshold
        );
        }
    }
    eprintln!("total {:.0} s", t0.elapsed().as_secs_f64());
    Ok(())
}

/// Offset error at truth cells and confidence separation.
fn diagnose(w: &WeightSet) -> rdtrack::Result<()> {
    use rdtrack::neural::{forward, input_tensor, sigmoid};
    let set = detection_set(&DetectionSetConfig {
        frames: 100,
        seed: 2000,
        ..DetectionSetConfig::default()
    })?;
    let (mut within, mut n, mut pos_conf, mut neg_conf) = (0, 0, Vec::new(), Vec::new());
    for s in &set {
        let (map, _) = forward(&input_tensor(&s.tensor), w)?;
        let mut occ = vec![false; 64];
        for &(rb, db) in &s.truth.entries {
            let (r, c) = ((rb / 8.0) as usize, (db / 8.0) as usize);
            occ[r * 8 + c] = true;
            let pr = (r as f64 + sigmoid(map.logits.at(1, r, c))) * 8.0;
            let pd = (c as f64 + sigmoid(map.logits.at(2, r, c))) * 8.0;
            n += 1;
            if (pr - rb).abs() <= 1.0 && (pd - db).abs() <= 1.0 {
                within += 1;
            }
            pos_conf.push(map.confidence(r, c));
        }
        for i in 0..64 {
            if !occ[i] {
                neg_conf.push(map.confidence(i / 8, i % 8));
            }
        }
    }
    neg_conf.sort_by(f64::total_cmp);
    let q = |p: f64| neg_conf[((neg_conf.len() as f64 - 1.0) * p) as usize];
    let above = |t: f64| pos_conf.iter().filter(|&&c| c > t).count() as f64 / pos_conf.len() as f64;
    eprintln!(
        "offset within 1 bin at truth cell: {within}/{n}; neg conf q99 {:.3} q999 {:.3}; pos above q99 {:.3}, above q999 {:.3}",
        q(0.99),
        q(0.999),
        above(q(0.99)),
        above(q(0.999))
    );
    Ok(())
}
