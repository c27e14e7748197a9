use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rdtrack::formats::{format_detections, format_tracks, parse_detections, parse_metrics, parse_truth, TrackRow};

const SCENARIO: &str = "\
[radar]
carrier_hz = 77000000000
bandwidth_hz = 561960000
pulses = 64
samples = 64
sample_rate_hz = 561960000

[targets]
target = 5,10,1
target = 11,-3,1

[run]
frames = 3
snr_db = -15
seed = 4
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rdtrack"));
    c.env_remove("RDTRACK_OUT");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().arg("--out").arg(out).args(args).output().unwrap()
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = run(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.ini");
    fs::write(&p, text).unwrap();
    p
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_one_file_per_frame_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), SCENARIO);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--config", cfg.to_str().unwrap()], &a);
    ok(&["simulate", "--config", cfg.to_str().unwrap()], &b);
    let frames = fs::read_dir(a.join("seed-4/frames")).unwrap().count();
    assert_eq!(frames, 3);
    assert_eq!(files(&a), files(&b));
    let truth = parse_truth(&fs::read_to_string(a.join("seed-4/truth.csv")).unwrap()).unwrap();
    assert_eq!(truth.len(), 3);
    assert!(truth.iter().all(|f| f.entries.len() == 2));
}

#[test]
fn seed_flag_changes_the_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), SCENARIO);
    let out = tmp.path().join("o");
    ok(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "7"], &out);
    ok(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "8"], &out);
    let a = fs::read(out.join("seed-7/frames/frame_0000.rdm")).unwrap();
    let b = fs::read(out.join("seed-8/frames/frame_0000.rdm")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn missing_radar_section_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), "[run]\nframes = 2\n");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("radar"));
}

#[test]
fn bad_line_reports_its_number() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), "[radar]\npulses = 64\nthis line is wrong\n");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn missing_inputs_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["detect", "--seed", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn cfar_detections_have_the_documented_header_and_find_targets() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), SCENARIO);
    let out = tmp.path().join("o");
    ok(&["simulate", "--config", cfg.to_str().unwrap()], &out);
    ok(&["detect", "--detector", "cfar"], &out);
    let text = fs::read_to_string(out.join("seed-4/detections.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("frame,range_bin,doppler_bin,confidence,energy"));
    ok(&["eval"], &out);
    let m = parse_metrics(&fs::read_to_string(out.join("seed-4/metrics.csv")).unwrap()).unwrap();
    assert_eq!(m.len(), 3);
    assert!(m.iter().all(|r| r.pd == Some(1.0)), "{m:?}");
}

#[test]
fn montecarlo_detector_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), SCENARIO);
    let out = tmp.path().join("o");
    ok(&["simulate", "--config", cfg.to_str().unwrap()], &out);
    ok(&["detect", "--detector", "montecarlo"], &out);
    let dets = parse_detections(&fs::read_to_string(out.join("seed-4/detections.csv")).unwrap()).unwrap();
    assert!(!dets.is_empty());
}

#[test]
fn perfect_detections_score_pd_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), SCENARIO);
    let out = tmp.path().join("o");
    ok(&["simulate", "--config", cfg.to_str().unwrap()], &out);
    let dir = out.join("seed-4");
    let truth = parse_truth(&fs::read_to_string(dir.join("truth.csv")).unwrap()).unwrap();
    let rows: Vec<_> = truth
        .iter()
        .flat_map(|f| f.entries.iter().map(move |&(r, d)| (f.frame, rdtrack::Detection::new(r, d, 1.0, 1.0))))
        .collect();
    fs::write(dir.join("detections.csv"), format_detections(&rows)).unwrap();
    ok(&["eval"], &out);
    let m = parse_metrics(&fs::read_to_string(dir.join("metrics.csv")).unwrap()).unwrap();
    assert!(m.iter().all(|r| r.pd == Some(1.0) && r.pfa == Some(0.0)), "{m:?}");
}

#[test]
fn ablation_flags_reproduce_the_baseline_tracker() {
    use rdtrack::tracker::{MotionModel, Tracker, TrackerConfig};

    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), &SCENARIO.replace("frames = 3", "frames = 6"));
    let out = tmp.path().join("o");
    ok(&["simulate", "--config", cfg.to_str().unwrap()], &out);
    ok(&["detect"], &out);
    ok(&["track", "--fixed-r", "--position-only"], &out);
    let dir = out.join("seed-4");
    let dets = parse_detections(&fs::read_to_string(dir.join("detections.csv")).unwrap()).unwrap();
    let radar = rdtrack::config::parse_scenario(SCENARIO).unwrap().radar;
    let mut t = Tracker::new(TrackerConfig::ablated(), MotionModel::default(), radar).unwrap();
    let mut rows = Vec::new();
    for f in 0..6 {
        let frame: Vec<_> = dets.iter().filter(|(g, _)| *g == f).map(|(_, d)| d.clone()).collect();
        t.step(&frame).unwrap();
        for tr in t.tracks() {
            rows.push(TrackRow {
                frame: f,
                track_id: tr.id,
                status: tr.status.as_str().into(),
                range: tr.state[0],
                velocity: tr.state[1],
                p00: tr.cov[(0, 0)],
                p01: tr.cov[(0, 1)],
                p11: tr.cov[(1, 1)],
            });
        }
    }
    assert_eq!(fs::read_to_string(dir.join("tracks.csv")).unwrap(), format_tracks(&rows));
    ok(&["track"], &out);
    assert!(fs::read_to_string(dir.join("tracks.csv")).unwrap().lines().count() > 1);
}

#[test]
fn neural_pipeline_trains_and_detects() {
    let tmp = tempfile::tempdir().unwrap();
    let train_cfg = tmp.path().join("train.ini");
    fs::write(&train_cfg, "[dataset]\nframes = 4\n\n[train]\nepochs = 1\nbatch_size = 2\naugment_off_epochs = 1\n").unwrap();
    let out = tmp.path().join("o");
    let printed = ok(&["train", "--config", train_cfg.to_str().unwrap(), "--seed", "3"], &out);
    let weights = PathBuf::from(printed.trim());
    assert!(weights.is_file());
    assert_eq!(fs::read_to_string(out.join("loss.csv")).unwrap().lines().count(), 2);
    let cfg = scenario(tmp.path(), SCENARIO);
    ok(&["simulate", "--config", cfg.to_str().unwrap()], &out);
    ok(
        &["detect", "--detector", "neural", "--weights", weights.to_str().unwrap(), "--conf-threshold", "0.0"],
        &out,
    );
    let dets = parse_detections(&fs::read_to_string(out.join("seed-4/detections.csv")).unwrap()).unwrap();
    assert!(!dets.is_empty());
}

#[test]
fn non_finite_weights_are_a_numeric_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut w = rdtrack::neural::WeightSet::seeded(1);
    w.get_mut("head.bias")[0] = f64::NAN;
    let wp = tmp.path().join("bad.bin");
    rdtrack::formats::write_weights(w.arrays(), &wp).unwrap();
    let cfg = scenario(tmp.path(), SCENARIO);
    let out = tmp.path().join("o");
    ok(&["simulate", "--config", cfg.to_str().unwrap()], &out);
    let o = run(&["detect", "--detector", "neural", "--weights", wp.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), SCENARIO);
    let root = tmp.path().join("env-root");
    let o = bin()
        .env("RDTRACK_OUT", &root)
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(root.join("seed-4/truth.csv").is_file());
}

fn manifest(dir: &Path) -> PathBuf {
    scenario(dir, SCENARIO);
    let p = dir.join("run.ini");
    fs::write(&p, "[run]\nscenario = scenario.ini\ndetector = cfar\nseeds = 1,2\nsnr_sweep = -30,-15\nout = results\n").unwrap();
    p
}

#[test]
fn e2e_aggregates_every_seed_and_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(tmp.path());
    let o = bin().args(["e2e", "--config", m.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let res = tmp.path().join("results");
    let agg = fs::read_to_string(res.join("metrics_all.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 2 * 3);
    for name in ["ospa_vs_time.svg", "pd_vs_snr.svg", "pd_vs_snr.csv", "manifest.ini"] {
        assert!(res.join(name).is_file(), "{name}");
    }
    assert!(res.join("seed-1/tracks.csv").is_file() && res.join("seed-2/tracks.csv").is_file());

    // Each plotted point corresponds to one CSV row.
    let csv_rows = |n: &str| fs::read_to_string(res.join(n)).unwrap().lines().skip(1).count();
    let circles = |n: &str| fs::read_to_string(res.join(n)).unwrap().matches("<circle").count();
    assert_eq!(circles("ospa_vs_time.svg"), csv_rows("ospa_vs_time.csv"));
    assert_eq!(circles("pd_vs_snr.svg"), csv_rows("pd_vs_snr.csv"));

    // Low SNR cannot beat high SNR.
    let pd: Vec<f64> = fs::read_to_string(res.join("pd_vs_snr.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(pd[0] <= pd[1], "{pd:?}");
}

#[test]
fn e2e_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["e2e", "--config", m.to_str().unwrap()], &a);
    ok(&["e2e", "--config", m.to_str().unwrap()], &b);
    let strip = |v: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, Vec<u8>)> {
        v.into_iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "csv")).collect()
    };
    let (fa, fb) = (strip(files(&a)), strip(files(&b)));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
}

#[test]
fn usage_errors_exit_with_config_code() {
    let o = bin().args(["detect", "--detector", "radar-magic"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}
