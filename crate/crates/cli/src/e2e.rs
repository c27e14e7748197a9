//! Batch runs over seeds, aggregate tables and plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rdtrack::formats::parse_metrics;
use rdtrack::{Error, Result};

use crate::commands::{detect, eval, simulate, track};
use crate::manifest::RunManifest;
use crate::plot::{line_chart, Series};

pub const AGGREGATE_HEADER: &str = "seed,frame,pd,pfa,ospa";
pub const OSPA_TIME_HEADER: &str = "frame,ospa";
pub const PD_SNR_HEADER: &str = "snr_db,pd,pfa";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn numeric_rows(text: &str, header: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && l.trim() != header)
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != width {
                return Err(Error::Config(format!("line {}: expected {width} fields", i + 1)));
            }
            f.iter()
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("line {}: bad number '{s}'", i + 1))))
                .collect()
        })
        .collect()
}

/// Files written by [`run`].
#[derive(Debug, Clone)]
pub struct Report {
    pub out: PathBuf,
    pub aggregate: PathBuf,
    pub ospa_vs_time: PathBuf,
    pub pd_vs_snr: Option<PathBuf>,
    pub plots: Vec<PathBuf>,
}

fn pipeline(m: &RunManifest, out: &Path, seed: u64, snr: Option<f64>, with_tracks: bool) -> Result<PathBuf> {
    let dir = simulate(&m.scenario, out, Some(seed), snr)?;
    let conf = (m.detector == crate::manifest::DetectorKind::Neural).then_some(m.conf_threshold);
    detect(&dir, m.detector, m.weights.as_deref(), conf)?;
    if with_tracks {
        track(&dir, m.fixed_r, m.position_only)?;
    }
    eval(&dir)
}

pub fn run(m: &RunManifest, out_override: Option<&Path>) -> Result<Report> {
    let out = out_override.map(Path::to_path_buf).unwrap_or_else(|| m.out.clone());
    fs::create_dir_all(&out)?;
    fs::write(out.join("manifest.ini"), m.format())?;

    let mut agg = format!("{AGGREGATE_HEADER}\n");
    let mut per_frame: Vec<Vec<f64>> = Vec::new();
    for &seed in &m.seeds {
        let metrics = parse_metrics(&fs::read_to_string(pipeline(m, &out, seed, None, true)?)?)?;
        for r in &metrics {
            let _ = writeln!(agg, "{seed},{},{},{},{}", r.frame, opt(r.pd), opt(r.pfa), opt(r.ospa));
            if per_frame.len() <= r.frame {
                per_frame.resize(r.frame + 1, Vec::new());
            }
            per_frame[r.frame].extend(r.ospa);
        }
    }
    let aggregate = out.join("metrics_all.csv");
    fs::write(&aggregate, agg)?;

    let mut ot = format!("{OSPA_TIME_HEADER}\n");
    for (f, v) in per_frame.iter().enumerate() {
        if let Some(x) = mean(v.iter().copied()) {
            let _ = writeln!(ot, "{f},{x}");
        }
    }
    let ospa_vs_time = out.join("ospa_vs_time.csv");
    fs::write(&ospa_vs_time, ot)?;

    let pd_vs_snr = if m.snr_sweep.is_empty() {
        None
    } else {
        let mut t = format!("{PD_SNR_HEADER}\n");
        for &snr in &m.snr_sweep {
            let base = out.join("sweep").join(format!("snr_{snr}"));
            let (mut pd, mut pfa) = (Vec::new(), Vec::new());
            for &seed in &m.seeds {
                let rows = parse_metrics(&fs::read_to_string(pipeline(m, &base, seed, Some(snr), false)?)?)?;
                pd.extend(rows.iter().filter_map(|r| r.pd));
                pfa.extend(rows.iter().filter_map(|r| r.pfa));
            }
            let _ = writeln!(
                t,
                "{snr},{},{}",
                opt(mean(pd.into_iter())),
                opt(mean(pfa.into_iter()))
            );
        }
        let p = out.join("pd_vs_snr.csv");
        fs::write(&p, t)?;
        Some(p)
    };

    let plots = render_plots(&out, &ospa_vs_time, pd_vs_snr.as_deref(), &m.seeds)?;
    Ok(Report {
        out,
        aggregate,
        ospa_vs_time,
        pd_vs_snr,
        plots,
    })
}

/// Plots drawn only from the CSV files on disk.
pub fn render_plots(out: &Path, ospa_csv: &Path, pd_csv: Option<&Path>, seeds: &[u64]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let ospa_rows = numeric_rows(&fs::read_to_string(ospa_csv)?, OSPA_TIME_HEADER, 2)?;
    let series = Series {
        label: format!("mean of {} seeds", seeds.len()),
        points: ospa_rows.iter().map(|r| (r[0], r[1])).collect(),
    };
    let p = out.join("ospa_vs_time.svg");
    fs::write(&p, line_chart("OSPA over time", "frame", "OSPA", &[series]))?;
    written.push(p);
    if let Some(csv) = pd_csv {
        let text = fs::read_to_string(csv)?;
        // Empty Pd fields (no truth) are skipped.
        let points = text
            .lines()
            .skip(1)
            .filter_map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                Some((f.first()?.parse().ok()?, f.get(1)?.parse().ok()?))
            })
            .collect();
        let p = out.join("pd_vs_snr.svg");
        fs::write(
            &p,
            line_chart("Detection probability", "SNR (dB)", "Pd", &[Series { label: "Pd".into(), points }]),
        )?;
        written.push(p);
    }
    Ok(written)
}
