//! Threshold detectors on RD energy maps and density clustering of their
//! output.

use std::collections::HashMap;

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::rd_pipeline::EnergyMap;

/// Two-dimensional cell-averaging CFAR window.
///
/// Indices are `[range, doppler]`. The training band surrounds a guard
/// rectangle centered on the cell under test; the window is clamped to the
/// grid at the edges, so edge cells average fewer training cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CfarConfig {
    pub train_cells: [usize; 2],
    pub guard_cells: [usize; 2],
    pub pfa_design: f64,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            train_cells: [4, 4],
            guard_cells: [1, 1],
            pfa_design: 1e-3,
        }
    }
}

impl CfarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_cells.iter().any(|&t| t == 0) {
            return Err(Error::Config("CFAR needs at least one training cell per side".into()));
        }
        if !(self.pfa_design > 0.0 && self.pfa_design < 1.0) {
            return Err(Error::Config(format!(
                "design Pfa {} outside (0, 1)",
                self.pfa_design
            )));
        }
        Ok(())
    }
}

/// CA-CFAR scale factor for `n` exponentially distributed training cells.
pub fn cfar_alpha(n: usize, pfa: f64) -> f64 {
    let n = n as f64;
    n * (pfa.powf(-1.0 / n) - 1.0)
}

/// `1 − exp(−(energy/threshold − 1))` for energies above the threshold, 0
/// otherwise.
pub fn exceedance_confidence(energy: f64, threshold: f64) -> f64 {
    if threshold <= 0.0 {
        return if energy > threshold { 1.0 } else { 0.0 };
    }
    let excess = energy / threshold - 1.0;
    if excess <= 0.0 {
        0.0
    } else {
        (-(-excess).exp_m1()).clamp(0.0, 1.0)
    }
}

struct Integral {
    cols: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(map: &EnergyMap) -> Self {
        let cols = map.cols + 1;
        let mut sums = vec![0.0; (map.rows + 1) * cols];
        for r in 0..map.rows {
            let mut row = 0.0;
            for c in 0..map.cols {
                row += map.get(r, c);
                sums[(r + 1) * cols + c + 1] = sums[r * cols + c + 1] + row;
            }
        }
        Self { cols, sums }
    }

    /// Sum over rows `r0..r1`, cols `c0..c1` (half-open).
    fn rect(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        let at = |r: usize, c: usize| self.sums[r * self.cols + c];
        at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0)
    }
}

fn span(center: usize, reach: usize, len: usize) -> (usize, usize) {
    (center.saturating_sub(reach), (center + reach + 1).min(len))
}

/// Per-cell ratio of energy to the design CA-CFAR threshold; a cell fires
/// at the design Pfa when its ratio exceeds 1. Cells without training
/// cells get ratio 0.
pub fn cfar_statistic(map: &EnergyMap, cfg: &CfarConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let integral = Integral::new(map);
    let [tr, td] = cfg.train_cells;
    let [gr, gd] = cfg.guard_cells;
    let max_cells = (2 * (tr + gr) + 1) * (2 * (td + gd) + 1);
    let alphas: Vec<f64> = (0..=max_cells).map(|n| cfar_alpha(n, cfg.pfa_design)).collect();

    let mut out = vec![0.0; map.rows * map.cols];
    for r in 0..map.rows {
        let (or0, or1) = span(r, tr + gr, map.rows);
        let (ir0, ir1) = span(r, gr, map.rows);
        for c in 0..map.cols {
            let (oc0, oc1) = span(c, td + gd, map.cols);
            let (ic0, ic1) = span(c, gd, map.cols);
            let n = (or1 - or0) * (oc1 - oc0) - (ir1 - ir0) * (ic1 - ic0);
            if n == 0 {
                continue;
            }
            let sum = integral.rect(or0, or1, oc0, oc1) - integral.rect(ir0, ir1, ic0, ic1);
            let threshold = alphas[n] * (sum / n as f64);
            out[r * map.cols + c] = if threshold > 0.0 {
                map.get(r, c) / threshold
            } else if map.get(r, c) > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

/// Cells whose CFAR ratio exceeds `scale`; `scale = 1` is the design
/// detector. Confidence is the exceedance of the ratio over `scale`.
pub fn cfar_at_scale(map: &EnergyMap, ratio: &[f64], scale: f64) -> Vec<Detection> {
    let mut out = Vec::new();
    for r in 0..map.rows {
        for c in 0..map.cols {
            let q = ratio[r * map.cols + c];
            if q > scale {
                out.push(Detection::new(r as f64, c as f64, exceedance_confidence(q, scale), map.get(r, c)));
            }
        }
    }
    out
}

/// Cell-averaging CFAR over an energy map; fired cells become detections
/// at integer bin centers.
pub fn ca_cfar(map: &EnergyMap, cfg: &CfarConfig) -> Result<Vec<Detection>> {
    let ratio = cfar_statistic(map, cfg)?;
    Ok(cfar_at_scale(map, &ratio, 1.0))
}

/// Oracle threshold: with `k = ⌊pfa·N⌋` over the `N` clutter cells (mask
/// false), the `(k+1)`-th largest clutter energy. Under the strict
/// detection rule exactly `k` distinct clutter cells exceed it.
pub fn monte_carlo_threshold(map: &EnergyMap, truth_mask: &[bool], pfa: f64) -> Result<f64> {
    if truth_mask.len() != map.data.len() {
        return Err(Error::Shape(format!(
            "mask has {} cells, map has {}",
            truth_mask.len(),
            map.data.len()
        )));
    }
    if !(0.0..=1.0).contains(&pfa) {
        return Err(Error::Domain(format!("pfa {pfa} outside [0, 1]")));
    }
    let mut clutter: Vec<f64> = map
        .data
        .iter()
        .zip(truth_mask)
        .filter(|(_, &occupied)| !occupied)
        .map(|(&e, _)| e)
        .collect();
    let k = (pfa * clutter.len() as f64).floor() as usize;
    if clutter.len() < k + 1 {
        return Err(Error::Domain(format!(
            "{} clutter cells cannot support {} false alarms",
            clutter.len(),
            k
        )));
    }
    let (_, kth, _) = clutter.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
    Ok(*kth)
}

/// Mask of cells within a Chebyshev radius of any truth point.
pub fn truth_mask(rows: usize, cols: usize, truth: &[(f64, f64)], radius: usize) -> Vec<bool> {
    let mut mask = vec![false; rows * cols];
    let rad = radius as isize;
    for &(rb, db) in truth {
        let (r0, d0) = (rb.round() as isize, db.round() as isize);
        for r in (r0 - rad)..=(r0 + rad) {
            for d in (d0 - rad)..=(d0 + rad) {
                if r >= 0 && d >= 0 && (r as usize) < rows && (d as usize) < cols {
                    mask[r as usize * cols + d as usize] = true;
                }
            }
        }
    }
    mask
}

/// Every cell strictly above `threshold`.
pub fn threshold_detect(map: &EnergyMap, threshold: f64) -> Vec<Detection> {
    let mut out = Vec::new();
    for r in 0..map.rows {
        for c in 0..map.cols {
            let e = map.get(r, c);
            if e > threshold {
                out.push(Detection::new(
                    r as f64,
                    c as f64,
                    exceedance_confidence(e, threshold),
                    e,
                ));
            }
        }
    }
    out
}

/// DBSCAN output entry: a cluster centroid or a passed-through noise point.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustered {
    pub detection: Detection,
    pub members: usize,
    pub noise: bool,
}

struct GridIndex {
    eps: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    fn new(points: &[(f64, f64)], eps: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self { eps, cells }
    }

    fn key(p: &(f64, f64), eps: f64) -> (i64, i64) {
        ((p.0 / eps).floor() as i64, (p.1 / eps).floor() as i64)
    }

    /// Indices within `eps` of point `i`, including `i`, ascending.
    fn neighbors(&self, points: &[(f64, f64)], i: usize) -> Vec<usize> {
        let p = points[i];
        let (kx, ky) = Self::key(&p, self.eps);
        let eps2 = self.eps * self.eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.cells.get(&(kx + dx, ky + dy)) {
                    for &j in bucket {
                        let (a, b) = (points[j].0 - p.0, points[j].1 - p.1);
                        if a * a + b * b <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn merge_cluster(members: &[&Detection]) -> Detection {
    let weight: f64 = members.iter().map(|d| d.confidence).sum();
    let (r, d) = if weight > 0.0 {
        members.iter().fold((0.0, 0.0), |(r, d), m| {
            (r + m.confidence * m.range_bin, d + m.confidence * m.doppler_bin)
        })
    } else {
        members
            .iter()
            .fold((0.0, 0.0), |(r, d), m| (r + m.range_bin, d + m.doppler_bin))
    };
    let norm = if weight > 0.0 { weight } else { members.len() as f64 };
    let best = members
        .iter()
        .copied()
        .reduce(|a, b| if b.confidence > a.confidence { b } else { a })
        .expect("non-empty cluster");
    Detection {
        range_bin: r / norm,
        doppler_bin: d / norm,
        confidence: best.confidence,
        energy: members.iter().map(|m| m.energy).sum(),
        feature: best.feature.clone(),
    }
}

/// DBSCAN over `(range_bin, doppler_bin)`. `min_pts` counts the point
/// itself. Each cluster collapses to its confidence-weighted centroid with
/// the maximum member confidence; noise points pass through flagged.
///
/// Input is put in canonical order first, so the partition and the output
/// do not depend on the order detections arrive in.
pub fn dbscan_cluster(dets: &[Detection], eps: f64, min_pts: usize) -> Result<Vec<Clustered>> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::Config(format!(
            "dbscan needs eps > 0 and min_pts >= 1, got {eps}, {min_pts}"
        )));
    }
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| a.canonical_cmp(b));
    let points: Vec<(f64, f64)> = sorted.iter().map(|d| (d.range_bin, d.doppler_bin)).collect();
    let index = GridIndex::new(&points, eps);

    const UNSEEN: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let mut label = vec![UNSEEN; points.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..points.len() {
        if label[i] != UNSEEN {
            continue;
        }
        let nb = index.neighbors(&points, i);
        if nb.len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let id = clusters.len();
        let mut members = vec![i];
        label[i] = id;
        let mut queue = nb;
        let mut head = 0;
        while head < queue.len() {
            let j = queue[head];
            head += 1;
            if label[j] == NOISE {
                label[j] = id;
                members.push(j);
            }
            if label[j] != UNSEEN {
                continue;
            }
            label[j] = id;
            members.push(j);
            let nj = index.neighbors(&points, j);
            if nj.len() >= min_pts {
                queue.extend(nj);
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }

    let mut out = Vec::with_capacity(clusters.len());
    for members in &clusters {
        let refs: Vec<&Detection> = members.iter().map(|&m| sorted[m]).collect();
        out.push(Clustered {
            detection: merge_cluster(&refs),
            members: members.len(),
            noise: false,
        });
    }
    for (i, _) in label.iter().enumerate().filter(|(_, &l)| l == NOISE) {
        out.push(Clustered {
            detection: sorted[i].clone(),
            members: 1,
            noise: true,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> EnergyMap {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        EnergyMap::new(rows, cols, data).unwrap()
    }

    #[test]
    fn constant_training_gives_alpha_times_level() {
        let cfg = CfarConfig {
            train_cells: [2, 2],
            guard_cells: [1, 1],
            pfa_design: 1e-2,
        };
        let n = 7 * 7 - 3 * 3;
        let alpha = cfar_alpha(n, cfg.pfa_design);
        let u = 2.0;
        // Cell under test exactly at the threshold: strict rule, no detection.
        let at = map(7, 7, |r, c| if (r, c) == (3, 3) { alpha * u } else { u });
        assert!(ca_cfar(&at, &cfg).unwrap().iter().all(|d| (d.range_bin, d.doppler_bin) != (3.0, 3.0)));
        let above = map(7, 7, |r, c| if (r, c) == (3, 3) { alpha * u * (1.0 + 1e-9) } else { u });
        let dets = ca_cfar(&above, &cfg).unwrap();
        assert!(dets.iter().any(|d| (d.range_bin, d.doppler_bin) == (3.0, 3.0)));
    }

    #[test]
    fn cfar_rejects_bad_config() {
        let m = map(4, 4, |_, _| 1.0);
        let bad = CfarConfig { train_cells: [0, 1], ..CfarConfig::default() };
        assert!(ca_cfar(&m, &bad).is_err());
        let bad = CfarConfig { pfa_design: 1.0, ..CfarConfig::default() };
        assert!(ca_cfar(&m, &bad).is_err());
    }

    #[test]
    fn monte_carlo_examples() {
        let m = map(1, 10, |_, c| (c + 1) as f64);
        let mask = vec![false; 10];
        let t = monte_carlo_threshold(&m, &mask, 0.2).unwrap();
        assert_eq!(t, 8.0);
        let fired: Vec<f64> = threshold_detect(&m, t).iter().map(|d| d.energy).collect();
        assert_eq!(fired, vec![9.0, 10.0]);
        assert_eq!(monte_carlo_threshold(&m, &mask, 0.05).unwrap(), 10.0);
        assert!(threshold_detect(&m, 10.0).is_empty());
        let all_targets = vec![true; 10];
        assert!(monte_carlo_threshold(&m, &all_targets, 0.1).is_err());
    }

    #[test]
    fn mask_excludes_targets_from_threshold() {
        let m = map(1, 5, |_, c| [1.0, 2.0, 100.0, 3.0, 4.0][c]);
        let mut mask = vec![false; 5];
        mask[2] = true;
        assert_eq!(monte_carlo_threshold(&m, &mask, 0.0).unwrap(), 4.0);
    }

    #[test]
    fn threshold_detect_examples() {
        let m = map(3, 3, |r, c| if (r, c) == (1, 2) { 5.0 } else { 1.0 });
        assert!(threshold_detect(&m, f64::INFINITY).is_empty());
        assert_eq!(threshold_detect(&m, -1.0).len(), 9);
        let one = threshold_detect(&m, 2.0);
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].range_bin, one[0].doppler_bin), (1.0, 2.0));
    }

    #[test]
    fn exceedance_examples() {
        assert!(exceedance_confidence(1.0 + 1e-12, 1.0) < 1e-11);
        assert!((exceedance_confidence(2.0, 1.0) - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!(exceedance_confidence(1e6, 1.0) > 1.0 - 1e-12);
        assert_eq!(exceedance_confidence(0.5, 1.0), 0.0);
    }

    #[test]
    fn dbscan_examples() {
        let same: Vec<Detection> = (0..8).map(|_| Detection::new(3.0, 4.0, 0.5, 1.0)).collect();
        let out = dbscan_cluster(&same, 0.5, 8).unwrap();
        assert_eq!(out.len(), 1);
        assert!(!out[0].noise);
        assert_eq!(out[0].members, 8);
        assert_eq!((out[0].detection.range_bin, out[0].detection.doppler_bin), (3.0, 4.0));

        let sparse = vec![
            Detection::new(0.0, 0.0, 0.1, 1.0),
            Detection::new(10.0, 0.0, 0.2, 1.0),
            Detection::new(0.0, 10.0, 0.3, 1.0),
        ];
        let out = dbscan_cluster(&sparse, 0.5, 8).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|c| c.noise && c.members == 1));
    }

    #[test]
    fn centroid_is_confidence_weighted() {
        let dets = vec![
            Detection::new(0.0, 0.0, 0.25, 1.0),
            Detection::new(1.0, 0.0, 0.75, 2.0),
        ];
        let out = dbscan_cluster(&dets, 1.5, 2).unwrap();
        assert_eq!(out.len(), 1);
        let d = &out[0].detection;
        assert!((d.range_bin - 0.75).abs() < 1e-15);
        assert_eq!(d.confidence, 0.75);
        assert_eq!(d.energy, 3.0);
    }
}
