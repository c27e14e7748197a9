//! Detection scoring (Pd, Pfa) and the OSPA set distance.

use crate::assignment::{assign, CostMatrix};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::rd_pipeline::GroundTruthFrame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OspaParams {
    pub c: f64,
    pub p: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self { c: 5.0, p: 1.0 }
    }
}

impl OspaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.p >= 1.0) {
            return Err(Error::Config(format!(
                "ospa requires c > 0 and p >= 1, got c={} p={}",
                self.c, self.p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdPfa {
    pub pd: f64,
    pub pfa: f64,
    /// `(detection index, truth index)`.
    pub matches: Vec<(usize, usize)>,
    pub false_alarms: usize,
}

/// Greedy nearest-first one-to-one matching of detections to truths within
/// a `±tol` bin box. `pfa` divides unmatched detections by `cells`.
pub fn pd_pfa(dets: &[Detection], truth: &GroundTruthFrame, tol: (f64, f64), cells: usize) -> PdPfa {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, &(tr, td)) in truth.entries.iter().enumerate() {
            let (dr, dd) = ((d.range_bin - tr).abs(), (d.doppler_bin - td).abs());
            if dr <= tol.0 && dd <= tol.1 {
                cand.push((dr * dr + dd * dd, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; dets.len()];
    let mut truth_used = vec![false; truth.entries.len()];
    let mut matches = Vec::new();
    for (_, i, j) in cand {
        if !det_used[i] && !truth_used[j] {
            det_used[i] = true;
            truth_used[j] = true;
            matches.push((i, j));
        }
    }
    let false_alarms = dets.len() - matches.len();
    let pd = if truth.entries.is_empty() {
        0.0
    } else {
        matches.len() as f64 / truth.entries.len() as f64
    };
    let pfa = if cells == 0 { 0.0 } else { false_alarms as f64 / cells as f64 };
    PdPfa {
        pd,
        pfa,
        matches,
        false_alarms,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// OSPA distance between two point sets with Euclidean base distance.
/// Points may be of any common dimension.
pub fn ospa<P: AsRef<[f64]>>(x: &[P], y: &[P], params: OspaParams) -> f64 {
    let (x, y) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let (m, n) = (x.len(), y.len());
    if n == 0 {
        return 0.0;
    }
    let OspaParams { c, p } = params;
    let mut cost = CostMatrix::new(m, n);
    for (i, a) in x.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            cost.set(i, j, Some(dist(a.as_ref(), b.as_ref()).min(c).powf(p)));
        }
    }
    let matched = if m == 0 { 0.0 } else { assign(&cost).cost };
    let total = matched + c.powf(p) * (n - m) as f64;
    (total / n as f64).powf(1.0 / p).min(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Order-invariant aggregate of a nonempty series.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Domain("cannot summarize an empty series".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    // Summing in sorted order keeps the mean independent of input order.
    let mean = sorted.iter().sum::<f64>() / n as f64;
    Ok(Summary {
        mean,
        median,
        min: sorted[0],
        max: sorted[n - 1],
        count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(entries: &[(f64, f64)]) -> GroundTruthFrame {
        GroundTruthFrame {
            frame: 0,
            entries: entries.to_vec(),
        }
    }

    #[test]
    fn pd_pfa_examples() {
        let t = truth(&[(10.0, 20.0), (30.0, 5.0)]);
        let exact = [Detection::new(10.0, 20.0, 1.0, 1.0), Detection::new(30.0, 5.0, 1.0, 1.0)];
        let r = pd_pfa(&exact, &t, (1.0, 1.0), 4096);
        assert_eq!((r.pd, r.pfa), (1.0, 0.0));

        let r = pd_pfa(&[], &t, (1.0, 1.0), 4096);
        assert_eq!((r.pd, r.pfa), (0.0, 0.0));

        let far = [Detection::new(12.0, 20.0, 1.0, 1.0)];
        let r = pd_pfa(&far, &truth(&[(10.0, 20.0)]), (1.0, 1.0), 100);
        assert_eq!((r.pd, r.false_alarms), (0.0, 1));
        assert_eq!(r.pfa, 0.01);
    }

    #[test]
    fn greedy_prefers_nearest() {
        let t = truth(&[(10.0, 10.0)]);
        let dets = [Detection::new(10.8, 10.0, 0.5, 1.0), Detection::new(10.1, 10.0, 0.5, 1.0)];
        let r = pd_pfa(&dets, &t, (1.0, 1.0), 10);
        assert_eq!(r.matches, vec![(1, 0)]);
    }

    #[test]
    fn ospa_examples() {
        let p = OspaParams::default();
        let x = vec![[0.0], [3.0]];
        assert_eq!(ospa(&x, &x, p), 0.0);
        let empty: Vec<[f64; 1]> = vec![];
        assert_eq!(ospa(&empty, &[[1.0]], p), 5.0);
        assert_eq!(ospa::<[f64; 1]>(&empty, &empty, p), 0.0);
        assert!((ospa(&[[0.0]], &[[1.0], [10.0]], p) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&[4.0]).unwrap();
        assert_eq!((s.mean, s.median), (4.0, 4.0));
        assert_eq!(summarize(&[1.0, 2.0, 3.0]).unwrap().mean, 2.0);
        assert_eq!(summarize(&[3.0, 1.0, 2.0, 0.1]).unwrap(), summarize(&[0.1, 2.0, 3.0, 1.0]).unwrap());
        assert!(summarize(&[]).is_err());
    }
}
