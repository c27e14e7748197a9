use super::layers::Tensor;
use super::network::DetectionMap;
use super::real::Real;
use super::weights::STRIDE;
use super::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::rd_pipeline::GroundTruthFrame;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T = f64> {
    /// `λ1·position + λ2·confidence`.
    pub total: T,
    /// Summed squared offset error over positive cells.
    pub position: T,
    /// Summed binary cross-entropy over all cells.
    pub confidence: T,
    /// Gradient of `total` with respect to the map logits.
    pub grad: Tensor<T>,
    /// Truths dropped because their cell already held one.
    pub duplicates: usize,
}

/// Positive cells of a frame: `(row, col, range offset, doppler offset)`
/// with offsets as fractions of the cell. The first truth in a cell wins.
pub fn positive_cells(truth: &GroundTruthFrame, rows: usize, cols: usize) -> Result<(Vec<(usize, usize, f64, f64)>, usize)> {
    let s = STRIDE as f64;
    let mut taken = vec![false; rows * cols];
    let mut out = Vec::new();
    let mut duplicates = 0;
    for &(rb, db) in &truth.entries {
        if !(rb >= 0.0 && db >= 0.0 && rb < (rows * STRIDE) as f64 && db < (cols * STRIDE) as f64) {
            return Err(Error::OutOfRange(format!(
                "truth ({rb}, {db}) outside {}×{} grid",
                rows * STRIDE,
                cols * STRIDE
            )));
        }
        let (r, c) = ((rb / s).floor() as usize, (db / s).floor() as usize);
        if taken[r * cols + c] {
            duplicates += 1;
            continue;
        }
        taken[r * cols + c] = true;
        out.push((r, c, rb / s - r as f64, db / s - c as f64));
    }
    Ok((out, duplicates))
}

pub fn loss<T: Real>(map: &DetectionMap<T>, truth: &GroundTruthFrame, lambda1: f64, lambda2: f64) -> Result<LossOutput<T>> {
    let (h, w) = (map.rows(), map.cols());
    let (l1, l2, one, two) = (T::from_f64(lambda1), T::from_f64(lambda2), T::one(), T::from_f64(2.0));
    let (pos, duplicates) = positive_cells(truth, h, w)?;
    let z = &map.logits;
    let mut grad = Tensor::zeros(3, h, w);
    let mut occupied = vec![false; h * w];
    let mut position = T::zero();
    for &(r, c, tr, td) in &pos {
        occupied[r * w + c] = true;
        for (ch, t) in [(1, tr), (2, td)] {
            let s = sigmoid(z.at(ch, r, c));
            let e = s - T::from_f64(t);
            position += e * e;
            grad.data[(ch * h + r) * w + c] = l1 * two * e * s * (one - s);
        }
    }
    let mut confidence = T::zero();
    for i in 0..h * w {
        let zi = z.data[i];
        // −ln σ(z) = softplus(−z), −ln(1 − σ(z)) = softplus(z)
        let (l, o) = if occupied[i] { (softplus(-zi), one) } else { (softplus(zi), T::zero()) };
        confidence += l;
        grad.data[i] = l2 * (sigmoid(zi) - o);
    }
    Ok(LossOutput {
        total: l1 * position + l2 * confidence,
        position,
        confidence,
        grad,
        duplicates,
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

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn perfect_offsets_have_zero_position_loss() {
        let mut t = Tensor::<f64>::zeros(3, 4, 4);
        // Truth at (10, 27): cell (1, 3), offsets (0.25, 0.375).
        t.data[(4 + 1) * 4 + 3] = logit(0.25);
        t.data[(2 * 4 + 1) * 4 + 3] = logit(0.375);
        let out = loss(&DetectionMap { logits: t }, &truth(&[(10.0, 27.0)]), 0.7, 0.3).unwrap();
        assert!(out.position < 1e-24);
    }

    #[test]
    fn half_confidence_positive_costs_ln2() {
        let t = Tensor::<f64>::zeros(3, 1, 1);
        let out = loss(&DetectionMap { logits: t }, &truth(&[(3.0, 3.0)]), 0.0, 1.0).unwrap();
        assert!((out.confidence - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((out.confidence - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn zero_lambda1_ignores_offsets() {
        let a = Tensor::<f64>::zeros(3, 2, 2);
        let mut b = a.clone();
        b.data[4] = 7.0;
        b.data[9] = -3.0;
        let t = truth(&[(1.0, 1.0), (12.0, 9.0)]);
        let la = loss(&DetectionMap { logits: a }, &t, 0.0, 0.3).unwrap();
        let lb = loss(&DetectionMap { logits: b }, &t, 0.0, 0.3).unwrap();
        assert_eq!(la.total, lb.total);
        assert!(la.position != lb.position);
    }

    #[test]
    fn decomposition_and_duplicates() {
        let mut t = Tensor::<f64>::zeros(3, 2, 2);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.7).sin());
        let out = loss(&DetectionMap { logits: t }, &truth(&[(1.0, 1.0), (2.0, 3.0), (9.0, 1.0)]), 0.7, 0.3).unwrap();
        assert_eq!(out.total, 0.7 * out.position + 0.3 * out.confidence);
        assert_eq!(out.duplicates, 1);
        assert!(loss(&DetectionMap { logits: Tensor::<f64>::zeros(3, 2, 2) }, &truth(&[(16.0, 0.0)]), 1.0, 1.0).is_err());
    }
}
