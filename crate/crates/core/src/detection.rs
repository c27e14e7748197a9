use crate::features::FeatureVec;

/// One detector output on the Range-Doppler grid.
///
/// Bins are continuous so sub-cell estimates (neural offsets, cluster
/// centroids, measurement-level simulation) share one type with integer
/// cell detections.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub range_bin: f64,
    pub doppler_bin: f64,
    /// Detector confidence in `[0, 1]`.
    pub confidence: f64,
    /// Linear cell energy, or an aggregate for clustered detections.
    pub energy: f64,
    pub feature: Option<FeatureVec>,
}

impl Detection {
    pub fn new(range_bin: f64, doppler_bin: f64, confidence: f64, energy: f64) -> Self {
        Self {
            range_bin,
            doppler_bin,
            confidence,
            energy,
            feature: None,
        }
    }

    pub fn with_feature(mut self, feature: FeatureVec) -> Self {
        self.feature = Some(feature);
        self
    }

    /// Total order used wherever output must not depend on input order.
    pub(crate) fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.range_bin
            .total_cmp(&other.range_bin)
            .then(self.doppler_bin.total_cmp(&other.doppler_bin))
            .then(self.confidence.total_cmp(&other.confidence))
            .then(self.energy.total_cmp(&other.energy))
            .then_with(|| match (&self.feature, &other.feature) {
                (None, None) => std::cmp::Ordering::Equal,
                (None, Some(_)) => std::cmp::Ordering::Less,
                (Some(_), None) => std::cmp::Ordering::Greater,
                (Some(a), Some(b)) => a
                    .as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal),
            })
    }
}
